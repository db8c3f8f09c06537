import numpy as np
import pytest
import torch

from astvuln.embedding import (
    UNKNOWN_KIND,
    EmbeddingConfig,
    EmbeddingLayer,
    EmbeddingTables,
    align_tokens_to_paths,
    ast_path_embedding,
    build_kind_vocab,
    embed_sequence,
    path_kind_counts,
)
from astvuln.syntax import AstPath, parse
from astvuln.tokenizer import TokenSequence, encode, train_bpe

KINDS = build_kind_vocab(["root", "A", "leaf"])


def tables_for(kind_vectors, d=3, vocab=8):
    k = np.zeros((len(KINDS), d))
    for kind, vec in kind_vectors.items():
        k[KINDS[kind]] = vec
    zeros = np.zeros
    return EmbeddingTables(zeros((vocab, d)), zeros((4, d)), zeros((1, d)), k)


def brute_force_edge_sum(path, table, vocab):
    """Expand the double sum over edges (parent, child) of the path."""
    edges = [(path.kinds[i], path.kinds[i + 1]) for i in range(len(path.kinds) - 1)]
    total = np.zeros(table.shape[1])
    for edge in edges:
        for node in edge:
            total = total + table[vocab.get(node, vocab[UNKNOWN_KIND])]
    return total


def test_kind_vocab_reserves_unknown():
    assert KINDS[UNKNOWN_KIND] == 0
    assert sorted(KINDS.values()) == list(range(4))


def test_single_node_path_is_zero():
    t = tables_for({"root": [1, 2, 3]})
    assert np.array_equal(ast_path_embedding(AstPath(("root",)), t, "literal", KINDS), np.zeros(3))


def test_depth3_literal_and_dedup():
    t = tables_for({"root": [1, 0, 0], "A": [0, 1, 0], "leaf": [0, 0, 1]})
    path = AstPath(("root", "A", "leaf"))
    assert np.array_equal(ast_path_embedding(path, t, "literal", KINDS), [1, 2, 1])
    assert np.array_equal(ast_path_embedding(path, t, "dedup", KINDS), [1, 1, 1])


def test_unknown_kind_maps_to_unknown_row():
    t = tables_for({"root": [1, 0, 0]})
    t.node_kind[0] = [0, 0, 5]
    out = ast_path_embedding(AstPath(("root", "mystery")), t, "literal", KINDS)
    assert np.array_equal(out, [1, 0, 5])


def test_literal_matches_edge_walk_on_random_paths():
    rng = np.random.default_rng(0)
    names = list(KINDS) + ["never-seen"]
    for _ in range(50):
        t = EmbeddingTables.random(8, EmbeddingConfig(model_dim=5, max_positions=4, node_kind_vocab=KINDS), seed=int(rng.integers(1e6)))
        path = AstPath(tuple(rng.choice(names, size=int(rng.integers(1, 12)))))
        got = ast_path_embedding(path, t, "literal", KINDS)
        assert np.array_equal(got, brute_force_edge_sum(path, t.node_kind, KINDS))


def test_uniform_vector_depth_identity():
    v = np.array([0.5, -1.25, 3.0])
    t = tables_for({}, d=3)
    t.node_kind[:] = v
    for k in range(1, 11):
        path = AstPath(tuple(["A"] * k))
        expected = (2 * k - 2) * v
        assert np.array_equal(ast_path_embedding(path, t, "literal", KINDS), expected)


def test_kind_counts_agree_with_vector_sum():
    rng = np.random.default_rng(1)
    t = EmbeddingTables.random(8, EmbeddingConfig(model_dim=4, max_positions=4, node_kind_vocab=KINDS))
    for mode in ("literal", "dedup"):
        for n in range(1, 8):
            path = AstPath(tuple(rng.choice(list(KINDS), size=n)))
            counts = path_kind_counts(path, mode, KINDS)
            via_counts = sum((c * t.node_kind[r] for r, c in counts.items()), np.zeros(4))
            assert np.allclose(via_counts, ast_path_embedding(path, t, mode, KINDS), atol=1e-15)


def test_permuting_kind_indices_is_invisible():
    cfg = EmbeddingConfig(model_dim=4, max_positions=4, node_kind_vocab=KINDS)
    t = EmbeddingTables.random(8, cfg)
    perm = {UNKNOWN_KIND: 0, "root": 3, "A": 1, "leaf": 2}
    table = np.zeros_like(t.node_kind)
    for k, i in KINDS.items():
        table[perm[k]] = t.node_kind[i]
    t2 = EmbeddingTables(t.word, t.position, t.token_type, table)
    path = AstPath(("root", "A", "A", "leaf", "x"))
    assert np.array_equal(ast_path_embedding(path, t, "literal", KINDS), ast_path_embedding(path, t2, "literal", perm))


def test_config_validation():
    with pytest.raises(ValueError):
        EmbeddingConfig(model_dim=0)
    with pytest.raises(ValueError):
        EmbeddingConfig(node_kind_vocab={"a": 0})
    with pytest.raises(ValueError):
        EmbeddingConfig(ast_mode="edges")
    with pytest.raises(ValueError):
        ast_path_embedding(AstPath(()), tables_for({}), "literal", KINDS)


SRC = b"int f(int x) { return x + 1; }"


def aligned():
    vocab = train_bpe([SRC], 10)
    tokens = encode(vocab, SRC).with_specials(vocab)
    tree = parse(SRC, "c")
    return vocab, tokens, tree, align_tokens_to_paths(tokens, tree)


def test_alignment_uses_first_byte():
    vocab, tokens, tree, paths = aligned()
    assert paths[0] is None and paths[-1] is None
    for (s, e), p in zip(tokens.spans[1:-1], paths[1:-1]):
        assert p is not None and p.kinds[0] == "translation_unit"
    # a hand-made token spanning "x + 1" takes the path of its first byte
    start = SRC.index(b"x + 1")
    seq = TokenSequence([1], [(start, start + 5)])
    assert align_tokens_to_paths(seq, tree)[0].kinds[-1] == "identifier"


def test_embed_sequence_no_ast_and_additivity():
    vocab, tokens, tree, paths = aligned()
    kinds = build_kind_vocab(n.kind for n in tree.nodes)
    cfg = EmbeddingConfig(model_dim=6, max_positions=64, node_kind_vocab=kinds)
    t = EmbeddingTables.random(vocab.vocab_size, cfg, seed=3)
    with_ast = embed_sequence(tokens, paths, t, cfg).values
    no_cfg = EmbeddingConfig(model_dim=6, max_positions=64, node_kind_vocab=kinds, use_ast=False)
    no_ast = embed_sequence(tokens, paths, t, no_cfg).values
    ids = np.array(tokens.ids)
    base = t.word[ids] + t.position[: len(ids)] + t.token_type[0]
    assert np.array_equal(no_ast, base)
    ae = np.array([np.zeros(6) if p is None else ast_path_embedding(p, t, "literal", kinds) for p in paths])
    assert np.allclose(with_ast - no_ast, ae, rtol=1e-6, atol=1e-12)


def test_embed_sequence_one_hot_rows():
    d = 8
    eye = np.eye(d)
    t = EmbeddingTables(eye[:2], eye[2:4], eye[4:5], eye[5:8])
    kinds = {UNKNOWN_KIND: 0, "root": 1, "leaf": 2}
    cfg = EmbeddingConfig(model_dim=d, max_positions=2, node_kind_vocab=kinds, ast_mode="dedup")
    out = embed_sequence(TokenSequence([1], [(0, 1)]), [AstPath(("root", "leaf"))], t, cfg).values
    assert np.array_equal(out[0], eye[1] + eye[2] + eye[4] + eye[6] + eye[7])


def test_zero_tables_and_truncation(caplog):
    cfg = EmbeddingConfig(model_dim=2, max_positions=3, node_kind_vocab=KINDS)
    z = EmbeddingTables(np.zeros((5, 2)), np.zeros((3, 2)), np.zeros((1, 2)), np.zeros((4, 2)))
    seq = TokenSequence([0, 1, 2, 3, 4], [(i, i + 1) for i in range(5)])
    fm = embed_sequence(seq, [AstPath(("root", "A"))] * 5, z, cfg)
    assert fm.values.shape == (3, 2) and fm.truncated == 2
    assert not fm.values.any()
    assert "truncating" in caplog.text


def test_torch_layer_matches_numpy():
    vocab, tokens, tree, paths = aligned()
    kinds = build_kind_vocab(n.kind for n in tree.nodes)
    cfg = EmbeddingConfig(model_dim=6, max_positions=64, node_kind_vocab=kinds)
    layer = EmbeddingLayer(vocab.vocab_size, cfg).double()
    with torch.no_grad():
        for p in layer.parameters():
            p.normal_()
    t = EmbeddingTables(*(getattr(layer, n).weight.detach().numpy() for n in ("word", "position", "token_type")),
                        layer.node_kind.detach().numpy())
    expected = embed_sequence(tokens, paths, t, cfg).values
    counts = torch.zeros(1, len(paths), len(kinds), dtype=torch.float64)
    for i, p in enumerate(paths):
        if p is not None:
            for r, c in path_kind_counts(p, "literal", kinds).items():
                counts[0, i, r] = c
    got = layer(torch.tensor([tokens.ids]), counts)[0].detach().numpy()
    assert np.allclose(got, expected, rtol=1e-12, atol=1e-12)
    no_ast = EmbeddingLayer(vocab.vocab_size, EmbeddingConfig(6, 64, 1, kinds, use_ast=False))
    assert no_ast.node_kind is None
