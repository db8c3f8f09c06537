import numpy as np
import pytest
import torch

from astvuln.exceptions import IncompatibleArtifactError, InvalidDatasetError, InvalidInputError
from astvuln.model import (
    Checkpoint,
    ModelConfig,
    VulnerabilityModel,
    collate,
    count_parameters,
    featurize,
    fit_kind_vocab,
    make_checkpoint,
    predict,
    predict_proba,
    train,
    _as_examples,
)
from astvuln.tokenizer import train_bpe

from conftest import marker_dataset

TINY = dict(layers=2, heads=2, model_dim=16, ffn_dim=32, window=8, dropout=0.0)


@pytest.fixture(scope="module")
def setup():
    data = marker_dataset(16, seed=1)
    vocab = train_bpe([s for s, _ in data], 60)
    config = ModelConfig(**TINY)
    kinds = fit_kind_vocab(_as_examples(data), config)
    return data, vocab, config, kinds


def build(setup, **overrides):
    data, vocab, config, kinds = setup
    cfg = ModelConfig(**{**TINY, **overrides})
    model = VulnerabilityModel(cfg, vocab.vocab_size, kinds, vocab.pad_id)
    model.eval()
    return model, cfg


def feats(setup, cfg, sources):
    _, vocab, _, kinds = setup
    return [featurize(s, vocab, kinds, cfg) for s in sources]


def probs(model, setup, cfg, sources, dtype=torch.float32):
    _, vocab, _, kinds = setup
    batch = collate(feats(setup, cfg, sources), vocab.pad_id, len(kinds), dtype)
    with torch.no_grad():
        return torch.sigmoid(model(batch))


def test_config_validation():
    with pytest.raises(InvalidInputError):
        ModelConfig(model_dim=10, heads=4)
    with pytest.raises(InvalidInputError):
        ModelConfig(window=5)
    with pytest.raises(InvalidInputError):
        ModelConfig(loss="hinge")
    with pytest.raises(InvalidInputError):
        ModelConfig(layers=2, dilation=[1, 2, 3])
    with pytest.raises(InvalidInputError):
        ModelConfig.from_dict({"layers": 2, "bogus": 1})
    cfg = ModelConfig(layers=2, dilation=[1, 2])
    assert cfg.layer_dilation(1) == 2
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_zero_head_gives_half(setup):
    model, cfg = build(setup)
    with torch.no_grad():
        model.head.weight.zero_()
        model.head.bias.zero_()
    p = probs(model, setup, cfg, [s for s, _ in setup[0][:5]])
    assert torch.equal(p, torch.full((5,), 0.5))


def test_duplicate_in_batch_identical(setup):
    model, cfg = build(setup)
    src = setup[0][0][0]
    p = probs(model, setup, cfg, [src, setup[0][1][0], src])
    assert p[0] == p[2]


def test_padding_invariance(setup):
    model, cfg = build(setup)
    short = b"int f() { return 0; }"
    long = setup[0][2][0] + b"\n" * 0 + b" int g() { x = x + 1; return x; }"
    alone = probs(model, setup, cfg, [short])[0]
    padded = probs(model, setup, cfg, [short, long])[0]
    assert abs(float(alone) - float(padded)) <= 1e-6


def test_long_attention_off_matches_on_for_short_inputs(setup):
    model, cfg = build(setup, window=64)
    off_model, off_cfg = build(setup, window=64, long_attention=False)
    off_model.load_state_dict(model.state_dict())
    srcs = [b"int f() { return 0; }", b"int g(int a) { a = a * 2; }"]
    assert max(len(f.ids) for f in feats(setup, cfg, srcs)) <= 32
    on = probs(model, setup, cfg, srcs)
    off = probs(off_model, setup, off_cfg, srcs)
    assert torch.allclose(on, off, atol=1e-6, rtol=0)


def test_self_attention_mask_is_all_allowed(setup):
    model, cfg = build(setup, window=2, long_attention=False)
    _, vocab, _, kinds = setup
    f = feats(setup, cfg, [setup[0][0][0]])
    n = len(f[0].ids)
    with torch.no_grad():
        _, weights = model(collate(f, vocab.pad_id, len(kinds)), need_weights=True)
    for w in weights:
        pairs = {(i, j) for i, j, _ in w.triples(0, 0)}
        assert pairs == {(i, j) for i in range(n) for j in range(n)}


def test_parameter_delta_without_ast(setup):
    _, _, _, kinds = setup
    with_ast, _ = build(setup)
    no_ast, _ = build(setup, use_ast=False)
    assert count_parameters(with_ast) - count_parameters(no_ast) == len(kinds) * TINY["model_dim"]


def test_ce_differs_from_focal(setup):
    focal, _ = build(setup)
    ce, _ = build(setup, loss="cross_entropy")
    logits = torch.tensor([0.3, -1.2, 2.0])
    y = torch.tensor([1.0, 0.0, 0.0])
    a, b = float(focal.loss(logits, y)), float(ce.loss(logits, y))
    expected_ce = float(torch.nn.functional.binary_cross_entropy_with_logits(logits, y))
    assert b == pytest.approx(expected_ce, rel=1e-6)
    assert a != pytest.approx(b)


def test_checkpoint_round_trip(setup, tmp_path):
    model, cfg = build(setup)
    _, vocab, _, kinds = setup
    ck = make_checkpoint(model, vocab, step=7)
    path = tmp_path / "m.ckpt"
    ck.save(path)
    raw = path.read_bytes()
    assert raw.startswith(b"ASTVCKPT")
    loaded = Checkpoint.load(path)
    assert loaded.step == 7 and loaded.config == cfg and loaded.kind_vocab == kinds
    assert loaded.to_bytes() == raw
    srcs = [s for s, _ in setup[0][:4]]
    before = probs(model, setup, cfg, srcs)
    after = probs(loaded.build_model(vocab), setup, cfg, srcs)
    assert torch.equal(before, after)


def test_checkpoint_rejects_other_vocab(setup):
    model, _ = build(setup)
    _, vocab, _, _ = setup
    ck = make_checkpoint(model, vocab)
    other = train_bpe([b"something else entirely"], 5)
    with pytest.raises(IncompatibleArtifactError):
        ck.build_model(other)
    with pytest.raises(IncompatibleArtifactError):
        Checkpoint.from_bytes(b"NOTACKPT" + b"\0" * 20)


def test_train_rejects_single_class(setup):
    _, vocab, _, _ = setup
    with pytest.raises(InvalidDatasetError):
        train([(b"int f(){}", 0), (b"int g(){}", 0)], [], ModelConfig(**TINY), vocab)
    with pytest.raises(InvalidDatasetError):
        train([], [], ModelConfig(**TINY), vocab)


def test_training_is_reproducible(setup):
    data, vocab, _, _ = setup
    cfg = ModelConfig(**TINY, epochs=1, batch_size=4, lr=1e-3)
    _, log_a = train(data, data[:4], cfg, vocab)
    _, log_b = train(data, data[:4], cfg, vocab)
    assert np.allclose(log_a[0]["step_losses"], log_b[0]["step_losses"], rtol=0, atol=1e-5)
    assert "validation" in log_a[0] and "train" in log_a[0]


def test_cross_entropy_training_runs(setup):
    data, vocab, _, _ = setup
    cfg = ModelConfig(**TINY, epochs=1, batch_size=8, loss="cross_entropy")
    ck, log = train(data, [], cfg, vocab)
    assert ck.config.loss == "cross_entropy" and len(log) == 1


def test_predict_ordering(setup):
    data, vocab, _, _ = setup
    model, cfg = build(setup)
    ck = make_checkpoint(model, vocab)
    assert predict(ck, vocab, []) == []
    one = predict(ck, vocab, [("only", data[0][0])])
    assert [i for i, _ in one] == ["only"]
    items = [(f"s{i}", s) for i, (s, _) in enumerate(data[:6])]
    ranked = predict(ck, vocab, items)
    ps = [p for _, p in ranked]
    assert ps == sorted(ps, reverse=True)
    direct = predict_proba(ck, vocab, [s for _, s in items])
    assert sorted(direct.tolist(), reverse=True) == pytest.approx(ps)


def test_predict_ties_broken_by_id(setup):
    data, vocab, _, _ = setup
    model, _ = build(setup)
    ck = make_checkpoint(model, vocab)
    src = data[0][0]
    ranked = predict(ck, vocab, [("b", src), ("a", src), ("c", src)])
    assert [i for i, _ in ranked] == ["a", "b", "c"]
