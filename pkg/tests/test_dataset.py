import io
import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from astvuln.dataset import (
    LENGTH_EDGES,
    NON_VULNERABLE,
    VULNERABLE,
    AdvisoryRecord,
    BuildReport,
    CommitFetcher,
    FileDiff,
    PatchSet,
    PatchStore,
    Provenance,
    SampleRecord,
    SplitSpec,
    apply_diff,
    build_dataset,
    changed_regions,
    commit_id_of,
    emit_samples,
    filter_code_files,
    format_file_diff,
    format_length_table,
    length_stats,
    load_advisories,
    make_file_diff,
    parse_unified_diff,
    read_dataset,
    reconstruct_versions,
    reverse_diff,
    sample_id,
    split,
    verify_labels,
    write_dataset,
)
from astvuln.exceptions import DumpParseError, InvalidInputError, InvalidSplitError, UnreconstructableError

PROV = Provenance("GHSA-x", "abc", "a.c")


def write_lines(path, lines):
    path.write_text("".join(json.dumps(x) + "\n" for x in lines))
    return path


# -- advisories ------------------------------------------------------------------


def test_load_advisories_excludes_patchless(fixtures_dir):
    report = BuildReport()
    recs = load_advisories(fixtures_dir / "advisories" / "dump.jsonl", report)
    assert [r.id for r in recs] == ["GHSA-aaaa-0001", "GHSA-bbbb-0002"]
    assert report.excluded_no_fix == 1 and report.advisories == 3


def test_load_advisories_empty(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text("")
    assert load_advisories(p) == []


def test_duplicate_ids_keep_first(tmp_path, caplog):
    p = write_lines(tmp_path / "d.jsonl", [
        {"id": "A", "fix_refs": ["x.diff"], "languages": ["c"]},
        {"id": "A", "fix_refs": ["y.diff"], "languages": ["c"]},
    ])
    report = BuildReport()
    recs = load_advisories(p, report)
    assert recs == [AdvisoryRecord("A", ("c",), ("x.diff",), "")]
    assert report.duplicate_ids == 1
    assert "duplicate" in caplog.text


def test_malformed_dump_reports_index(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"id": "A", "fix_refs": []}\n\n{"id": 3}\n')
    with pytest.raises(DumpParseError, match="record 1"):
        load_advisories(p)
    p.write_text('{"id": "A"}\nnot json\n')
    with pytest.raises(DumpParseError, match="record 1"):
        load_advisories(p)


# -- diffs -----------------------------------------------------------------------


def test_filter_code_files():
    patch = PatchSet("c", (FileDiff("README.md", "README.md"), FileDiff("a.c", "a.c"), FileDiff("inc/a.h", "inc/a.h")))
    kept = filter_code_files(patch, ["c"])
    assert [f.path for f in kept.files] == ["a.c", "inc/a.h"]
    assert filter_code_files(PatchSet("c", (FileDiff("x.md", "x.md"),)), ["c"]).files == ()


PRE = b"line 1\nline 2\nline 3\nline 4\n"
DIFF = b"""--- a/f.c
+++ b/f.c
@@ -1,3 +1,3 @@
 line 1
-line 2
+line two
 line 3
"""


def test_single_line_change():
    pre, post = reconstruct_versions(PRE, DIFF)
    assert pre == PRE
    assert post == b"line 1\nline two\nline 3\nline 4\n"


def test_empty_diff_is_identity():
    assert reconstruct_versions(PRE, b"") == (PRE, PRE)
    assert reconstruct_versions(PRE, FileDiff("f", "f")) == (PRE, PRE)


def test_context_mismatch_is_unreconstructable():
    with pytest.raises(UnreconstructableError):
        reconstruct_versions(PRE.replace(b"line 3", b"line 9"), DIFF)
    with pytest.raises(UnreconstructableError):
        parse_unified_diff(b"--- a/f\n+++ b/f\n@@ -1,3 +1,3 @@\n line 1\n")


def test_no_newline_marker():
    diff = b"--- a/f\n+++ b/f\n@@ -1 +1 @@\n-a\n\\ No newline at end of file\n+b\n\\ No newline at end of file\n"
    assert reconstruct_versions(b"a", diff) == (b"a", b"b")
    (fd,) = parse_unified_diff(diff)
    assert parse_unified_diff(format_file_diff(fd)) == [fd]


def test_new_file_diff():
    diff = b"--- /dev/null\n+++ b/n.c\n@@ -0,0 +1,2 @@\n+int x;\n+int y;\n"
    (fd,) = parse_unified_diff(diff)
    assert fd.old_path is None and fd.path == "n.c"
    assert apply_diff(b"", fd) == b"int x;\nint y;\n"


lines = st.lists(st.sampled_from([b"a\n", b"b\n", b"c\n", b"{\n", b"}\n", b"\n"]), max_size=25)


@settings(max_examples=200, deadline=None)
@given(lines, lines, st.booleans())
def test_reconstruction_round_trip(a, b, chop):
    pre, post = b"".join(a), b"".join(b)
    if chop and post.endswith(b"\n"):
        post = post[:-1]
    fd = make_file_diff(pre, post, "f.c")
    (parsed,) = parse_unified_diff(format_file_diff(fd)) or [FileDiff("f.c", "f.c")]
    got_pre, got_post = reconstruct_versions(pre, parsed)
    assert got_post == post
    assert apply_diff(post, reverse_diff(parsed)) == pre


# -- labelling ---------------------------------------------------------------------

TWO = b"int one(int a) {\n    return a;\n}\n\nint two(int b) {\n    return b;\n}\n"


def labels_by_side(samples):
    out = {}
    for s in samples:
        for p in s.provenance:
            out[(p.function_name, p.side)] = s.label
    return out


def test_emit_two_functions_one_touched():
    post = TWO.replace(b"return a;", b"return a + 1;")
    fd = make_file_diff(TWO, post, "a.c")
    samples = emit_samples(TWO, post, "c", PROV, fd)
    assert len(samples) == 3
    assert labels_by_side(samples) == {
        ("one", "pre"): VULNERABLE,
        ("one", "post"): NON_VULNERABLE,
        ("two", "pre"): NON_VULNERABLE,
        ("two", "post"): NON_VULNERABLE,
    }
    merged = [s for s in samples if len(s.provenance) == 2]
    assert len(merged) == 1 and merged[0].source.startswith(b"int two")


def test_comment_outside_functions_labels_nothing():
    pre = b"/* old */\n" + TWO
    post = b"/* new */\n" + TWO
    samples = emit_samples(pre, post, "c", PROV, make_file_diff(pre, post))
    assert not any(s.is_vulnerable for s in samples)


def test_nested_functions_both_vulnerable():
    pre = b"int outer() {\n  int inner() {\n    return 1;\n  }\n  return 2;\n}\n"
    post = pre.replace(b"return 1;", b"return 0;")
    samples = emit_samples(pre, post, "c", PROV, make_file_diff(pre, post))
    labels = labels_by_side(samples)
    assert labels[("outer", "pre")] == labels[("inner", "pre")] == VULNERABLE


def test_insertion_inside_function_is_vulnerable():
    post = TWO.replace(b"    return b;\n", b"    check(b);\n    return b;\n")
    samples = emit_samples(TWO, post, "c", PROV, make_file_diff(TWO, post))
    assert labels_by_side(samples)[("two", "pre")] == VULNERABLE
    assert labels_by_side(samples)[("one", "pre")] == NON_VULNERABLE


def test_insertion_between_functions_is_not():
    post = TWO.replace(b"}\n\nint two", b"}\n\nint extra;\n\nint two")
    samples = emit_samples(TWO, post, "c", PROV, make_file_diff(TWO, post))
    assert not any(s.is_vulnerable for s in samples)


def test_label_all_pre_flag():
    post = TWO.replace(b"return a;", b"return a + 1;")
    samples = emit_samples(TWO, post, "c", PROV, make_file_diff(TWO, post), label_all_pre=True)
    # "two" is identical on both sides, so the conflict resolves to vulnerable
    assert labels_by_side(samples)[("two", "pre")] == VULNERABLE


def test_emit_is_idempotent():
    post = TWO.replace(b"return a;", b"return a + 1;")
    fd = make_file_diff(TWO, post)
    assert emit_samples(TWO, post, "c", PROV, fd) == emit_samples(TWO, post, "c", PROV, fd)


def test_label_soundness_pass():
    post = TWO.replace(b"return a;", b"return a + 1;")
    fd = make_file_diff(TWO, post)
    samples = emit_samples(TWO, post, "c", PROV, fd)
    regions = changed_regions(TWO, fd)
    assert verify_labels(samples, lambda p: regions) == []
    forged = SampleRecord("x", "c", b"int two", VULNERABLE, (Provenance("A", "c", "a.c", "two", "pre", (33, 60)),))
    assert verify_labels([forged], lambda p: regions) == ["x"]


# -- pipeline --------------------------------------------------------------------


def test_build_dataset_fixture(fixtures_dir):
    root = fixtures_dir / "advisories"
    samples, report = build_dataset(root / "dump.jsonl", root / "patches", ["c"])
    assert report.excluded_no_fix == 1 and report.files_filtered == 1
    assert (report.samples, report.vulnerable) == (6, 2)
    got = {(p.advisory_id, p.function_name, p.side): s.label for s in samples for p in s.provenance}
    assert got[("GHSA-aaaa-0001", "copy_name", "pre")] == VULNERABLE
    assert got[("GHSA-aaaa-0001", "add", "pre")] == NON_VULNERABLE
    assert got[("GHSA-bbbb-0002", "get", "pre")] == VULNERABLE
    assert got[("GHSA-bbbb-0002", "first", "post")] == NON_VULNERABLE
    assert not any(p.advisory_id.startswith("GHSA-cccc") for s in samples for p in s.provenance)


def test_build_dataset_counts_broken_patches(tmp_path, fixtures_dir):
    root = fixtures_dir / "advisories"
    patches = tmp_path / "p"
    patches.mkdir()
    (patches / "1111aaaa.diff").write_bytes((root / "patches" / "1111aaaa.diff").read_bytes())
    (patches / "1111aaaa" / "src").mkdir(parents=True)
    (patches / "1111aaaa" / "src" / "a.c").write_bytes(b"int unrelated;\n")
    samples, report = build_dataset(root / "dump.jsonl", patches, ["c"])
    assert report.files_unreconstructable == 1 and report.patches_unavailable == 1
    assert samples == []
    with pytest.raises(InvalidInputError):
        build_dataset(root / "dump.jsonl", patches, [])


def test_language_filter_on_advisories(fixtures_dir):
    root = fixtures_dir / "advisories"
    samples, report = build_dataset(root / "dump.jsonl", root / "patches", ["java"])
    assert samples == [] and report.excluded_language == 2


def test_dataset_io_round_trip(tmp_path, fixtures_dir):
    root = fixtures_dir / "advisories"
    samples, _ = build_dataset(root / "dump.jsonl", root / "patches", ["c"])
    write_dataset(samples, tmp_path / "a.jsonl")
    assert read_dataset(tmp_path / "a.jsonl") == samples
    write_dataset(read_dataset(tmp_path / "a.jsonl"), tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


# -- acquisition -------------------------------------------------------------------


class FakeResponse(io.BytesIO):
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def test_fetcher_downloads_and_caches(tmp_path):
    sha = "deadbeef"
    patch = b"--- a/x.c\n+++ b/x.c\n@@ -1 +1 @@\n-int a;\n+int b;\n"
    calls = []

    def opener(url):
        calls.append(url)
        if url.endswith(".patch"):
            return FakeResponse(patch)
        if "api.github.com" in url:
            return FakeResponse(json.dumps({"parents": [{"sha": "p0"}]}).encode())
        return FakeResponse(b"int a;\n")

    clock = iter(range(100))
    sleeps = []
    fetcher = CommitFetcher(2.0, opener, clock=lambda: next(clock), sleep=sleeps.append)
    ref = f"https://github.com/o/r/commit/{sha}"
    store = PatchStore(tmp_path, fetcher)
    ps = store.load(ref)
    assert ps.commit_id == sha and [f.path for f in ps.files] == ["x.c"]
    assert store.pre_image(sha, ps.files[0]) == b"int a;\n"
    assert len(calls) == 3 and calls[2].endswith("/o/r/p0/x.c")
    assert sleeps and all(s > 0 for s in sleeps)
    store.load(ref)
    assert len(calls) == 3


def test_commit_id_of():
    assert commit_id_of("https://github.com/o/r/commit/ABC123") == "abc123"
    assert commit_id_of("fixes/p1.diff") == "p1"


# -- split -------------------------------------------------------------------------


def synthetic(n_adv, per=3):
    out = []
    for a in range(n_adv):
        for k in range(per):
            src = f"int f{a}_{k}() {{ return {k}; }}".encode()
            out.append(SampleRecord(sample_id("c", src), "c", src, NON_VULNERABLE,
                                    (Provenance(f"A{a:02d}", "c", "x.c", f"f{k}", "pre", (0, 1)),)))
    return out


def test_split_by_advisory():
    samples = synthetic(10)
    parts = split(samples, SplitSpec((0.6, 0.2, 0.2), seed=3))
    advs = [{p.advisory_id for s in part for p in s.provenance} for part in parts]
    assert [len(a) for a in advs] == [6, 2, 2]
    assert not (advs[0] & advs[1] or advs[0] & advs[2] or advs[1] & advs[2])
    assert sum(len(p) for p in parts) == len(samples)
    assert split(samples, SplitSpec((0.6, 0.2, 0.2), seed=3)) == parts


def test_split_merged_provenance_keeps_advisories_together():
    samples = synthetic(6, 1)
    shared = SampleRecord("zz", "c", b"x", NON_VULNERABLE, (
        Provenance("A00", "c", "x.c"), Provenance("A05", "c", "x.c")))
    parts = split(samples + [shared], SplitSpec((0.5, 0.25, 0.25), seed=0))
    for part in parts:
        advs = {p.advisory_id for s in part for p in s.provenance}
        assert ("A00" in advs) == ("A05" in advs)


def test_split_edge_cases():
    samples = synthetic(4)
    train_part, val, test = split(samples, SplitSpec((1.0, 0.0, 0.0)))
    assert len(train_part) == len(samples) and val == [] and test == []
    with pytest.raises(InvalidSplitError):
        split(synthetic(1), SplitSpec((0.6, 0.2, 0.2)))
    with pytest.raises(InvalidSplitError):
        SplitSpec((0.5, 0.5, 0.5))
    with pytest.raises(InvalidSplitError):
        SplitSpec(unit="file")
    parts = split(synthetic(5, 4), SplitSpec((0.5, 0.25, 0.25), unit="sample"))
    assert [len(p) for p in parts] == [10, 5, 5]


# -- statistics ---------------------------------------------------------------------


def test_length_stats():
    assert length_stats([]) == (0, 0, 0, 0, 0)
    assert length_stats(["x" * 100, "x" * 600, "x" * 6000]) == (1, 1, 0, 0, 1)
    edges = [0, 511, 512, 1023, 1024, 2047, 2048, 5095, 5096, 10**5]
    assert length_stats(["y" * n for n in edges]) == (2, 2, 2, 2, 2)
    assert LENGTH_EDGES == (0, 512, 1024, 2048, 5096, math.inf)


def test_length_table_layout():
    table = format_length_table((6200, 1616, 1560, 1180, 516))
    rows = table.splitlines()
    assert rows[0].split() == ["Length", "count"]
    assert [r.rsplit(None, 1)[0].strip() for r in rows[2:]] == [
        "[0.0, 512.0)", "[512.0, 1024.0)", "[1024.0, 2048.0)", "[2048.0, 5096.0)", "[5096.0, inf)"]
    assert [int(r.split()[-1]) for r in rows[2:]] == [6200, 1616, 1560, 1180, 516]
