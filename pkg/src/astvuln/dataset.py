"""Function-level vulnerability dataset from advisory fix patches.

The builder walks an advisory dump and, for every advisory with fix
references, reads the referenced patch, keeps files of the target languages,
rebuilds the pre-fix and post-fix file contents, slices both into functions
and labels them:

* pre-fix functions touched by a removed line (or enclosing an insertion
  point) are ``vulnerable``;
* every other function, and every post-fix function, is ``non-vulnerable``.

Identical functions collapse into one sample whose provenance lists every
occurrence; a collapse of conflicting labels keeps ``vulnerable``.

Advisory dump (``schema`` 1), one JSON object per line::

    {"schema": 1, "id": "GHSA-xxxx", "languages": ["c"],
     "fix_refs": ["https://github.com/o/r/commit/<sha>"], "published": "2022-03-01"}

A fix reference is a commit URL or a path to a patch file. The patch
directory holds ``<commit>.diff`` (or ``.patch``) plus the pre-fix file
contents under ``<commit>/<old path>``.
"""

from __future__ import annotations

import base64
import bisect
import difflib
import hashlib
import json
import logging
import math
import re
import time
import urllib.request
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import (
    DumpParseError,
    InvalidInputError,
    InvalidSplitError,
    UnreconstructableError,
)
from .syntax import extract_functions, parse

logger = logging.getLogger(__name__)

DUMP_SCHEMA = 1
DATASET_SCHEMA = 1
VULNERABLE = "vulnerable"
NON_VULNERABLE = "non-vulnerable"

#: language tag -> file extensions
EXTENSIONS: dict[str, tuple[str, ...]] = {
    "c": (".c", ".h"),
    "cpp": (".cc", ".cpp", ".cxx", ".c++", ".hh", ".hpp", ".hxx", ".h"),
    "java": (".java",),
    "python": (".py",),
    "go": (".go",),
}

#: character-length bucket edges of the length report
LENGTH_EDGES = (0, 512, 1024, 2048, 5096, math.inf)


# -- records -------------------------------------------------------------------


@dataclass(frozen=True)
class AdvisoryRecord:
    id: str
    languages: tuple[str, ...]
    fix_refs: tuple[str, ...]
    published: str = ""


@dataclass(frozen=True)
class Hunk:
    old_start: int
    old_len: int
    new_start: int
    new_len: int
    # (tag, line) with tag in " ", "-", "+"; lines keep their newline
    lines: tuple[tuple[str, bytes], ...]


@dataclass(frozen=True)
class FileDiff:
    old_path: str | None
    new_path: str | None
    hunks: tuple[Hunk, ...] = ()

    @property
    def path(self) -> str:
        return self.new_path if self.new_path is not None else self.old_path


@dataclass(frozen=True)
class PatchSet:
    commit_id: str
    files: tuple[FileDiff, ...] = ()


@dataclass(frozen=True)
class Provenance:
    advisory_id: str
    commit_id: str
    file_path: str
    function_name: str = ""
    side: str = "pre"
    span: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class SampleRecord:
    id: str
    language: str
    source: bytes
    label: str
    provenance: tuple[Provenance, ...]

    @property
    def is_vulnerable(self) -> bool:
        return self.label == VULNERABLE

    @property
    def target(self) -> int:
        return int(self.is_vulnerable)


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0
    # "advisory" keeps each advisory in one partition, "sample" splits freely
    unit: str = "advisory"

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise InvalidSplitError("need three non-negative ratios")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise InvalidSplitError("ratios must sum to 1")
        if self.unit not in ("advisory", "sample"):
            raise InvalidSplitError("unit must be 'advisory' or 'sample'")


@dataclass
class BuildReport:
    advisories: int = 0
    excluded_no_fix: int = 0
    duplicate_ids: int = 0
    excluded_language: int = 0
    patches_unavailable: int = 0
    files_seen: int = 0
    files_filtered: int = 0
    files_unreconstructable: int = 0
    label_conflicts: int = 0
    samples: int = 0
    vulnerable: int = 0
    non_vulnerable: int = 0

    def lines(self) -> list[str]:
        return [f"{k}: {v}" for k, v in vars(self).items()]


def sample_id(language: str, source: bytes) -> str:
    return hashlib.sha256(language.encode() + b"\0" + source).hexdigest()


# -- step 2: advisories -----------------------------------------------------------


def load_advisories(path, report: BuildReport | None = None) -> list[AdvisoryRecord]:
    """Read a dump; drop records without fix references and repeated ids."""
    report = report if report is not None else BuildReport()
    records: list[AdvisoryRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        index = -1
        for line in fh:
            if not line.strip():
                continue
            index += 1
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DumpParseError(f"invalid JSON ({exc.msg})", index) from None
            if not isinstance(obj, dict) or not isinstance(obj.get("id"), str):
                raise DumpParseError("record needs a string 'id'", index)
            if obj.get("schema", DUMP_SCHEMA) != DUMP_SCHEMA:
                raise DumpParseError(f"unsupported schema {obj.get('schema')!r}", index)
            refs = obj.get("fix_refs") or []
            langs = obj.get("languages") or []
            if not isinstance(refs, list) or not isinstance(langs, list):
                raise DumpParseError("'fix_refs' and 'languages' must be lists", index)
            report.advisories += 1
            if obj["id"] in seen:
                logger.warning("duplicate advisory id %s (record %d) skipped", obj["id"], index)
                report.duplicate_ids += 1
                continue
            seen.add(obj["id"])
            if not refs:
                report.excluded_no_fix += 1
                continue
            records.append(
                AdvisoryRecord(obj["id"], tuple(langs), tuple(refs), str(obj.get("published", "")))
            )
    return records


# -- unified diffs ------------------------------------------------------------------

_HUNK_RE = re.compile(rb"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")


def split_lines(data: bytes) -> list[bytes]:
    """Split after every ``\\n``; the last line may lack one."""
    lines = data.split(b"\n")
    out = [line + b"\n" for line in lines[:-1]]
    if lines[-1]:
        out.append(lines[-1])
    return out


def _diff_path(raw: bytes) -> str | None:
    text = raw.split(b"\t", 1)[0].strip().decode("utf-8", errors="surrogateescape")
    if text == "/dev/null":
        return None
    if text[:2] in ("a/", "b/"):
        text = text[2:]
    return text


def parse_unified_diff(data: bytes) -> list[FileDiff]:
    lines = split_lines(data)
    files: list[FileDiff] = []
    i = 0
    while i < len(lines):
        line = lines[i]
        if line.startswith(b"--- ") and i + 1 < len(lines) and lines[i + 1].startswith(b"+++ "):
            old, new = _diff_path(line[4:]), _diff_path(lines[i + 1][4:])
            i += 2
            hunks = []
            while i < len(lines) and lines[i].startswith(b"@@"):
                hunk, i = _parse_hunk(lines, i)
                hunks.append(hunk)
            files.append(FileDiff(old, new, tuple(hunks)))
        else:
            i += 1
    return files


def _parse_hunk(lines: list[bytes], i: int) -> tuple[Hunk, int]:
    m = _HUNK_RE.match(lines[i])
    if m is None:
        raise UnreconstructableError(f"bad hunk header: {lines[i][:60]!r}")
    old_start, new_start = int(m.group(1)), int(m.group(3))
    old_len = 1 if m.group(2) is None else int(m.group(2))
    new_len = 1 if m.group(4) is None else int(m.group(4))
    i += 1
    body: list[list] = []
    need_old, need_new = old_len, new_len
    while i < len(lines) and (need_old > 0 or need_new > 0 or lines[i].startswith(b"\\")):
        line = lines[i]
        if line.startswith(b"\\"):
            if body:
                body[-1][1] = body[-1][1].rstrip(b"\n")
            i += 1
            continue
        tag = chr(line[0]) if line else " "
        if line in (b"\n", b""):
            tag, text = " ", b"\n"
        elif tag in " -+":
            text = line[1:]
        else:
            raise UnreconstructableError(f"unexpected line in hunk: {line[:60]!r}")
        if tag in " -":
            need_old -= 1
        if tag in " +":
            need_new -= 1
        if need_old < 0 or need_new < 0:
            raise UnreconstructableError("hunk longer than its header states")
        body.append([tag, text])
        i += 1
    if need_old or need_new:
        raise UnreconstructableError("truncated hunk")
    return Hunk(old_start, old_len, new_start, new_len, tuple((t, x) for t, x in body)), i


def format_file_diff(fd: FileDiff) -> bytes:
    out = [
        b"--- " + (b"/dev/null" if fd.old_path is None else b"a/" + fd.old_path.encode()) + b"\n",
        b"+++ " + (b"/dev/null" if fd.new_path is None else b"b/" + fd.new_path.encode()) + b"\n",
    ]
    for h in fd.hunks:
        out.append(f"@@ -{h.old_start},{h.old_len} +{h.new_start},{h.new_len} @@\n".encode())
        for tag, text in h.lines:
            out.append(tag.encode() + text)
            if not text.endswith(b"\n"):
                out.append(b"\n\\ No newline at end of file\n")
    return b"".join(out)


def make_file_diff(pre: bytes, post: bytes, path: str = "file", context: int = 3) -> FileDiff:
    """Unified diff between two byte strings (used for fixtures and tests)."""
    a, b = split_lines(pre), split_lines(post)
    hunks = []
    for group in difflib.SequenceMatcher(None, a, b, autojunk=False).get_grouped_opcodes(context):
        i1, i2, j1, j2 = group[0][1], group[-1][2], group[0][3], group[-1][4]
        body = []
        for op, a1, a2, b1, b2 in group:
            if op == "equal":
                body += [(" ", x) for x in a[a1:a2]]
                continue
            body += [("-", x) for x in a[a1:a2]]
            body += [("+", x) for x in b[b1:b2]]
        old_start = i1 + 1 if i2 > i1 else i1
        new_start = j1 + 1 if j2 > j1 else j1
        hunks.append(Hunk(old_start, i2 - i1, new_start, j2 - j1, tuple(body)))
    return FileDiff(path, path, tuple(hunks))


def reverse_diff(fd: FileDiff) -> FileDiff:
    flip = {"-": "+", "+": "-", " ": " "}
    hunks = []
    for h in fd.hunks:
        # removals must precede additions within a change block after flipping
        lines, block = [], {"-": [], "+": []}
        for tag, text in h.lines:
            t = flip[tag]
            if t == " ":
                lines += block["-"] + block["+"]
                block = {"-": [], "+": []}
                lines.append((t, text))
            else:
                block[t].append((t, text))
        lines += block["-"] + block["+"]
        hunks.append(Hunk(h.new_start, h.new_len, h.old_start, h.old_len, tuple(lines)))
    return FileDiff(fd.new_path, fd.old_path, tuple(hunks))


def apply_diff(pre: bytes, fd: FileDiff) -> bytes:
    """Apply ``fd`` to ``pre``; every context/removed line must match exactly."""
    src = split_lines(pre)
    out: list[bytes] = []
    cur = 0
    for h in fd.hunks:
        start = h.old_start - 1 if h.old_len > 0 else h.old_start
        if start < cur or start > len(src):
            raise UnreconstructableError(f"hunk at line {h.old_start} out of order or range")
        out.extend(src[cur:start])
        cur = start
        for tag, text in h.lines:
            if tag == "+":
                out.append(text)
                continue
            if cur >= len(src) or src[cur] != text:
                raise UnreconstructableError(f"context mismatch at line {cur + 1}")
            if tag == " ":
                out.append(text)
            cur += 1
    out.extend(src[cur:])
    return b"".join(out)


# -- steps 3 and 4 --------------------------------------------------------------------


def language_of(path: str, target_languages: Iterable[str], extensions=None) -> str | None:
    extensions = EXTENSIONS if extensions is None else extensions
    lower = path.lower()
    for lang in sorted(target_languages):
        if any(lower.endswith(ext) for ext in extensions.get(lang, ())):
            return lang
    return None


def filter_code_files(patch: PatchSet, target_languages: Iterable[str], extensions=None) -> PatchSet:
    targets = list(target_languages)
    kept = tuple(f for f in patch.files if language_of(f.path, targets, extensions) is not None)
    return PatchSet(patch.commit_id, kept)


def reconstruct_versions(pre_image: bytes, diff: FileDiff | bytes) -> tuple[bytes, bytes]:
    """Return ``(pre, post)``; verifies that reverse application recovers ``pre``."""
    if isinstance(diff, (bytes, bytearray)):
        files = parse_unified_diff(bytes(diff))
        if len(files) > 1:
            raise InvalidInputError("expected a single-file diff")
        if not files:
            return bytes(pre_image), bytes(pre_image)
        diff = files[0]
    pre = bytes(pre_image)
    post = apply_diff(pre, diff)
    if apply_diff(post, reverse_diff(diff)) != pre:
        raise UnreconstructableError("reverse application does not recover the pre-image")
    return pre, post


# -- steps 5 and 6 ------------------------------------------------------------------------


def changed_regions(pre: bytes, fd: FileDiff) -> list[tuple[int, int]]:
    """Byte regions of ``pre`` touched by ``fd``.

    Removed lines give their byte span; a pure insertion gives a zero-width
    region at the byte offset where the new lines go.
    """
    src = split_lines(pre)
    offsets = [0]
    for line in src:
        offsets.append(offsets[-1] + len(line))
    regions: list[tuple[int, int]] = []
    for h in fd.hunks:
        idx = h.old_start - 1 if h.old_len > 0 else h.old_start
        block_removed: list[int] = []
        block_added = False

        def flush():
            if block_removed:
                regions.append((offsets[block_removed[0]], offsets[block_removed[-1] + 1]))
            elif block_added:
                regions.append((offsets[idx], offsets[idx]))

        for tag, _ in h.lines:
            if tag == " ":
                flush()
                block_removed, block_added = [], False
                idx += 1
            elif tag == "-":
                block_removed.append(idx)
                idx += 1
            else:
                block_added = True
        flush()
    return regions


def span_touches(span: tuple[int, int], regions: Sequence[tuple[int, int]]) -> bool:
    s, e = span
    for a, b in regions:
        if a == b:
            if s < a < e:
                return True
        elif a < e and s < b:
            return True
    return False


def emit_samples(
    pre: bytes,
    post: bytes,
    language: str,
    provenance: Provenance,
    diff: FileDiff | None = None,
    label_all_pre: bool = False,
) -> list[SampleRecord]:
    """Slice both versions into labelled function samples (deduplicated)."""
    regions = changed_regions(pre, diff) if diff is not None else []
    out = []
    for side, data in (("pre", pre), ("post", post)):
        tree = parse(data, language)
        for fn in extract_functions(tree, data, language):
            vulnerable = side == "pre" and (
                (label_all_pre and bool(regions)) or span_touches(fn.span, regions)
            )
            out.append(
                SampleRecord(
                    sample_id(language, fn.source),
                    language,
                    fn.source,
                    VULNERABLE if vulnerable else NON_VULNERABLE,
                    (replace(provenance, function_name=fn.name, side=side, span=fn.span),),
                )
            )
    return deduplicate(out)


def deduplicate(samples: Iterable[SampleRecord], report: BuildReport | None = None) -> list[SampleRecord]:
    merged: dict[str, SampleRecord] = {}
    for s in samples:
        prev = merged.get(s.id)
        if prev is None:
            merged[s.id] = s
            continue
        label = prev.label
        if prev.label != s.label:
            logger.warning("label conflict for sample %s; keeping %s", s.id[:12], VULNERABLE)
            if report is not None:
                report.label_conflicts += 1
            label = VULNERABLE
        prov = prev.provenance + tuple(p for p in s.provenance if p not in prev.provenance)
        merged[s.id] = replace(prev, label=label, provenance=prov)
    return list(merged.values())


def verify_labels(samples: Iterable[SampleRecord], regions_for) -> list[str]:
    """Ids of vulnerable samples lacking a pre-side occurrence on a changed region.

    ``regions_for(provenance)`` returns the changed regions of that file's
    pre-image (``None`` when unknown).
    """
    bad = []
    for s in samples:
        if not s.is_vulnerable:
            continue
        ok = False
        for p in s.provenance:
            if p.side != "pre":
                continue
            regions = regions_for(p)
            if regions is not None and span_touches(p.span, regions):
                ok = True
        if not ok:
            bad.append(s.id)
    return bad


# -- patch acquisition ------------------------------------------------------------------

_COMMIT_URL_RE = re.compile(r"https?://github\.com/([^/]+)/([^/]+)/commit/([0-9a-fA-F]+)")


def commit_id_of(ref: str) -> str:
    m = _COMMIT_URL_RE.match(ref)
    if m:
        return m.group(3).lower()
    return Path(ref).stem


class PatchStore:
    """Local patches laid out as ``<dir>/<commit>.diff`` + ``<dir>/<commit>/<path>``."""

    def __init__(self, root, fetcher: "CommitFetcher | None" = None):
        self.root = Path(root)
        self.fetcher = fetcher

    def patch_path(self, ref: str) -> Path | None:
        commit = commit_id_of(ref)
        candidates = [self.root / f"{commit}.diff", self.root / f"{commit}.patch"]
        if not _COMMIT_URL_RE.match(ref):
            candidates.insert(0, self.root / ref)
        for c in candidates:
            if c.is_file():
                return c
        return None

    def load(self, ref: str) -> PatchSet | None:
        path = self.patch_path(ref)
        if path is None and self.fetcher is not None and _COMMIT_URL_RE.match(ref):
            try:
                self.fetcher.fetch(ref, self.root)
            except OSError as exc:
                logger.warning("fetch failed for %s: %s", ref, exc)
            path = self.patch_path(ref)
        if path is None:
            return None
        return PatchSet(commit_id_of(ref), tuple(parse_unified_diff(path.read_bytes())))

    def pre_image(self, commit_id: str, fd: FileDiff) -> bytes | None:
        if fd.old_path is None:
            return b""
        path = self.root / commit_id / fd.old_path
        return path.read_bytes() if path.is_file() else None


class CommitFetcher:
    """Download a commit's patch and pre-fix files into a :class:`PatchStore` layout.

    Requests are spaced at least ``min_interval`` seconds apart; files already
    present on disk are not downloaded again. ``opener`` defaults to
    :func:`urllib.request.urlopen` and is injectable for tests.
    """

    api = "https://api.github.com/repos/{owner}/{repo}/commits/{sha}"
    raw = "https://raw.githubusercontent.com/{owner}/{repo}/{ref}/{path}"

    def __init__(self, min_interval: float = 1.0, opener=None, clock=time.monotonic, sleep=time.sleep):
        self.min_interval = min_interval
        self.opener = opener or urllib.request.urlopen
        self.clock = clock
        self.sleep = sleep
        self._last = None

    def _get(self, url: str) -> bytes:
        if self._last is not None:
            wait = self.min_interval - (self.clock() - self._last)
            if wait > 0:
                self.sleep(wait)
        self._last = self.clock()
        with self.opener(url) as resp:
            return resp.read()

    def fetch(self, ref: str, root) -> None:
        m = _COMMIT_URL_RE.match(ref)
        if m is None:
            raise InvalidInputError(f"not a commit URL: {ref}")
        owner, repo, sha = m.group(1), m.group(2), m.group(3).lower()
        root = Path(root)
        patch_file = root / f"{sha}.diff"
        if not patch_file.is_file():
            root.mkdir(parents=True, exist_ok=True)
            patch_file.write_bytes(self._get(f"https://github.com/{owner}/{repo}/commit/{sha}.patch"))
        files = parse_unified_diff(patch_file.read_bytes())
        missing = [f for f in files if f.old_path is not None and not (root / sha / f.old_path).is_file()]
        if not missing:
            return
        meta = json.loads(self._get(self.api.format(owner=owner, repo=repo, sha=sha)))
        parent = meta["parents"][0]["sha"]
        for f in missing:
            target = root / sha / f.old_path
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(self._get(self.raw.format(owner=owner, repo=repo, ref=parent, path=f.old_path)))


# -- pipeline -------------------------------------------------------------------------


def build_dataset(
    dump_path,
    patch_dir,
    languages: Sequence[str],
    fetcher: CommitFetcher | None = None,
    label_all_pre: bool = False,
    extensions=None,
) -> tuple[list[SampleRecord], BuildReport]:
    """Run the whole construction for the given target languages."""
    if not languages:
        raise InvalidInputError("at least one target language is required")
    report = BuildReport()
    advisories = sorted(load_advisories(dump_path, report), key=lambda a: a.id)
    store = PatchStore(patch_dir, fetcher)
    targets = set(languages)
    samples: list[SampleRecord] = []
    for adv in advisories:
        if adv.languages and not targets.intersection(adv.languages):
            report.excluded_language += 1
            continue
        for ref in adv.fix_refs:
            patch = store.load(ref)
            if patch is None:
                report.patches_unavailable += 1
                continue
            report.files_seen += len(patch.files)
            kept = filter_code_files(patch, targets, extensions)
            report.files_filtered += len(patch.files) - len(kept.files)
            for fd in kept.files:
                lang = language_of(fd.path, targets, extensions)
                pre_image = store.pre_image(patch.commit_id, fd)
                if pre_image is None:
                    report.files_unreconstructable += 1
                    continue
                try:
                    pre, post = reconstruct_versions(pre_image, fd)
                except UnreconstructableError as exc:
                    logger.info("%s %s: %s", patch.commit_id, fd.path, exc)
                    report.files_unreconstructable += 1
                    continue
                prov = Provenance(adv.id, patch.commit_id, fd.path)
                samples.extend(emit_samples(pre, post, lang, prov, fd, label_all_pre))
    samples = deduplicate(samples, report)
    report.samples = len(samples)
    report.vulnerable = sum(s.is_vulnerable for s in samples)
    report.non_vulnerable = report.samples - report.vulnerable
    return samples, report


# -- split ----------------------------------------------------------------------------------


def _partition_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    raw = [r * n for r in ratios]
    sizes = [int(math.floor(x + 1e-9)) for x in raw]
    remainder = n - sum(sizes)
    order = sorted(range(3), key=lambda k: (-(raw[k] - sizes[k]), k))
    for k in order[:remainder]:
        sizes[k] += 1
    return sizes


def _advisory_groups(samples: Sequence[SampleRecord]) -> list[list[int]]:
    """Sample indices grouped so that no advisory spans two groups."""
    parent: dict[str, str] = {}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for s in samples:
        ids = sorted({p.advisory_id for p in s.provenance}) or [s.id]
        for a in ids:
            parent.setdefault(a, a)
        for a in ids[1:]:
            ra, rb = find(ids[0]), find(a)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    groups: dict[str, list[int]] = {}
    for i, s in enumerate(samples):
        key = min({p.advisory_id for p in s.provenance}, default=s.id)
        groups.setdefault(find(key), []).append(i)
    return [groups[k] for k in sorted(groups)]


def split(samples: Sequence[SampleRecord], spec: SplitSpec = SplitSpec()):
    """Deterministic train/validation/test partition."""
    samples = list(samples)
    if spec.unit == "advisory":
        units = _advisory_groups(samples)
    else:
        order = sorted(range(len(samples)), key=lambda i: samples[i].id)
        units = [[i] for i in order]
    perm = np.random.default_rng(spec.seed).permutation(len(units))
    sizes = _partition_sizes(len(units), spec.ratios)
    parts: list[list[SampleRecord]] = []
    pos = 0
    for k, size in enumerate(sizes):
        chosen = sorted(i for u in perm[pos : pos + size] for i in units[u])
        pos += size
        if not chosen and spec.ratios[k] > 0:
            raise InvalidSplitError(f"partition {k} is empty")
        parts.append([samples[i] for i in chosen])
    return tuple(parts)


# -- statistics -----------------------------------------------------------------------------


def length_stats(samples: Iterable) -> tuple[int, ...]:
    """Counts per character-length bucket ``[0,512) ... [5096,inf)``."""
    counts = [0] * (len(LENGTH_EDGES) - 1)
    for s in samples:
        if isinstance(s, SampleRecord):
            s = s.source
        n = len(s.decode("utf-8", errors="replace")) if isinstance(s, (bytes, bytearray)) else len(s)
        counts[bisect.bisect_right(LENGTH_EDGES, n) - 1] += 1
    return tuple(counts)


def format_length_table(counts: Sequence[int]) -> str:
    rows = []
    for lo, hi, c in zip(LENGTH_EDGES, LENGTH_EDGES[1:], counts):
        rows.append((f"[{float(lo)}, {float(hi) if hi != math.inf else 'inf'})", str(c)))
    width = max(len("Length"), *(len(r[0]) for r in rows))
    lines = [f"{'Length':<{width}}  count", "-" * (width + 7)]
    lines += [f"{r:<{width}}  {c:>5}" for r, c in rows]
    return "\n".join(lines) + "\n"


# -- file IO ------------------------------------------------------------------------------------


def sample_to_json(s: SampleRecord) -> str:
    obj = {
        "schema": DATASET_SCHEMA,
        "id": s.id,
        "language": s.language,
        "label": s.label,
        "source_b64": base64.b64encode(s.source).decode("ascii"),
        "provenance": [
            {
                "advisory_id": p.advisory_id,
                "commit_id": p.commit_id,
                "file_path": p.file_path,
                "function_name": p.function_name,
                "side": p.side,
                "span": list(p.span),
            }
            for p in s.provenance
        ],
    }
    return json.dumps(obj, ensure_ascii=True)


def sample_from_json(line: str) -> SampleRecord:
    obj = json.loads(line)
    prov = tuple(
        Provenance(
            p["advisory_id"], p["commit_id"], p["file_path"], p["function_name"], p["side"], tuple(p["span"])
        )
        for p in obj["provenance"]
    )
    return SampleRecord(
        obj["id"], obj["language"], base64.b64decode(obj["source_b64"]), obj["label"], prov
    )


def write_dataset(samples: Iterable[SampleRecord], path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for s in samples:
            fh.write(sample_to_json(s) + "\n")


def read_dataset(path) -> list[SampleRecord]:
    with open(path, encoding="ascii") as fh:
        return [sample_from_json(line) for line in fh if line.strip()]
