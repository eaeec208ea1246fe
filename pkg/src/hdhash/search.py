"""Exact Hamming-space retrieval and precision-recall evaluation.

Search is a linear scan over packed codes (XOR + popcount on 64-bit words),
so results are exact, never approximate. All rankings break distance ties by
ascending id, which makes every result deterministic and testable against a
naive re-sort oracle.

Precision-recall curves sweep the Hamming radius 0..k. At each radius a
query's precision is relevant-retrieved / retrieved, or 1.0 when nothing was
retrieved (vacuous precision, so curves start sensibly near recall 0); the
reported curve keeps the first point for each distinct mean recall. Reported
AUC is the trapezoid over those points, anchored at recall 0 with the first
point's precision.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .codes import HashCode, hamming_words, words_per_code
from .errors import ConfigError, DataError, FormatError, ShapeError, TruncationError
from .features import FeatureMatrix

CODES_MAGIC = b"HDHC"

GROUND_TRUTH_MODES = ("label", "euclidean")


@dataclass(frozen=True)
class HammingIndex:
    """Immutable collection of equal-length codes with ids and optional labels."""

    words: np.ndarray
    n_bits: int
    ids: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        words = np.asarray(self.words, dtype=np.uint64)
        if words.ndim != 2 or words.shape[1] != words_per_code(self.n_bits):
            raise ShapeError(
                f"words must be N x {words_per_code(self.n_bits)} for "
                f"{self.n_bits}-bit codes, got {words.shape}"
            )
        ids = np.asarray(self.ids, dtype=np.int64)
        if ids.shape != (words.shape[0],):
            raise ShapeError("ids must align with codes")
        if len(np.unique(ids)) != len(ids):
            raise DataError("ids must be unique")
        words.flags.writeable = False
        ids.flags.writeable = False
        object.__setattr__(self, "words", words)
        object.__setattr__(self, "ids", ids)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (words.shape[0],):
                raise ShapeError("labels must align with codes")
            labels.flags.writeable = False
            object.__setattr__(self, "labels", labels)

    @classmethod
    def from_codes(cls, codes, ids=None, labels=None) -> "HammingIndex":
        codes = list(codes)
        if not codes:
            raise ShapeError("cannot index zero codes; pass packed words instead")
        n_bits = codes[0].n_bits
        for c in codes:
            if c.n_bits != n_bits:
                raise ShapeError("all codes in an index must have the same length")
        words = np.stack([c.words for c in codes])
        if ids is None:
            ids = np.arange(len(codes))
        return cls(words, n_bits, ids, labels)

    @property
    def size(self) -> int:
        return self.words.shape[0]

    def code(self, position: int) -> HashCode:
        return HashCode(self.n_bits, self.words[position].copy())


def hamming_distance(a: HashCode, b: HashCode) -> int:
    """Number of differing bits between two equal-length codes."""
    if a.n_bits != b.n_bits:
        raise ShapeError(f"code lengths differ: {a.n_bits} vs {b.n_bits}")
    return int(hamming_words(a.words, b.words))


def _query_distances(index: HammingIndex, query: HashCode) -> np.ndarray:
    if query.n_bits != index.n_bits:
        raise ShapeError(
            f"query has {query.n_bits} bits, index stores {index.n_bits}"
        )
    return hamming_words(index.words, query.words[None, :])


def topk(index: HammingIndex, query: HashCode, k_results: int) -> list[tuple[int, int]]:
    """The exact k nearest codes as (id, distance), ties broken by id."""
    if k_results < 1:
        raise ConfigError(f"k_results must be >= 1, got {k_results}")
    if index.size == 0:
        return []
    dists = _query_distances(index, query)
    order = np.lexsort((index.ids, dists))[:k_results]
    return [(int(index.ids[i]), int(dists[i])) for i in order]


def radius_search(index: HammingIndex, query: HashCode, radius: int) -> list[tuple[int, int]]:
    """All codes within the given Hamming radius, sorted by (distance, id)."""
    if not 0 <= radius <= index.n_bits:
        raise ConfigError(f"radius must be in 0..{index.n_bits}, got {radius}")
    dists = _query_distances(index, query)
    hit = np.flatnonzero(dists <= radius)
    order = hit[np.lexsort((index.ids[hit], dists[hit]))]
    return [(int(index.ids[i]), int(dists[i])) for i in order]


def ground_truth(data: FeatureMatrix, query_rows, mode: str, n_gt: int = 0) -> list[set[int]]:
    """Relevance sets for query rows of the dataset (the row itself excluded).

    "label" marks every same-class row relevant; "euclidean" marks the n_gt
    nearest rows in the original feature space (ties by row id).
    """
    if mode == "euclidean-topN":
        mode = "euclidean"
    if mode not in GROUND_TRUTH_MODES:
        raise ConfigError(f"unknown ground-truth mode {mode!r}")
    query_rows = np.asarray(query_rows, dtype=np.int64)
    if query_rows.ndim != 1:
        raise ShapeError("query_rows must be a 1-D index vector")
    if np.any(query_rows < 0) or np.any(query_rows >= data.rows):
        raise ShapeError("query_rows out of range")
    if mode == "label":
        if data.labels is None:
            raise ConfigError("label ground truth requires a labeled dataset")
        return [
            set(np.flatnonzero(data.labels == data.labels[q]).tolist()) - {int(q)}
            for q in query_rows
        ]
    if n_gt < 1:
        raise ConfigError(f"euclidean ground truth needs n_gt >= 1, got {n_gt}")
    out = []
    for q in query_rows:
        d = np.linalg.norm(data.values - data.values[q], axis=1)
        d[q] = np.inf  # self is never its own neighbor
        order = np.lexsort((np.arange(data.rows), d))
        out.append(set(int(i) for i in order[:n_gt]))
    return out


@dataclass(frozen=True)
class PrPoint:
    radius: int
    recall: float
    precision: float
    mean_retrieved: float


@dataclass(frozen=True)
class PRCurve:
    """Mean precision at each distinct mean recall, recall strictly increasing."""

    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = tuple((float(r), float(p)) for r, p in self.points)
        last = -1.0
        for r, p in pts:
            if not (0.0 <= r <= 1.0 and 0.0 <= p <= 1.0):
                raise DataError(f"recall/precision must lie in [0, 1], got ({r}, {p})")
            if r <= last:
                raise DataError("recall must be strictly increasing along the curve")
            last = r
        object.__setattr__(self, "points", pts)


def pr_table(index: HammingIndex, queries, truth, exclude_ids=None) -> list[PrPoint]:
    """Mean precision/recall/retrieved per radius 0..k over all queries.

    truth holds one non-empty set of relevant ids per query. exclude_ids
    optionally removes one indexed id per query from its retrieved sets
    (use it when queries are rows of the index itself).
    """
    queries = list(queries)
    if len(truth) != len(queries):
        raise ShapeError("need exactly one relevance set per query")
    if exclude_ids is not None and len(exclude_ids) != len(queries):
        raise ShapeError("need exactly one excluded id per query")
    if not queries:
        raise ShapeError("need at least one query")
    k = index.n_bits
    id_to_pos = {int(v): i for i, v in enumerate(index.ids)}

    n_ret = np.zeros((len(queries), k + 1), dtype=np.int64)
    n_rel = np.zeros((len(queries), k + 1), dtype=np.int64)
    rel_sizes = np.zeros(len(queries), dtype=np.int64)
    for qi, (query, relevant) in enumerate(zip(queries, truth)):
        if not relevant:
            raise DataError(f"query {qi} has an empty relevance set")
        rel_sizes[qi] = len(relevant)
        dists = _query_distances(index, query)
        keep = np.ones(index.size, dtype=bool)
        if exclude_ids is not None and int(exclude_ids[qi]) in id_to_pos:
            keep[id_to_pos[int(exclude_ids[qi])]] = False
        rel_mask = np.isin(index.ids, list(relevant)) & keep
        n_ret[qi] = np.bincount(dists[keep], minlength=k + 1).cumsum()
        n_rel[qi] = np.bincount(dists[rel_mask], minlength=k + 1).cumsum()

    rows = []
    for radius in range(k + 1):
        ret = n_ret[:, radius].astype(np.float64)
        rel = n_rel[:, radius].astype(np.float64)
        precision = np.where(ret > 0, rel / np.where(ret > 0, ret, 1.0), 1.0)
        recall = rel / rel_sizes
        rows.append(PrPoint(radius, float(recall.mean()), float(precision.mean()),
                            float(ret.mean())))
    return rows


def precision_recall(index: HammingIndex, queries, truth, exclude_ids=None) -> PRCurve:
    """PR curve over the radius sweep, one point per distinct mean recall."""
    points = []
    for row in pr_table(index, queries, truth, exclude_ids):
        if not points or row.recall > points[-1][0]:
            points.append((row.recall, row.precision))
    return PRCurve(tuple(points))


def auc(curve: PRCurve) -> float:
    """Trapezoidal area under the curve, anchored at recall 0."""
    pts = list(curve.points)
    if pts[0][0] > 0.0:
        pts.insert(0, (0.0, pts[0][1]))
    area = 0.0
    for (r0, p0), (r1, p1) in zip(pts, pts[1:]):
        area += (r1 - r0) * (p0 + p1) / 2.0
    return area


def write_codes_file(path, words: np.ndarray, n_bits: int) -> None:
    """Write packed codes: magic, u32 count, u32 bit length, u64 words."""
    words = np.asarray(words, dtype="<u8")
    if words.ndim != 2 or words.shape[1] != words_per_code(n_bits):
        raise ShapeError(f"words shape {words.shape} does not fit {n_bits}-bit codes")
    with open(path, "wb") as fh:
        fh.write(CODES_MAGIC)
        fh.write(struct.pack("<II", words.shape[0], n_bits))
        fh.write(words.tobytes())


def read_codes_file(path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise TruncationError(f"{path}: shorter than the codes header")
    if blob[:4] != CODES_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {CODES_MAGIC!r}")
    count, n_bits = struct.unpack_from("<II", blob, 4)
    if n_bits < 1:
        raise FormatError(f"{path}: bit length must be >= 1")
    n_words = words_per_code(n_bits)
    need = 12 + 8 * count * n_words
    if len(blob) < need:
        raise TruncationError(f"{path}: expected {need} bytes, got {len(blob)}")
    words = np.frombuffer(blob, dtype="<u8", count=count * n_words, offset=12)
    return words.reshape(count, n_words).astype(np.uint64), n_bits


def write_ids_file(path, ids) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in ids:
            fh.write(f"{int(v)}\n")


def read_ids_file(path) -> np.ndarray:
    ids = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                ids.append(int(line))
            except ValueError:
                raise FormatError(f"{path}: bad id at line {lineno}: {line!r}") from None
    return np.array(ids, dtype=np.int64)


def write_pr_csv(path, table: list[PrPoint]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("radius,recall,precision,mean_retrieved\n")
        for row in table:
            fh.write(f"{row.radius},{row.recall:.17g},{row.precision:.17g},"
                     f"{row.mean_retrieved:.17g}\n")
