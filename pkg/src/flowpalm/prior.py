"""Deformation prior: smoothness and identity-consistency scoring of flow fields,
and a persisted, sampleable library of the fields that pass both checks."""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .flow import estimate_flow
from .imaging import ShapeError, as_flow, jacobian, warp_bilinear
from .io import FloFormatError, decode_flo, encode_flo
from .seeding import rng

DELTA = 5.0
TAU_D = 0.01
TAU_C = 0.4

EMBED_SIZE = 256
EMBED_GRID = 8
EMBED_BINS = 8
EMBED_DIM = EMBED_GRID * EMBED_GRID * EMBED_BINS

Embedder = Callable[[np.ndarray], np.ndarray]


def discontinuity_ratio(flow, delta: float = DELTA) -> float:
    """Fraction of pixels whose Jacobian Frobenius norm is strictly above ``delta``."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    jac = jacobian(flow)
    norm = np.sqrt(np.sum(jac**2, axis=(-2, -1)))
    return float(np.count_nonzero(norm > delta)) / norm.size


def embed(img) -> np.ndarray:
    """Block gradient-orientation histogram descriptor, L2-normalised.

    An 8x8 grid of 32-px blocks, 8 unsigned orientation bins per block, each
    vote weighted by gradient magnitude: 512 dimensions. Images without any
    gradient map to the first canonical basis vector.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.shape != (EMBED_SIZE, EMBED_SIZE):
        raise ShapeError(f"embedder expects {EMBED_SIZE}x{EMBED_SIZE} images, got {img.shape}")
    gy, gx = np.gradient(img)
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), np.pi)
    bins = np.minimum((theta * (EMBED_BINS / np.pi)).astype(np.intp), EMBED_BINS - 1)
    block = EMBED_SIZE // EMBED_GRID
    rows, cols = np.indices(img.shape) // block
    idx = (rows * EMBED_GRID + cols) * EMBED_BINS + bins
    hist = np.bincount(idx.ravel(), weights=mag.ravel(), minlength=EMBED_DIM)
    norm = np.linalg.norm(hist)
    if norm == 0:
        hist = np.zeros(EMBED_DIM)
        hist[0] = 1.0
        return hist
    return hist / norm


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.clip(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)), -1.0, 1.0))


def identity_consistency(flow, source, target, embedder: Embedder = embed) -> float:
    """Cosine similarity between embeddings of the warped source and the target."""
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape:
        raise ShapeError(f"source {source.shape} and target {target.shape} differ in size")
    return cosine(embedder(warp_bilinear(source, flow)), embedder(target))


@dataclass
class DeformationRecord:
    flow: np.ndarray
    discontinuity_ratio: float
    consistency: float
    source_pair_id: str
    identity_id: str

    @property
    def mean_displacement(self) -> float:
        return float(np.mean(np.hypot(self.flow[..., 0], self.flow[..., 1])))


class EmptyLibraryError(ValueError):
    def __init__(self, message: str, summary: dict | None = None):
        super().__init__(message)
        self.summary = summary or {}


@dataclass
class DeformationLibrary:
    records: list
    tau_d: float = TAU_D
    tau_c: float = TAU_C
    delta: float = DELTA
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def check(self) -> None:
        """Re-verify the admission thresholds against the stored flows."""
        for r in self.records:
            d = discontinuity_ratio(r.flow, self.delta)
            if not (d < self.tau_d and r.consistency > self.tau_c):
                raise ValueError(f"record {r.source_pair_id} violates the library thresholds")


@dataclass(frozen=True)
class _Pair:
    source: np.ndarray
    target: np.ndarray
    identity_id: str
    pair_id: str
    flow: np.ndarray | None = None


def _as_pair(item, index: int) -> _Pair:
    if hasattr(item, "source") and hasattr(item, "target"):
        return _Pair(item.source, item.target, str(item.identity_id),
                     str(getattr(item, "pair_id", f"pair{index:04d}")), getattr(item, "flow", None))
    source, target, identity_id, *rest = item
    return _Pair(source, target, str(identity_id), f"pair{index:04d}", rest[0] if rest else None)


def _score(pair: _Pair, estimator, embedder, delta):
    flow = as_flow(pair.flow) if pair.flow is not None else as_flow(estimator(pair.source, pair.target))
    return flow, discontinuity_ratio(flow, delta), identity_consistency(flow, pair.source, pair.target, embedder)


def build_library(pairs: Sequence, estimator: Callable | None = None, embedder: Embedder = embed,
                  tau_d: float = TAU_D, tau_c: float = TAU_C, delta: float = DELTA,
                  use_given_flows: bool = False, workers: int = 1) -> DeformationLibrary:
    """Score every pair and keep fields with ``D < tau_d`` and ``C > tau_c``.

    ``pairs`` holds ``(source, target, identity_id[, flow])`` tuples or objects
    with those attributes (e.g. :class:`flowpalm.synthetic.CorpusPair`). With
    ``use_given_flows`` a pair's own flow is ingested instead of estimated.
    Records keep input order whatever ``workers`` is. The kept/rejected
    summary lands in ``library.metadata["summary"]``.
    """
    if not 0 < tau_d <= 1:
        raise ValueError("tau_d must lie in (0, 1]")
    if not -1 < tau_c < 1:
        raise ValueError("tau_c must lie in (-1, 1)")
    items = [_as_pair(p, i) for i, p in enumerate(pairs)]
    if not items:
        raise ValueError("no image pairs given")
    if not use_given_flows:
        items = [_Pair(p.source, p.target, p.identity_id, p.pair_id, None) for p in items]
    shapes = {np.shape(p.source) for p in items} | {np.shape(p.target) for p in items}
    if len(shapes) != 1:
        raise ShapeError(f"all pairs must share one resolution, got {sorted(shapes)}")
    estimator = estimator or estimate_flow

    def job(p):
        return _score(p, estimator, embedder, delta)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scored = list(pool.map(job, items))
    else:
        scored = [job(p) for p in items]

    records, verdicts = [], []
    counts = {"kept": 0, "smoothness": 0, "consistency": 0}
    for p, (flow, d, c) in zip(items, scored):
        if not d < tau_d:
            reason = "smoothness"
        elif not c > tau_c:
            reason = "consistency"
        else:
            reason = "kept"
            records.append(DeformationRecord(flow, d, c, p.pair_id, p.identity_id))
        counts[reason] += 1
        verdicts.append({"pair_id": p.pair_id, "identity_id": p.identity_id, "discontinuity_ratio": d,
                         "consistency": c, "verdict": reason})
    summary = {
        "n_pairs": len(items),
        "kept": counts["kept"],
        "rejected": {"smoothness": counts["smoothness"], "consistency": counts["consistency"]},
        "pairs": verdicts,
    }
    if not records:
        raise EmptyLibraryError("every deformation field was rejected; the library would be empty", summary)
    return DeformationLibrary(records, tau_d, tau_c, delta, {"summary": summary})


def sample_deformation(library: DeformationLibrary, seed, identity_id: str | None = None) -> DeformationRecord:
    """Uniform draw from the library; ``seed`` is an int or a numpy Generator."""
    pool = library.records
    if identity_id is not None:
        pool = [r for r in pool if r.identity_id == identity_id]
    if not pool:
        raise EmptyLibraryError("cannot sample from an empty library")
    g = seed if isinstance(seed, np.random.Generator) else rng(seed, "library-sample")
    return pool[int(g.integers(len(pool)))]


# -- container ---------------------------------------------------------------
# layout: MAGIC | u32 version | u64 index length | JSON index | payload
# the payload is the concatenation of the records' .flo encodings

LIB_MAGIC = b"FPDEFLIB"
LIB_VERSION = 1
_LIB_HEAD = struct.Struct("<8sIQ")


class LibraryFormatError(ValueError):
    pass


class LibraryMagicError(LibraryFormatError):
    pass


class LibraryVersionError(LibraryFormatError):
    pass


class LibraryTruncatedError(LibraryFormatError):
    pass


class LibraryIntegrityError(LibraryFormatError):
    pass


def encode_library(library: DeformationLibrary) -> bytes:
    blobs, entries, offset = [], [], 0
    for r in library.records:
        blob = encode_flo(r.flow)
        entries.append({
            "source_pair_id": r.source_pair_id,
            "identity_id": r.identity_id,
            "discontinuity_ratio": r.discontinuity_ratio,
            "consistency": r.consistency,
            "height": int(r.flow.shape[0]),
            "width": int(r.flow.shape[1]),
            "offset": offset,
            "length": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    index = {
        "version": LIB_VERSION,
        "thresholds": {"tau_d": library.tau_d, "tau_c": library.tau_c, "delta": library.delta},
        "metadata": library.metadata,
        "payload_bytes": offset,
        "records": entries,
    }
    raw = json.dumps(index, sort_keys=True, allow_nan=False).encode()
    return _LIB_HEAD.pack(LIB_MAGIC, LIB_VERSION, len(raw)) + raw + b"".join(blobs)


def decode_library(buf: bytes) -> DeformationLibrary:
    if len(buf) < _LIB_HEAD.size:
        raise LibraryTruncatedError("file is shorter than the library header")
    magic, version, n_index = _LIB_HEAD.unpack_from(buf)
    if magic != LIB_MAGIC:
        raise LibraryMagicError(f"bad library magic {magic!r}")
    if version != LIB_VERSION:
        raise LibraryVersionError(f"unsupported library version {version}")
    start = _LIB_HEAD.size
    if len(buf) < start + n_index:
        raise LibraryTruncatedError("index is truncated")
    try:
        index = json.loads(buf[start:start + n_index])
    except ValueError as exc:
        raise LibraryIntegrityError(f"index is not valid JSON: {exc}") from None
    if index.get("version") != version:
        raise LibraryVersionError("index version disagrees with the header")
    payload = buf[start + n_index:]
    declared = index["payload_bytes"]
    if len(payload) < declared:
        raise LibraryTruncatedError(f"payload has {len(payload)} bytes, index declares {declared}")
    if len(payload) > declared:
        raise LibraryIntegrityError(f"{len(payload) - declared} unindexed trailing bytes")
    records = []
    for e in index["records"]:
        lo, n = e["offset"], e["length"]
        if lo < 0 or n <= 0 or lo + n > declared:
            raise LibraryIntegrityError(f"record {e['source_pair_id']} points outside the payload")
        try:
            flow = decode_flo(payload[lo:lo + n])
        except FloFormatError as exc:
            raise LibraryIntegrityError(f"record {e['source_pair_id']}: {exc}") from None
        if flow.shape[:2] != (e["height"], e["width"]):
            raise LibraryIntegrityError(f"record {e['source_pair_id']} has mismatching extent")
        records.append(DeformationRecord(flow, e["discontinuity_ratio"], e["consistency"],
                                         e["source_pair_id"], e["identity_id"]))
    th = index["thresholds"]
    return DeformationLibrary(records, th["tau_d"], th["tau_c"], th["delta"], index.get("metadata", {}))


def save_library(library: DeformationLibrary, path) -> None:
    Path(path).write_bytes(encode_library(library))


def load_library(path) -> DeformationLibrary:
    return decode_library(Path(path).read_bytes())
