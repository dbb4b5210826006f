"""Pooled-embedding codebook: max pooling, seeded k-means and nearest-centroid assignment."""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .manifest import Manifest, stratified_subset

DEFAULT_K = 500
DEFAULT_SUBSET_FRACTION = 0.03
DEFAULT_MAX_ITERS = 100
DEFAULT_TOL = 1e-4

# rows per block when forming point-to-centroid distance tables
_BLOCK = 2048


class CodebookError(ValueError):
    pass


class MissingEmbeddingError(CodebookError, KeyError):
    def __str__(self) -> str:
        return self.args[0] if self.args else "missing embedding"


class SubsetTooSmallError(CodebookError):
    pass


# ---------------------------------------------------------------- embeddings


def read_embedding(path: str | Path) -> np.ndarray:
    """Read a ``T x d`` float32 matrix stored as ``<u4 T><u4 d>`` + row-major ``<f4`` data."""
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise CodebookError(f"{path}: truncated embedding header")
    t, d = struct.unpack("<II", raw[:8])
    expected = 8 + 4 * t * d
    if len(raw) != expected:
        raise CodebookError(f"{path}: expected {expected} bytes for {t}x{d} frames, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=8).reshape(t, d).astype(np.float32)


def write_embedding(path: str | Path, frames: np.ndarray) -> None:
    frames = np.asarray(frames, dtype="<f4")
    if frames.ndim != 2:
        raise ValueError("frames must be a 2-D (T, d) array")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(struct.pack("<II", *frames.shape))
        f.write(np.ascontiguousarray(frames).tobytes())


class EmbeddingDir(Mapping):
    """Read-only mapping from ``embedding_ref`` to frame matrices under ``root``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _path(self, ref: str) -> Path:
        return self.root / ref

    def __getitem__(self, ref: str) -> np.ndarray:
        path = self._path(ref)
        if not path.is_file():
            raise KeyError(ref)
        return read_embedding(path)

    def __contains__(self, ref: object) -> bool:
        return isinstance(ref, str) and self._path(ref).is_file()

    def __iter__(self):
        for p in sorted(self.root.rglob("*")):
            if p.is_file():
                yield p.relative_to(self.root).as_posix()

    def __len__(self) -> int:
        return sum(1 for _ in self)


# ------------------------------------------------------------------- pooling


def pool(frames: np.ndarray) -> np.ndarray:
    """Max over the time axis of a ``(T, d)`` frame matrix."""
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
        raise ValueError(f"frames must have shape (T>=1, d>=1), got {frames.shape}")
    if not np.all(np.isfinite(frames)):
        raise ValueError("frames contain non-finite values")
    return frames.max(axis=0)


# ------------------------------------------------------------------- k-means


def squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Exact ``(n, k)`` squared Euclidean distances, computed from explicit differences."""
    out = np.empty((points.shape[0], centroids.shape[0]), dtype=np.float64)
    for lo in range(0, points.shape[0], _BLOCK):
        diff = points[lo : lo + _BLOCK, None, :] - centroids[None, :, :]
        out[lo : lo + _BLOCK] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def nearest(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of the closest centroid (lowest index on ties) and its squared distance."""
    labels = np.empty(points.shape[0], dtype=np.int64)
    dist = np.empty(points.shape[0], dtype=np.float64)
    for lo in range(0, points.shape[0], _BLOCK):
        d2 = squared_distances(points[lo : lo + _BLOCK], centroids)
        labels[lo : lo + _BLOCK] = np.argmin(d2, axis=1)
        dist[lo : lo + _BLOCK] = d2[np.arange(d2.shape[0]), labels[lo : lo + _BLOCK]]
    return labels, dist


def kmeans_plusplus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    closest = squared_distances(points, points[chosen[0]][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # every remaining point coincides with a chosen centroid
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(free[rng.integers(len(free))])
        chosen.append(idx)
        closest = np.minimum(closest, squared_distances(points, points[idx][None, :])[:, 0])
    return points[chosen].copy()


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int
    inertia_history: list[float] = field(default_factory=list)
    converged: bool = False


def _repair_empty(points, centroids, labels, dist, counts):
    """Move every empty centroid onto the point currently farthest from its own centroid."""
    for j in np.flatnonzero(counts == 0):
        far = int(np.argmax(dist))
        centroids[j] = points[far]
        counts[labels[far]] -= 1
        labels[far] = j
        counts[j] = 1
        dist[far] = 0.0
    return centroids


def kmeans(
    vectors: Sequence[np.ndarray] | np.ndarray,
    k: int,
    seed: int,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeding.

    Stops once the largest centroid displacement falls to ``tol`` times the
    RMS spread of the data, or after ``max_iters`` updates. Empty clusters are
    re-seeded on the point farthest from its assigned centroid.
    """
    try:
        points = np.asarray(vectors, dtype=np.float64)
    except ValueError:
        points = None
    if points is None or points.ndim != 2:
        raise CodebookError("vectors must all share one dimension")
    n, _ = points.shape
    if k < 1:
        raise CodebookError(f"K must be >= 1, got {k}")
    if n < k:
        raise CodebookError(f"need at least K={k} vectors, got {n}")
    if not np.all(np.isfinite(points)):
        raise CodebookError("vectors contain non-finite values")

    rng = np.random.default_rng(seed)
    centroids = kmeans_plusplus(points, k, rng)
    spread = float(np.sqrt(((points - points.mean(axis=0)) ** 2).sum(axis=1).mean()))
    threshold = tol * spread

    history: list[float] = []
    converged = False
    n_iter = 0
    labels, dist = nearest(points, centroids)
    history.append(float(dist.sum()))
    while n_iter < max_iters:
        n_iter += 1
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, points)
        updated = centroids.copy()
        filled = counts > 0
        updated[filled] = sums[filled] / counts[filled, None]
        if not filled.all():
            own = ((points - updated[labels]) ** 2).sum(axis=1)
            updated = _repair_empty(points, updated, labels.copy(), own, counts.copy())
        shift = float(np.sqrt(((updated - centroids) ** 2).sum(axis=1)).max())
        centroids = updated
        labels, dist = nearest(points, centroids)
        history.append(float(dist.sum()))
        if shift <= threshold:
            converged = True
            break
    return KMeansResult(
        centroids=centroids,
        labels=labels,
        inertia=history[-1],
        n_iter=n_iter,
        inertia_history=history,
        converged=converged,
    )


# ------------------------------------------------------------------ codebook


@dataclass
class Codebook:
    centroids: np.ndarray
    assignment: dict[str, int]
    seed: int
    iterations: int
    inertia: float = float("nan")
    fit_size: int = 0

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise CodebookError("centroids must be a non-empty (K, d) matrix")
        if not np.all(np.isfinite(self.centroids)):
            raise CodebookError("centroids contain non-finite values")
        k = self.k
        for sid, c in self.assignment.items():
            if not 0 <= c < k:
                raise CodebookError(f"sample {sid!r} assigned to cluster {c} outside [0, {k})")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def cluster_of(self, sample_id: str) -> int:
        try:
            return self.assignment[sample_id]
        except KeyError:
            raise CodebookError(f"sample {sample_id!r} has no codebook assignment") from None

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(f"{self.k} {self.dim} {self.seed} {self.iterations}\n".encode("ascii"))
        buf.write(np.ascontiguousarray(self.centroids, dtype="<f4").tobytes())
        for sid, c in self.assignment.items():
            buf.write(f"{sid}\t{c}\n".encode("utf-8"))
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Codebook":
        nl = raw.find(b"\n")
        if nl < 0:
            raise CodebookError("codebook header line missing")
        try:
            k, d, seed, iterations = (int(x) for x in raw[:nl].decode("ascii").split())
        except ValueError:
            raise CodebookError("codebook header must be 'K d seed iterations'") from None
        start = nl + 1
        end = start + 4 * k * d
        if len(raw) < end:
            raise CodebookError("codebook truncated inside centroid block")
        centroids = np.frombuffer(raw[start:end], dtype="<f4").reshape(k, d).astype(np.float64)
        assignment: dict[str, int] = {}
        for line_no, line in enumerate(raw[end:].decode("utf-8").splitlines(), start=1):
            if not line:
                continue
            sid, sep, c = line.rpartition("\t")
            if not sep:
                raise CodebookError(f"assignment line {line_no} is not 'id<TAB>cluster'")
            if sid in assignment:
                raise CodebookError(f"sample {sid!r} assigned twice")
            assignment[sid] = int(c)
        return cls(centroids=centroids, assignment=assignment, seed=seed, iterations=iterations)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "Codebook":
        return cls.from_bytes(Path(path).read_bytes())


def assign(codebook: Codebook | np.ndarray, h: np.ndarray) -> int:
    centroids = codebook.centroids if isinstance(codebook, Codebook) else np.asarray(codebook)
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 1 or h.shape[0] != centroids.shape[1]:
        raise CodebookError(f"vector of shape {h.shape} does not match codebook width {centroids.shape[1]}")
    d2 = ((centroids - h[None, :]) ** 2).sum(axis=1)
    return int(np.argmin(d2))


def _pooled(manifest: Manifest, store: Mapping[str, np.ndarray]) -> np.ndarray:
    rows = []
    for s in manifest:
        try:
            frames = store[s.embedding_ref]
        except KeyError:
            raise MissingEmbeddingError(
                f"no embedding found for sample {s.id!r} (ref {s.embedding_ref!r})"
            ) from None
        rows.append(pool(frames))
    dims = {r.shape[0] for r in rows}
    if len(dims) > 1:
        raise CodebookError(f"embeddings disagree on width: {sorted(dims)}")
    return np.asarray(rows, dtype=np.float64)


def build_codebook(
    manifest: Manifest,
    embedding_store: Mapping[str, np.ndarray],
    k: int = DEFAULT_K,
    subset_fraction: float = DEFAULT_SUBSET_FRACTION,
    seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> Codebook:
    """Fit centroids on a stratified subset, then assign every manifest sample."""
    subset = stratified_subset(manifest, subset_fraction, seed)
    if len(subset) < k:
        raise SubsetTooSmallError(
            f"the {subset_fraction:g} subset holds {len(subset)} samples but K={k}; "
            f"lower K or raise the subset fraction"
        )
    fit = kmeans(_pooled(subset, embedding_store), k, seed=seed, max_iters=max_iters, tol=tol)
    labels, _ = nearest(_pooled(manifest, embedding_store), fit.centroids)
    assignment = {s.id: int(c) for s, c in zip(manifest, labels)}
    return Codebook(
        centroids=fit.centroids,
        assignment=assignment,
        seed=seed,
        iterations=fit.n_iter,
        inertia=fit.inertia,
        fit_size=len(subset),
    )
