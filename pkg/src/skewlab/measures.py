"""Empirical measures from unstable-leaf Birkhoff averages, and their probes.

The central object is the average of the first n pushforwards of normalized
Lebesgue measure on a strong-unstable segment, estimated by Monte Carlo:
uniform arc-length parameters on the segment, leaf points via unstable
holonomy, forward iteration, and binning on a uniform grid of the 4-torus.

Determinism contract: samples are drawn and binned in fixed chunks of
CHUNK consecutive indices, each chunk from its own counter-based stream,
and chunk results are integer count vectors combined by addition. Counts
are therefore bit-identical for a fixed seed regardless of worker count or
scheduling; weights are computed from counts by a single division at the
end.

Probes built on top:

* uniqueness_probe: grows measures from several seed points along an
  iteration schedule and compares fiber marginals pairwise; merging
  distances mean a single u-Gibbs candidate, stable separation means
  several (the rigid product keeps separated fiber orbits forever).
* density_probe: marks covered cells of an eps-net along the iterated
  leaf; full cell coverage certifies eps-density of the iterated segment.
* su_torus_detect: flags fiber marginals concentrated on at most four
  bins, the signature of a measure supported on finitely many su-tori.
* invariance_defect: total variation between the measure and its exact
  one-step pushforward (samples pushed once more, then re-binned); the
  telescoping bound 1/n is the theoretical ceiling.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import NonConvergenceError
from .holonomy import _u_holonomy_batch
from .parallel import chunked_map, resolve_workers
from .rng import CHUNK, chunk_ranges, stream
from .systems import SkewProductSystem, system_hash
from .torus import point_array, wrap

__all__ = [
    "EmpiricalMeasure",
    "birkhoff_pushforward",
    "birkhoff_pair",
    "measure_distance",
    "invariance_defect",
    "UniquenessReport",
    "uniqueness_probe",
    "DensityReport",
    "density_probe",
    "SuTorusReport",
    "su_torus_detect",
]

DEFAULT_BINS = 16
MAGIC = b"UGH1"


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Sparse normalized histogram on a uniform torus grid.

    ndim is 4 for full measures and 2 for marginals; idx holds flat bin
    indices (row-major over ndim axes of m bins each), strictly increasing.
    """

    m: int
    ndim: int
    idx: np.ndarray       # (K,) int64, strictly increasing
    weights: np.ndarray   # (K,) float64, positive, summing to 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        idx = np.asarray(self.idx, dtype=np.int64)
        w = np.asarray(self.weights, dtype=float)
        if idx.shape != w.shape or idx.ndim != 1:
            raise ValueError("idx and weights must be equal-length vectors")
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0
                         or idx[-1] >= self.m ** self.ndim):
            raise ValueError("idx must be strictly increasing within range")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        object.__setattr__(self, "idx", idx)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_counts(cls, counts: np.ndarray, m: int, ndim: int,
                    meta: dict | None = None) -> "EmpiricalMeasure":
        counts = np.asarray(counts)
        total = counts.sum(dtype=np.int64)
        if total <= 0:
            raise ValueError("empty histogram")
        nz = np.flatnonzero(counts)
        return cls(m=m, ndim=ndim, idx=nz.astype(np.int64),
                   weights=counts[nz] / float(total), meta=dict(meta or {}))

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def dense(self) -> np.ndarray:
        out = np.zeros(self.m ** self.ndim)
        out[self.idx] = self.weights
        return out

    def _marginal(self, sub: np.ndarray, meta_tag: str) -> "EmpiricalMeasure":
        m2 = self.m ** 2
        dense = np.zeros(m2)
        np.add.at(dense, sub, self.weights)
        nz = np.flatnonzero(dense)
        meta = dict(self.meta)
        meta["marginal"] = meta_tag
        return EmpiricalMeasure(m=self.m, ndim=2, idx=nz.astype(np.int64),
                                weights=dense[nz], meta=meta)

    def fiber_marginal(self) -> "EmpiricalMeasure":
        if self.ndim != 4:
            raise ValueError("fiber marginal requires a 4d measure")
        return self._marginal(self.idx % (self.m ** 2), "fiber")

    def base_marginal(self) -> "EmpiricalMeasure":
        if self.ndim != 4:
            raise ValueError("base marginal requires a 4d measure")
        return self._marginal(self.idx // (self.m ** 2), "base")

    def to_bytes(self) -> bytes:
        head = MAGIC + struct.pack("<BIQ", self.ndim, self.m, self.idx.size)
        body = np.empty(self.idx.size, dtype=[("i", "<u8"), ("w", "<f8")])
        body["i"] = self.idx.astype(np.uint64)
        body["w"] = self.weights
        return head + body.tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "EmpiricalMeasure":
        if raw[:4] != MAGIC:
            raise ValueError("bad magic; not a UGH1 histogram")
        ndim, m, count = struct.unpack("<BIQ", raw[4:17])
        body = np.frombuffer(raw[17:], dtype=[("i", "<u8"), ("w", "<f8")],
                             count=count)
        return cls(m=int(m), ndim=int(ndim),
                   idx=body["i"].astype(np.int64), weights=body["w"].copy())


def measure_distance(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Total variation distance: half the L1 gap of the bin weights."""
    if mu.m != nu.m or mu.ndim != nu.ndim:
        raise ValueError("measures live on different bin grids")
    return 0.5 * float(np.abs(mu.dense() - nu.dense()).sum())


def _bin_index(pts: np.ndarray, m: int) -> np.ndarray:
    """Flat row-major bin index of wrapped points (N,d)."""
    cells = np.minimum((pts * m).astype(np.int64), m - 1)
    flat = cells[..., 0]
    for k in range(1, pts.shape[-1]):
        flat = flat * m + cells[..., k]
    return flat


def _leaf_chunk(sys: SkewProductSystem, p: np.ndarray, leaf_length: float,
                seed: int, domain: str, chunk_index: int, count: int,
                tol: float, max_depth: int) -> tuple[np.ndarray, int]:
    """Leaf points (count,4) for one sample chunk and its non-certified tally."""
    ts = stream(seed, domain, chunk_index).uniform(
        -leaf_length / 2.0, leaf_length / 2.0, size=count)
    e_u = sys.base_split.dir_u.vector()
    q1s = wrap(p[:2] + ts[:, None] * e_u)
    xs = np.broadcast_to(p[2:], (count, 2))
    batch = _u_holonomy_batch(sys, p[:2], q1s, xs, tol, max_depth,
                              want_jacobian=False)
    pts = np.concatenate([q1s, batch.points], axis=1)
    return pts, int(np.sum(~batch.certified))


def _birkhoff_chunk(sys, p, schedule, leaf_length, m, seed, domain,
                    chunk_index, count, tol, max_depth
                    ) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray, int]:
    """One chunk's histogram counts at every checkpoint (plus shift layers)."""
    pts, bad = _leaf_chunk(sys, p, leaf_length, seed, domain, chunk_index,
                           count, tol, max_depth)
    nbins = m ** 4
    counts = np.zeros(nbins, dtype=np.int64)
    layer0 = np.bincount(_bin_index(pts, m), minlength=nbins).astype(np.int64)
    snaps: list[np.ndarray] = []
    ends: list[np.ndarray] = []
    last = schedule[-1]
    marks = set(schedule)
    for j in range(last):
        counts += np.bincount(_bin_index(pts, m), minlength=nbins)
        pts = sys.apply(pts)
        if (j + 1) in marks:
            snaps.append(counts.copy())
            ends.append(np.bincount(_bin_index(pts, m), minlength=nbins)
                        .astype(np.int64))
    return snaps, ends, layer0, bad


def _birkhoff_counts(sys: SkewProductSystem, p, schedule, samples: int,
                     leaf_length: float, m: int, seed: int, domain: str,
                     workers: int | None, tol: float, max_depth: int):
    """Chunked deterministic accumulation over the sample index space.

    Returns (per-checkpoint counts, per-checkpoint end-layer counts,
    layer-0 counts, non-certified count). All counts are int64 vectors.
    """
    schedule = sorted(set(int(n) for n in schedule))
    if not schedule or schedule[0] < 1:
        raise ValueError("schedule must contain positive iteration counts")
    parr = point_array(p).reshape(4)
    tasks = [(sys, parr, schedule, leaf_length, m, seed, domain, ci, stop - start,
              tol, max_depth)
             for ci, start, stop in chunk_ranges(samples, CHUNK)]
    results = chunked_map(_birkhoff_chunk, tasks, resolve_workers(workers))

    nbins = m ** 4
    snaps = [np.zeros(nbins, dtype=np.int64) for _ in schedule]
    ends = [np.zeros(nbins, dtype=np.int64) for _ in schedule]
    layer0 = np.zeros(nbins, dtype=np.int64)
    bad = 0
    for csnaps, cends, clayer0, cbad in results:
        for k in range(len(schedule)):
            snaps[k] += csnaps[k]
            ends[k] += cends[k]
        layer0 += clayer0
        bad += cbad
    if bad > 0.01 * samples:
        raise NonConvergenceError(
            f"{bad} of {samples} leaf samples lack certified holonomy "
            "convergence (limit is 1%)", residual=bad / samples)
    return schedule, snaps, ends, layer0, bad


def _meta(sys: SkewProductSystem, n: int, samples: int, leaf_length: float,
          seed: int, m: int) -> dict:
    return {"system": system_hash(sys), "n": n, "samples": samples,
            "leaf_length": leaf_length, "seed": seed, "bins": m}


def birkhoff_pushforward(sys: SkewProductSystem, p, n: int,
                         samples_per_leaf: int = 10_000,
                         leaf_length: float = 1.0, seed: int = 0,
                         bins: int = DEFAULT_BINS, workers: int | None = 1,
                         tol: float = 1e-9, max_depth: int = 60,
                         domain: str = "birkhoff") -> EmpiricalMeasure:
    """Average of the first n leaf-measure pushforwards, as a histogram."""
    schedule, snaps, _, _, _ = _birkhoff_counts(
        sys, p, [n], samples_per_leaf, leaf_length, bins, seed, domain,
        workers, tol, max_depth)
    return EmpiricalMeasure.from_counts(
        snaps[0], bins, 4, _meta(sys, schedule[0], samples_per_leaf,
                                 leaf_length, seed, bins))


def birkhoff_pair(sys: SkewProductSystem, p, n: int,
                  samples_per_leaf: int = 10_000, leaf_length: float = 1.0,
                  seed: int = 0, bins: int = DEFAULT_BINS,
                  workers: int | None = 1, tol: float = 1e-9,
                  max_depth: int = 60,
                  domain: str = "birkhoff") -> tuple[EmpiricalMeasure, EmpiricalMeasure]:
    """(mu_n, f_* mu_n) from one sample set; the pushforward re-bins the
    same sample points advanced one extra step (layers 1..n instead of 0..n-1)."""
    schedule, snaps, ends, layer0, _ = _birkhoff_counts(
        sys, p, [n], samples_per_leaf, leaf_length, bins, seed, domain,
        workers, tol, max_depth)
    meta = _meta(sys, schedule[0], samples_per_leaf, leaf_length, seed, bins)
    mu = EmpiricalMeasure.from_counts(snaps[0], bins, 4, meta)
    shifted = snaps[0] - layer0 + ends[0]
    pushed = EmpiricalMeasure.from_counts(shifted, bins, 4,
                                          {**meta, "pushforward": 1})
    return mu, pushed


def invariance_defect(sys: SkewProductSystem, p, n: int,
                      samples_per_leaf: int = 10_000, leaf_length: float = 1.0,
                      seed: int = 0, bins: int = DEFAULT_BINS,
                      workers: int | None = 1) -> float:
    """TV(f_* mu_n, mu_n); telescoping gives the a priori bound 1/n."""
    mu, pushed = birkhoff_pair(sys, p, n, samples_per_leaf, leaf_length,
                               seed, bins, workers)
    return measure_distance(pushed, mu)


@dataclass(frozen=True)
class UniquenessReport:
    """Pairwise merge/separation diagnostics across seed points."""

    seeds: np.ndarray            # (S,4)
    schedule: tuple[int, ...]
    pairwise: np.ndarray         # (S,S) fiber-marginal TV at the final n
    curve: np.ndarray            # (len(schedule),) max pairwise TV per n
    verdict: str                 # single-candidate | multiple-candidates | inconclusive
    cluster_count: int
    threshold_single: float
    threshold_multi: float
    samples: int
    bins: int
    noncertified: int
    final_measures: tuple[EmpiricalMeasure, ...] = ()  # per seed, at the final n

    def as_dict(self) -> dict:
        return {
            "seeds": self.seeds.tolist(),
            "schedule": list(self.schedule),
            "pairwise_fiber_tv": self.pairwise.tolist(),
            "max_pairwise_curve": self.curve.tolist(),
            "verdict": self.verdict,
            "cluster_count": self.cluster_count,
            "threshold_single": self.threshold_single,
            "threshold_multi": self.threshold_multi,
            "samples": self.samples,
            "bins": self.bins,
            "noncertified_samples": self.noncertified,
        }


MONOTONE_SLACK = 5e-3  # absorbs sampling noise in the nonincreasing check


def _clusters(dist: np.ndarray, threshold: float) -> int:
    """Single-linkage component count at the given distance threshold."""
    s = dist.shape[0]
    parent = list(range(s))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(s):
        for j in range(i + 1, s):
            if dist[i, j] <= threshold:
                parent[find(i)] = find(j)
    return len({find(i) for i in range(s)})


def uniqueness_probe(sys: SkewProductSystem, seeds, n_schedule=(250, 500, 1000, 2000),
                     samples: int = 10_000, threshold_multi: float = 0.1,
                     threshold_single: float = 0.05, seed: int = 0,
                     bins: int = DEFAULT_BINS, leaf_length: float = 1.0,
                     workers: int | None = 1) -> UniquenessReport:
    """Compare fiber marginals of leaf averages grown from several seeds.

    The verdict is single-candidate when all pairwise fiber TVs end below
    threshold_single and the max pairwise curve is nonincreasing along the
    schedule (within MONOTONE_SLACK); multiple-candidates when some pair
    stays above threshold_multi at the final n; inconclusive otherwise.
    """
    seed_pts = [point_array(s).reshape(4) for s in seeds]
    if len(seed_pts) < 2:
        raise ValueError("uniqueness probe needs at least 2 seed points")
    schedule = sorted(set(int(n) for n in n_schedule))

    fiber_per_seed = []
    finals = []
    bad_total = 0
    for si, sp in enumerate(seed_pts):
        sched, snaps, _, _, bad = _birkhoff_counts(
            sys, sp, schedule, samples, leaf_length, bins, seed,
            f"birkhoff:{si}", workers, 1e-9, 60)
        meta = _meta(sys, sched[-1], samples, leaf_length, seed, bins)
        full = [EmpiricalMeasure.from_counts(c, bins, 4, meta) for c in snaps]
        fiber_per_seed.append([mu.fiber_marginal() for mu in full])
        finals.append(full[-1])
        bad_total += bad

    s = len(seed_pts)
    curve = np.zeros(len(schedule))
    final = np.zeros((s, s))
    for k in range(len(schedule)):
        worst = 0.0
        for i in range(s):
            for j in range(i + 1, s):
                d = measure_distance(fiber_per_seed[i][k], fiber_per_seed[j][k])
                worst = max(worst, d)
                if k == len(schedule) - 1:
                    final[i, j] = final[j, i] = d
        curve[k] = worst

    nonincreasing = bool(np.all(np.diff(curve) <= MONOTONE_SLACK))
    if curve[-1] > threshold_multi:
        verdict = "multiple-candidates"
    elif curve[-1] < threshold_single and nonincreasing:
        verdict = "single-candidate"
    else:
        verdict = "inconclusive"

    return UniquenessReport(
        seeds=np.stack(seed_pts), schedule=tuple(schedule), pairwise=final,
        curve=curve, verdict=verdict,
        cluster_count=_clusters(final, threshold_multi),
        threshold_single=threshold_single, threshold_multi=threshold_multi,
        samples=samples, bins=bins, noncertified=bad_total,
        final_measures=tuple(finals))


@dataclass(frozen=True)
class DensityReport:
    """Cell-coverage curve of the iterated unstable segment on an eps-net."""

    eps: float
    cells_per_axis: int
    coverage: np.ndarray     # (m_max+1,) fraction of cells hit by iterates 0..j
    first_full_m: int | None
    samples: int
    seed: int

    def as_dict(self) -> dict:
        return {
            "eps": self.eps,
            "cells_per_axis": self.cells_per_axis,
            "coverage": self.coverage.tolist(),
            "first_full_m": self.first_full_m,
            "samples": self.samples,
            "seed": self.seed,
        }


def _density_chunk(sys, p, eps_cells, m_max, leaf_length, seed, chunk_index,
                   count, tol, max_depth) -> tuple[np.ndarray, int]:
    pts, bad = _leaf_chunk(sys, p, leaf_length, seed, "density", chunk_index,
                           count, tol, max_depth)
    nbins = eps_cells ** 4
    first_hit = np.full(nbins, np.iinfo(np.int16).max, dtype=np.int16)
    for j in range(m_max + 1):
        idx = _bin_index(pts, eps_cells)
        hit = first_hit[idx] > j
        first_hit[idx[hit]] = j
        if j < m_max:
            pts = sys.apply(pts)
    return first_hit, bad


def density_probe(sys: SkewProductSystem, p, eps: float, m_max: int = 60,
                  samples: int = 100_000, leaf_length: float = 1.0,
                  seed: int = 0, workers: int | None = 1,
                  tol: float = 1e-9, max_depth: int = 60) -> DensityReport:
    """Coverage curve of an eps-net by the forward-iterated leaf sample.

    Cells have side 1/ceil(2/eps) <= eps/2, so a fully covered net implies
    every point of the torus is within eps of some iterate (4d cell diagonal
    = 2 * side <= eps).
    """
    if not 0.0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 0.5)")
    cells = int(np.ceil(2.0 / eps))
    parr = point_array(p).reshape(4)
    tasks = [(sys, parr, cells, m_max, leaf_length, seed, ci, stop - start,
              tol, max_depth)
             for ci, start, stop in chunk_ranges(samples, CHUNK)]
    results = chunked_map(_density_chunk, tasks, resolve_workers(workers))

    first_hit = np.full(cells ** 4, np.iinfo(np.int16).max, dtype=np.int16)
    bad = 0
    for chunk_first, chunk_bad in results:
        first_hit = np.minimum(first_hit, chunk_first)
        bad += chunk_bad
    if bad > 0.01 * samples:
        raise NonConvergenceError(
            f"{bad} of {samples} leaf samples lack certified holonomy "
            "convergence (limit is 1%)", residual=bad / samples)

    total = cells ** 4
    coverage = np.array([np.count_nonzero(first_hit <= j) / total
                         for j in range(m_max + 1)])
    full = np.flatnonzero(coverage >= 1.0)
    return DensityReport(eps=float(eps), cells_per_axis=cells, coverage=coverage,
                         first_full_m=int(full[0]) if full.size else None,
                         samples=samples, seed=seed)


@dataclass(frozen=True)
class SuTorusReport:
    """Atomic-fiber-marginal detection (su-torus signature)."""

    detected: bool
    atoms: tuple[tuple[int, int, float], ...]  # (bin_i, bin_j, weight)
    mass_in_atoms: float
    atom_threshold: float

    def as_dict(self) -> dict:
        return {
            "detected": self.detected,
            "atoms": [list(a) for a in self.atoms],
            "mass_in_atoms": self.mass_in_atoms,
            "atom_threshold": self.atom_threshold,
        }


def su_torus_detect(mu: EmpiricalMeasure, atom_threshold: float = 0.9) -> SuTorusReport:
    """Detects fiber marginals concentrated on at most four bins.

    A measure carried by finitely many su-tori projects, in this skew
    setting, to finitely many fiber points; at histogram resolution that
    appears as nearly full mass on a handful of bins.
    """
    fm = mu.fiber_marginal() if mu.ndim == 4 else mu
    order = np.argsort(fm.weights)[::-1][:4]
    mass = float(fm.weights[order].sum())
    detected = mass >= atom_threshold
    atoms = tuple(
        (int(fm.idx[o] // fm.m), int(fm.idx[o] % fm.m), float(fm.weights[o]))
        for o in order if fm.weights[o] > 0)
    return SuTorusReport(detected=detected, atoms=atoms if detected else atoms,
                         mass_in_atoms=mass, atom_threshold=float(atom_threshold))
