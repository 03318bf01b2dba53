"""Uniform hyper-cubic quantizers with an overflow bin.

Bins are numbered from 0.  Granular bins ``0 .. M-1`` tile the cube
``[-half_width, half_width)^n`` in C order (axis 0 most significant) and
bin ``M`` is the overflow bin, the complement of the cube.  Every cell is
half-open per axis, so the right edge of the cube belongs to the overflow
bin.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import DegenerateRegionError, EvaluationError, InputError, ResourceError
from .mdp import Box, LyapunovCertificate, OutsideBox, as_batch, as_state

DEFAULT_BIN_CAP = 10**7


@dataclass(frozen=True)
class GridQuantizer:
    n: int
    k: int
    half_width: float
    representatives: np.ndarray          # (M + 1, n); last row is the overflow point
    rep_mode: str = "midpoint"
    fallback_bins: tuple = field(default=(), compare=False)

    @property
    def num_granular(self) -> int:
        return self.k ** self.n

    @property
    def num_bins(self) -> int:
        return self.num_granular + 1

    @property
    def overflow_index(self) -> int:
        return self.num_granular

    @property
    def side(self) -> float:
        return 2.0 * self.half_width

    @property
    def delta(self) -> float:
        return self.side / self.k

    @property
    def overflow_rep(self) -> np.ndarray:
        return self.representatives[-1]

    def quantize_batch(self, x) -> np.ndarray:
        x = as_batch(x, self.n)
        hw = self.half_width
        inside = np.all((x >= -hw) & (x < hw), axis=1)
        idx = np.floor((x + hw) / self.delta).astype(np.int64)
        np.clip(idx, 0, self.k - 1, out=idx)
        flat = np.ravel_multi_index(tuple(idx.T), (self.k,) * self.n)
        return np.where(inside, flat, self.num_granular)

    def quantize(self, x) -> int:
        return int(self.quantize_batch(as_state(x, self.n)[None, :])[0])

    def cell_index(self, i: int) -> np.ndarray:
        return np.array(np.unravel_index(i, (self.k,) * self.n))

    def bin_bounds(self, i: int):
        """(lo, hi) corners of granular bin ``i``; None for the overflow bin."""
        if i == self.num_granular:
            return None
        if not 0 <= i < self.num_granular:
            raise InputError(f"bin index {i} out of range")
        lo = -self.half_width + self.cell_index(i) * self.delta
        return lo, lo + self.delta

    def region(self, i: int):
        if i == self.num_granular:
            cube = np.full(self.n, self.half_width)
            return OutsideBox(-cube, cube)
        lo, hi = self.bin_bounds(i)
        return Box(lo, hi)

    def midpoints(self) -> np.ndarray:
        cells = np.indices((self.k,) * self.n).reshape(self.n, -1).T
        return -self.half_width + (cells + 0.5) * self.delta

    def to_record(self) -> dict:
        rec = {
            "n": self.n,
            "k": self.k,
            "half_width": self.half_width,
            "representative_mode": self.rep_mode,
            "overflow_rep": [float(v) for v in self.overflow_rep],
        }
        if self.rep_mode != "midpoint":
            rec["representatives"] = self.representatives[:-1].tolist()
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "GridQuantizer":
        qz = build_uniform(rec["n"], rec["k"], rec["half_width"],
                           overflow_rep=rec.get("overflow_rep"))
        if "representatives" in rec:
            reps = np.vstack([np.asarray(rec["representatives"], dtype=float),
                              qz.overflow_rep[None, :]])
            qz = replace(qz, representatives=reps, rep_mode=rec["representative_mode"])
        return qz


def build_uniform(n: int, k: int, half_width: float, overflow_rep=None,
                  max_bins: int = DEFAULT_BIN_CAP) -> GridQuantizer:
    """Uniform grid of ``k`` bins per axis on ``[-half_width, half_width)^n``."""
    if n < 1 or k < 1:
        raise InputError("need n >= 1 and k >= 1")
    if not half_width > 0 or not math.isfinite(half_width):
        raise InputError(f"half_width must be positive and finite, got {half_width}")
    if k ** n > max_bins:
        raise ResourceError(f"k^n = {k ** n} granular bins exceeds the cap {max_bins}")
    over = np.zeros(n) if overflow_rep is None else as_state(overflow_rep, n)
    qz = GridQuantizer(n=n, k=k, half_width=float(half_width),
                       representatives=np.empty((k ** n + 1, n)))
    reps = np.vstack([qz.midpoints(), over[None, :]])
    return replace(qz, representatives=reps)


def size_for_discounted(cert: LyapunovCertificate, k: int, beta: float, x0):
    """Half-width (C k)^(1/m) that caps the discounted overflow mass at 1/k.

    Returns ``(half_width, C)`` where C bounds the m-th moment of the
    normalized discounted occupation measure started at ``x0``.
    """
    if not 0 < beta < 1:
        raise InputError("beta must lie in (0, 1)")
    if k < 1:
        raise InputError("k must be >= 1")
    C = cert.moment_constant(beta, x0)
    if C <= 0:
        raise DegenerateRegionError(
            "moment constant C is 0 (chain pinned at the origin); supply an explicit half_width"
        )
    return (C * k) ** (1.0 / cert.m), C


def size_for_average(cert: LyapunovCertificate, k: int) -> float:
    """Half-width (b k)^(1/m) for the average-cost construction.

    ``cert.b`` is read as the average-form drift constant (see
    ``LyapunovCertificate.average_form``).
    """
    if k < 1:
        raise InputError("k must be >= 1")
    if cert.b <= 0:
        raise DegenerateRegionError("b = 0 collapses the region; supply b > 0 or a half_width")
    return (cert.b * k) ** (1.0 / cert.m)


def weighted_median(values, weights=None) -> float:
    """Minimizer of sum_i w_i |v_i - y|; midpoint of the minimizing interval on ties."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise InputError("median of an empty sample")
    w = np.ones_like(v) if weights is None else np.asarray(weights, dtype=float).ravel()
    order = np.argsort(v, kind="stable")
    v, w = v[order], w[order]
    keep = w > 0
    v, w = v[keep], w[keep]
    cum = np.cumsum(w)
    half = cum[-1] / 2.0
    j = int(np.searchsorted(cum, half * (1 - 1e-12)))
    if abs(cum[j] - half) <= 1e-12 * cum[-1] and j + 1 < v.size:
        return 0.5 * (v[j] + v[j + 1])
    return float(v[j])


def _group_by_bin(bins):
    """Yield (bin, indices) for each occupied bin, in increasing bin order."""
    order = np.argsort(bins, kind="stable")
    sb = bins[order]
    cuts = np.flatnonzero(np.diff(sb)) + 1
    for chunk in np.split(order, cuts):
        if chunk.size:
            yield int(bins[chunk[0]]), chunk


def _states_weights(samples, n):
    if hasattr(samples, "states"):
        return as_batch(samples.states, n), np.asarray(samples.weights, dtype=float)
    x = as_batch(samples, n)
    return x, np.full(x.shape[0], 1.0 / x.shape[0])


def set_median_representatives(qz: GridQuantizer, samples) -> GridQuantizer:
    """Replace each granular representative by the coordinate-wise weighted median
    of the samples falling in that bin.

    Bins without samples keep their midpoint (listed in ``fallback_bins``);
    the overflow representative is never changed.
    """
    x, w = _states_weights(samples, qz.n)
    reps = qz.representatives.copy()
    filled = set()
    for i, sel in _group_by_bin(qz.quantize_batch(x)):
        if i == qz.overflow_index or w[sel].sum() <= 0:
            continue
        reps[i] = [weighted_median(x[sel, d], w[sel]) for d in range(qz.n)]
        filled.add(i)
    empty = [i for i in range(qz.num_granular) if i not in filled]
    if empty:
        warnings.warn(f"{len(empty)} bins received no samples; keeping midpoints",
                      stacklevel=2)
    return replace(qz, representatives=reps, rep_mode="median", fallback_bins=tuple(empty))


class BinWeighting:
    """Per-bin normalized measure used to average cost and transitions."""

    kind = "abstract"

    def draw(self, qz: GridQuantizer, i: int, size: int, rng) -> np.ndarray:
        raise NotImplementedError

    def loss_batch(self, qz: GridQuantizer, x: np.ndarray, bins: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class DiracAtRepresentative(BinWeighting):
    kind = "dirac"

    def draw(self, qz, i, size, rng):
        return np.repeat(qz.representatives[i][None, :], size, axis=0)

    def loss_batch(self, qz, x, bins):
        return np.abs(x - qz.representatives[bins]).sum(axis=1)


class UniformInBin(BinWeighting):
    """Uniform on each granular cell; the unbounded overflow bin falls back to its
    representative point."""

    kind = "uniform"

    def draw(self, qz, i, size, rng):
        if i == qz.overflow_index:
            return np.repeat(qz.overflow_rep[None, :], size, axis=0)
        lo, hi = qz.bin_bounds(i)
        return lo + (hi - lo) * rng.random((size, qz.n))

    def loss_batch(self, qz, x, bins):
        out = np.empty(x.shape[0])
        over = bins == qz.overflow_index
        out[over] = np.abs(x[over] - qz.overflow_rep).sum(axis=1)
        g = ~over
        if g.any():
            cells = np.array(np.unravel_index(bins[g], (qz.k,) * qz.n)).T
            lo = -qz.half_width + cells * qz.delta
            a = x[g] - lo
            b = qz.delta - a
            out[g] = ((a * a + b * b) / (2.0 * qz.delta)).sum(axis=1)
        return out


class Empirical(BinWeighting):
    """Weighted sample points per bin (e.g. from an occupation or invariant measure).

    Bins without samples raise :class:`EvaluationError` unless a ``fallback``
    weighting is given, in which case it is used there.
    """

    kind = "empirical"

    def __init__(self, qz: GridQuantizer, states, weights=None,
                 fallback: Optional[BinWeighting] = None):
        self.fallback = fallback
        x = as_batch(states, qz.n)
        w = np.ones(x.shape[0]) if weights is None else np.asarray(weights, dtype=float)
        if np.any(w < 0):
            raise InputError("sample weights must be nonnegative")
        self.bins = {}
        for i, sel in _group_by_bin(qz.quantize_batch(x)):
            ws = w[sel]
            if ws.sum() > 0:
                self.bins[i] = (x[sel], ws / ws.sum())

    @classmethod
    def from_samples(cls, qz, samples, fallback=None) -> "Empirical":
        x, w = _states_weights(samples, qz.n)
        return cls(qz, x, w, fallback)

    def missing(self, qz) -> list[int]:
        return [i for i in range(qz.num_bins) if i not in self.bins]

    def _get(self, i):
        try:
            return self.bins[int(i)]
        except KeyError:
            raise EvaluationError(f"empirical weighting has no samples in bin {int(i)}") from None

    def draw(self, qz, i, size, rng):
        if self.fallback is not None and int(i) not in self.bins:
            return self.fallback.draw(qz, i, size, rng)
        pts, ws = self._get(i)
        return pts[rng.choice(pts.shape[0], size=size, p=ws)]

    def loss_batch(self, qz, x, bins):
        out = np.zeros(x.shape[0])
        for i, sel in _group_by_bin(bins):
            if self.fallback is not None and i not in self.bins:
                out[sel] = self.fallback.loss_batch(qz, x[sel], bins[sel])
                continue
            pts, ws = self._get(i)
            for d in range(qz.n):
                out[sel] += _mean_abs_deviation(x[sel, d], pts[:, d], ws)
        return out


def _mean_abs_deviation(q, values, weights):
    """sum_j w_j |q - v_j| for every query q, via sorted prefix sums."""
    order = np.argsort(values)
    v, w = values[order], weights[order]
    cw = np.concatenate([[0.0], np.cumsum(w)])
    cwv = np.concatenate([[0.0], np.cumsum(w * v)])
    j = np.searchsorted(v, q, side="right")
    below = q * cw[j] - cwv[j]
    above = (cwv[-1] - cwv[j]) - q * (cw[-1] - cw[j])
    return below + above


def make_weighting(kind: str, qz: GridQuantizer, samples=None) -> BinWeighting:
    if kind == "dirac":
        return DiracAtRepresentative()
    if kind == "uniform":
        return UniformInBin()
    if kind == "empirical":
        if samples is None:
            raise InputError("empirical weighting needs samples")
        return Empirical.from_samples(qz, samples)
    raise InputError(f"unknown weighting {kind!r}")


def loss(qz: GridQuantizer, weighting: BinWeighting, x) -> float:
    """Expected l1 distance from ``x`` to a draw of its bin's weighting measure."""
    x = as_state(x, qz.n)[None, :]
    return float(weighting.loss_batch(qz, x, qz.quantize_batch(x))[0])


def loss_batch(qz: GridQuantizer, weighting: BinWeighting, x) -> np.ndarray:
    x = as_batch(x, qz.n)
    return weighting.loss_batch(qz, x, qz.quantize_batch(x))
