"""Fryum-wheel segmentation of a radially symmetric Gaussian beam.

A central disk is surrounded by annuli; annulus ``k`` is split into
``A[k]`` equal angular sectors.  Radii are placed so every macropixel holds
the same probability ``alpha`` and an auxiliary fractional segment beyond
the aperture absorbs the remaining mass.

Discard bands straddle every internal boundary (ring circles and sector
spokes, never the aperture circle).  A band of total width ``w`` is split
``w/2`` on each side, so the kept regions of two neighbours are exactly
``w`` apart.  Spoke bands are constant-width strips around the spoke
segment.  For a point of ring ``k`` lying outside the radial bands, the
distance to a spoke at angular offset ``phi`` is ``r sin(phi)`` when
``phi < pi/2`` and at least the band half-width otherwise, which gives the
kept angular extent ``D - 2 asin(g/r)`` used throughout.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import integrate, optimize

from .biphoton import BeamStats

DISCARDED = -1
OUTSIDE_APERTURE = -2
PGM_DISCARDED = 65534
PGM_OUTSIDE = 65535


class InvalidSegmentation(ValueError):
    pass


@dataclass(frozen=True)
class MacropixelId:
    """Ring/sector label of a macropixel, or one of the two sentinels."""

    ring: int | None = None
    sector: int | None = None
    linear: int | None = None
    sentinel: str | None = None  # "discarded" | "outside"

    @property
    def is_sentinel(self) -> bool:
        return self.sentinel is not None


@dataclass(frozen=True)
class Segmentation:
    A: tuple[int, ...]
    radii: tuple[float, ...]
    alpha: float
    a_aux: float
    sigma: float
    sigma_cond: float
    sector_phase: tuple[float, ...]
    band_multiplier: float = 0.0
    widening: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.widening:
            object.__setattr__(self, "widening", (0.0,) * self.d)
        if len(self.widening) != self.d:
            raise ValueError("widening must hold one entry per macropixel")

    @property
    def N(self) -> int:
        return len(self.A)

    @property
    def offsets(self) -> np.ndarray:
        """``c_k``: number of macropixels inside ``r_k`` (length N+1)."""
        return np.concatenate(([0], np.cumsum(self.A)))

    @property
    def d(self) -> int:
        return int(sum(self.A))

    @property
    def r_ap(self) -> float:
        return self.radii[-1]

    @property
    def half_band(self) -> float:
        return 0.5 * self.band_multiplier * self.sigma_cond

    @property
    def in_aperture_probability(self) -> float:
        return self.d * self.alpha

    def ring_of(self, linear: int) -> int:
        return int(np.searchsorted(self.offsets, linear, side="right") - 1)

    def macropixel(self, linear: int) -> MacropixelId:
        if linear == DISCARDED:
            return MacropixelId(sentinel="discarded")
        if linear == OUTSIDE_APERTURE:
            return MacropixelId(sentinel="outside")
        if not 0 <= linear < self.d:
            raise ValueError(f"label {linear} out of range for d={self.d}")
        k = self.ring_of(linear)
        return MacropixelId(k, int(linear - self.offsets[k]), int(linear))

    def linear(self, ring: int, sector: int) -> int:
        if not (0 <= ring < self.N and 0 <= sector < self.A[ring]):
            raise ValueError(f"no macropixel at ring {ring}, sector {sector}")
        return int(self.offsets[ring] + sector)

    def band_gap(self, linear: int) -> float:
        """Distance from this macropixel's band-bearing boundaries to its kept region."""
        if self.band_multiplier == 0 and self.widening[linear] == 0:
            return 0.0
        return self.half_band + self.widening[linear]

    # -- serialisation -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "A": list(self.A),
            "aAux": self.a_aux,
            "alpha": self.alpha,
            "R_um": list(self.radii),
            "bandMultiplier": self.band_multiplier,
            "perBoundaryWidening": list(self.widening),
            "sectorPhase": list(self.sector_phase),
            "sigma_um": self.sigma,
            "sigmaCond_um": self.sigma_cond,
            "d": self.d,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Segmentation":
        try:
            seg = cls(
                A=tuple(int(a) for a in data["A"]),
                radii=tuple(float(r) for r in data["R_um"]),
                alpha=float(data["alpha"]),
                a_aux=float(data["aAux"]),
                sigma=float(data["sigma_um"]),
                sigma_cond=float(data["sigmaCond_um"]),
                sector_phase=tuple(float(x) for x in data["sectorPhase"]),
                band_multiplier=float(data.get("bandMultiplier", 0.0)),
                widening=tuple(float(x) for x in data.get("perBoundaryWidening", ())),
            )
        except KeyError as exc:
            raise ValueError(f"segmentation document lacks {exc}") from None
        if "d" in data and int(data["d"]) != seg.d:
            raise ValueError("segmentation document has inconsistent d")
        if len(seg.radii) != seg.N + 1:
            raise ValueError("R_um must have len(A)+1 entries")
        return seg

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def geometry_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "Segmentation":
        """Read a bare segmentation document or one nested under a ``segmentation`` key."""
        doc = json.loads(Path(path).read_text())
        if isinstance(doc, dict) and isinstance(doc.get("segmentation"), dict):
            doc = doc["segmentation"]
        return cls.from_dict(doc)


def auxiliary_segment(c_N: int, r_ap: float, sigma: float) -> float:
    exponent = r_ap**2 / (2.0 * sigma**2)
    if exponent > 700.0:
        return 0.0
    return c_N / math.expm1(exponent)


def ring_radii(A, sigma: float, r_ap: float) -> tuple[np.ndarray, float, float]:
    """Radii ``r_0..r_N``, ``alpha`` and ``a_aux`` for the angular counts ``A``."""
    c = np.concatenate(([0], np.cumsum(A)))
    c_N = int(c[-1])
    a_aux = auxiliary_segment(c_N, r_ap, sigma)
    alpha = 1.0 / (c_N + a_aux)
    frac = c[:-1] * alpha
    if np.any(frac >= 1.0):
        raise InvalidSegmentation("c_k * alpha >= 1 for an interior radius")
    radii = sigma * np.sqrt(-2.0 * np.log1p(-frac))
    return np.append(radii, r_ap), alpha, a_aux


def build_segmentation(A, stats: BeamStats, r_ap: float, sector_phase=None) -> Segmentation:
    """Equiprobable segmentation for angular counts ``A`` inside aperture ``r_ap``."""
    A = tuple(int(a) for a in A)
    if not A:
        raise InvalidSegmentation("A must be non-empty")
    if A[0] != 1:
        raise InvalidSegmentation("the innermost macropixel must be a full disk (a_0 = 1)")
    if any(a < 1 for a in A):
        raise InvalidSegmentation("angular counts must be >= 1")
    if not (r_ap > 0) or math.isnan(r_ap):
        raise InvalidSegmentation(f"aperture radius must be positive, got {r_ap}")
    radii, alpha, a_aux = ring_radii(A, stats.sigma, r_ap)
    if not np.all(np.diff(radii) > 0):
        raise InvalidSegmentation("aperture too small: radii are not strictly increasing")
    if sector_phase is None:
        sector_phase = (0.0,) * len(A)
    if len(sector_phase) != len(A):
        raise ValueError("sector_phase needs one entry per ring")
    return Segmentation(
        A=A,
        radii=tuple(float(r) for r in radii),
        alpha=alpha,
        a_aux=a_aux,
        sigma=stats.sigma,
        sigma_cond=stats.sigma_cond,
        sector_phase=tuple(float(p) for p in sector_phase),
    )


# -- kept probability --------------------------------------------------

def _ring_limits(radii, k: int, n_rings: int, gap: float) -> tuple[float, float]:
    lo = radii[k] + gap if k > 0 else 0.0
    hi = radii[k + 1] - gap if k < n_rings - 1 else radii[k + 1]
    return lo, hi


def sector_kept_probability(lo: float, hi: float, a: int, gap: float, sigma: float) -> float:
    """Mass of one sector of an ``a``-sector ring between ``lo`` and ``hi`` with spoke gap ``gap``."""
    if not hi > lo:
        return 0.0
    tail_lo = math.exp(-(lo**2) / (2 * sigma**2))
    tail_hi = math.exp(-(hi**2) / (2 * sigma**2)) if math.isfinite(hi) else 0.0
    if a == 1:
        return tail_lo - tail_hi
    width = 2.0 * math.pi / a
    if gap == 0.0:
        return (tail_lo - tail_hi) / a
    if width <= math.pi and gap >= hi:
        return 0.0

    def integrand(r):
        ang = width - 2.0 * math.asin(min(1.0, gap / r))
        return math.exp(-r * r / (2 * sigma**2)) * r * max(0.0, ang)

    # the kept angle vanishes below r* = gap / sin(width/2) for narrow sectors
    start = lo
    if width < math.pi:
        start = max(lo, gap / math.sin(width / 2.0))
    if not hi > start:
        return 0.0
    upper = hi if math.isfinite(hi) else max(start, 0.0) + 40.0 * sigma
    val, _ = integrate.quad(integrand, start, upper, epsabs=1e-15, epsrel=1e-12, limit=200)
    return val / (2.0 * math.pi * sigma**2)


def _ring_sector_probability(seg: Segmentation, k: int, gap: float) -> float:
    lo, hi = _ring_limits(seg.radii, k, seg.N, gap)
    spoke_gap = gap if seg.A[k] > 1 else 0.0
    return sector_kept_probability(lo, hi, seg.A[k], spoke_gap, seg.sigma)


def kept_probability(seg: Segmentation, label, stats: BeamStats | None = None) -> float:
    """Probability of landing in the kept region of one macropixel."""
    if isinstance(label, MacropixelId):
        if label.is_sentinel:
            raise ValueError("kept probability is undefined for sentinel labels")
        label = label.linear
    label = int(label)
    if label < 0:
        raise ValueError("kept probability is undefined for sentinel labels")
    seg = _with_stats(seg, stats)
    k = seg.ring_of(label)
    gap = seg.band_gap(label)
    if gap == 0.0:
        return seg.alpha
    return _ring_sector_probability(seg, k, gap)


def kept_probabilities(seg: Segmentation, stats: BeamStats | None = None) -> np.ndarray:
    seg = _with_stats(seg, stats)
    out = np.empty(seg.d)
    cache: dict[tuple[int, float], float] = {}
    for i in range(seg.d):
        key = (seg.ring_of(i), seg.band_gap(i))
        if key not in cache:
            cache[key] = seg.alpha if key[1] == 0.0 else _ring_sector_probability(seg, *key)
        out[i] = cache[key]
    return out


def total_kept_probability(seg: Segmentation, stats: BeamStats | None = None) -> float:
    return float(kept_probabilities(seg, stats).sum())


def discarded_probability(seg: Segmentation, stats: BeamStats | None = None) -> float:
    """In-aperture mass lying in discard bands (the union of all bands)."""
    return seg.in_aperture_probability - total_kept_probability(seg, stats)


def unshared_discarded_probability(seg: Segmentation) -> float:
    """Mass discarded if every macropixel trimmed the full band width on its own side.

    This is the non-overlapping counterpart of :func:`discarded_probability`
    and serves as the reference for the overlap advantage.
    """
    full = seg.band_multiplier * seg.sigma_cond
    total = 0.0
    for k, a in enumerate(seg.A):
        lo, hi = _ring_limits(seg.radii, k, seg.N, full)
        total += a * sector_kept_probability(lo, hi, a, full if a > 1 else 0.0, seg.sigma)
    return seg.in_aperture_probability - total


def _with_stats(seg: Segmentation, stats: BeamStats | None) -> Segmentation:
    if stats is None:
        return seg
    if not (math.isclose(stats.sigma, seg.sigma, rel_tol=1e-12)
            and math.isclose(stats.sigma_cond, seg.sigma_cond, rel_tol=1e-12)):
        raise ValueError("beam statistics differ from those the segmentation was built with")
    return seg


# -- bands and equalisation ---------------------------------------------

def apply_discard_bands(seg: Segmentation, stats: BeamStats | None = None, k: float = 3.0) -> Segmentation:
    """Put a band of total width ``k * sigma_cond`` on every internal boundary."""
    if k < 0:
        raise ValueError("band multiplier must be non-negative")
    if stats is not None:
        seg = replace(seg, sigma=stats.sigma, sigma_cond=stats.sigma_cond)
    out = replace(seg, band_multiplier=float(k), widening=(0.0,) * seg.d)
    if k > 0:
        probs = kept_probabilities(out)
        if np.any(probs <= 0):
            bad = [int(i) for i in np.flatnonzero(probs <= 0)]
            raise InvalidSegmentation(f"discard bands leave no kept region in macropixels {bad}")
    return out


def equalize_kept_probability(seg: Segmentation, stats: BeamStats | None = None,
                              rtol: float = 1e-9) -> Segmentation:
    """Widen each over-probable macropixel's own band until all kept masses match the minimum."""
    seg = _with_stats(seg, stats)
    probs = kept_probabilities(seg)
    if np.any(probs <= 0):
        raise InvalidSegmentation("equalisation needs positive kept probabilities")
    target = float(probs.min())
    widening = list(seg.widening)
    if seg.N == 1 and np.any(probs > target * (1.0 + rtol)):
        raise InvalidSegmentation("a single-ring segmentation has no boundary to widen")
    solved: dict[tuple[int, float], float] = {}
    for i in range(seg.d):
        if probs[i] <= target * (1.0 + rtol):
            continue
        ring = seg.ring_of(i)
        base = seg.half_band + seg.widening[i]
        key = (ring, base)
        if key not in solved:
            lo, hi = _ring_limits(seg.radii, ring, seg.N, base)
            span = hi - lo if math.isfinite(hi) else 40.0 * seg.sigma
            f = lambda w: _ring_sector_probability(seg, ring, base + w) - target
            if f(span) > 0:
                raise InvalidSegmentation(f"cannot equalise macropixel {i} within band limits")
            solved[key] = optimize.brentq(f, 0.0, span, xtol=1e-15 * max(1.0, seg.sigma), rtol=1e-14)
        widening[i] = seg.widening[i] + solved[key]
    return replace(seg, widening=tuple(widening))


def equalized_probability(seg: Segmentation) -> float:
    """``d * q*``: total kept mass once every macropixel is trimmed to the least probable one."""
    return seg.d * float(kept_probabilities(seg).min())


# -- classification -------------------------------------------------------

def classify_points(seg: Segmentation, points, apply_bands: bool = True) -> np.ndarray:
    """Vectorised macropixel labels (``DISCARDED``/``OUTSIDE_APERTURE`` sentinels)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    r = np.hypot(x, y)
    theta = np.mod(np.arctan2(y, x), 2.0 * math.pi)
    radii = np.asarray(seg.radii)
    A = np.asarray(seg.A)
    offsets = seg.offsets
    ring = np.clip(np.searchsorted(radii, r, side="right") - 1, 0, seg.N - 1)
    a = A[ring]
    width = 2.0 * math.pi / a
    phase = np.asarray(seg.sector_phase)[ring]
    rel = np.mod(theta - phase, 2.0 * math.pi)
    sector = np.minimum(np.floor(rel / width).astype(np.int64), a - 1)
    labels = offsets[ring] + sector

    if apply_bands and (seg.band_multiplier > 0 or any(seg.widening)):
        gap = seg.half_band + np.asarray(seg.widening)[labels]
        if seg.band_multiplier == 0:
            gap = np.asarray(seg.widening)[labels]
        inner = radii[ring]
        outer = radii[np.minimum(ring + 1, seg.N)]
        drop = (ring > 0) & (r < inner + gap)
        drop |= (ring < seg.N - 1) & (r > outer - gap)
        phi = rel - sector * width
        for ang in (phi, width - phi):
            drop |= (a > 1) & (ang < 0.5 * math.pi) & (r * np.sin(ang) < gap)
        labels = np.where(drop, DISCARDED, labels)
    return np.where(r > seg.r_ap, OUTSIDE_APERTURE, labels).astype(np.int64)


def classify(seg: Segmentation, point, apply_bands: bool = True) -> MacropixelId:
    return seg.macropixel(int(classify_points(seg, [point], apply_bands)[0]))


# -- neighbours and crosstalk ----------------------------------------------

def neighbours(seg: Segmentation) -> list[set[int]]:
    """Macropixels sharing a boundary of positive length."""
    out: list[set[int]] = [set() for _ in range(seg.d)]
    offs = seg.offsets
    for k, a in enumerate(seg.A):
        if a >= 2:
            for j in range(a):
                i = offs[k] + j
                out[i].add(int(offs[k] + (j + 1) % a))
                out[i].add(int(offs[k] + (j - 1) % a))
        if k + 1 < seg.N:
            b = seg.A[k + 1]
            for j in range(a):
                s0 = seg.sector_phase[k] + 2 * math.pi * j / a
                s1 = s0 + 2 * math.pi / a
                for m in range(b):
                    t0 = seg.sector_phase[k + 1] + 2 * math.pi * m / b
                    for shift in (-2 * math.pi, 0.0, 2 * math.pi):
                        lo, hi = max(s0, t0 + shift), min(s1, t0 + shift + 2 * math.pi / b)
                        if hi - lo > 1e-12:
                            i, n = int(offs[k] + j), int(offs[k + 1] + m)
                            out[i].add(n)
                            out[n].add(i)
                            break
    for i in range(seg.d):
        out[i].discard(i)
    return out


def mean_neighbour_count(seg: Segmentation) -> float:
    return float(np.mean([len(n) for n in neighbours(seg)]))


def tail_bound_epsilon(seg: Segmentation) -> float:
    """Conservative QDER: two-sided Gaussian tail beyond the band, times mean neighbour count."""
    tail = math.erfc(seg.band_multiplier / math.sqrt(2.0))
    return min(1.0, tail * mean_neighbour_count(seg))


@dataclass
class CrosstalkResult:
    matrix: np.ndarray  # joint probability Alice kept in i, Bob kept in j
    epsilon: float
    epsilon_stderr: float
    samples: int
    mode: str

    @property
    def joint_kept(self) -> float:
        return float(self.matrix.sum())


def predicted_crosstalk(seg: Segmentation, stats: BeamStats | None = None, n_samples: int = 1_000_000,
                        seed: int = 0, mode: str = "both", chunk: int = 250_000) -> CrosstalkResult:
    """Monte Carlo estimate of the d x d coincidence matrix for correlated partners.

    Alice's photon follows the beam marginal; Bob's photon is drawn from the
    conditional Gaussian of width ``sigma_cond`` around the correlated image
    of Alice's point.  ``mode`` says who applies the discard bands.
    """
    if mode not in ("both", "alice", "bob"):
        raise ValueError(f"unknown discard mode {mode!r}")
    if stats is not None:
        seg = replace(seg, sigma=stats.sigma, sigma_cond=stats.sigma_cond)
    rho = math.sqrt(max(0.0, 1.0 - (seg.sigma_cond / seg.sigma) ** 2))
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    counts = np.zeros(seg.d * seg.d, dtype=np.int64)
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        z = rng.standard_normal((2, m, 2))
        a_pts = seg.sigma * z[0]
        b_pts = rho * a_pts + seg.sigma_cond * z[1]
        la = classify_points(seg, a_pts, apply_bands=mode in ("both", "alice"))
        lb = classify_points(seg, b_pts, apply_bands=mode in ("both", "bob"))
        ok = (la >= 0) & (lb >= 0)
        counts += np.bincount(la[ok] * seg.d + lb[ok], minlength=seg.d * seg.d)
        done += m
    matrix = counts.reshape(seg.d, seg.d) / n_samples
    kept = counts.sum()
    if kept == 0:
        return CrosstalkResult(matrix, 0.0, 0.0, n_samples, mode)
    eps = max(0.0, 1.0 - np.trace(matrix) / matrix.sum())
    return CrosstalkResult(matrix, float(eps), float(math.sqrt(max(eps * (1 - eps), 1e-300) / kept)),
                           n_samples, mode)


# -- rasterisation -----------------------------------------------------------

@dataclass(frozen=True)
class PixelGrid:
    """Square-pixel detector; ``origin`` is the beam centre in pixel units."""

    pitch: float
    width: int
    height: int
    origin: tuple[float, float] = field(default=None)

    def __post_init__(self):
        if not self.pitch > 0:
            raise ValueError("pixel pitch must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("grid needs at least one pixel")
        if self.origin is None:
            object.__setattr__(self, "origin", (self.width / 2.0, self.height / 2.0))

    @classmethod
    def covering(cls, r_ap: float, pitch: float) -> "PixelGrid":
        n = 2 * int(math.ceil(r_ap / pitch)) + 2
        return cls(pitch, n, n)

    def covers(self, r_ap: float) -> bool:
        ox, oy = self.origin
        return (ox * self.pitch >= r_ap and (self.width - ox) * self.pitch >= r_ap
                and oy * self.pitch >= r_ap and (self.height - oy) * self.pitch >= r_ap)

    def centers(self) -> np.ndarray:
        ox, oy = self.origin
        xs = (np.arange(self.width) + 0.5 - ox) * self.pitch
        ys = (np.arange(self.height) + 0.5 - oy) * self.pitch
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def pixel_of(self, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Column, row and in-bounds mask for detector-frame points."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        col = np.floor(pts[:, 0] / self.pitch + self.origin[0]).astype(np.int64)
        row = np.floor(pts[:, 1] / self.pitch + self.origin[1]).astype(np.int64)
        ok = (col >= 0) & (col < self.width) & (row >= 0) & (row < self.height)
        return col, row, ok

    def snap(self, points) -> tuple[np.ndarray, np.ndarray]:
        col, row, ok = self.pixel_of(points)
        ox, oy = self.origin
        snapped = np.stack([(col + 0.5 - ox) * self.pitch, (row + 0.5 - oy) * self.pitch], axis=1)
        return snapped, ok


@dataclass
class LabelMap:
    labels: np.ndarray  # (height, width) int64 with sentinels
    grid: PixelGrid
    coarse: bool

    def discarded_fraction(self) -> float:
        return float(np.mean(self.labels == DISCARDED))

    def write_pgm(self, path) -> None:
        data = self.labels.astype(np.int64)
        out = np.where(data == DISCARDED, PGM_DISCARDED,
                       np.where(data == OUTSIDE_APERTURE, PGM_OUTSIDE, data)).astype(">u2")
        h, w = out.shape
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
            fh.write(out.tobytes())

    def write_csv(self, path) -> None:
        np.savetxt(path, self.labels, fmt="%d", delimiter=",")


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    # exactly one whitespace byte separates the header from the raster
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise ValueError("not a binary PGM file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 65535:
        raise ValueError("expected a 16-bit PGM")
    data = np.frombuffer(raw[m.end():m.end() + 2 * w * h], dtype=">u2").reshape(h, w).astype(np.int64)
    return np.where(data == PGM_DISCARDED, DISCARDED, np.where(data == PGM_OUTSIDE, OUTSIDE_APERTURE, data))


def rasterize(seg: Segmentation, grid: PixelGrid, apply_bands: bool = True) -> LabelMap:
    """Label every pixel by classifying its centre."""
    if not grid.covers(seg.r_ap):
        raise ValueError("pixel grid does not cover the aperture")
    coarse = grid.pitch > seg.sigma_cond
    if coarse:
        warnings.warn(f"pixel pitch {grid.pitch:g} exceeds sigma_cond {seg.sigma_cond:g}", stacklevel=2)
    labels = np.empty(grid.width * grid.height, dtype=np.int64)
    centers = grid.centers()
    step = max(1, 1_000_000 // grid.width) * grid.width
    for start in range(0, len(centers), step):
        labels[start:start + step] = classify_points(seg, centers[start:start + step], apply_bands)
    return LabelMap(labels.reshape(grid.height, grid.width), grid, coarse)
