"""Double-Gaussian model of the SPDC biphoton state.

Per transverse axis the two-photon position amplitude factorises into a
pump Gaussian in the sum coordinate (width ``w0``) and a phase-matching
Gaussian in the difference coordinate (width ``b``).  The momentum
amplitude is the Fourier dual: sum width ``1/w0``, difference width ``1/b``.
Everything here follows from those two bivariate Gaussians.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize


class Basis(enum.IntEnum):
    POSITION = 0
    MOMENTUM = 1

    @property
    def short(self) -> str:
        return "x" if self is Basis.POSITION else "p"

    @classmethod
    def parse(cls, value) -> "Basis":
        if isinstance(value, Basis):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).strip().lower()
        if key in ("x", "pos", "position"):
            return cls.POSITION
        if key in ("p", "q", "mom", "momentum"):
            return cls.MOMENTUM
        raise ValueError(f"unknown basis {value!r}")


@dataclass(frozen=True)
class SourceParams:
    """Pump waist ``w0`` and phase-matching length ``b`` (both in um)."""

    w0: float
    b: float

    def __post_init__(self):
        if not (self.w0 > 0 and self.b > 0):
            raise ValueError(f"w0 and b must be positive, got w0={self.w0}, b={self.b}")
        if not (math.isfinite(self.w0) and math.isfinite(self.b)):
            raise ValueError("w0 and b must be finite")

    @classmethod
    def from_crystal(cls, w0: float, crystal_length_mm: float, pump_wavevector_per_um: float):
        """Build from crystal length L (mm) and pump wavevector k_p (1/um): b^2 = L/(3 k_p)."""
        if crystal_length_mm <= 0 or pump_wavevector_per_um <= 0:
            raise ValueError("crystal length and pump wavevector must be positive")
        length_um = crystal_length_mm * 1e3
        return cls(w0=w0, b=math.sqrt(length_um / (3.0 * pump_wavevector_per_um)))

    @classmethod
    def from_schmidt(cls, K: float, b: float | None = None):
        """Source with Schmidt number ``K`` (taking ``w0 >= b``).

        Without ``b`` the symmetric frame ``w0 * b = 1`` is used, in which
        position- and momentum-basis beams have identical widths at unit
        scale, so one segmentation serves both bases.
        """
        ratio = waist_ratio_for_schmidt(K)
        if b is None:
            b = 1.0 / math.sqrt(ratio)
        return cls(w0=ratio * b, b=b)

    @property
    def schmidt_number(self) -> float:
        return schmidt_number(self)


@dataclass(frozen=True)
class BeamStats:
    """Marginal width, Schmidt number and conditional width in one frame."""

    sigma: float
    K: float
    sigma_cond: float

    @property
    def correlation(self) -> float:
        """Magnitude of the per-axis correlation between partner coordinates."""
        return math.sqrt(max(0.0, 1.0 - (self.sigma_cond / self.sigma) ** 2))

    def scaled(self, factor: float) -> "BeamStats":
        return BeamStats(self.sigma * factor, self.K, self.sigma_cond * factor)


@dataclass(frozen=True)
class PhotonPair:
    alice_point: np.ndarray
    bob_point: np.ndarray
    alice_basis: Basis
    bob_basis: Basis


def schmidt_number(p: SourceParams) -> float:
    return 0.25 * (p.b / p.w0 + p.w0 / p.b) ** 2


def waist_ratio_for_schmidt(K: float) -> float:
    """Root ``w0/b >= 1`` of the Schmidt-number formula."""
    if not K >= 1.0:
        raise ValueError(f"Schmidt number must be >= 1, got {K}")
    if K == 1.0:
        return 1.0
    f = lambda t: 0.25 * (t + 1.0 / t) ** 2 - K
    # closed form t = sqrt(K) + sqrt(K-1) polished with brentq
    guess = math.sqrt(K) + math.sqrt(K - 1.0)
    return optimize.brentq(f, 1.0, 2.0 * guess + 1.0, xtol=1e-15, rtol=1e-15)


def _axis_covariance(p: SourceParams, basis: Basis) -> tuple[float, float]:
    """(variance of one photon, covariance of the pair) per axis, source frame."""
    if basis is Basis.POSITION:
        s2, d2 = p.w0**2, p.b**2
    else:
        s2, d2 = 1.0 / p.w0**2, 1.0 / p.b**2
    return (s2 + d2) / 4.0, (s2 - d2) / 4.0


def beam_stats(p: SourceParams, basis: Basis = Basis.POSITION, scale: float = 1.0) -> BeamStats:
    """Marginal and conditional widths in detector coordinates.

    ``scale`` maps source coordinates to detector um (magnification, and for
    the momentum basis also the Fourier-lens factor).
    """
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    basis = Basis.parse(basis)
    var, _ = _axis_covariance(p, basis)
    if basis is Basis.POSITION:
        cond_var = p.w0**2 * p.b**2 / (p.w0**2 + p.b**2)
    else:
        cond_var = 1.0 / (p.w0**2 + p.b**2)
    return BeamStats(math.sqrt(var) * scale, schmidt_number(p), math.sqrt(cond_var) * scale)


def marginal_density(stats: BeamStats, r):
    """Radial marginal density N exp(-r^2 / 2 sigma^2) with N = 1/(2 pi sigma^2)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("radius must be non-negative")
    out = np.exp(-(r**2) / (2.0 * stats.sigma**2)) / (2.0 * math.pi * stats.sigma**2)
    return float(out) if out.ndim == 0 else out


def radial_cdf(stats: BeamStats, r):
    """Probability mass inside radius ``r``."""
    r = np.asarray(r, dtype=float)
    return -np.expm1(-(r**2) / (2.0 * stats.sigma**2))


def sample_pairs(
    p: SourceParams,
    alice_basis,
    bob_basis,
    rng: np.random.Generator,
    n: int,
    scales: dict | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` partner coordinates, returning two ``(n, 2)`` arrays in detector um.

    ``alice_basis``/``bob_basis`` may be scalars or length-``n`` arrays of
    basis codes.  Matched bases draw from the joint Gaussian (correlated in
    position, anti-correlated in momentum); mismatched bases draw each
    photon independently from its own marginal.  Bob's momentum coordinates
    are returned as measured, i.e. *not* inverted.
    """
    scales = scales or {}
    sx = float(scales.get(Basis.POSITION, 1.0))
    sq = float(scales.get(Basis.MOMENTUM, 1.0))
    ab = np.broadcast_to(np.asarray(alice_basis, dtype=np.int8), (n,))
    bb = np.broadcast_to(np.asarray(bob_basis, dtype=np.int8), (n,))

    # one block of normals, consumed identically regardless of basis mix
    z = rng.standard_normal((4, n, 2))

    out_a = np.empty((n, 2))
    out_b = np.empty((n, 2))
    for basis, scale in ((Basis.POSITION, sx), (Basis.MOMENTUM, sq)):
        var, _ = _axis_covariance(p, basis)
        if basis is Basis.POSITION:
            s_std, d_std = p.w0, p.b
        else:
            s_std, d_std = 1.0 / p.w0, 1.0 / p.b
        both = (ab == basis) & (bb == basis)
        s = s_std * z[0, both]
        d = d_std * z[1, both]
        out_a[both] = 0.5 * (s + d) * scale
        out_b[both] = 0.5 * (s - d) * scale
        std = math.sqrt(var) * scale
        lone_a = (ab == basis) & (bb != basis)
        lone_b = (bb == basis) & (ab != basis)
        out_a[lone_a] = std * z[2, lone_a]
        out_b[lone_b] = std * z[3, lone_b]
    return out_a, out_b


def sample_pair(p: SourceParams, alice_basis, bob_basis, rng: np.random.Generator,
                scales: dict | None = None) -> PhotonPair:
    a, b = sample_pairs(p, Basis.parse(alice_basis), Basis.parse(bob_basis), rng, 1, scales)
    return PhotonPair(a[0], b[0], Basis.parse(alice_basis), Basis.parse(bob_basis))


def conditional_width_estimate(alice: np.ndarray, bob: np.ndarray, bins: int = 201) -> float:
    """Estimate the conditional width from matched-basis partner coordinates.

    Bob's coordinate is regressed on Alice's per axis (the slope absorbs the
    sign flip of the momentum basis and the exact conditional-mean shrink);
    the residuals are histogrammed and their standard deviation, pooled over
    both axes, is returned.
    """
    alice = np.asarray(alice, dtype=float).reshape(-1, 2)
    bob = np.asarray(bob, dtype=float).reshape(-1, 2)
    if len(alice) != len(bob):
        raise ValueError("alice and bob arrays differ in length")
    if len(alice) < 1000:
        raise ValueError(f"need at least 1000 matched pairs, got {len(alice)}")
    variances = []
    for axis in range(2):
        x, y = alice[:, axis], bob[:, axis]
        xc, yc = x - x.mean(), y - y.mean()
        slope = np.dot(xc, yc) / np.dot(xc, xc)
        resid = yc - slope * xc
        counts, edges = np.histogram(resid, bins=bins)
        centers = 0.5 * (edges[1:] + edges[:-1])
        mean = np.average(centers, weights=counts)
        # Sheppard's correction for the bin width
        width = edges[1] - edges[0]
        variances.append(np.average((centers - mean) ** 2, weights=counts) - width**2 / 12.0)
    return math.sqrt(0.5 * (variances[0] + variances[1]))
