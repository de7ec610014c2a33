"""Asymptotic key-rate arithmetic and QDER extraction."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BLOCKS = ("xx", "xp", "px", "pp")
MATCHED = ("xx", "pp")


def _xlog2(x: float) -> float:
    return 0.0 if x == 0 else x * math.log2(x)


def secure_rate(d: int, eps: float) -> float:
    """Secure bits per photon for a ``d``-dimensional alphabet at dit error ``eps``.

    >>> secure_rate(2, 0.0)
    1.0
    >>> round(secure_rate(4, 0.16), 3)
    0.224
    """
    d = int(d)
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if not (0.0 <= eps < 1.0):
        raise ValueError(f"error ratio must lie in [0, 1), got {eps}")
    if d == 1:
        # a single symbol carries no information
        return 0.0
    mixed = 0.0 if eps == 0 else eps * (math.log2(eps) - math.log2(d - 1))
    return math.log2(d) + 2.0 * mixed + 2.0 * _xlog2(1.0 - eps)


def modified_rate(d: int, eps: float, p: float) -> float:
    """Key rate per detected photon when only a fraction ``p`` of events is kept."""
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"kept fraction must lie in [0, 1], got {p}")
    return p * secure_rate(d, eps)


def error_threshold(d: int) -> float:
    """Largest dit error with non-negative secure rate."""
    from scipy.optimize import brentq
    return brentq(lambda e: secure_rate(d, e), 1e-12, (d - 1) / d)


@dataclass
class ErrorMatrix:
    """Four basis-pair blocks of background-corrected coincidence probabilities.

    ``blocks[mm']`` is indexed (Alice macropixel, Bob macropixel); ``stderr``
    carries the per-entry standard errors from the frame-to-frame spread.
    """

    blocks: dict[str, np.ndarray]
    frames: int
    background_corrected: bool = True
    stderr: dict[str, np.ndarray] = field(default_factory=dict)
    qder_stderr: dict[str, float] = field(default_factory=dict)

    @property
    def d(self) -> int:
        return int(next(iter(self.blocks.values())).shape[0])

    def flagged_entries(self, n_sigma: float = 5.0) -> dict[str, int]:
        """Count of matched-block entries more negative than ``-n_sigma`` standard errors."""
        out = {}
        for key in MATCHED:
            se = self.stderr.get(key)
            if se is None:
                out[key] = int(np.sum(self.blocks[key] < 0))
            else:
                out[key] = int(np.sum(self.blocks[key] < -n_sigma * np.maximum(se, 1e-300)))
        return out

    def write_csv(self, out_dir, prefix: str = "error_matrix", gamma: float = 0.4) -> list[Path]:
        out_dir = Path(out_dir)
        paths = []
        for key in BLOCKS:
            path = out_dir / f"{prefix}_{key}.csv"
            header = f"block={key} frames={self.frames} backgroundCorrected={self.background_corrected} gamma={gamma}"
            np.savetxt(path, self.blocks[key], delimiter=",", fmt="%.10e", header=header)
            paths.append(path)
        return paths

    @classmethod
    def read_csv(cls, out_dir, prefix: str = "error_matrix") -> "ErrorMatrix":
        out_dir = Path(out_dir)
        blocks, frames, corrected = {}, 0, True
        for key in BLOCKS:
            path = out_dir / f"{prefix}_{key}.csv"
            first = path.read_text().splitlines()[0]
            meta = dict(item.split("=") for item in first.lstrip("# ").split())
            frames = int(meta["frames"])
            corrected = meta["backgroundCorrected"] == "True"
            blocks[key] = np.atleast_2d(np.loadtxt(path, delimiter=","))
        return cls(blocks, frames, corrected)


def display_scaled(block: np.ndarray, gamma: float = 0.4) -> np.ndarray:
    """Power-law display scaling ``sign(x) |x|^gamma`` for viewing small off-diagonal terms."""
    return np.sign(block) * np.abs(block) ** gamma


def block_qder(block: np.ndarray) -> float:
    block = np.asarray(block, dtype=float)
    total = block.sum()
    if not total > 0:
        raise ValueError("error-matrix block has no positive mass")
    return float(1.0 - np.trace(block) / total)


def qder(E: ErrorMatrix) -> dict[str, float]:
    """QDER per matched basis (``x``, ``p``) and their mass-weighted combination."""
    out = {}
    masses = {}
    for key in MATCHED:
        out[key[0]] = block_qder(E.blocks[key])
        masses[key[0]] = float(E.blocks[key].sum())
    total = sum(masses.values())
    out["combined"] = sum(out[b] * masses[b] for b in masses) / total
    return out


@dataclass
class RateReport:
    d: int
    epsilon: dict[str, float]
    p: float
    R: float
    Rmod: float
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise ValueError(f"kept fraction {self.p} outside [0, 1]")

    @classmethod
    def from_values(cls, d: int, eps: float | dict, p: float, **extra) -> "RateReport":
        eps_map = dict(eps) if isinstance(eps, dict) else {"combined": float(eps)}
        e = eps_map["combined"]
        R = secure_rate(d, e) if d >= 1 and e < 1.0 else float("-inf")
        return cls(d=d, epsilon=eps_map, p=p, R=R, Rmod=p * R, extra=extra)

    def to_dict(self) -> dict:
        out = {"d": self.d, "epsilon": self.epsilon, "p": self.p, "R": self.R, "Rmod": self.Rmod}
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
