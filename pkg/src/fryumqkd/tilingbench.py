"""Uniform-density tiling benchmarks: disk packings and pixel-grid border error."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .keyrate import secure_rate

BETA = 6.0 * math.sqrt(3.0) / math.pi
FRYUM_SLOPE = 12.0 / (math.pi + 2.0)


# ---------------------------------------------------------------- packings
# all areas in units of pi r^2 where r is the atom radius


def circle_count(n: int) -> int:
    _check_n(n)
    return 3 * n * n - 3 * n + 1


def _check_n(n: int) -> None:
    if int(n) != n or n < 1:
        raise ValueError(f"radial segment count must be an integer >= 1, got {n}")


def circle_packing(n: int) -> dict:
    """Circular atoms on a triangular lattice of spacing 3r inside R = (3n-2) r."""
    _check_n(n)
    return {
        "radii": [3 * k - 2 for k in range(1, n + 1)],
        "count": circle_count(n),
        "discarded": 6.0 * (n - 1) * (n - 0.5),
    }


def hex_packing(n: int) -> dict:
    """Smallest hexagons containing the circular atoms; same count as circles."""
    _check_n(n)
    disc = (9 - BETA) * n * n - (12 - BETA) * n + 4 - BETA / 3.0
    out = {"count": circle_count(n), "discarded": disc, "atomArea": 2 * math.sqrt(3.0), "side": 2 / math.sqrt(3.0)}
    if disc < 0:
        out["note"] = "negative discarded area: closed form undercounts for n = 1"
    return out


def fryum_annulus_segments(k: int) -> int:
    """Segments that fit in the k-th annulus (k >= 2) after discarding its inner band and spokes."""
    if k < 2:
        raise ValueError("annulus index starts at 2")
    return math.floor(12.0 * math.pi * (k - 1) / (math.pi + 2.0))


def fryum_packing_bound(n: int) -> dict:
    _check_n(n)
    ms = [fryum_annulus_segments(k) for k in range(2, n + 1)]
    # per annulus: m spoke rectangles of area 2 r^2 plus the inner discarded ring
    exact = sum(2.0 * m / math.pi + 6.0 * (k - 1) - 3.0 for k, m in zip(range(2, n + 1), ms))
    return {
        "annulusSegments": ms,
        "count": 1 + sum(ms),
        "countLowerBound": 3.5 * n * n - 3.5 * n + 1,
        "discarded": exact,
        "discardedFloorExpression": math.floor(FRYUM_SLOPE * n * (n - 1)) + 3.0 * (n - 1) ** 2,
        "discardedUpperBound": (FRYUM_SLOPE + 3) * n * n - (FRYUM_SLOPE + 6) * n + 3.0,
        "discardedUpperBoundAsPublished": 5.33 * n * n - 8.33 * n - 3.0,
    }


@dataclass
class PackingReport:
    n: int
    counts: dict[str, float]
    discarded: dict[str, float]
    fractions: dict[str, float | None]
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"n": self.n, "counts": self.counts, "discarded": self.discarded,
                "fractions": self.fractions, "notes": self.notes}


def packing_report(n: int) -> PackingReport:
    c, h, f = circle_packing(n), hex_packing(n), fryum_packing_bound(n)
    counts = {"circle": c["count"], "hexagon": h["count"], "fryum": f["count"],
              "fryumLowerBound": f["countLowerBound"]}
    discarded = {"circle": c["discarded"], "hexagon": h["discarded"], "fryum": f["discarded"],
                 "fryumUpperBound": f["discardedUpperBound"],
                 "fryumUpperBoundAsPublished": f["discardedUpperBoundAsPublished"]}
    base = c["discarded"]
    fractions = {k: (v / base if base > 0 else None) for k, v in discarded.items() if k != "circle"}
    notes = [h["note"]] if "note" in h else []
    return PackingReport(n, counts, discarded, fractions, notes)


def lattice_shell_count(n: int) -> int:
    """Count atoms by generating the triangular lattice shell by shell.

    Every generated centre is checked to keep its atom inside R.
    """
    _check_n(n)
    R = 3 * n - 2
    a1 = np.array([3.0, 0.0])
    a2 = np.array([1.5, 1.5 * math.sqrt(3.0)])
    count = 0
    for i in range(-(n - 1), n):
        for j in range(-(n - 1), n):
            hex_dist = max(abs(i), abs(j), abs(i + j))
            if hex_dist > n - 1:
                continue
            c = i * a1 + j * a2
            if np.hypot(*c) + 1.0 > R + 1e-9:
                raise AssertionError("shell atom sticks out of the outer circle")
            count += 1
    return count


def lattice_containment_count(n: int) -> int:
    """Count every lattice atom fully inside R, regardless of shell structure."""
    _check_n(n)
    R = 3 * n - 2
    span = n + 2
    i, j = np.meshgrid(np.arange(-span, span + 1), np.arange(-span, span + 1))
    x = 3.0 * i + 1.5 * j
    y = 1.5 * math.sqrt(3.0) * j
    return int(np.sum(np.hypot(x, y) + 1.0 <= R + 1e-9))


PACKING_CSV_HEADER = ["n", "N_circle", "N_hex", "N_fryum", "N_fryum_bound", "disc_circle", "disc_hex",
                      "disc_fry", "disc_fry_upper", "disc_fry_upper_published", "frac_hex", "frac_fry"]


def packing_rows(n_max: int, n_min: int = 2) -> list[list]:
    if n_max < n_min:
        raise ValueError(f"n_max must be >= {n_min}")
    rows = []
    for n in range(n_min, n_max + 1):
        rep = packing_report(n)
        rows.append([n, rep.counts["circle"], rep.counts["hexagon"], rep.counts["fryum"],
                     rep.counts["fryumLowerBound"], rep.discarded["circle"], rep.discarded["hexagon"],
                     rep.discarded["fryum"], rep.discarded["fryumUpperBound"],
                     rep.discarded["fryumUpperBoundAsPublished"], rep.fractions["hexagon"],
                     rep.fractions["fryum"]])
    return rows


def write_packing_csv(path, n_max: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PACKING_CSV_HEADER)
        for row in packing_rows(n_max):
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])


# ---------------------------------------------------------------- pixel grids

CASE_ERRORS = {0: 0.0, 1: 0.25, 2: 7.0 / 16.0, 3: 7.0 / 16.0, 4: 0.75}
_OFFSETS8 = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass(frozen=True)
class GridSpec:
    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2 or lab.size == 0:
            raise ValueError("grid must be a non-empty 2D array of labels")
        if not np.issubdtype(lab.dtype, np.integer):
            raise ValueError("grid labels must be integers")
        uniq = np.unique(lab)
        if uniq[0] != 0 or not np.array_equal(uniq, np.arange(len(uniq))):
            raise ValueError("labels must be contiguous from 0")
        object.__setattr__(self, "labels", lab.astype(np.int64))

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    @property
    def n_macropixels(self) -> int:
        return int(self.labels.max()) + 1

    @classmethod
    def blocks(cls, height: int, width: int, block_h: int, block_w: int) -> "GridSpec":
        rows = np.arange(height) // block_h
        cols = np.arange(width) // block_w
        per_row = -(-width // block_w)
        return cls(rows[:, None] * per_row + cols[None, :])

    @classmethod
    def read_csv(cls, path) -> "GridSpec":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
        if not rows:
            raise ValueError(f"grid file {path} is empty")
        try:
            data = [[int(c) for c in r] for r in rows]
        except ValueError as exc:
            raise ValueError(f"grid file {path}: {exc}") from None
        if len({len(r) for r in data}) != 1:
            raise ValueError(f"grid file {path} has ragged rows")
        return cls(np.array(data, dtype=np.int64))

    def write_csv(self, path) -> None:
        np.savetxt(path, self.labels, fmt="%d", delimiter=",")


def example_grid_path():
    return resources.files("fryumqkd") / "data" / "grid_6x6_four.csv"


def _padded(labels: np.ndarray) -> np.ndarray:
    pad = np.full((labels.shape[0] + 2, labels.shape[1] + 2), -1, dtype=np.int64)
    pad[1:-1, 1:-1] = labels
    return pad


def foreign_edge_counts(g: GridSpec) -> np.ndarray:
    lab = g.labels
    pad = _padded(lab)
    h, w = lab.shape
    count = np.zeros_like(lab)
    for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nb = pad[1 + di:1 + di + h, 1 + dj:1 + dj + w]
        count += (nb >= 0) & (nb != lab)
    return count


def border_mask(g: GridSpec) -> np.ndarray:
    return foreign_edge_counts(g) > 0


def pixel_border_errors(g: GridSpec, method: str = "cases") -> np.ndarray:
    """Per-pixel error for a photon landing in that pixel.

    ``cases`` uses the tabulated error per number of foreign edges.
    ``quarters`` weighs the eight neighbours directly (edge 2/16, vertex
    1/16, the pixel itself 4/16); neighbours beyond the detector carry no
    photons of another macropixel.
    """
    if method == "cases":
        edges = foreign_edge_counts(g)
        return np.vectorize(CASE_ERRORS.__getitem__, otypes=[float])(edges)
    if method != "quarters":
        raise ValueError(f"unknown border-error method {method!r}")
    lab = g.labels
    pad = _padded(lab)
    h, w = lab.shape
    err = np.zeros(lab.shape)
    for di, dj in _OFFSETS8:
        nb = pad[1 + di:1 + di + h, 1 + dj:1 + dj + w]
        weight = 1.0 / 16.0 if di and dj else 2.0 / 16.0
        err += weight * ((nb >= 0) & (nb != lab))
    return err


def uniform_grid_border_error(g: GridSpec, method: str = "cases") -> float:
    return float(pixel_border_errors(g, method).mean())


def border_error_breakdown(g: GridSpec, method: str = "cases") -> dict:
    edges = foreign_edge_counts(g)
    errs = pixel_border_errors(g, method)
    cases = {}
    for e in sorted(set(edges.ravel().tolist())):
        sel = edges == e
        cases[str(e)] = {"pixels": int(sel.sum()), "errorSum": float(errs[sel].sum())}
    return {"method": method, "pixels": int(edges.size), "borderPixels": int((edges > 0).sum()),
            "epsilon": float(errs.mean()), "byForeignEdges": cases}


def monte_carlo_border_error(g: GridSpec, n_samples: int = 1_000_000, seed: int = 0) -> tuple[float, float]:
    """Brute-force error for uniform photons with a partner spread uniformly over one pixel either side.

    Partners that leave the detector are counted as correct, matching the
    ``quarters`` accounting.  Returns (estimate, standard error).
    """
    rng = np.random.default_rng(seed)
    h, w = g.shape
    bob = rng.random((n_samples, 2)) * [h, w]
    alice = bob + rng.uniform(-1.0, 1.0, size=(n_samples, 2))
    bi = bob.astype(np.int64)
    ai = np.floor(alice).astype(np.int64)
    inside = (ai[:, 0] >= 0) & (ai[:, 0] < h) & (ai[:, 1] >= 0) & (ai[:, 1] < w)
    wrong = np.zeros(n_samples, dtype=bool)
    lab = g.labels
    wrong[inside] = lab[ai[inside, 0], ai[inside, 1]] != lab[bi[inside, 0], bi[inside, 1]]
    p = wrong.mean()
    return float(p), float(math.sqrt(p * (1 - p) / n_samples))


def kept_after_border_discard(g: GridSpec) -> np.ndarray:
    """Mask of pixels kept once ambiguous border events are dropped.

    Pixels without a foreign edge are kept.  A macropixel made only of
    border pixels is kept whole if none of its pixels touches (8-neighbour)
    a pixel already kept for another macropixel; candidates are visited in
    label order.
    """
    lab = g.labels
    border = border_mask(g)
    kept = ~border
    h, w = lab.shape
    for m in range(g.n_macropixels):
        sel = lab == m
        if kept[sel].any():
            continue
        clash = False
        for i, j in zip(*np.nonzero(sel)):
            for di, dj in _OFFSETS8:
                a, b = i + di, j + dj
                if 0 <= a < h and 0 <= b < w and kept[a, b] and lab[a, b] != m:
                    clash = True
                    break
            if clash:
                break
        if not clash:
            kept |= sel
    return kept


def discarded_grid_rate(g: GridSpec, border_discard: bool, method: str = "cases") -> dict:
    if border_discard:
        kept = kept_after_border_discard(g)
        if not kept.any():
            raise ValueError("every pixel was discarded")
        d = int(len(np.unique(g.labels[kept])))
        eps, p = 0.0, float(kept.sum()) / kept.size
    else:
        d = g.n_macropixels
        eps, p = uniform_grid_border_error(g, method), 1.0
    R = secure_rate(d, eps)
    return {"d": d, "epsilon": eps, "p": p, "R": R, "Rmod": p * R}
