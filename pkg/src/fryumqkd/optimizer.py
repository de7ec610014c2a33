"""Exhaustive search over fryum-wheel angular specs.

For each ring count ``N`` every valid angular list is enumerated, its kept
fraction computed by quadrature and its key rate bounded from above by
``p * log2(d)``.  Candidates are then scored exactly (with the crosstalk
QDER) in descending bound order until the bound drops below the best exact
score, which is provably optimal because the QDER can only lower the rate.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .biphoton import BeamStats
from .fryum import (
    InvalidSegmentation,
    apply_discard_bands,
    build_segmentation,
    equalize_kept_probability,
    equalized_probability,
    predicted_crosstalk,
    ring_radii,
    tail_bound_epsilon,
)
from .keyrate import RateReport, secure_rate

TIE_TOL = 1e-9
EXACT_BATCH = 8


@dataclass(frozen=True)
class ValidityRules:
    band_multiplier: float = 3.0
    # radius at which the azimuthal arc between spokes is measured: inner, mid or outer
    arc_radius: str = "mid"
    first_ring_single: bool = True
    last_segment_auxiliary: bool = True
    epsilon_mode: str = "mc"  # "mc" crosstalk estimate or "fast" tail bound
    discard_mode: str = "both"
    crosstalk_samples: int = 1_000_000
    crosstalk_seed: int = 0

    def __post_init__(self):
        if self.band_multiplier <= 0:
            raise ValueError("band multiplier must be positive for the validity gaps")
        if self.arc_radius not in ("inner", "mid", "outer"):
            raise ValueError(f"arc_radius must be inner, mid or outer, not {self.arc_radius!r}")
        if self.epsilon_mode not in ("mc", "fast"):
            raise ValueError(f"epsilon_mode must be 'mc' or 'fast', not {self.epsilon_mode!r}")

    def min_radial_gap(self, stats: BeamStats) -> float:
        return self.band_multiplier * stats.sigma_cond

    def min_azimuthal_gap(self, stats: BeamStats) -> float:
        return self.band_multiplier * stats.sigma_cond

    def arc_at(self, inner: float, outer: float) -> float:
        if self.arc_radius == "inner":
            return inner
        if self.arc_radius == "outer":
            return outer
        return 0.5 * (inner + outer)

    def to_dict(self) -> dict:
        return {
            "bandMultiplier": self.band_multiplier,
            "arcRadius": self.arc_radius,
            "epsilonMode": self.epsilon_mode,
            "discardMode": self.discard_mode,
            "crosstalkSamples": self.crosstalk_samples,
            "crosstalkSeed": self.crosstalk_seed,
        }


@dataclass
class Validity:
    ok: bool
    reasons: list[str] = field(default_factory=list)

    def __bool__(self):
        return self.ok


def is_valid(A, stats: BeamStats, r_ap: float, rules: ValidityRules = ValidityRules()) -> Validity:
    """Check the four validity rules; reasons are returned rather than raised."""
    A = tuple(int(a) for a in A)
    reasons = []
    if not A:
        return Validity(False, ["empty angular spec"])
    if any(a < 1 for a in A):
        return Validity(False, ["angular counts must be >= 1"])
    if rules.first_ring_single and A[0] != 1:
        reasons.append("first ring must hold a single macropixel")
    if not (math.isfinite(r_ap) and r_ap > 0):
        reasons.append("aperture must be finite for a positive auxiliary segment")
        return Validity(False, reasons)
    try:
        radii, _, a_aux = ring_radii(A, stats.sigma, r_ap)
    except InvalidSegmentation as exc:
        return Validity(False, reasons + [str(exc)])
    if rules.last_segment_auxiliary and not a_aux > 0:
        reasons.append("aperture admits no positive auxiliary segment")
    gap_r = rules.min_radial_gap(stats)
    gap_a = rules.min_azimuthal_gap(stats)
    half = 0.5 * rules.band_multiplier * stats.sigma_cond
    N = len(A)
    if N == 1:
        if not r_ap > gap_r:
            reasons.append("aperture narrower than the radial gap")
    elif not radii[1] > half:
        reasons.append("central disk vanishes inside its band")
    for k in range(1, N):
        if not radii[k + 1] - radii[k] > gap_r:
            reasons.append(f"ring {k} narrower than the radial gap")
        if A[k] > 1:
            arc = 2.0 * math.pi * rules.arc_at(radii[k], radii[k + 1]) / A[k]
            if not arc > gap_a:
                reasons.append(f"ring {k} sectors closer than the azimuthal gap")
    if not reasons and rules.band_multiplier > 0:
        seg = build_segmentation(A, stats, r_ap)
        try:
            apply_discard_bands(seg, stats, rules.band_multiplier)
        except InvalidSegmentation as exc:
            reasons.append(str(exc))
    return Validity(not reasons, reasons)


@dataclass
class Evaluation:
    A: tuple[int, ...]
    report: RateReport

    @property
    def N(self) -> int:
        return len(self.A)

    @property
    def rank_value(self) -> float:
        # negative rates rank below every non-negative one
        return max(self.report.Rmod, 0.0) if self.report.Rmod >= 0 else -1.0 + math.tanh(self.report.Rmod)

    def to_dict(self) -> dict:
        return {"A": list(self.A), **self.report.to_dict()}


def discarded_segmentation(A, stats: BeamStats, r_ap: float, rules: ValidityRules):
    seg = build_segmentation(A, stats, r_ap)
    seg = apply_discard_bands(seg, stats, rules.band_multiplier)
    return equalize_kept_probability(seg)


def kept_fraction(A, stats: BeamStats, r_ap: float, rules: ValidityRules) -> float:
    """``c_N alpha`` minus discarded mass after bands and equalisation."""
    seg = apply_discard_bands(build_segmentation(A, stats, r_ap), stats, rules.band_multiplier)
    return equalized_probability(seg)


def evaluate(A, stats: BeamStats, r_ap: float, rules: ValidityRules = ValidityRules(),
             check: bool = True) -> Evaluation:
    """Kept fraction, QDER and modified key rate of one angular spec."""
    A = tuple(int(a) for a in A)
    if check:
        v = is_valid(A, stats, r_ap, rules)
        if not v:
            raise InvalidSegmentation("; ".join(v.reasons))
    seg = discarded_segmentation(A, stats, r_ap, rules)
    p = min(1.0, equalized_probability(seg))
    if seg.d == 1:
        eps, eps_se = 0.0, 0.0
    elif rules.epsilon_mode == "fast":
        eps, eps_se = tail_bound_epsilon(seg), 0.0
    else:
        ct = predicted_crosstalk(seg, n_samples=rules.crosstalk_samples, seed=rules.crosstalk_seed,
                                 mode=rules.discard_mode)
        eps, eps_se = ct.epsilon, ct.epsilon_stderr
    report = RateReport.from_values(seg.d, eps, p, aAux=seg.a_aux, alpha=seg.alpha,
                                    epsilonStderr=eps_se, epsilonMode=rules.epsilon_mode)
    return Evaluation(A, report)


def evaluate_without_bands(A, stats: BeamStats, r_ap: float, n_samples: int = 1_000_000,
                           seed: int = 0) -> Evaluation:
    """Same spec scored with no discarding: p = c_N alpha and the raw crosstalk QDER."""
    seg = build_segmentation(A, stats, r_ap)
    ct = predicted_crosstalk(seg, n_samples=n_samples, seed=seed)
    return Evaluation(tuple(A), RateReport.from_values(seg.d, ct.epsilon, seg.in_aperture_probability,
                                                      epsilonStderr=ct.epsilon_stderr))


# -- enumeration ------------------------------------------------------------

def enumerate_specs(N: int, stats: BeamStats, r_ap: float, rules: ValidityRules) -> list[tuple[int, ...]]:
    """All angular specs with ``N`` rings passing the geometric gap rules.

    Ring counts are capped where the azimuthal arc falls below the gap, and
    ring radii depend only on ``c_k / c_N``, so the search loops over the
    total ``d`` and fills the rings depth-first.
    """
    if N < 1 or not math.isfinite(r_ap):
        return []
    sigma = stats.sigma
    gap = rules.min_radial_gap(stats)
    gap_a = rules.min_azimuthal_gap(stats)
    half = 0.5 * rules.band_multiplier * stats.sigma_cond
    if N == 1:
        return [(1,)] if r_ap > gap else []
    F = -math.expm1(-(r_ap**2) / (2 * sigma**2))

    def radius(frac):
        return sigma * math.sqrt(-2.0 * math.log1p(-frac * F))

    d_max = 1 + (N - 1) * int(2 * math.pi * r_ap / gap_a + 1)
    out = []
    for d in range(N, d_max + 1):
        stack = [((1,), 1)]
        while stack:
            A, c = stack.pop()
            k = len(A)
            ri = radius(c / d)
            if k == 1 and not ri > half:
                continue
            if k == N - 1:
                a = d - c
                if a < 1 or not r_ap - ri > gap:
                    continue
                if a > 1 and not 2 * math.pi * rules.arc_at(ri, r_ap) / a > gap_a:
                    continue
                out.append(A + (a,))
                continue
            remaining = N - 1 - k
            children = []
            for a in range(1, d - c - remaining + 1):
                ro = radius((c + a) / d)
                if ro >= r_ap - remaining * gap:
                    break
                if not ro - ri > gap:
                    continue
                if a > 1 and not 2 * math.pi * rules.arc_at(ri, ro) / a > gap_a:
                    # larger counts only shrink the arc further once the ring
                    # is wide enough; the inner-radius rule is monotone too
                    if rules.arc_radius == "inner":
                        break
                    continue
                children.append((A + (a,), c + a))
            stack.extend(reversed(children))
    return sorted(set(out))


# -- sweep -------------------------------------------------------------------

@dataclass
class OptimizationResult:
    best_per_n: dict[int, Evaluation]
    global_best: Evaluation | None
    search_size: dict[int, dict[str, int]]
    empty: list[int]
    candidates: list[dict] = field(default_factory=list)

    def to_dict(self, include_candidates: bool = False) -> dict:
        out = {
            "bestPerN": {str(n): e.to_dict() for n, e in sorted(self.best_per_n.items())},
            "globalBest": self.global_best.to_dict() if self.global_best else None,
            "searchSize": {str(n): s for n, s in sorted(self.search_size.items())},
            "emptyN": self.empty,
        }
        if include_candidates:
            out["candidates"] = self.candidates
        return out

    def csv_rows(self) -> list[list]:
        rows = []
        for n, e in sorted(self.best_per_n.items()):
            r = e.report
            rows.append([n, "-".join(map(str, e.A)), repr(r.extra.get("aAux", float("nan"))), r.d,
                         repr(r.p), repr(r.epsilon["combined"]), repr(r.R), repr(r.Rmod)])
        return rows


CSV_HEADER = ["N", "bestA", "aAux", "d", "p", "epsilon", "R", "Rmod"]


def _sort_key(e: Evaluation):
    return (-e.rank_value, e.N, e.A)


def _kept_job(args):
    A, stats, r_ap, rules = args
    try:
        return kept_fraction(A, stats, r_ap, rules)
    except InvalidSegmentation:
        return None


def _eval_job(args):
    A, stats, r_ap, rules = args
    return evaluate(A, stats, r_ap, rules, check=False)


class _Runner:
    def __init__(self, workers: int):
        self.workers = max(1, int(workers))
        self.pool = ProcessPoolExecutor(self.workers) if self.workers > 1 else None

    def map(self, fn, items):
        if self.pool is None:
            return [fn(x) for x in items]
        return list(self.pool.map(fn, items, chunksize=max(1, len(items) // (4 * self.workers))))

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def sweep(stats: BeamStats, r_ap: float, rules: ValidityRules = ValidityRules(),
          n_range: tuple[int, int] = (2, 9), workers: int = 1, keep_candidates: bool = False,
          progress=None) -> OptimizationResult:
    """Best angular spec for every ring count in ``n_range`` (inclusive)."""
    lo, hi = int(n_range[0]), int(n_range[1])
    if lo < 1 or hi < lo:
        raise ValueError(f"invalid ring-count range {n_range}")
    runner = _Runner(workers)
    best_per_n: dict[int, Evaluation] = {}
    sizes: dict[int, dict[str, int]] = {}
    empty: list[int] = []
    dump: list[dict] = []
    try:
        for N in range(lo, hi + 1):
            specs = enumerate_specs(N, stats, r_ap, rules)
            kept = runner.map(_kept_job, [(A, stats, r_ap, rules) for A in specs])
            pool = [(p * math.log2(sum(A)) if sum(A) > 1 else 0.0, A, p)
                    for A, p in zip(specs, kept) if p is not None and p > 0]
            pool.sort(key=lambda t: (-t[0], t[1]))
            best: Evaluation | None = None
            exact: dict[tuple, Evaluation] = {}
            i = 0
            while i < len(pool):
                if best is not None and pool[i][0] < best.rank_value - TIE_TOL:
                    break
                batch = [t[1] for t in pool[i:i + EXACT_BATCH]]
                for e in runner.map(_eval_job, [(A, stats, r_ap, rules) for A in batch]):
                    exact[e.A] = e
                    if best is None or _sort_key(e) < _sort_key(best):
                        best = e
                i += len(batch)
            if best is None:
                empty.append(N)
            else:
                best_per_n[N] = best
            threshold = best.rank_value - TIE_TOL if best else math.inf
            needed = sum(1 for t in pool if t[0] >= threshold)
            sizes[N] = {"enumerated": len(specs), "valid": len(pool), "scored": needed,
                        "pruned": len(pool) - needed}
            if keep_candidates:
                for bound, A, p in pool:
                    row = {"N": N, "A": list(A), "d": sum(A), "p": p, "upperBound": bound}
                    if A in exact and bound >= threshold:
                        row.update(exact[A].report.to_dict())
                    dump.append(row)
            if progress:
                progress(N, sizes[N], best)
    finally:
        runner.close()
    glob = min(best_per_n.values(), key=_sort_key) if best_per_n else None
    return OptimizationResult(best_per_n, glob, sizes, empty, dump)


def result_json(result: OptimizationResult, include_candidates: bool = False, **meta) -> str:
    doc = dict(meta)
    doc.update(result.to_dict(include_candidates))
    return json.dumps(doc, indent=2, sort_keys=True)
