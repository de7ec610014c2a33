"""Frame-based Monte Carlo of the position/momentum BBM92 protocol."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .biphoton import Basis, SourceParams, sample_pairs
from .fryum import PixelGrid, Segmentation, classify_points
from .keyrate import BLOCKS, ErrorMatrix, RateReport, qder, secure_rate

ALICE, BOB = 0, 1
CHUNK_FRAMES = 100_000
EVENT_DTYPE = np.dtype([("frame", "<u4"), ("party", "u1"), ("basis", "u1"), ("x", "<f4"), ("y", "<f4")])


@dataclass(frozen=True)
class DetectorModel:
    efficiency: float = 1.0
    dark_rate: float = 0.0  # expected dark counts per frame per detector half
    mean_pairs_per_frame: float = 0.1
    frames: int = 3_000_000
    grid: PixelGrid | None = None
    pixelate: bool = False
    basis_mode: str = "random"  # or a fixed pair for the whole run: "xx", "xp", "px", "pp"

    def __post_init__(self):
        if not (0.0 < self.efficiency <= 1.0):
            raise ValueError("efficiency must lie in (0, 1]")
        if self.dark_rate < 0:
            raise ValueError("dark rate must be non-negative")
        if not self.mean_pairs_per_frame > 0:
            raise ValueError("mean pairs per frame must be positive")
        if self.frames < 1:
            raise ValueError("need at least one frame")
        if self.basis_mode not in ("random",) + BLOCKS:
            raise ValueError(f"unknown basis mode {self.basis_mode!r}")

    @classmethod
    def calibrated(cls, photons_per_frame: float = 0.1, efficiency: float = 1.0, **kw) -> "DetectorModel":
        """Pick the pair rate so each half detects ``photons_per_frame`` signal photons on average."""
        return cls(efficiency=efficiency, mean_pairs_per_frame=photons_per_frame / efficiency, **kw)


def default_grid(seg: Segmentation) -> PixelGrid:
    reach = max(seg.r_ap, 6.0 * seg.sigma)
    return PixelGrid.covering(reach, seg.sigma_cond / 2.0)


@dataclass
class FrameBatch:
    """Detected events of a run, sorted by frame then party."""

    n_frames: int
    frame: np.ndarray
    party: np.ndarray
    basis: np.ndarray
    xy: np.ndarray
    pair: np.ndarray  # source pair id, -1 for dark counts

    def __len__(self):
        return len(self.frame)

    def select(self, party: int) -> np.ndarray:
        return self.party == party

    def mean_per_frame(self, party: int) -> float:
        return float(np.sum(self.party == party)) / self.n_frames

    def write_event_log(self, path) -> None:
        rec = np.empty(len(self), dtype=EVENT_DTYPE)
        rec["frame"] = self.frame
        rec["party"] = self.party
        rec["basis"] = self.basis
        rec["x"] = self.xy[:, 0]
        rec["y"] = self.xy[:, 1]
        rec.tofile(path)

    @classmethod
    def read_event_log(cls, path, n_frames: int | None = None) -> "FrameBatch":
        rec = np.fromfile(path, dtype=EVENT_DTYPE)
        if n_frames is None:
            n_frames = int(rec["frame"].max()) + 1 if len(rec) else 0
        xy = np.stack([rec["x"], rec["y"]], axis=1).astype(np.float64)
        return cls(n_frames, rec["frame"].astype(np.int64), rec["party"].astype(np.int8),
                   rec["basis"].astype(np.int8), xy, np.full(len(rec), -1, dtype=np.int64))


def _basis_codes(mode: str, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    if mode == "random":
        codes = rng.integers(0, 2, size=(2, n), dtype=np.int8)
        return codes[0], codes[1]
    a = Basis.parse(mode[0])
    b = Basis.parse(mode[1])
    return np.full(n, int(a), dtype=np.int8), np.full(n, int(b), dtype=np.int8)


def _simulate_chunk(args):
    src, det, grid, scales, first_frame, n_frames, seed_seq = args
    rng = np.random.default_rng(seed_seq)
    counts = rng.poisson(det.mean_pairs_per_frame, size=n_frames)
    n_pairs = int(counts.sum())
    pair_frame = np.repeat(np.arange(n_frames, dtype=np.int64), counts)
    ab, bb = _basis_codes(det.basis_mode, rng, n_pairs)
    a_xy, b_xy = sample_pairs(src, ab, bb, rng, n_pairs, scales)
    keep_a = rng.random(n_pairs) < det.efficiency
    keep_b = rng.random(n_pairs) < det.efficiency
    pair_id = np.arange(n_pairs, dtype=np.int64)

    ox, oy = grid.origin
    x_lo, x_hi = -ox * grid.pitch, (grid.width - ox) * grid.pitch
    y_lo, y_hi = -oy * grid.pitch, (grid.height - oy) * grid.pitch
    parts = []
    for party, xy, keep, basis in ((ALICE, a_xy, keep_a, ab), (BOB, b_xy, keep_b, bb)):
        dark_counts = rng.poisson(det.dark_rate, size=n_frames) if det.dark_rate > 0 else np.zeros(n_frames, int)
        n_dark = int(dark_counts.sum())
        dark_frame = np.repeat(np.arange(n_frames, dtype=np.int64), dark_counts)
        dark_xy = np.stack([rng.uniform(x_lo, x_hi, n_dark), rng.uniform(y_lo, y_hi, n_dark)], axis=1)
        if det.basis_mode == "random":
            dark_basis = rng.integers(0, 2, size=n_dark, dtype=np.int8)
        else:
            fixed = det.basis_mode[0] if party == ALICE else det.basis_mode[1]
            dark_basis = np.full(n_dark, int(Basis.parse(fixed)), dtype=np.int8)
        parts.append((
            np.concatenate([pair_frame[keep], dark_frame]),
            np.full(int(keep.sum()) + n_dark, party, dtype=np.int8),
            np.concatenate([basis[keep], dark_basis]),
            np.concatenate([xy[keep], dark_xy]),
            np.concatenate([pair_id[keep], np.full(n_dark, -1, dtype=np.int64)]),
        ))
    frame = np.concatenate([p[0] for p in parts])
    party = np.concatenate([p[1] for p in parts])
    basis = np.concatenate([p[2] for p in parts])
    xy = np.concatenate([p[3] for p in parts])
    pair = np.concatenate([p[4] for p in parts])
    # photons missing the detector are lost
    _, _, inside = grid.pixel_of(xy)
    if det.pixelate:
        xy, _ = grid.snap(xy)
    order = np.lexsort((party, frame))
    order = order[inside[order]]
    return (frame[order] + first_frame, party[order], basis[order], xy[order], pair[order], n_pairs)


def simulate_frames(src: SourceParams, det: DetectorModel, seg: Segmentation, seed: int = 0,
                    scales: dict | None = None, workers: int = 1) -> FrameBatch:
    """Generate a run of detector frames; deterministic in ``seed`` and independent of ``workers``."""
    grid = det.grid or default_grid(seg)
    n_chunks = math.ceil(det.frames / CHUNK_FRAMES)
    seeds = np.random.SeedSequence(seed).spawn(n_chunks)
    jobs = []
    for c in range(n_chunks):
        first = c * CHUNK_FRAMES
        jobs.append((src, det, grid, scales, first, min(CHUNK_FRAMES, det.frames - first), seeds[c]))
    if workers > 1 and n_chunks > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_simulate_chunk, jobs))
    else:
        results = [_simulate_chunk(j) for j in jobs]
    pair_offset = 0
    pairs = []
    for r in results:
        pairs.append(np.where(r[4] >= 0, r[4] + pair_offset, -1))
        pair_offset += r[5]
    return FrameBatch(
        n_frames=det.frames,
        frame=np.concatenate([r[0] for r in results]),
        party=np.concatenate([r[1] for r in results]),
        basis=np.concatenate([r[2] for r in results]),
        xy=np.concatenate([r[3] for r in results]),
        pair=np.concatenate(pairs),
    )


def label_events(batch: FrameBatch, seg: Segmentation, discard_mode: str = "both") -> np.ndarray:
    """Macropixel label per event; Bob's momentum coordinates are inverted first."""
    if discard_mode not in ("both", "alice", "bob"):
        raise ValueError(f"unknown discard mode {discard_mode!r}")
    labels = np.empty(len(batch), dtype=np.int64)
    for party, banded in ((ALICE, discard_mode in ("both", "alice")), (BOB, discard_mode in ("both", "bob"))):
        sel = batch.party == party
        xy = batch.xy[sel].copy()
        if party == BOB:
            xy[batch.basis[sel] == Basis.MOMENTUM] *= -1.0
        labels[sel] = classify_points(seg, xy, apply_bands=banded)
    return labels


def _count_matrix(batch: FrameBatch, labels: np.ndarray, party: int, d: int) -> sparse.csr_matrix:
    """Frames x (2 bases * (d + 2) labels) photon counts; the two extra columns are the sentinels."""
    sel = batch.party == party
    width = d + 2
    col = np.where(labels[sel] >= 0, labels[sel], d - 1 - labels[sel])  # -1 -> d, -2 -> d+1
    col = batch.basis[sel].astype(np.int64) * width + col
    data = np.ones(int(sel.sum()))
    return sparse.csr_matrix((data, (batch.frame[sel], col)), shape=(batch.n_frames, 2 * width))


@dataclass
class Coincidences:
    """Background-corrected coincidence accumulation with sentinel rows/columns kept."""

    full: np.ndarray  # (2(d+2), 2(d+2)) corrected mean per frame
    full_sq: np.ndarray  # per-frame second moments for standard errors
    frames_used: int
    d: int
    uncorrected: np.ndarray
    qder_stderr: dict[str, float] = field(default_factory=dict)

    def block(self, key: str, kept_only: bool = True, corrected: bool = True) -> np.ndarray:
        w = self.d + 2
        m, mp = int(Basis.parse(key[0])), int(Basis.parse(key[1]))
        src = self.full if corrected else self.uncorrected
        blk = src[m * w:(m + 1) * w, mp * w:(mp + 1) * w]
        return blk[: self.d, : self.d] if kept_only else blk


def accumulate(batch: FrameBatch, seg: Segmentation, discard_mode: str = "both") -> Coincidences:
    if batch.n_frames < 2:
        raise ValueError("the background correction needs at least two frames")
    d = seg.d
    labels = label_events(batch, seg, discard_mode)
    C = _count_matrix(batch, labels, ALICE, d)
    B = _count_matrix(batch, labels, BOB, d)
    n = batch.n_frames - 1
    C0, B0, B1 = C[:-1], B[:-1], B[1:]
    diff = (B0 - B1).tocsr()
    same = (C0.T @ B0).toarray()
    full = (C0.T @ diff).toarray() / n
    sq = (C0.multiply(C0)).T @ diff.multiply(diff)
    full_sq = np.asarray(sq.toarray()) / n

    qse = {}
    w = d + 2
    for m in (Basis.POSITION, Basis.MOMENTUM):
        cols = slice(int(m) * w, int(m) * w + d)
        Ck = C0[:, cols]
        Dk = diff[:, cols]
        t = np.asarray(Ck.multiply(Dk).sum(axis=1)).ravel()
        s = np.asarray(Ck.sum(axis=1)).ravel() * np.asarray(Dk.sum(axis=1)).ravel()
        T, S = t.sum(), s.sum()
        qse[m.short] = float(np.sqrt(np.sum((t - (T / S) * s) ** 2)) / abs(S)) if S > 0 else float("nan")
    return Coincidences(full, full_sq, n, d, same / n, qse)


def error_matrix(batch: FrameBatch, seg: Segmentation, discard_mode: str = "both",
                 corrected: bool = True) -> ErrorMatrix:
    """Per-basis-pair coincidence matrices, accidentals removed by next-frame subtraction."""
    co = accumulate(batch, seg, discard_mode)
    return coincidences_to_error_matrix(co, corrected)


def coincidences_to_error_matrix(co: Coincidences, corrected: bool = True) -> ErrorMatrix:
    blocks, stderr = {}, {}
    w = co.d + 2
    for key in BLOCKS:
        blocks[key] = co.block(key, corrected=corrected).copy()
        m, mp = int(Basis.parse(key[0])), int(Basis.parse(key[1]))
        sq = co.full_sq[m * w:m * w + co.d, mp * w:mp * w + co.d]
        mean = co.full[m * w:m * w + co.d, mp * w:mp * w + co.d]
        stderr[key] = np.sqrt(np.maximum(sq - mean**2, 0.0) / co.frames_used)
    return ErrorMatrix(blocks, co.frames_used, corrected, stderr, dict(co.qder_stderr) if corrected else {})


def measured_kept_fraction(co: Coincidences) -> tuple[float, float]:
    """Share of matched-basis corrected coincidences with both photons kept, and its rough stderr."""
    kept = total = 0.0
    for key in ("xx", "pp"):
        kept += co.block(key).sum()
        total += co.block(key, kept_only=False).sum()
    if not total > 0:
        return float("nan"), float("nan")
    p = kept / total
    n_eff = total * co.frames_used
    return float(p), float(math.sqrt(max(p * (1 - p), 0.0) / n_eff)) if n_eff > 0 else float("nan")


@dataclass
class SiftedKey:
    alice: np.ndarray
    bob: np.ndarray
    basis: np.ndarray
    frame: np.ndarray
    pair_frames: int = 0
    multi_photon_frames: int = 0

    def __len__(self):
        return len(self.alice)

    @property
    def dit_error_rate(self) -> float:
        return float(np.mean(self.alice != self.bob)) if len(self) else float("nan")

    def summary(self) -> dict:
        n = len(self)
        err = self.dit_error_rate
        return {
            "length": n,
            "ditErrorRate": None if n == 0 else err,
            "ditErrorStderr": None if n == 0 else math.sqrt(err * (1 - err) / n),
            "multiPhotonFramesExcluded": self.multi_photon_frames,
        }


def sift_key(batch: FrameBatch, seg: Segmentation, discard_mode: str = "both") -> SiftedKey:
    """Keep frames with one photon per half, matched bases and both photons in kept macropixels."""
    labels = label_events(batch, seg, discard_mode)
    counts = np.zeros((batch.n_frames, 2), dtype=np.int64)
    np.add.at(counts, (batch.frame, batch.party), 1)
    single = (counts[:, 0] == 1) & (counts[:, 1] == 1)
    multi = int(np.sum((counts[:, 0] >= 1) & (counts[:, 1] >= 1) & ~single))
    ev = single[batch.frame]
    a_sel = ev & (batch.party == ALICE)
    b_sel = ev & (batch.party == BOB)
    # events are sorted by frame so the two selections line up frame by frame
    fa, fb = batch.frame[a_sel], batch.frame[b_sel]
    assert np.array_equal(fa, fb)
    la, lb = labels[a_sel], labels[b_sel]
    ba, bb = batch.basis[a_sel], batch.basis[b_sel]
    ok = (ba == bb) & (la >= 0) & (lb >= 0)
    return SiftedKey(la[ok], lb[ok], ba[ok], fa[ok], int(single.sum()), multi)


@dataclass
class SimulationReport:
    rate: RateReport
    errors: ErrorMatrix
    key: SiftedKey
    diagnostics: dict

    def to_dict(self) -> dict:
        return {"rate": self.rate.to_dict(), "siftedKey": self.key.summary(), "diagnostics": self.diagnostics}


def run_report(src: SourceParams, det: DetectorModel, seg: Segmentation, seed: int = 0,
               scales: dict | None = None, discard_mode: str = "both", workers: int = 1,
               batch: FrameBatch | None = None) -> SimulationReport:
    """Simulate, accumulate, and turn the measured QDER and kept fraction into a key rate."""
    if batch is None:
        batch = simulate_frames(src, det, seg, seed, scales, workers)
    co = accumulate(batch, seg, discard_mode)
    E = coincidences_to_error_matrix(co)
    key = sift_key(batch, seg, discard_mode)
    p, p_se = measured_kept_fraction(co)
    matched_counts = float(sum(co.block(k).sum() for k in ("xx", "pp")) * co.frames_used)
    diagnostics = {
        "frames": batch.n_frames,
        "events": len(batch),
        "matchedCoincidences": matched_counts,
        "pStderr": p_se,
        "qderStderr": E.qder_stderr,
        "flaggedNegativeEntries": E.flagged_entries(),
        "discardMode": discard_mode,
    }
    try:
        eps = qder(E)
    except ValueError:
        eps = None
    wide = eps is None or matched_counts < 100 or any(
        not (se < 0.05) for se in E.qder_stderr.values())
    diagnostics["wideUncertainty"] = bool(wide)
    if eps is None or not math.isfinite(p):
        rate = RateReport(seg.d, {"x": None, "p": None, "combined": None}, 0.0, None, None)
    else:
        eps = {k: min(max(v, 0.0), 1.0) for k, v in eps.items()}
        p = min(max(p, 0.0), 1.0)
        if eps["combined"] < 1.0:
            R = secure_rate(seg.d, eps["combined"])
        else:
            R = float("-inf")
        rate = RateReport(seg.d, eps, p, R, p * R)
    return SimulationReport(rate, E, key, diagnostics)
