import math

import numpy as np
import pytest

from fryumqkd.biphoton import SourceParams, beam_stats
from fryumqkd.fryum import (PixelGrid, apply_discard_bands, build_segmentation, equalize_kept_probability,
                            predicted_crosstalk)
from fryumqkd.keyrate import qder
from fryumqkd.simulator import (DetectorModel, FrameBatch, accumulate, coincidences_to_error_matrix,
                                measured_kept_fraction, run_report, sift_key, simulate_frames)

K = 104.6


@pytest.fixture(scope="module")
def src():
    return SourceParams.from_schmidt(K)


@pytest.fixture(scope="module")
def stats(src):
    return beam_stats(src)


def _wheel(stats, A=(1, 6), band=3.0, ratio=2.0516):
    seg = build_segmentation(A, stats, ratio * stats.sigma)
    if band:
        seg = equalize_kept_probability(apply_discard_bands(seg, stats, band))
    return seg


@pytest.fixture(scope="module")
def open_wheel(stats):
    return _wheel(stats, band=0.0)


@pytest.fixture(scope="module")
def open_run(src, open_wheel):
    det = DetectorModel(frames=300_000, mean_pairs_per_frame=0.1)
    return simulate_frames(src, det, open_wheel, seed=11)


def test_detector_validation():
    with pytest.raises(ValueError):
        DetectorModel(efficiency=0.0)
    with pytest.raises(ValueError):
        DetectorModel(dark_rate=-1)
    with pytest.raises(ValueError):
        DetectorModel(basis_mode="xy")
    assert DetectorModel.calibrated(0.1, 0.5).mean_pairs_per_frame == pytest.approx(0.2)


def test_deterministic_and_worker_independent(src, stats):
    seg = _wheel(stats)
    det = DetectorModel(frames=250_000)
    one = simulate_frames(src, det, seg, seed=3, workers=1)
    two = simulate_frames(src, det, seg, seed=3, workers=2)
    for f in ("frame", "party", "basis", "xy", "pair"):
        assert np.array_equal(getattr(one, f), getattr(two, f))
    assert not np.array_equal(simulate_frames(src, DetectorModel(frames=1000), seg, seed=4).xy[:10], one.xy[:10])


@pytest.mark.parametrize("eta,dark", [(1.0, 0.0), (0.5, 0.0), (0.8, 0.05)])
def test_photons_per_frame(src, stats, eta, dark):
    seg = _wheel(stats)
    mu = 0.2
    det = DetectorModel(efficiency=eta, dark_rate=dark, mean_pairs_per_frame=mu, frames=100_000)
    batch = simulate_frames(src, det, seg, seed=5)
    expected = mu * eta + dark
    se = math.sqrt(expected / det.frames)
    for party in (0, 1):
        # the default detector covers six beam widths, so almost nothing is lost off the edge
        assert abs(batch.mean_per_frame(party) - expected) < 3 * se + 1e-5


def test_events_sorted(open_run):
    key = open_run.frame * 2 + open_run.party
    assert np.all(np.diff(key) >= 0)


def test_low_rate_frames_mostly_single_pair(src, stats):
    seg = _wheel(stats)
    batch = simulate_frames(src, DetectorModel(frames=100_000, mean_pairs_per_frame=0.01), seg, seed=6)
    per_frame = np.bincount(batch.frame[batch.party == 0], minlength=batch.n_frames)
    busy = per_frame[per_frame > 0]
    assert np.mean(busy == 1) > 0.99


def test_event_log_round_trip(tmp_path, src, stats):
    seg = _wheel(stats)
    batch = simulate_frames(src, DetectorModel(frames=5000, dark_rate=0.01), seg, seed=7)
    path = tmp_path / "events.bin"
    batch.write_event_log(path)
    back = FrameBatch.read_event_log(path, batch.n_frames)
    assert np.array_equal(back.frame, batch.frame) and np.array_equal(back.basis, batch.basis)
    np.testing.assert_allclose(back.xy, batch.xy, rtol=1e-6)
    assert FrameBatch.read_event_log(path).n_frames == batch.frame.max() + 1


def test_background_correction_needs_two_frames(src, stats):
    seg = _wheel(stats)
    batch = simulate_frames(src, DetectorModel(frames=1), seg)
    with pytest.raises(ValueError):
        accumulate(batch, seg)


def test_correction_removes_accidentals(src, open_wheel):
    batch = simulate_frames(src, DetectorModel(frames=200_000, mean_pairs_per_frame=1.0), open_wheel, seed=8)
    co = accumulate(batch, open_wheel)
    # at one pair per frame the raw matrix is dominated by accidental coincidences
    assert co.block("xx", corrected=False).sum() > 1.5 * co.block("xx").sum()
    raw = 1 - np.trace(co.block("xx", corrected=False)) / co.block("xx", corrected=False).sum()
    assert raw > qder(coincidences_to_error_matrix(co))["x"] + 0.1


def test_measured_error_matches_crosstalk_prediction(open_run, open_wheel):
    co = accumulate(open_run, open_wheel)
    eps = qder(coincidences_to_error_matrix(co))["combined"]
    pred = predicted_crosstalk(open_wheel, n_samples=1_000_000, seed=0)
    se = math.hypot(max(co.qder_stderr.values()), pred.epsilon_stderr)
    assert abs(eps - pred.epsilon) < 3 * se + 0.005


def test_measured_kept_fraction_matches_joint_prediction(src, stats):
    seg = _wheel(stats)
    batch = simulate_frames(src, DetectorModel(frames=300_000), seg, seed=12)
    p, se = measured_kept_fraction(accumulate(batch, seg))
    joint = predicted_crosstalk(seg, n_samples=1_000_000, seed=0).joint_kept
    assert abs(p - joint) < 3 * se + 0.005


def test_mismatched_blocks_carry_uncorrelated_mass(src, open_wheel):
    mu = 0.1
    q = open_wheel.d * open_wheel.alpha
    masses = []
    for seed in range(20):
        batch = simulate_frames(src, DetectorModel(frames=20_000, mean_pairs_per_frame=mu), open_wheel, seed=seed)
        co = accumulate(batch, open_wheel)
        masses.append(co.block("xp").sum() + co.block("px").sum())
    masses = np.array(masses) / 2
    expected = mu / 4 * q * q
    assert abs(masses.mean() - expected) < 3 * masses.std(ddof=1) / math.sqrt(len(masses))


def test_sifted_key_agrees_with_qder(open_run, open_wheel):
    key = sift_key(open_run, open_wheel)
    co = accumulate(open_run, open_wheel)
    eps = qder(coincidences_to_error_matrix(co))["combined"]
    s = key.summary()
    se = math.hypot(s["ditErrorStderr"], max(co.qder_stderr.values()))
    assert abs(key.dit_error_rate - eps) < 3 * se
    assert s["multiPhotonFramesExcluded"] > 0


def test_sifting_fraction(src, stats):
    seg = _wheel(stats)
    batch = simulate_frames(src, DetectorModel(frames=300_000), seg, seed=13)
    key = sift_key(batch, seg)
    joint = predicted_crosstalk(seg, n_samples=1_000_000, seed=0).joint_kept
    frac = len(key) / key.pair_frames
    se = math.sqrt(frac * (1 - frac) / key.pair_frames)
    assert abs(frac - joint / 2) < 3 * se + 0.003


def test_dark_counts_hurt_the_raw_key(src, stats):
    seg = _wheel(stats)
    quiet = run_report(src, DetectorModel(frames=100_000), seg, seed=2)
    noisy = run_report(src, DetectorModel(frames=100_000, dark_rate=1.0), seg, seed=2)
    assert noisy.key.dit_error_rate > quiet.key.dit_error_rate + 0.02
    assert noisy.errors.qder_stderr["x"] > quiet.errors.qder_stderr["x"]


def test_single_macropixel_has_no_rate(src, stats):
    seg = build_segmentation((1,), stats, 2 * stats.sigma)
    rep = run_report(src, DetectorModel(frames=20_000), seg)
    assert rep.rate.d == 1 and rep.rate.Rmod == 0.0


def test_tiny_runs_flag_wide_uncertainty(src, stats):
    rep = run_report(src, DetectorModel(frames=10), _wheel(stats))
    assert rep.diagnostics["wideUncertainty"] is True


def test_sharp_correlations_give_identical_strings():
    src = SourceParams.from_schmidt(1e6)
    st = beam_stats(src)
    seg = _wheel(st, A=(1, 6, 8), band=6.0)
    det = DetectorModel(frames=50_000, grid=PixelGrid.covering(6 * st.sigma, st.sigma / 50))
    key = sift_key(simulate_frames(src, det, seg, seed=1), seg)
    assert len(key) > 1000 and key.dit_error_rate == 0.0


def test_alice_only_discard_matches_one_sided_fraction(src, stats):
    seg = _wheel(stats)
    batch = simulate_frames(src, DetectorModel(frames=300_000), seg, seed=14)
    p, se = measured_kept_fraction(accumulate(batch, seg, discard_mode="alice"))
    pred = predicted_crosstalk(seg, n_samples=1_000_000, seed=0, mode="alice").joint_kept
    assert abs(p - pred) < 3 * se + 0.005
