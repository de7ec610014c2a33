"""Run configuration: defaults, JSON loading, dotted overrides and validation."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass

from .biphoton import Basis, BeamStats, SourceParams, beam_stats
from .fryum import PixelGrid
from .optimizer import ValidityRules
from .simulator import DetectorModel


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "source": {"K": 104.6},
    "basisScales": {"position": 1.0, "momentum": "auto"},
    "aperture": {"r_ap_over_sigma": 2.0516},
    "rules": {
        "bandMultiplier": 3.0,
        "Nrange": [2, 9],
        "arcRadius": "mid",
        "epsilonMode": "mc",
        "discardMode": "both",
        "crosstalkSamples": 1_000_000,
    },
    "detector": {
        "pitch_um": None,
        "frames": 3_000_000,
        "photonsPerFrame": 0.1,
        "meanPairsPerFrame": None,
        "efficiency": 1.0,
        "darkRate": 0.0,
        "basisMode": "random",
        "pixelate": False,
    },
    # None: simulate the (1, 6, 8, 21) wheel unless a segmentation file is given
    "segmentation": {"A": None},
    "sample": {"n": 10_000, "aliceBasis": "x", "bobBasis": "x"},
    "tiling": {"nMax": 12},
    "seed": 0,
}

# sections where the user's choice replaces the default wholesale
EXCLUSIVE = ("source", "aperture")

SOURCE_KEYS = {"K", "w0_um", "b_um", "crystalLength_mm", "pumpWavevector_per_um"}
FLAT_ALIASES = {
    **{k: "source" for k in SOURCE_KEYS},
    "r_ap_um": "aperture", "r_ap_over_sigma": "aperture",
    "bandMultiplier": "rules", "Nrange": "rules", "arcRadius": "rules", "epsilonMode": "rules",
    "discardMode": "rules", "crosstalkSamples": "rules",
    "pitch_um": "detector", "frames": "detector", "meanPairsPerFrame": "detector",
    "photonsPerFrame": "detector", "efficiency": "detector", "darkRate": "detector",
    "basisMode": "detector",
}


def parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def _normalise(user: dict) -> dict:
    out: dict = {}
    for key, value in user.items():
        if key in FLAT_ALIASES:
            out.setdefault(FLAT_ALIASES[key], {})[key] = value
        elif key in DEFAULTS:
            if isinstance(DEFAULTS[key], dict):
                if not isinstance(value, dict):
                    raise ConfigError(f"section {key!r} must be an object")
                out.setdefault(key, {}).update(value)
            else:
                out[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return out


def _set_path(doc: dict, path: list[str], value) -> None:
    cur = doc
    for part in path[:-1]:
        nxt = cur.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"cannot descend into non-object {part!r}")
        cur = nxt
    cur[path[-1]] = value


def resolve(file_doc: dict | None = None, overrides: list[str] = ()) -> dict:
    """Merge defaults, a config document and ``key=value`` overrides into a full config."""
    user = _normalise(dict(file_doc or {}))
    for text in overrides:
        path, value = parse_override(text)
        if len(path) == 1 and path[0] in FLAT_ALIASES:
            path = [FLAT_ALIASES[path[0]], path[0]]
        _set_path(user, path, value)
    user = _normalise(user)
    cfg = copy.deepcopy(DEFAULTS)
    for key, value in user.items():
        if isinstance(DEFAULTS[key], dict):
            if key in EXCLUSIVE:
                cfg[key] = dict(value)
            else:
                unknown = set(value) - set(DEFAULTS[key])
                if unknown:
                    raise ConfigError(f"unknown key(s) in {key}: {sorted(unknown)}")
                cfg[key].update(value)
        else:
            cfg[key] = value
    validate(cfg)
    return cfg


def load(path=None, overrides: list[str] = ()) -> dict:
    doc = None
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a JSON object")
    return resolve(doc, overrides)


def _positive(value, name: str, allow_zero: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    if not math.isfinite(value) or value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(f"{name} must be {'non-negative' if allow_zero else 'positive'}, got {value!r}")
    return float(value)


def validate(cfg: dict) -> None:
    src = cfg["source"]
    unknown = set(src) - SOURCE_KEYS
    if unknown:
        raise ConfigError(f"unknown source key(s): {sorted(unknown)}")
    forms = [("K" in src), ("w0_um" in src)]
    if sum(forms) != 1:
        raise ConfigError("source needs exactly one of K or w0_um")
    if "K" in src:
        if set(src) - {"K", "b_um"}:
            raise ConfigError("source K takes only an optional b_um")
        if _positive(src["K"], "source.K") < 1:
            raise ConfigError("source.K must be >= 1")
    else:
        has_b = "b_um" in src
        has_crystal = "crystalLength_mm" in src or "pumpWavevector_per_um" in src
        if has_b == has_crystal:
            raise ConfigError("source with w0_um needs exactly one of b_um or (crystalLength_mm, pumpWavevector_per_um)")
        if has_crystal and not ("crystalLength_mm" in src and "pumpWavevector_per_um" in src):
            raise ConfigError("crystal source needs both crystalLength_mm and pumpWavevector_per_um")
    for k, v in src.items():
        _positive(v, f"source.{k}")

    ap = cfg["aperture"]
    if set(ap) - {"r_ap_um", "r_ap_over_sigma"} or len(ap) != 1:
        raise ConfigError("aperture needs exactly one of r_ap_um or r_ap_over_sigma")
    for k, v in ap.items():
        _positive(v, f"aperture.{k}")

    scales = cfg["basisScales"]
    if set(scales) - {"position", "momentum"}:
        raise ConfigError("basisScales takes position and momentum")
    _positive(scales.get("position", 1.0), "basisScales.position")
    if scales.get("momentum", "auto") != "auto":
        _positive(scales["momentum"], "basisScales.momentum")

    rules = cfg["rules"]
    nr = rules["Nrange"]
    if not (isinstance(nr, list) and len(nr) == 2 and all(isinstance(x, int) and not isinstance(x, bool) for x in nr)
            and 1 <= nr[0] <= nr[1]):
        raise ConfigError(f"rules.Nrange must be [lo, hi] integers with 1 <= lo <= hi, got {nr!r}")
    _positive(rules["bandMultiplier"], "rules.bandMultiplier", allow_zero=True)
    if rules["discardMode"] not in ("both", "alice", "bob"):
        raise ConfigError("rules.discardMode must be both, alice or bob")
    if rules["arcRadius"] not in ("inner", "mid", "outer"):
        raise ConfigError("rules.arcRadius must be inner, mid or outer")
    if rules["epsilonMode"] not in ("mc", "fast"):
        raise ConfigError("rules.epsilonMode must be mc or fast")
    if not isinstance(rules["crosstalkSamples"], int) or rules["crosstalkSamples"] < 1000:
        raise ConfigError("rules.crosstalkSamples must be an integer >= 1000")

    det = cfg["detector"]
    if det["pitch_um"] is not None:
        _positive(det["pitch_um"], "detector.pitch_um")
    if not isinstance(det["frames"], int) or isinstance(det["frames"], bool) or det["frames"] < 1:
        raise ConfigError("detector.frames must be a positive integer")
    _positive(det["photonsPerFrame"], "detector.photonsPerFrame")
    if det["meanPairsPerFrame"] is not None:
        _positive(det["meanPairsPerFrame"], "detector.meanPairsPerFrame")
    eff = _positive(det["efficiency"], "detector.efficiency")
    if eff > 1:
        raise ConfigError("detector.efficiency must not exceed 1")
    _positive(det["darkRate"], "detector.darkRate", allow_zero=True)

    A = cfg["segmentation"]["A"]
    if A is not None and not (isinstance(A, list) and A and all(isinstance(a, int) and a >= 1 for a in A)):
        raise ConfigError("segmentation.A must be a list of positive integers")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    if not isinstance(cfg["tiling"]["nMax"], int) or cfg["tiling"]["nMax"] < 2:
        raise ConfigError("tiling.nMax must be an integer >= 2")
    if not isinstance(cfg["sample"]["n"], int) or cfg["sample"]["n"] < 1:
        raise ConfigError("sample.n must be a positive integer")
    for side in ("aliceBasis", "bobBasis"):
        try:
            Basis.parse(cfg["sample"][side])
        except ValueError as exc:
            raise ConfigError(f"sample.{side}: {exc}") from None


@dataclass(frozen=True)
class Resolved:
    """Objects built from a validated config."""

    source: SourceParams
    scales: dict
    stats: BeamStats
    r_ap: float
    rules: ValidityRules | None


def build_source(cfg: dict) -> SourceParams:
    src = cfg["source"]
    if "K" in src:
        return SourceParams.from_schmidt(float(src["K"]), src.get("b_um"))
    if "b_um" in src:
        return SourceParams(float(src["w0_um"]), float(src["b_um"]))
    return SourceParams.from_crystal(float(src["w0_um"]), float(src["crystalLength_mm"]),
                                     float(src["pumpWavevector_per_um"]))


def build_scales(cfg: dict, source: SourceParams) -> dict:
    sx = float(cfg["basisScales"].get("position", 1.0))
    sq = cfg["basisScales"].get("momentum", "auto")
    if sq == "auto":
        # momentum-basis beam drawn at the same width as the position-basis beam
        sq = beam_stats(source, Basis.POSITION, sx).sigma / beam_stats(source, Basis.MOMENTUM).sigma
    return {Basis.POSITION: sx, Basis.MOMENTUM: float(sq)}


def build_rules(cfg: dict) -> ValidityRules:
    r = cfg["rules"]
    if not r["bandMultiplier"] > 0:
        raise ConfigError("the optimizer needs rules.bandMultiplier > 0")
    return ValidityRules(band_multiplier=float(r["bandMultiplier"]), arc_radius=r["arcRadius"],
                         epsilon_mode=r["epsilonMode"], discard_mode=r["discardMode"],
                         crosstalk_samples=int(r["crosstalkSamples"]), crosstalk_seed=int(cfg["seed"]))


def build(cfg: dict) -> Resolved:
    source = build_source(cfg)
    scales = build_scales(cfg, source)
    stats = beam_stats(source, Basis.POSITION, scales[Basis.POSITION])
    ap = cfg["aperture"]
    r_ap = float(ap["r_ap_um"]) if "r_ap_um" in ap else float(ap["r_ap_over_sigma"]) * stats.sigma
    rules = build_rules(cfg) if cfg["rules"]["bandMultiplier"] > 0 else None
    return Resolved(source, scales, stats, r_ap, rules)


def build_detector(cfg: dict, r_ap: float, sigma: float) -> DetectorModel:
    det = cfg["detector"]
    grid = None
    if det["pitch_um"] is not None:
        # wide enough that essentially no photon misses the sensor
        grid = PixelGrid.covering(max(r_ap, 6.0 * sigma), float(det["pitch_um"]))
    common = dict(dark_rate=float(det["darkRate"]), frames=int(det["frames"]), grid=grid,
                  pixelate=bool(det["pixelate"]) and grid is not None, basis_mode=det["basisMode"])
    if det["meanPairsPerFrame"] is not None:
        return DetectorModel(efficiency=float(det["efficiency"]),
                             mean_pairs_per_frame=float(det["meanPairsPerFrame"]), **common)
    return DetectorModel.calibrated(float(det["photonsPerFrame"]), float(det["efficiency"]), **common)
