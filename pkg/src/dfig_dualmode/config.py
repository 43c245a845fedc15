"""Strict JSON scenario configuration.

A config either starts from a built-in scenario (``"scenario": "scenario2"``)
and overrides parts of it, or describes a run from scratch. Unknown keys are
errors. Quantities with a unit take it in the key name, e.g. ``p_d_pu`` or
``p_d_mw``; internally everything is per-unit.

Example::

    {
      "schema_version": 1,
      "name": "gusty",
      "duration_s": 300,
      "wind": {"type": "steps", "steps_mps": [[0, 12], [150, 9]]},
      "demand": {"steps": [{"t_s": 0, "p_d_mw": 0.6, "power_factor": 0.995}]},
      "seed": 3
    }
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

from .controller import GradientGains, ObjectiveWeights
from .plant import PlantParams
from .scenarios import BUILTIN, builtin
from .sim import DemandSchedule, NoiseSpec, Samples, ScenarioSpec, StepSchedule, Synthetic, load_wind_csv, mw_to_pu

__all__ = ["SCHEMA_VERSION", "ConfigError", "OutputOptions", "RunConfig", "load_config", "parse_config", "SEED_ENV"]

SCHEMA_VERSION = 1
SEED_ENV = "DFIG_SEED"
V_W_BASE_MPS = 12.0


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


@dataclass(frozen=True)
class OutputOptions:
    csv: bool = True
    svg: bool = True
    decimate: int = 1


@dataclass(frozen=True)
class RunConfig:
    spec: ScenarioSpec
    output: OutputOptions = OutputOptions()


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(where, "expected an object")
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{where}.{key}" if where else key, "unknown key")


def _num(obj, key, where, *, positive=False, nonneg=False):
    v = obj[key]
    path = f"{where}.{key}" if where else key
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, "expected a number")
    v = float(v)
    if positive and not v > 0:
        raise ConfigError(path, "must be positive")
    if nonneg and v < 0:
        raise ConfigError(path, "must be nonnegative")
    return v


def _one_of(obj, keys, where, required=True):
    """Exactly one of the unit variants of a quantity; returns (key, value) or (None, None)."""
    present = [k for k in keys if k in obj]
    if len(present) > 1:
        raise ConfigError(f"{where}.{present[1]}", f"conflicts with {present[0]}")
    if not present:
        if required:
            raise ConfigError(where, f"missing one of {', '.join(keys)}")
        return None, None
    return present[0], obj[present[0]]


def _pairs(v, path):
    if not isinstance(v, list) or not v:
        raise ConfigError(path, "expected a non-empty list of [t, value] pairs")
    out = []
    for k, item in enumerate(v):
        if not (isinstance(item, list) and len(item) == 2 and all(isinstance(e, (int, float)) and not isinstance(e, bool) for e in item)):
            raise ConfigError(f"{path}[{k}]", "expected [t, value]")
        out.append((float(item[0]), float(item[1])))
    return out


def _wind(obj, where, base_dir):
    _check_keys(obj, {"type", "steps_pu", "steps_mps", "mean_pu", "sinusoids", "noise_std_pu", "v_min_pu", "v_max_pu", "path", "units", "interp"}, where)
    kind = obj.get("type")
    try:
        if kind == "steps":
            key, val = _one_of(obj, ("steps_pu", "steps_mps"), where)
            pairs = _pairs(val, f"{where}.{key}")
            scale = V_W_BASE_MPS if key == "steps_mps" else 1.0
            return StepSchedule(tuple((t, v / scale) for t, v in pairs))
        if kind == "synthetic":
            sins = obj.get("sinusoids", [])
            if not isinstance(sins, list) or not all(isinstance(s, list) and len(s) == 3 for s in sins):
                raise ConfigError(f"{where}.sinusoids", "expected a list of [amplitude_pu, omega_rad_s, phase_rad]")
            kw = {"sinusoids": tuple(tuple(float(e) for e in s) for s in sins)}
            for key, field_name in (("mean_pu", "mean"), ("noise_std_pu", "noise_std"), ("v_min_pu", "v_min"), ("v_max_pu", "v_max")):
                if key in obj:
                    kw[field_name] = _num(obj, key, where)
            return Synthetic(**kw)
        if kind == "csv":
            if "path" not in obj or not isinstance(obj["path"], str):
                raise ConfigError(f"{where}.path", "expected a file path")
            units = obj.get("units", "pu")
            if units not in ("pu", "mps"):
                raise ConfigError(f"{where}.units", "expected 'pu' or 'mps'")
            path = Path(obj["path"])
            if not path.is_absolute():
                path = base_dir / path
            return load_wind_csv(path, in_mps=units == "mps", v_w_base=V_W_BASE_MPS, interp=obj.get("interp", "linear"))
    except (ValueError, TypeError, OSError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(where, str(exc)) from exc
    raise ConfigError(f"{where}.type", "expected 'steps', 'synthetic' or 'csv'")


def _demand(obj, where):
    _check_keys(obj, {"steps"}, where)
    steps = obj.get("steps")
    if not isinstance(steps, list) or not steps:
        raise ConfigError(f"{where}.steps", "expected a non-empty list")
    out = []
    for k, step in enumerate(steps):
        path = f"{where}.steps[{k}]"
        _check_keys(step, {"t_s", "p_d_pu", "p_d_mw", "q_d_pu", "q_d_mvar", "power_factor"}, path)
        if "t_s" not in step:
            raise ConfigError(path, "missing t_s")
        t = _num(step, "t_s", path, nonneg=True)
        pkey, _ = _one_of(step, ("p_d_pu", "p_d_mw"), path)
        p = _num(step, pkey, path)
        if pkey == "p_d_mw":
            p = mw_to_pu(p)
        qkey, _ = _one_of(step, ("q_d_pu", "q_d_mvar", "power_factor"), path)
        q = _num(step, qkey, path)
        if qkey == "q_d_mvar":
            q = mw_to_pu(q)
        elif qkey == "power_factor":
            if not 0 < q <= 1:
                raise ConfigError(f"{path}.power_factor", "must lie in (0, 1]")
            q = DemandSchedule.from_power_factor(((t, p),), q).steps[0][2]
        out.append((t, p, q))
    try:
        return DemandSchedule(tuple(out))
    except ValueError as exc:
        raise ConfigError(f"{where}.steps", str(exc)) from exc


def _plant(obj, where, base: PlantParams) -> PlantParams:
    _check_keys(obj, {"c_f", "j", "cp_coeffs", "beta_max_deg"}, where)
    p = base
    try:
        if "c_f" in obj:
            p = p.with_friction(_num(obj, "c_f", where, nonneg=True))
        if "j" in obj:
            p = replace(p, drive=replace(p.drive, j=_num(obj, "j", where, positive=True)))
        if "cp_coeffs" in obj:
            c = obj["cp_coeffs"]
            if not (isinstance(c, list) and len(c) == 6):
                raise ConfigError(f"{where}.cp_coeffs", "expected 6 numbers")
            p = p.with_cp_coeffs(tuple(float(e) for e in c))
        if "beta_max_deg" in obj:
            p = replace(p, aero=replace(p.aero, beta_max=_num(obj, "beta_max_deg", where, positive=True)))
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(where, str(exc)) from exc
    return p


def _noise(obj, where):
    _check_keys(obj, {"bias_pu", "bias_mps", "terms"}, where)
    bkey, _ = _one_of(obj, ("bias_pu", "bias_mps"), where, required=False)
    scale = V_W_BASE_MPS if bkey == "bias_mps" else 1.0
    bias = _num(obj, bkey, where) / scale if bkey else 0.0
    terms = []
    for k, term in enumerate(obj.get("terms", [])):
        path = f"{where}.terms[{k}]"
        _check_keys(term, {"amplitude_pu", "amplitude_mps", "omega_rad_s", "phase_rad", "kind"}, path)
        akey, _ = _one_of(term, ("amplitude_pu", "amplitude_mps"), path)
        amp = _num(term, akey, path) / (V_W_BASE_MPS if akey == "amplitude_mps" else 1.0)
        if "omega_rad_s" not in term:
            raise ConfigError(path, "missing omega_rad_s")
        kind = term.get("kind", "sin")
        if kind not in ("sin", "cos"):
            raise ConfigError(f"{path}.kind", "expected 'sin' or 'cos'")
        phase = _num(term, "phase_rad", path) if "phase_rad" in term else 0.0
        terms.append((amp, _num(term, "omega_rad_s", path), phase, kind))
    return NoiseSpec(bias, tuple(terms))


def _poles(v, path):
    if not isinstance(v, list) or len(v) != 4:
        raise ConfigError(path, "expected 4 poles")
    out = []
    for k, p in enumerate(v):
        try:
            out.append(complex(p.replace(" ", "").replace("i", "j")) if isinstance(p, str) else complex(float(p)))
        except (ValueError, AttributeError):
            raise ConfigError(f"{path}[{k}]", f"cannot read pole {p!r}") from None
    return tuple(out)


def _controller(obj, where, spec: ScenarioSpec) -> ScenarioSpec:
    _check_keys(obj, {"alpha", "eps1", "eps2", "eps3", "w_p", "w_q", "w_pq", "poles", "gain"}, where)
    try:
        gg = spec.gradient_gains
        gg = GradientGains(**{k: _num(obj, k, where) if k in obj else getattr(gg, k) for k in ("alpha", "eps1", "eps2", "eps3")})
        w = spec.weights
        w = ObjectiveWeights(**{k: _num(obj, k, where) if k in obj else getattr(w, k) for k in ("w_p", "w_q", "w_pq")})
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(where, str(exc)) from exc
    changes = {"gradient_gains": gg, "weights": w}
    if "poles" in obj and "gain" in obj:
        raise ConfigError(f"{where}.gain", "conflicts with poles")
    if "poles" in obj:
        changes["poles"] = _poles(obj["poles"], f"{where}.poles")
    if "gain" in obj:
        k = obj["gain"]
        if not (isinstance(k, list) and len(k) == 2 and all(isinstance(r, list) and len(r) == 4 for r in k)):
            raise ConfigError(f"{where}.gain", "expected a 2x4 nested list")
        changes["gain"] = tuple(tuple(float(e) for e in r) for r in k)
    return replace(spec, **changes)


_TOP_KEYS = {
    "schema_version",
    "name",
    "scenario",
    "paper_scale",
    "duration_s",
    "dt_s",
    "update_period_s",
    "record_period_s",
    "seed",
    "wind",
    "demand",
    "plant",
    "belief",
    "noise",
    "controller",
    "initial",
    "output",
}


def parse_config(doc: dict, base_dir=".", env=None) -> RunConfig:
    """Validate a decoded config document and build the run description."""
    env = os.environ if env is None else env
    base_dir = Path(base_dir)
    _check_keys(doc, _TOP_KEYS, "")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}, got {doc.get('schema_version')!r}")

    paper_scale = doc.get("paper_scale", False)
    if not isinstance(paper_scale, bool):
        raise ConfigError("paper_scale", "expected true or false")
    if "scenario" in doc:
        if doc["scenario"] not in BUILTIN:
            raise ConfigError("scenario", f"unknown scenario; choose from {sorted(BUILTIN)}")
        spec = builtin(doc["scenario"], paper_scale=paper_scale)
    else:
        for key in ("duration_s", "wind", "demand"):
            if key not in doc:
                raise ConfigError(key, "required when no built-in scenario is named")
        spec = None

    changes = {}
    if "name" in doc:
        if not isinstance(doc["name"], str) or not doc["name"] or any(c in doc["name"] for c in "/\\"):
            raise ConfigError("name", "expected a plain, non-empty name")
        changes["name"] = doc["name"]
    for key, field_name in (("duration_s", "duration"), ("dt_s", "dt"), ("update_period_s", "update_period"), ("record_period_s", "record_period")):
        if key in doc:
            changes[field_name] = _num(doc, key, "", positive=True)
    if "wind" in doc:
        changes["wind"] = _wind(doc["wind"], "wind", base_dir)
    if "demand" in doc:
        changes["demand"] = _demand(doc["demand"], "demand")
    base_truth = spec.plant if spec else PlantParams()
    base_belief = spec.belief if spec else PlantParams()
    if "plant" in doc:
        changes["plant"] = _plant(doc["plant"], "plant", base_truth)
    if "belief" in doc:
        changes["belief"] = _plant(doc["belief"], "belief", base_belief)
    if "noise" in doc:
        changes["noise"] = _noise(doc["noise"], "noise")
    if "initial" in doc:
        _check_keys(doc["initial"], {"omega_r_pu"}, "initial")
        if "omega_r_pu" in doc["initial"]:
            changes["initial_omega_r"] = _num(doc["initial"], "omega_r_pu", "initial", positive=True)

    seed = doc.get("seed", spec.seed if spec else 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", "expected a nonnegative integer")
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(SEED_ENV, f"not an integer: {env[SEED_ENV]!r}") from None
    changes["seed"] = seed

    try:
        if spec is None:
            spec = ScenarioSpec(name=changes.pop("name", "custom"), duration=changes.pop("duration"), wind=changes.pop("wind"), demand=changes.pop("demand"), **changes)
        else:
            spec = replace(spec, **changes)
    except (ValueError, TypeError) as exc:
        raise ConfigError("", str(exc)) from exc
    if "controller" in doc:
        spec = _controller(doc["controller"], "controller", spec)

    output = OutputOptions()
    if "output" in doc:
        o = doc["output"]
        _check_keys(o, {"csv", "svg", "decimate"}, "output")
        for key in ("csv", "svg"):
            if key in o and not isinstance(o[key], bool):
                raise ConfigError(f"output.{key}", "expected true or false")
        dec = o.get("decimate", 1)
        if isinstance(dec, bool) or not isinstance(dec, int) or dec < 1:
            raise ConfigError("output.decimate", "expected an integer >= 1")
        output = OutputOptions(o.get("csv", True), o.get("svg", True), dec)
    return RunConfig(spec, output)


def load_config(path, env=None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return parse_config(doc, path.parent, env)
