"""Command-line front end: ``cavsim run`` and ``cavsim validate``.

A config is a TOML document with an ``experiment`` key naming the kind and a
``[params]`` table.  Frequencies and rates are entered in Hz (ordinary, not
angular) and converted to rad/s here, once.  Lengths are in metres and
reflectivities are fractions.  ``run`` writes ``<name>.csv`` and
``<name>.json`` into the output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from cavsim import __version__
from cavsim.errors import CavsimError, InvalidParameterError, ModelInvalidError

TWO_PI = 2 * math.pi

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SOLVER = 3


class ConfigError(Exception):
    """Config cannot be parsed or does not match the schema."""


# --- schema ----------------------------------------------------------------

_REQ = object()

_GEOMETRY = {
    "L_C": _REQ, "L_W": _REQ, "R_C": _REQ, "R_CW": _REQ, "R_W": _REQ,
    "A_C": 0.0, "A_CW": 0.0, "A_W": 0.0, "K_W": 0.0,
    "wavelength": 780.241e-9, "w0": 4.0e-6, "gamma_Hz": 3.0e6,
}

_LAMBDA = {
    "N": 2, "g_a_Hz": _REQ, "g_b_Hz": _REQ, "kappa_Hz": 0.0,
    "delta_a_Hz": _REQ, "delta_b_Hz": _REQ, "Delta_a_Hz": _REQ, "Delta_b_Hz": _REQ,
    "delta_Hz": _REQ, "J_Hz": _REQ, "Omega_a_Hz": _REQ, "Omega_b_Hz": _REQ,
    "gamma_Hz": 3.0e6, "omega_e_Hz": 384.230484e12, "L_W": 0.0,
}

SCHEMAS = {
    "spectrum": {**_GEOMETRY, "g_AC_Hz": None, "center_Hz": None, "span_Hz": _REQ,
                 "points": 2001},
    "zero-reflection": dict(_GEOMETRY),
    "mode-analysis": {**_GEOMETRY, "g_AC_Hz": None, "center_Hz": None, "span_Hz": _REQ,
                      "points_per_linewidth": 20},
    "optimize": {**_GEOMETRY, "g_AC_Hz": None, "L_C_min": _REQ, "L_C_max": _REQ,
                 "L_W_min": _REQ, "L_W_max": _REQ},
    "jc-steady-scan": {
        "N": 2, "n_max": 3, "g_Hz": _REQ, "J_Hz": _REQ, "eta_Hz": _REQ, "kappa_Hz": _REQ,
        "gamma_Hz": _REQ, "detuning_AC_Hz": 0.0, "scan_min_Hz": _REQ, "scan_max_Hz": _REQ,
        "points": 200,
    },
    "spin-params": {**_LAMBDA, "closed_form": False, "force": False},
    "spin-dynamics": {**_LAMBDA, "t_end": _REQ, "points": 501, "initial": ["up", "down"],
                      "force": False},
    "lambda-dynamics": {**_LAMBDA, "t_end": _REQ, "points": 501, "mode": "secular",
                        "initial": ["b", "a"], "n_max": 2, "max_excited_atoms": 1,
                        "max_photons": 1},
    "localization": {
        "N": 5, "Omega_0_Hz": 0.0, "omega_drive_Hz": _REQ, "c_Hz": _REQ,
        "ratio_min": 0.0, "ratio_max": 7.0, "points": 141, "horizon_hops": 20.0,
    },
}

# which parameter names hold frequencies in Hz
def _is_hz(name: str) -> bool:
    return name.endswith("_Hz")


@dataclass
class ExperimentConfig:
    """Validated config: kind, parameters (rad/s where applicable), output stem."""

    kind: str
    params: dict
    raw_params: dict
    name: str
    seed: int | None = None


def _set_nested(doc: dict, key: str, value):
    parts = key.split(".")
    cur = doc
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
        if not isinstance(cur, dict):
            raise ConfigError(f"--set {key}: {p} is not a table")
    cur[parts[-1]] = value


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``key=value`` strings; bare keys go into ``params``."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"override {item!r} has an empty key")
        if "." not in key and key not in ("experiment", "name", "seed"):
            key = "params." + key
        _set_nested(doc, key, _parse_value(text.strip()))
    return doc


def load_config(path, overrides=()) -> ExperimentConfig:
    """Read, override and validate a config file.

    Raises
    ------
    ConfigError
        With a line or field diagnostic.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    doc = apply_overrides(doc, overrides)
    return validate_document(doc, default_name=path.stem)


def validate_document(doc: dict, default_name: str = "result") -> ExperimentConfig:
    if not doc:
        raise ConfigError("config is empty; an 'experiment' key is required")
    unknown = set(doc) - {"experiment", "params", "name", "seed"}
    if unknown:
        raise ConfigError(f"unknown top-level field(s): {', '.join(sorted(unknown))}")
    kind = doc.get("experiment")
    if kind not in SCHEMAS:
        raise ConfigError(f"field 'experiment': expected one of {sorted(SCHEMAS)}, got {kind!r}")
    raw = doc.get("params", {})
    if not isinstance(raw, dict):
        raise ConfigError("field 'params' must be a table")
    schema = SCHEMAS[kind]
    unknown = set(raw) - set(schema)
    if unknown:
        raise ConfigError(f"params: unknown field(s) for {kind}: {', '.join(sorted(unknown))}")
    params = {}
    for key, default in schema.items():
        if key in raw:
            value = raw[key]
        elif default is _REQ:
            raise ConfigError(f"params.{key}: required for {kind}")
        else:
            value = default
        params[key] = _check_type(key, value, default)
    raw_echo = dict(params)
    for key, value in list(params.items()):
        if _is_hz(key) and value is not None:
            params[key] = TWO_PI * value
    name = doc.get("name", default_name)
    if not isinstance(name, str) or not name or "/" in name:
        raise ConfigError("field 'name' must be a non-empty file stem")
    seed = doc.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        raise ConfigError("field 'seed' must be an integer")
    return ExperimentConfig(kind, params, raw_echo, name, seed)


def _check_type(key, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"params.{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, list) or (default is _REQ and isinstance(value, list)):
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError(f"params.{key}: expected a list of strings")
        return list(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"params.{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, int) and key in ("N", "n_max", "points", "points_per_linewidth",
                                            "max_excited_atoms", "max_photons"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"params.{key}: expected an integer, got {value!r}")
        return value
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"params.{key}: expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"params.{key}: must be finite")
    return value


# --- output ----------------------------------------------------------------

def _fmt(x) -> str:
    return format(float(x), ".16e")


def write_csv(path: Path, columns: dict):
    """Columns of equal length; complex columns are split into ``_re``/``_im``."""
    header, data = [], []
    for name, values in columns.items():
        arr = np.asarray(values)
        if np.iscomplexobj(arr):
            header += [f"{name}_re", f"{name}_im"]
            data += [arr.real, arr.imag]
        else:
            header.append(name)
            data.append(arr.astype(float))
    lengths = {len(d) for d in data}
    if len(lengths) > 1:
        raise ValueError(f"columns have unequal lengths {sorted(lengths)}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*data):
            w.writerow([_fmt(x) for x in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": _jsonable(obj.real), "im": _jsonable(obj.imag)}
    return obj


# --- experiments -------------------------------------------------------------

def _geometry(p):
    from cavsim.optics import CompositeCavityGeometry, MirrorSpec

    def mirror(R, A):
        return MirrorSpec(R=R, T=1.0 - R - A, A=A)

    return CompositeCavityGeometry(
        L_C=p["L_C"], L_W=p["L_W"], wavelength=p["wavelength"],
        mirror_W=mirror(p["R_W"], p["A_W"]), mirror_CW=mirror(p["R_CW"], p["A_CW"]),
        mirror_C=mirror(p["R_C"], p["A_C"]), K_W=p["K_W"], w0=p["w0"], gamma=p["gamma_Hz"],
    )


def _g_ac(p, geom):
    from cavsim.optics import bare_rates

    return p["g_AC_Hz"] if p.get("g_AC_Hz") is not None else bare_rates(geom)[0]


def _window(p, geom):
    center = p["center_Hz"] if p["center_Hz"] is not None else geom.omega_atom
    half = p["span_Hz"] / 2
    if not half > 0:
        raise InvalidParameterError("span_Hz must be > 0")
    return center - half, center + half


def _mode_summary(m):
    return {"omega_rad_s": m.omega, "C1": m.C1, "g_Hz": m.g / TWO_PI,
            "kappa_Hz": m.kappa_tilde / TWO_PI, "reflected_intensity": m.reflected_intensity}


def _run_spectrum(p):
    from cavsim.optics import composite_reflection, mode_analysis

    geom = _geometry(p)
    lo, hi = _window(p, geom)
    if p["points"] < 2:
        raise InvalidParameterError("points must be >= 2")
    omega = np.linspace(lo, hi, p["points"])
    resp = composite_reflection(geom, omega)
    modes = mode_analysis(geom, (lo, hi), _g_ac(p, geom))
    cols = {
        "omega_rad_s": omega,
        "reflected_intensity": resp.reflected_intensity,
        "ec2": np.abs(resp.circulating_C) ** 2,
        "ew2": np.abs(resp.circulating_W) ** 2,
    }
    summary = {"modes": [_mode_summary(m) for m in modes]}
    if modes:
        best = max(modes, key=lambda m: m.C1)
        summary.update(C1=best.C1, g_Hz=best.g / TWO_PI, kappa_Hz=best.kappa_tilde / TWO_PI)
    return cols, summary, {"modes_found": len(modes)}


def _run_zero_reflection(p):
    from cavsim.optics import zero_reflection_condition

    geom = _geometry(p)
    z = zero_reflection_condition(geom)
    cols = {"two_phi_C": [z.two_phi_C_opt], "phi_W": [z.phi_W_res]}
    summary = {"feasible": z.feasible, "two_phi_C_opt": z.two_phi_C_opt,
               "phi_W_res": z.phi_W_res, "lower_bound": z.lower_bound,
               "upper_bound": z.upper_bound, "target": z.target}
    return cols, summary, {}


def _run_mode_analysis(p):
    from cavsim.optics import mode_analysis

    geom = _geometry(p)
    modes = mode_analysis(geom, _window(p, geom), _g_ac(p, geom), p["points_per_linewidth"])
    cols = {
        "omega_rad_s": [m.omega for m in modes],
        "kappa_Hz": [m.kappa_tilde / TWO_PI for m in modes],
        "g_Hz": [m.g / TWO_PI for m in modes],
        "C1": [m.C1 for m in modes],
        "reflected_intensity": [m.reflected_intensity for m in modes],
    }
    summary = {"modes": [_mode_summary(m) for m in modes]}
    if modes:
        best = max(modes, key=lambda m: m.C1)
        summary.update(C1=best.C1, g_Hz=best.g / TWO_PI, kappa_Hz=best.kappa_tilde / TWO_PI)
    return cols, summary, {"modes_found": len(modes)}


def _run_optimize(p):
    from cavsim.optics import optimize_cooperativity

    geom = _geometry(p)
    res = optimize_cooperativity(geom, (p["L_C_min"], p["L_C_max"]),
                                 (p["L_W_min"], p["L_W_max"]), g_AC=_g_ac(p, geom))
    cols = {"L_C": res.scan_L_C, "C1": res.scan_C1}
    summary = {"L_C": res.geometry.L_C, "L_W": res.geometry.L_W, **_mode_summary(res.mode)}
    return cols, summary, {"grid_points": len(res.scan_L_C)}


def _run_jc(p):
    from cavsim.jc_array import JCArrayParams, resonance_peaks, steady_scan

    params = JCArrayParams(
        N=p["N"], omega_A=0.0, omega_C=p["detuning_AC_Hz"], g=p["g_Hz"], J=p["J_Hz"],
        eta=p["eta_Hz"], omega_L=0.0, kappa_tilde=p["kappa_Hz"], gamma=p["gamma_Hz"],
        n_max=p["n_max"],
    )
    if p["points"] < 1:
        raise InvalidParameterError("points must be >= 1")
    grid = np.linspace(p["scan_min_Hz"], p["scan_max_Hz"], p["points"])
    res = steady_scan(params, grid)
    cols = {"delta_omega_rad_s": grid}
    for j in range(params.N):
        cols[f"n{j + 1}"] = res.n[:, j]
    for (i, j), v in res.g2.items():
        cols[f"g2_{i + 1}{j + 1}"] = v
    cols["log_negativity"] = res.log_negativity
    peaks = resonance_peaks(grid, res.n[:, 0])
    summary = {"n1_peaks_Hz": (peaks / TWO_PI).tolist(), "failed_points": int(res.failed.sum())}
    diags = {k: v for k, v in res.diagnostics.items() if k != "errors"}
    diags["errors"] = res.diagnostics.get("errors", {})
    return cols, summary, diags


def _lambda_inputs(p):
    from cavsim.presets import lambda_set

    s = lambda_set(
        p["g_a_Hz"], p["g_b_Hz"], p["kappa_Hz"], p["delta_a_Hz"], p["delta_b_Hz"],
        Delta_a=p["Delta_a_Hz"], Delta_b=p["Delta_b_Hz"], delta=p["delta_Hz"], J=p["J_Hz"],
        Omega_a=p["Omega_a_Hz"], Omega_b=p["Omega_b_Hz"], omega_e=p["omega_e_Hz"],
        gamma=p["gamma_Hz"], N=p["N"],
    )
    fsr = math.pi * 299792458.0 / p["L_W"] if p["L_W"] > 0 else None
    return s, fsr


def _spin(p, closed_form=False):
    from cavsim.spin import frame_detunings, spin_parameters

    s, fsr = _lambda_inputs(p)
    det = frame_detunings(s.atom, s.drives, s.modes)
    spin = spin_parameters(p["N"], s.g_a, s.g_b, s.drives, det, s.modes,
                           closed_form_N2=closed_form, fsr_W=fsr, force=p["force"])
    return s, spin


def _spin_summary(spin):
    out = {"B_Hz": spin.B / TWO_PI, "validity_max": spin.validity_max,
           "validity_ratios": spin.ratios}
    if spin.N >= 2:
        out["J12_Hz"] = abs(spin.pair_coefficient(0, 1)) / TWO_PI
        out["K12_Hz"] = abs(spin.K[0, 1]) / TWO_PI
    return out


def _run_spin_params(p):
    _, spin = _spin(p, p["closed_form"])
    N = spin.N
    jj, ll = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    cols = {"j": jj.ravel() + 1, "l": ll.ravel() + 1,
            "J_rad_s": np.asarray(spin.J, dtype=complex).ravel(),
            "K_rad_s": np.asarray(spin.K, dtype=complex).ravel()}
    return cols, _spin_summary(spin), {"closed_form": spin.closed_form}


def _times(p):
    if not p["t_end"] > 0 or p["points"] < 2:
        raise InvalidParameterError("t_end must be > 0 and points >= 2")
    return np.linspace(0.0, p["t_end"], p["points"])


def _run_spin_dynamics(p):
    from cavsim.spin import spin_evolve

    _, spin = _spin(p)
    t = _times(p)
    traj = spin_evolve(spin, p["initial"], t)
    cols = {"t_s": t}
    for j in range(spin.N):
        cols[f"P_up{j + 1}"] = traj.P_up[:, j]
    summary = _spin_summary(spin)
    K = abs(spin.K[0, 1]) if spin.N >= 2 else 0.0
    summary["flip_flop_period_s"] = math.pi / K if K > 0 else math.inf
    return cols, summary, {}


def _run_lambda(p):
    from cavsim.lambda_model import lambda_evolve, loss_lifetime

    s, _ = _lambda_inputs(p)
    t = _times(p)
    traj = lambda_evolve(s.atom, s.drives, s.modes, s.g_a, s.g_b, s.kappa_tilde, t,
                         initial=tuple(p["initial"]), mode=p["mode"], n_max=p["n_max"],
                         max_excited_atoms=p["max_excited_atoms"],
                         max_photons=p["max_photons"])
    cols = {"t_s": t}
    for lab in ("a", "b", "e", "x"):
        for j in range(s.modes.N):
            cols[f"P_{lab}{j + 1}"] = traj.populations[lab][:, j]
    for j in range(s.modes.N):
        cols[f"n{j + 1}"] = traj.n_local[:, j]
    summary = {"loss_lifetime_s": loss_lifetime(traj, s.atom.gamma, w_xe=s.atom.w_xe)}
    return cols, summary, traj.diagnostics


def _run_localization(p):
    from cavsim.localization import DrivenChainParams, transport_suppression_scan

    params = DrivenChainParams(N=p["N"], Omega_0=p["Omega_0_Hz"], Omega_1=0.0,
                               omega_drive=p["omega_drive_Hz"], c=p["c_Hz"])
    if p["points"] < 1:
        raise InvalidParameterError("points must be >= 1")
    ratios = np.linspace(p["ratio_min"], p["ratio_max"], p["points"])
    horizon = p["horizon_hops"] * math.pi / p["c_Hz"]
    scan = transport_suppression_scan(params, ratios, horizon)
    cols = {"Omega_1_over_omega": ratios, "max_end_population": scan.max_end_population}
    return cols, {"minima": scan.minima.tolist(), "horizon_s": scan.horizon}, {}


RUNNERS = {
    "spectrum": _run_spectrum,
    "zero-reflection": _run_zero_reflection,
    "mode-analysis": _run_mode_analysis,
    "optimize": _run_optimize,
    "jc-steady-scan": _run_jc,
    "spin-params": _run_spin_params,
    "spin-dynamics": _run_spin_dynamics,
    "lambda-dynamics": _run_lambda,
    "localization": _run_localization,
}


def run_experiment(config: ExperimentConfig, out_dir) -> tuple[Path, Path]:
    """Run a validated config and write its CSV and JSON summary."""
    cols, summary, diagnostics = RUNNERS[config.kind](config.params)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{config.name}.csv"
    json_path = out / f"{config.name}.json"
    write_csv(csv_path, cols)
    doc = {
        "experiment": config.kind,
        "version": __version__,
        "params": config.raw_params,
        "summary": summary,
        "diagnostics": diagnostics,
    }
    if config.seed is not None:
        doc["seed"] = config.seed
    json_path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cavsim", description="Composite-cavity QED simulations.")
    ap.add_argument("--version", action="version", version=f"cavsim {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config")
    run.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="override a config field (repeatable)")
    run.add_argument("--out", default=".", help="output directory (default: .)")
    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config")
    val.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.command == "validate":
        print(f"{args.config}: ok ({config.kind})")
        return EXIT_OK
    try:
        csv_path, json_path = run_experiment(config, args.out)
    except (ValueError, ModelInvalidError) as exc:
        print(f"error: invalid parameters: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (CavsimError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
