"""Command-line interface.

Every subcommand reads a flat configuration (built-in defaults, then an
optional INI file given by ``--config``, then ``--key value`` overrides),
echoes the fully resolved configuration together with its result as JSON on
stdout, and writes the same JSON (plus CSV tables where relevant) into the
output directory.  The output directory defaults to ``$BULKEDGE_OUT`` or the
current directory.

Failures print ``{"error": ...}`` JSON and exit with status 1 (runtime) or 2
(configuration).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

OUT_ENV = "BULKEDGE_OUT"


@dataclass(frozen=True)
class Key:
    type: type
    default: object
    help: str


def _floats(text):
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _ints(text):
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text is None or str(text).lower() in ("", "none") else float(text)


def _opt_str(text):
    return None if text is None or str(text) == "" else str(text)


def _opt_int(text):
    return None if text is None or str(text).lower() in ("", "none") else int(text)


KEYS: dict[str, Key] = {
    # model
    "delta": Key(float, 1.0, "mass parameter of the Qi-Wu-Zhang kernel"),
    "hopping_scale": Key(float, 1.0, "factor multiplying the kernel hopping blocks"),
    "d": Key(int, 2, "channels per site (the Qi-Wu-Zhang kernel has d = 2)"),
    # geometry
    "L": Key(int, 12, "box radius; the box is [-L, L]^2"),
    "bc": Key(str, "simple", "boundary condition: simple, periodic or decoupled:l"),
    "f": Key(float, 0.5, "window fraction of the Chern marker and refined correction"),
    # disorder
    "eta": Key(float, 6.0, "exponent of the coupling density eta x^(eta-1)"),
    "t": Key(float, 0.0, "deformation strength in [0, 1]"),
    "t_grid": Key(_floats, (0.0, 0.15, 0.3), "comma-separated t values for sweep-t"),
    "N": Key(int, 1, "number of realizations"),
    "seed": Key(_opt_int, None, "master seed (required by stochastic commands)"),
    "realization": Key(int, 0, "realization index for single-sample commands"),
    "independent": Key(_bool, False, "sweep-t: draw fresh couplings at every t"),
    # rho and indices
    "a": Key(float, -0.4, "lower end of the switch interval"),
    "b": Key(float, 0.4, "upper end of the switch interval"),
    "lam": Key(_opt_float, None, "Fermi level (default: centre of (a, b), or the kernel's reference energy)"),
    "w": Key(int, 2, "boundary width of the mode classification"),
    "theta": Key(float, 0.5, "boundary-weight threshold for edge modes"),
    "probes": Key(str, "edge,bulk,momentum", "ensemble probes: any of edge, bulk, momentum"),
    # probes
    "s": Key(float, 0.5, "fractional exponent in (0, 1)"),
    "epsilon": Key(float, 1e-3, "imaginary part of the spectral parameter"),
    "beta": Key(float, 0.5, "interval exponent: radius L^-beta"),
    "kgrid": Key(int, 24, "k-points per axis"),
    "Ls": Key(_ints, (6, 10, 14), "comma-separated box radii for lifshitz"),
    "radius_scale": Key(float, 1.0, "lifshitz: factor on the interval radius"),
    "M": Key(int, 12, "decouple-check: ambient box radius"),
    "z_real": Key(float, 0.0, "decouple-check: real part of z"),
    "z_imag": Key(float, 0.5, "decouple-check: imaginary part of z"),
    "K": Key(int, 3, "hs-check: order of the almost-analytic extension"),
    "h": Key(float, 0.01, "hs-check: quadrature step"),
    "dim": Key(int, 40, "hs-check: matrix dimension"),
    "spectral_radius": Key(float, 3.0, "hs-check: eigenvalues drawn uniformly from [-r, r]"),
    # execution and output
    "workers": Key(int, 1, "maximum number of worker threads"),
    "out": Key(_opt_str, None,
               f"output directory (default ${OUT_ENV} or the current directory)"),
    "dump_matrix": Key(_opt_str, None,
                       "edge-index/marker: write the Hamiltonian to this file"),
}

COMMANDS = {
    "chern": "Chern number of the clean bands below lam (plaquette method)",
    "band": "Bloch bands on a kgrid x kgrid mesh as CSV",
    "gap": "check that lam lies in a spectral gap of the clean model",
    "edge-index": "edge index of one simple-boundary sample",
    "marker": "windowed Chern marker of one simple-boundary sample",
    "ensemble": "disorder ensemble of edge, marker and refined indices",
    "sweep-t": "ensemble at every t of t_grid with shared couplings",
    "green": "fractional moments of the Green function along a ray",
    "lifshitz": "probability of eigenvalues near lam in periodic boxes",
    "decouple-check": "geometric decoupling resolvent identity residual",
    "hs-check": "Helffer-Sjostrand versus eigendecomposition for a random matrix",
}

ALWAYS_STOCHASTIC = {"ensemble", "sweep-t", "green", "lifshitz", "decouple-check", "hs-check"}


class ConfigError(ValueError):
    def __init__(self, message, keys=()):
        super().__init__(message)
        self.keys = list(keys)


# --- JSON with 17 significant digits ------------------------------------------------

def _num(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def dumps(obj, indent: int = 1, _level: int = 0) -> str:
    """JSON text in which every float carries 17 significant digits."""
    pad = "\n" + " " * (indent * (_level + 1))
    end = "\n" + " " * (indent * _level)
    if isinstance(obj, bool) or obj is None:
        return {True: "true", False: "false", None: "null"}[obj]
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{" + pad + ("," + pad).join(items) + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        return "[" + pad + ("," + pad).join(dumps(v, indent, _level + 1) for v in obj) + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


# --- configuration ------------------------------------------------------------------

def read_ini(path) -> dict[str, str]:
    """Flat key/value pairs from every section of an INI file."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}", ["config"])
    raw = dict(parser.defaults())
    for section in parser.sections():
        raw.update(parser.items(section))
    return {k.replace("-", "_"): v for k, v in raw.items()}


def resolve_config(file_values: dict[str, str], overrides: dict[str, str]) -> dict:
    """Merge defaults, file values and overrides; convert types; reject unknown keys."""
    unknown = sorted(set(file_values) - set(KEYS)) + sorted(set(overrides) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}", unknown)
    resolved, bad = {}, []
    for name, key in KEYS.items():
        raw = overrides.get(name, file_values.get(name))
        if raw is None:
            resolved[name] = key.default
            continue
        try:
            resolved[name] = key.type(raw)
        except (TypeError, ValueError):
            bad.append(name)
    if bad:
        raise ConfigError(f"invalid values for: {', '.join(bad)}", bad)
    return resolved


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bulkedge", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, text in COMMANDS.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", help="INI file with key = value entries (any section)")
        for key, spec in KEYS.items():
            default = spec.default if not isinstance(spec.default, tuple) else ",".join(map(str, spec.default))
            p.add_argument(f"--{key}", dest=f"opt_{key}", metavar=key.upper() if len(key) > 1 else key,
                           help=f"{spec.help} (default: {default})")
    return parser


# --- commands -----------------------------------------------------------------------

def _kernel(cfg):
    from .lattice import build_qwz_kernel
    if cfg["d"] != 2:
        raise ConfigError("the Qi-Wu-Zhang kernel has d = 2", ["d"])
    return build_qwz_kernel(cfg["delta"], cfg["hopping_scale"])


def _lam(cfg, kernel):
    return kernel.fermi_level if cfg["lam"] is None else cfg["lam"]


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_num(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _sample(cfg, kernel):
    from .lattice import assemble_hamiltonian, sample_disorder
    dis = sample_disorder(cfg["L"], kernel.d, cfg["eta"], cfg["t"], cfg["seed"] or 0, cfg["realization"])
    return assemble_hamiltonian(kernel, dis, cfg["bc"])


def cmd_chern(cfg, out):
    from .bloch import chern_number_fhs
    k = _kernel(cfg)
    return chern_number_fhs(k, _lam(cfg, k), cfg["kgrid"]).to_dict()


def cmd_band(cfg, out):
    from .bloch import band_table
    k = _kernel(cfg)
    table = band_table(k, cfg["kgrid"])
    path = out / "band.csv"
    _write_csv(path, ["k1", "k2"] + [f"lambda{j + 1}" for j in range(k.d)], table.tolist())
    return {"csv": str(path), "rows": len(table), "min": float(table[:, 2:].min()), "max": float(table[:, 2:].max())}


def cmd_gap(cfg, out):
    from .bloch import verify_gap
    k = _kernel(cfg)
    width, gapped = verify_gap(k, _lam(cfg, k), max(cfg["kgrid"], 8))
    return {"gap_width": width, "gapped": gapped}


def _single(cfg, out, what):
    from .indices import chern_marker_frame, edge_index
    from .lattice import dump_matrix
    from .spectral import eig, occupied_frame, switch_function
    k = _kernel(cfg)
    H = _sample(cfg, k)
    if cfg["dump_matrix"]:
        dump_matrix(H, cfg["dump_matrix"])
    rho = switch_function(cfg["a"], cfg["b"])
    if what == "edge":
        es = eig(H, (cfg["a"], cfg["b"]), method="shift-invert")
        value, imag = edge_index(H, es, rho)
        return {"edge_index": value, "edge_index_imag_residual": imag, "n_modes": len(es.select(cfg["a"], cfg["b"])),
                "dim": H.dim, "residual_bound": es.residual_bound}
    lam = 0.5 * (cfg["a"] + cfg["b"]) if cfg["lam"] is None else cfg["lam"]
    es = eig(H, (-np.inf, lam))
    value, imag = chern_marker_frame(occupied_frame(es, lam), H.L, cfg["f"], H.d, return_residual=True)
    return {"chern_marker": value, "imag_residual": imag, "lam": lam, "dim": H.dim}


def _spec(cfg, **extra):
    from .ensemble import EnsembleSpec
    probes = {p.strip() for p in cfg["probes"].split(",") if p.strip()}
    bad = probes - {"edge", "bulk", "momentum"}
    if bad:
        raise ConfigError(f"unknown probes: {', '.join(sorted(bad))}", ["probes"])
    _kernel(cfg)
    return EnsembleSpec(delta=cfg["delta"], hopping_scale=cfg["hopping_scale"], L=cfg["L"], eta=cfg["eta"],
                        t=cfg["t"], a=cfg["a"], b=cfg["b"], fermi_level=cfg["lam"], window_fraction=cfg["f"],
                        boundary_width=cfg["w"], threshold=cfg["theta"], N=cfg["N"], master_seed=cfg["seed"],
                        edge="edge" in probes, bulk="bulk" in probes, momentum="momentum" in probes,
                        k_grid=cfg["kgrid"], independent_disorder=cfg["independent"], **extra)


def cmd_ensemble(cfg, out):
    from .ensemble import persist, run_ensemble
    result = run_ensemble(_spec(cfg), workers=cfg["workers"])
    json_path, csv_path = persist(result, out / "ensemble-result.json")
    return {"aggregates": result.aggregates, "failures": len(result.failures), "result_json": str(json_path),
            "rows_csv": str(csv_path)}


def cmd_sweep(cfg, out):
    from .ensemble import deformation_sweep, persist
    result = deformation_sweep(_spec(cfg, t_grid=cfg["t_grid"]), workers=cfg["workers"])
    json_path, csv_path = persist(result, out / "sweep-result.json")
    return {"curves": result.aggregates["curves"], "result_json": str(json_path), "rows_csv": str(csv_path)}


def cmd_green(cfg, out):
    from .localization import fractional_moment_scan
    k = _kernel(cfg)
    lam = _lam(cfg, k)
    g = fractional_moment_scan(k, cfg["L"], cfg["t"], cfg["eta"], lam, cfg["epsilon"], cfg["s"], cfg["N"],
                               cfg["seed"])
    path = out / "green.csv"
    _write_csv(path, ["r", "mean", "stderr"], zip(g.distances.tolist(), g.means.tolist(), g.stderr.tolist()))
    return dict(g.summary(), csv=str(path))


def cmd_lifshitz(cfg, out):
    from .localization import lifshitz_probe
    k = _kernel(cfg)
    est = lifshitz_probe(k, cfg["Ls"], cfg["beta"], cfg["eta"], cfg["N"], cfg["seed"], t=1.0,
                         radius_scale=cfg["radius_scale"])
    path = out / "lifshitz.csv"
    _write_csv(path, ["L", "hits", "N", "p", "wilson_lo", "wilson_hi"],
               [(L, h, est.N, p, c[0], c[1]) for L, h, p, c in zip(est.Ls, est.hits, est.p, est.intervals)])
    return dict(est.summary(), strictly_decreasing=est.strictly_decreasing, csv=str(path))


def cmd_decouple(cfg, out):
    from .localization import decoupling_residual
    k = _kernel(cfg)
    z = complex(cfg["z_real"], cfg["z_imag"])
    res = decoupling_residual(k, cfg["M"], cfg["L"], z, cfg["eta"], cfg["seed"], t=cfg["t"],
                              realization_index=cfg["realization"])
    return {"max_residual": res}


def cmd_hs(cfg, out):
    from .spectral import hs_validate, switch_function
    rng = np.random.Generator(np.random.PCG64(cfg["seed"]))
    n = cfg["dim"]
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    lam = rng.uniform(-cfg["spectral_radius"], cfg["spectral_radius"], n)
    H = (Q * lam) @ Q.conj().T
    H = 0.5 * (H + H.conj().T)
    dev = hs_validate(H, switch_function(cfg["a"], cfg["b"]), cfg["K"], cfg["h"])
    return {"deviation": dev, "dim": n}


HANDLERS = {"chern": cmd_chern, "band": cmd_band, "gap": cmd_gap,
            "edge-index": lambda c, o: _single(c, o, "edge"), "marker": lambda c, o: _single(c, o, "marker"),
            "ensemble": cmd_ensemble, "sweep-t": cmd_sweep, "green": cmd_green, "lifshitz": cmd_lifshitz,
            "decouple-check": cmd_decouple, "hs-check": cmd_hs}


def _emit(doc) -> str:
    text = dumps(doc)
    print(text)
    return text


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    command = args.command
    try:
        if extra:
            names = [e.lstrip("-").split("=")[0] for e in extra if e.startswith("--")] or extra
            raise ConfigError(f"unknown arguments: {' '.join(extra)}", names)
        file_values = read_ini(args.config) if args.config else {}
        overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("opt_") and v is not None}
        cfg = resolve_config(file_values, overrides)
        stochastic = command in ALWAYS_STOCHASTIC or (command in ("edge-index", "marker") and cfg["t"] > 0)
        if stochastic and cfg["seed"] is None:
            raise ConfigError(f"{command} draws random numbers and needs --seed", ["seed"])
        out = Path(cfg["out"] or os.environ.get(OUT_ENV) or ".")
        out.mkdir(parents=True, exist_ok=True)
        cfg_echo = dict(cfg, out=str(out))
        result = HANDLERS[command](cfg, out)
    except ConfigError as exc:
        _emit({"error": "config", "message": str(exc), "keys": exc.keys, "command": command})
        return 2
    except Exception as exc:  # any failure becomes machine-readable output
        _emit({"error": type(exc).__name__, "message": str(exc), "command": command})
        return 1
    doc = {"command": command, **result, "config": cfg_echo}
    text = _emit(doc)
    (out / f"{command}.json").write_text(text + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
