"""Disorder ensembles: seeding, parallel execution, statistics, t-sweeps and persistence."""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .bloch import chern_number_fhs, verify_gap
from .indices import IndexReport, compute_indices, edge_index
from .lattice import HoppingKernel, assemble_hamiltonian, build_qwz_kernel, sample_disorder
from .seeding import derive_seed
from .spectral import eig, switch_function

__all__ = ["EnsembleSpec", "EnsembleResult", "EnsembleFailure", "derive_seed", "run_ensemble",
           "deformation_sweep", "persist", "load", "CSV_COLUMNS", "FORMAT_VERSION"]

FORMAT_VERSION = 1
FAILURE_BUDGET = 0.05
CSV_COLUMNS = ("realization_index", "seed", "edge", "edge_imag", "marker", "correction", "refined",
               "n_ingap", "n_edge_modes", "n_bulk_modes")
AGGREGATED = {"edge": "edge_index", "marker": "chern_marker", "correction": "refined_correction",
              "refined": "refined_bulk_index"}


class EnsembleFailure(RuntimeError):
    """More than the allowed fraction of realizations failed."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class VersionError(ValueError):
    """A result file was written by an unsupported format version."""


class CorruptResultError(ValueError):
    """A result file could not be parsed."""


@dataclass(frozen=True)
class EnsembleSpec:
    """Everything needed to reproduce an ensemble run.

    ``edge`` selects the edge index, ``bulk`` the Chern marker and refined
    index, ``momentum`` the Bloch-space Chern number of the clean model.
    With only ``edge`` selected, eigenpairs inside ``(a, b)`` are found by
    sparse shift-invert iteration; otherwise every eigenpair below ``b`` is
    computed densely.
    """

    delta: float = 1.0
    hopping_scale: float = 1.0
    L: int = 12
    eta: float = 6.0
    t: float = 0.0
    t_grid: tuple[float, ...] | None = None
    a: float = -0.4
    b: float = 0.4
    fermi_level: float | None = None
    window_fraction: float = 0.5
    boundary_width: int = 2
    threshold: float = 0.5
    N: int = 1
    master_seed: int = 0
    edge: bool = True
    bulk: bool = True
    momentum: bool = True
    k_grid: int = 24
    independent_disorder: bool = False

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if not self.a < self.b:
            raise ValueError("need a < b")
        if self.L < 2:
            raise ValueError("L must be at least 2")
        ts = self.t_grid if self.t_grid is not None else (self.t,)
        if any(not 0.0 <= t <= 1.0 for t in ts):
            raise ValueError("t values must lie in [0, 1]")
        if self.t_grid is not None:
            object.__setattr__(self, "t_grid", tuple(float(t) for t in self.t_grid))

    def kernel(self) -> HoppingKernel:
        return build_qwz_kernel(self.delta, self.hopping_scale)

    def check_gap(self) -> float:
        """Verify that ``(a, b)`` sits strictly inside the gap of the clean model."""
        k = self.kernel()
        width, gapped = verify_gap(k, k.fermi_level)
        lo, hi = k.fermi_level - width, k.fermi_level + width
        if not gapped or not (lo < self.a and self.b < hi):
            raise ValueError(f"(a, b)=({self.a}, {self.b}) is not inside the clean gap ({lo}, {hi})")
        return width

    def to_dict(self) -> dict:
        d = asdict(self)
        d["t_grid"] = list(self.t_grid) if self.t_grid is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> EnsembleSpec:
        d = dict(d)
        if d.get("t_grid") is not None:
            d["t_grid"] = tuple(d["t_grid"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    """Per-realization reports, failures and aggregates.

    ``reports[i]`` belongs to realization ``i`` (``None`` if it failed).  For
    a deformation sweep, ``sweep`` holds one result per ``t`` and ``reports``
    is empty.  ``elapsed`` is wall-clock metadata and is not persisted.
    """

    spec: EnsembleSpec
    reports: tuple[IndexReport | None, ...]
    failures: tuple[tuple[int, str], ...]
    aggregates: dict
    sweep: tuple[EnsembleResult, ...] = ()
    elapsed: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(),
                "reports": [r.to_dict() if r is not None else None for r in self.reports],
                "failures": [list(f) for f in self.failures],
                "aggregates": self.aggregates,
                "sweep": [s.to_dict() for s in self.sweep]}

    @classmethod
    def from_dict(cls, d: dict) -> EnsembleResult:
        return cls(EnsembleSpec.from_dict(d["spec"]),
                   tuple(IndexReport.from_dict(r) if r is not None else None for r in d["reports"]),
                   tuple((int(i), str(m)) for i, m in d["failures"]),
                   d["aggregates"],
                   tuple(cls.from_dict(s) for s in d["sweep"]))

    def canonical(self) -> str:
        """Deterministic JSON text of the result (used for equality checks)."""
        return json.dumps(self.to_dict(), sort_keys=True)

    def rows(self) -> list[dict]:
        out = []
        for r in self.reports:
            if r is None:
                continue
            out.append({"realization_index": r.realization_index, "seed": r.seed, "edge": r.edge_index,
                        "edge_imag": r.edge_index_imag_residual, "marker": r.chern_marker,
                        "correction": r.refined_correction, "refined": r.refined_bulk_index,
                        "n_ingap": len(r.ingap_modes), "n_edge_modes": r.n_edge_modes,
                        "n_bulk_modes": r.n_bulk_modes})
        return out


def mean_stderr(values) -> tuple[float, float]:
    """Mean and standard error with exactly rounded summation (order independent)."""
    v = [float(x) for x in values]
    n = len(v)
    if n == 0:
        return float("nan"), float("nan")
    mean = math.fsum(v) / n
    if n == 1:
        return mean, float("nan")
    var = math.fsum((x - mean) ** 2 for x in v) / (n - 1)
    return mean, math.sqrt(var / n)


def aggregate(reports) -> dict:
    rows = [r for r in reports if r is not None]
    out = {}
    for key, attr in AGGREGATED.items():
        m, se = mean_stderr(getattr(r, attr) for r in rows)
        out[key] = {"mean": m, "stderr": se, "n": len(rows)}
    return out


def _realization(spec: EnsembleSpec, kernel: HoppingKernel, index: int, t: float, master: int,
                 momentum: int | None) -> IndexReport:
    dis = sample_disorder(spec.L, kernel.d, spec.eta, t, master, index)
    H = assemble_hamiltonian(kernel, dis, "simple")
    rho = switch_function(spec.a, spec.b)
    if spec.bulk:
        es = eig(H, (-np.inf, spec.b))
        rep = compute_indices(H, es, rho, fermi_level=spec.fermi_level, window_fraction=spec.window_fraction,
                              boundary_width=spec.boundary_width, threshold=spec.threshold,
                              momentum_chern=momentum)
        if not spec.edge:
            rep = replace(rep, edge_index=float("nan"), edge_index_imag_residual=float("nan"))
        return rep
    es = eig(H, (spec.a, spec.b), method="shift-invert")
    edge, imag = edge_index(H, es, rho) if spec.edge else (float("nan"), float("nan"))
    lam = 0.5 * (spec.a + spec.b) if spec.fermi_level is None else spec.fermi_level
    meta = H.metadata["disorder"]
    nan = float("nan")
    return IndexReport(spec.L, float(t), float(spec.eta), meta["master_seed"], meta["realization_index"],
                       meta["seed"], spec.a, spec.b, lam, spec.window_fraction, spec.boundary_width,
                       spec.threshold, edge, imag, nan, nan, nan, momentum, ())


def _run_single_t(spec: EnsembleSpec, t: float, master: int, workers: int, momentum: int | None,
                  kernel: HoppingKernel) -> EnsembleResult:
    start = time.perf_counter()

    def task(i):
        try:
            return _realization(spec, kernel, i, t, master, momentum), None
        except Exception as exc:  # recorded per realization, judged against the failure budget
            return None, f"{type(exc).__name__}: {exc}"

    if t == 0.0:
        # at t = 0 the on-site term does not depend on omega, so every
        # realization has the same Hamiltonian; compute it once
        first, err = task(0)
        outcomes = [(first, err)]
        for i in range(1, spec.N):
            if first is None:
                outcomes.append((None, err))
                continue
            seed = derive_seed(master, i)
            outcomes.append((replace(first, realization_index=i, seed=seed), None))
    elif workers <= 1:
        outcomes = [task(i) for i in range(spec.N)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(task, range(spec.N)))

    reports = tuple(o[0] for o in outcomes)
    failures = tuple((i, o[1]) for i, o in enumerate(outcomes) if o[1] is not None)
    result = EnsembleResult(replace(spec, t=float(t), t_grid=None, master_seed=master), reports, failures,
                            aggregate(reports), (), time.perf_counter() - start)
    if len(failures) > FAILURE_BUDGET * spec.N:
        raise EnsembleFailure(f"{len(failures)} of {spec.N} realizations failed; first: {failures[0][1]}",
                              result)
    return result


def _momentum(spec: EnsembleSpec, kernel: HoppingKernel) -> int | None:
    if not spec.momentum:
        return None
    return chern_number_fhs(kernel, kernel.fermi_level, spec.k_grid).chern


def run_ensemble(spec: EnsembleSpec, workers: int = 1) -> EnsembleResult:
    """Sample, diagonalize and index ``spec.N`` realizations at a single ``t``.

    Realization ``i`` uses the disorder substream ``derive_seed(master_seed, i)``,
    so the output does not depend on ``workers``.
    """
    if spec.t_grid is not None:
        raise ValueError("EnsembleSpec has a t_grid; use deformation_sweep")
    if spec.t == 0.0:
        spec.check_gap()
    kernel = spec.kernel()
    return _run_single_t(spec, spec.t, spec.master_seed, workers, _momentum(spec, kernel), kernel)


def deformation_sweep(spec: EnsembleSpec, workers: int = 1) -> EnsembleResult:
    """Run the ensemble at every ``t`` of ``spec.t_grid``.

    By default the same couplings ``omega`` are reused at every ``t`` (only the
    deformation strength changes).  With ``independent_disorder`` each grid
    point ``j`` draws from the master seed ``derive_seed(master_seed, j)``.
    """
    if not spec.t_grid:
        raise ValueError("EnsembleSpec needs a non-empty t_grid")
    if 0.0 in spec.t_grid:
        spec.check_gap()
    start = time.perf_counter()
    kernel = spec.kernel()
    momentum = _momentum(spec, kernel)
    results = []
    for j, t in enumerate(spec.t_grid):
        master = derive_seed(spec.master_seed, j) if spec.independent_disorder else spec.master_seed
        results.append(_run_single_t(spec, t, master, workers, momentum, kernel))
    curves = {"t": list(spec.t_grid)}
    for key in AGGREGATED:
        curves[f"{key}_mean"] = [r.aggregates[key]["mean"] for r in results]
        curves[f"{key}_stderr"] = [r.aggregates[key]["stderr"] for r in results]
    return EnsembleResult(spec, (), (), {"curves": curves}, tuple(results), time.perf_counter() - start)


# --- persistence ------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return "" if v is None else str(v)


def write_rows(result: EnsembleResult, path) -> None:
    """CSV of per-realization rows; sweeps get a leading ``t`` column."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if result.sweep:
            w.writerow(("t",) + CSV_COLUMNS)
            for sub in result.sweep:
                for row in sub.rows():
                    w.writerow([_fmt(sub.spec.t)] + [_fmt(row[c]) for c in CSV_COLUMNS])
        else:
            w.writerow(CSV_COLUMNS)
            for row in result.rows():
                w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def persist(result: EnsembleResult, path) -> tuple[Path, Path]:
    """Write ``<path>`` (JSON, complete) and ``<path stem>.csv`` (rows)."""
    path = Path(path)
    doc = {"format": "bulkedge-ensemble", "version": FORMAT_VERSION, "result": result.to_dict()}
    path.write_text(json.dumps(doc, sort_keys=True, indent=1))
    csv_path = path.with_suffix(".csv")
    write_rows(result, csv_path)
    return path, csv_path


def load(path) -> EnsembleResult:
    """Read a result written by :func:`persist`."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptResultError(f"cannot read {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != "bulkedge-ensemble":
        raise CorruptResultError(f"{path} is not an ensemble result")
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path} has format version {version}; this build reads {FORMAT_VERSION}")
    try:
        return EnsembleResult.from_dict(doc["result"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptResultError(f"{path} is malformed: {exc}") from exc
