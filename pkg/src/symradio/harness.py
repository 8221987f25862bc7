"""Experiment drivers, configuration files and CSV emission.

Every driver is a pure function of its ``ExperimentConfig``: each trial gets
its own seed derived from ``(seed, trial)``, trials may run on worker threads,
and rows are merged by trial index before anything is written.  Wall times are
only recorded when ``timing`` is on, so two runs with the same configuration
write byte-identical CSV files.

Energies are reported in joules and in dB relative to 1 J.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .model import ScheduleFrame, SolutionReport
from .sca import AlgorithmConfig, InitializationError, complexity_cqr, complexity_sq, run_cqr, run_sq
from .scenarios import PLACEMENTS, Geometry, build_instance, iot_ee_point, load_protocols, tdma_baseline, tsr_schedule

EXPERIMENTS = ("rate_sweep", "m_sweep", "antenna_sweep", "complexity", "convergence", "tdma_compare", "iot_ee",
               "location_study")
METHODS = ("SQ", "CQR", "TDMA")

RESULT_HEADER = ("experiment", "method", "M", "I", "N", "C_bps_hz", "E_T_J", "E_T_dB", "iterations", "converged",
                 "rank_residual", "wall_s", "seed", "trial")
COMPLEXITY_HEADER = ("experiment", "method", "I", "N", "M", "eps", "kappa", "size", "flops")
CONVERGENCE_HEADER = ("experiment", "method", "M", "I", "N", "C_bps_hz", "iteration", "E_T_J", "E_T_dB",
                      "displacement", "rank_residual", "penalty", "seed", "trial")
IOT_EE_HEADER = ("experiment", "protocol", "SE_bps_hz", "EE_bits_per_J")


class ConfigError(ValueError):
    pass


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, str):
        return tuple(float(t) for t in text.replace(",", " ").split())
    return tuple(float(t) for t in np.atleast_1d(text))


def _ints(text) -> tuple[int, ...]:
    if isinstance(text, str):
        return tuple(int(t) for t in text.replace(",", " ").split())
    return tuple(int(t) for t in np.atleast_1d(text))


def _words(text) -> tuple[str, ...]:
    if isinstance(text, str):
        return tuple(text.replace(",", " ").split())
    return tuple(text)


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything an experiment needs; fields map one-to-one onto config-file keys."""

    experiment: str = "rate_sweep"
    N: int = 4
    I: int = 4
    M: int = 4
    C_values: tuple = (0.02, 0.04, 0.06, 0.08, 0.1)
    T: float = 10.0
    K: int = 100
    eta: float = 0.8
    noise_dbm: float = -114.0
    trials: int = 50
    seed: int = 0
    out_dir: str = "results"
    svg: bool = False
    methods: tuple = ("SQ", "CQR")
    counter_max: int = 30
    tolerance: float = 1e-6
    placement: str = "uniform_within_100m_of_sue"
    # sweep-specific knobs
    M_values: tuple = (4, 6)
    antennas: tuple = (1, 4, 9)
    placements: tuple = ("near_bs", "mid", "near_sue")
    I_values: tuple = tuple(range(1, 41))
    eps: float = 1e-6
    se_values: tuple = (1.0, 2.0, 3.0, 4.0, 5.0)
    warm_start: bool = True
    chain_center: bool = False
    workers: int = 1
    timing: bool = False

    def __post_init__(self):
        conv = {"C_values": _floats, "methods": _words, "M_values": _ints, "antennas": _ints,
                "placements": _words, "I_values": _ints, "se_values": _floats}
        for name, fn in conv.items():
            object.__setattr__(self, name, fn(getattr(self, name)))
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.C_values or any(b < a for a, b in zip(self.C_values, self.C_values[1:])):
            raise ConfigError("C range must be non-empty and nondecreasing")
        if any(c < 0 for c in self.C_values):
            raise ConfigError("rate targets must be nonnegative")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; expected one of {METHODS}")
        for p in self.placements + (self.placement,):
            if p not in PLACEMENTS:
                raise ConfigError(f"unknown placement {p!r}")
        if min(self.N, self.I, self.M, self.K, self.counter_max, self.workers) < 1:
            raise ConfigError("N, I, M, K, counter_max and workers must be >= 1")
        if self.T <= 0 or self.tolerance <= 0 or self.eps <= 0:
            raise ConfigError("T, tolerance and eps must be positive")

    @property
    def noise_w(self) -> float:
        return 10 ** ((self.noise_dbm - 30) / 10)

    def algorithm(self, M: int | None = None) -> AlgorithmConfig:
        return AlgorithmConfig(tolerance=self.tolerance, counter_max=self.counter_max,
                               M=self.M if M is None else M, chain_center=self.chain_center, seed=self.seed)

    def trial_seed(self, trial: int) -> int:
        return int(np.random.SeedSequence([self.seed, trial]).generate_state(1)[0])


FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def load_config(path, **overrides) -> ExperimentConfig:
    """Read an INI file with one ``[experiment]`` section; unknown keys are rejected."""
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys are case sensitive (N, I, M, T, K)
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    extra = [s for s in parser.sections() if s != "experiment"]
    if extra:
        raise ConfigError(f"unknown section(s) {extra}; only [experiment] is allowed")
    values = dict(parser["experiment"]) if parser.has_section("experiment") else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_mapping(values)


def config_from_mapping(values: Mapping) -> ExperimentConfig:
    unknown = sorted(set(values) - set(FIELDS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    kwargs = {}
    for key, raw in values.items():
        default = FIELDS[key].default
        if isinstance(default, bool):
            kwargs[key] = _bool(raw)
        elif isinstance(default, int):
            kwargs[key] = int(raw)
        elif isinstance(default, float):
            kwargs[key] = float(raw)
        else:
            kwargs[key] = raw
    return ExperimentConfig(**kwargs)


# ---------------------------------------------------------------------------
# rows


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    method: str
    M: int
    I: int
    N: int
    C_bps_hz: float
    E_T_J: float
    E_T_dB: float
    iterations: int
    converged: bool
    rank_residual: float
    wall_s: float | None
    seed: int
    trial: int

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")

    def record(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_record(cls, rec: Mapping) -> "ResultRow":
        def num(v):
            return None if v in ("", None) else float(v)

        return cls(
            experiment=rec["experiment"], method=rec["method"], M=int(rec["M"]), I=int(rec["I"]), N=int(rec["N"]),
            C_bps_hz=float(rec["C_bps_hz"]), E_T_J=float(rec["E_T_J"]), E_T_dB=float(rec["E_T_dB"]),
            iterations=int(rec["iterations"]), converged=_bool(rec["converged"]),
            rank_residual=float(rec["rank_residual"]), wall_s=num(rec["wall_s"]), seed=int(rec["seed"]),
            trial=int(rec["trial"]),
        )


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.9g}"
    return str(v)


def _as_record(row) -> dict:
    return row.record() if isinstance(row, ResultRow) else dict(row)


def emit_csv(rows: Sequence, path, header: Sequence[str] | None = None) -> str:
    """Write rows (``ResultRow`` or mappings) as UTF-8 CSV, floats to 9 significant digits."""
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to write")
    records = [_as_record(r) for r in rows]
    header = tuple(header) if header is not None else (
        RESULT_HEADER if isinstance(rows[0], ResultRow) else tuple(records[0]))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for rec in records:
            missing = [h for h in header if h not in rec]
            if missing:
                raise ValueError(f"row is missing column(s) {missing}")
            writer.writerow([_fmt(rec[h]) for h in header])
    return str(path)


def read_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def read_results(path) -> list[ResultRow]:
    return [ResultRow.from_record(r) for r in read_csv(path)]


# ---------------------------------------------------------------------------
# drivers


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    header: tuple = RESULT_HEADER
    files: list = field(default_factory=list)

    @property
    def all_converged(self) -> bool:
        if self.header != RESULT_HEADER:
            return True
        return all(r.converged for r in self.rows)

    @property
    def exit_code(self) -> int:
        return 0 if self.all_converged else 2


def _result_row(cfg, experiment, method, M, I, N, C, report: SolutionReport | None, wall, seed, trial) -> ResultRow:
    if report is None or report.status == "infeasible" or not math.isfinite(report.total_energy):
        energy, iters, converged, rank = math.inf, (report.iterations if report else 0), False, math.nan
    else:
        energy, iters, converged = report.total_energy, report.iterations, report.converged
        rank = float(np.max(report.rank_residuals)) if len(report.rank_residuals) else 0.0
    db = 10 * math.log10(energy) if 0 < energy < math.inf else (-math.inf if energy == 0 else math.inf)
    return ResultRow(experiment, method, int(M), int(I), int(N), float(C), float(energy), db, int(iters),
                     bool(converged), rank, wall if cfg.timing else None, int(seed), int(trial))


def _instance(cfg: ExperimentConfig, N, I, C, seed, placement=None):
    geometry = Geometry(placement=placement or cfg.placement)
    return build_instance(geometry, N, I, C, seed, spreading_factor=cfg.K, frame_length=cfg.T,
                          efficiency=cfg.eta, noise=cfg.noise_w)


def _solve(method: str, instance, schedule: ScheduleFrame, algo: AlgorithmConfig):
    """Run one method, turning an unreachable start into a missing report."""
    t0 = time.perf_counter()
    try:
        if method == "SQ":
            report, trace = run_sq(instance, schedule, algo)
        elif method == "CQR":
            report, trace = run_cqr(instance, schedule, algo)
        else:
            report, trace = tdma_baseline(instance, algo)
    except InitializationError:
        report, trace = None, None
    return report, trace, time.perf_counter() - t0


def _sweep_trial(cfg: ExperimentConfig, trial: int, experiment: str, grid: Iterable[tuple]) -> list:
    """``grid`` yields ``(method, M, N, C, placement)`` tuples."""
    seed = cfg.trial_seed(trial)
    rows = []
    for method, M, N, C, placement in grid:
        inst = _instance(cfg, N, cfg.I, C, seed, placement)
        schedule = tsr_schedule(cfg.I, 1, inst.slot_count)
        report, _, wall = _solve(method, inst, schedule, cfg.algorithm(M))
        name = experiment if placement is None else f"{experiment}:{placement}"
        rows.append(_result_row(cfg, name, method, M, cfg.I, N, C, report, wall, seed, trial))
    return rows


def _rate_sweep(cfg, trial):
    grid = [(m, cfg.M, cfg.N, C, None) for C in cfg.C_values for m in cfg.methods]
    return _sweep_trial(cfg, trial, "rate_sweep", grid)


def _m_sweep(cfg, trial):
    grid = [("CQR", M, cfg.N, C, None) for C in cfg.C_values for M in cfg.M_values]
    return _sweep_trial(cfg, trial, "m_sweep", grid)


def _antenna_sweep(cfg, trial):
    grid = [(m, cfg.M, N, C, None) for C in cfg.C_values for N in cfg.antennas for m in cfg.methods]
    return _sweep_trial(cfg, trial, "antenna_sweep", grid)


def _location_study(cfg, trial):
    grid = [("CQR", cfg.M, cfg.N, C, p) for C in cfg.C_values for p in cfg.placements]
    return _sweep_trial(cfg, trial, "location_study", grid)


def _tdma_compare(cfg, trial):
    """TDMA and T-SR on the same channel draw.

    With ``warm_start`` the T-SR run starts from the TDMA allocation, which is
    feasible for T-SR, so the comparison measures what freeing the slot
    durations buys rather than how far each run gets from a cold start.
    """
    seed = cfg.trial_seed(trial)
    algo = cfg.algorithm()
    rows = []
    for C in cfg.C_values:
        inst = _instance(cfg, cfg.N, cfg.I, C, seed)
        schedule = tsr_schedule(cfg.I, 1, inst.slot_count)
        t0 = time.perf_counter()
        report_t, trace_t = tdma_baseline(inst, algo)
        wall_t = time.perf_counter() - t0
        rows.append(_result_row(cfg, "tdma_compare", "TDMA", cfg.M, cfg.I, cfg.N, C, report_t, wall_t, seed, trial))
        t0 = time.perf_counter()
        point = trace_t.point if (cfg.warm_start and trace_t is not None) else None
        try:
            report_s, _ = run_cqr(inst, schedule, algo, point=point)
        except InitializationError:
            report_s = None
        rows.append(_result_row(cfg, "tdma_compare", "CQR", cfg.M, cfg.I, cfg.N, C, report_s,
                                time.perf_counter() - t0, seed, trial))
    return rows


def _convergence(cfg, trial):
    seed = cfg.trial_seed(trial)
    rows = []
    C = cfg.C_values[-1]
    inst = _instance(cfg, cfg.N, cfg.I, C, seed)
    schedule = tsr_schedule(cfg.I, 1, inst.slot_count)
    for method in cfg.methods:
        _, trace, _ = _solve(method, inst, schedule, cfg.algorithm())
        if trace is None:
            continue
        for k, (e, d, r, p) in enumerate(zip(trace.energy, trace.displacement, trace.rank_residual, trace.penalty)):
            rows.append({"experiment": "convergence", "method": method, "M": cfg.M, "I": cfg.I, "N": cfg.N,
                         "C_bps_hz": C, "iteration": k + 1, "E_T_J": e,
                         "E_T_dB": 10 * math.log10(e) if e > 0 else -math.inf,
                         "displacement": d, "rank_residual": r, "penalty": p, "seed": seed, "trial": trial})
    return rows


def complexity_rows(cfg: ExperimentConfig) -> list[dict]:
    rows = []
    for I in cfg.I_values:
        for name, est in (("SQ", complexity_sq(I, cfg.N, cfg.eps)), ("CQR", complexity_cqr(I, cfg.N, cfg.M, cfg.eps))):
            rows.append({"experiment": "complexity", "method": name, "I": I, "N": cfg.N, "M": cfg.M, "eps": cfg.eps,
                         "kappa": est.kappa, "size": est.size, "flops": est.flops})
    return rows


def iot_ee_rows(cfg: ExperimentConfig, protocols=None) -> list[dict]:
    protocols = protocols if protocols is not None else load_protocols()
    return [{"experiment": "iot_ee", "protocol": p.name, "SE_bps_hz": se, "EE_bits_per_J": iot_ee_point(p, se)}
            for se in cfg.se_values for p in protocols]


TRIAL_DRIVERS: dict[str, tuple[Callable, tuple]] = {
    "rate_sweep": (_rate_sweep, RESULT_HEADER),
    "m_sweep": (_m_sweep, RESULT_HEADER),
    "antenna_sweep": (_antenna_sweep, RESULT_HEADER),
    "location_study": (_location_study, RESULT_HEADER),
    "tdma_compare": (_tdma_compare, RESULT_HEADER),
    "convergence": (_convergence, CONVERGENCE_HEADER),
}


def _sweep_key(row) -> tuple:
    rec = _as_record(row)
    if rec.get("experiment") == "complexity":
        sweep = rec["I"]
    elif "SE_bps_hz" in rec:
        sweep = rec["SE_bps_hz"]
    else:
        sweep = rec.get("C_bps_hz", 0.0)
    return rec.get("trial", 0), sweep


def sort_rows(rows: list) -> list:
    """Stable sort by (trial, sweep value); ties keep their generation order."""
    return sorted(rows, key=_sweep_key)


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Run every trial, merge rows by trial index and (optionally) write CSV and SVG files."""
    if cfg.experiment == "complexity":
        result = ExperimentResult(cfg, complexity_rows(cfg), COMPLEXITY_HEADER)
    elif cfg.experiment == "iot_ee":
        result = ExperimentResult(cfg, iot_ee_rows(cfg), IOT_EE_HEADER)
    else:
        driver, header = TRIAL_DRIVERS[cfg.experiment]
        trials = range(cfg.trials)
        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                per_trial = list(pool.map(lambda t: driver(cfg, t), trials))
        else:
            per_trial = [driver(cfg, t) for t in trials]
        rows = [row for chunk in per_trial for row in chunk]
        result = ExperimentResult(cfg, rows, header)
    result.rows = sort_rows(result.rows)
    if write:
        _write_outputs(result)
    return result


def summarize(rows: Sequence[ResultRow]) -> list[dict]:
    """Mean and standard deviation of E_T_dB per (experiment, method, M, N, C) over finite trials."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault((r.experiment, r.method, r.M, r.N, r.C_bps_hz), []).append(r.E_T_dB)
    out = []
    for (exp, method, M, N, C), vals in groups.items():
        finite = np.array([v for v in vals if math.isfinite(v)])
        out.append({"experiment": exp, "method": method, "M": M, "N": N, "C_bps_hz": C,
                    "mean_E_T_dB": float(finite.mean()) if finite.size else math.inf,
                    "std_E_T_dB": float(finite.std()) if finite.size else math.nan,
                    "trials": len(vals), "finite": int(finite.size)})
    return sorted(out, key=lambda d: (d["experiment"], d["method"], d["M"], d["N"], d["C_bps_hz"]))


def _write_outputs(result: ExperimentResult) -> None:
    from .plot import default_axes, emit_plot

    cfg = result.config
    try:
        os.makedirs(cfg.out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {cfg.out_dir!r}: {exc}") from exc
    if not os.access(cfg.out_dir, os.W_OK):
        raise OSError(f"output directory {cfg.out_dir!r} is not writable")
    base = os.path.join(cfg.out_dir, cfg.experiment)
    result.files.append(emit_csv(result.rows, base + ".csv", result.header))
    if result.header == RESULT_HEADER:
        result.files.append(emit_csv(summarize(result.rows), base + "_summary.csv"))
    if cfg.svg:
        result.files.append(emit_plot(result.rows, default_axes(cfg.experiment), base + ".svg"))
