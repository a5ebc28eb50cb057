"""Run configuration, reproducible simulation runs, ensembles and file formats.

Random streams: run ``i`` of master seed ``S`` draws from
``PCG64(SeedSequence(S, spawn_key=(i,)))``, so a run's output depends only
on ``(params, S, i)`` and never on how an ensemble is scheduled.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, SimulationAborted, ValidationError
from .market import SimState, step
from .params import PARAM_FIELDS, ModelParams
from .stylized import AnalysisReport, analyze

CSV_COLUMNS = ("t", "price", "s", "kappa", "h", "w_rational", "w_noise", "ret", "div_ratio", "p_plus", "p_minus")
RUN_FIELDS = ("seed", "runs", "record_every", "out")
THREADS_ENV = "BUBBLESIM_THREADS"


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams = field(default_factory=ModelParams)
    seed: int = 0
    runs: int = 1
    record_every: int = 1
    out: str | None = None

    def __post_init__(self):
        for key in ("seed", "runs", "record_every"):
            v = getattr(self, key)
            if isinstance(v, bool) or not isinstance(v, int):
                raise ValidationError(key, f"must be an integer (got {v!r})")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed", "must be a 64-bit unsigned integer")
        if self.runs < 1:
            raise ValidationError("runs", "must be >= 1")
        if self.record_every < 1:
            raise ValidationError("record_every", "must be >= 1")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = self.params.to_dict()
        d.update(seed=self.seed, runs=self.runs, record_every=self.record_every)
        if self.out is not None:
            d["out"] = self.out
        return d


def _as_int(key, v):
    if isinstance(v, bool):
        raise ValidationError(key, f"must be an integer (got {v!r})")
    if isinstance(v, float) and v.is_integer():
        return int(v)
    if not isinstance(v, int):
        raise ValidationError(key, f"must be an integer (got {v!r})")
    return v


def load_config(document=None) -> RunConfig:
    """Validate a flat config document (JSON text, bytes or mapping).

    Missing keys take the model defaults; unknown keys are rejected.
    """
    if document is None:
        data = {}
    elif isinstance(document, (str, bytes)):
        try:
            data = json.loads(document) if document.strip() else {}
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ParseError(f"invalid JSON: {exc}") from exc
    else:
        data = dict(document)
    if not isinstance(data, dict):
        raise ParseError("config document must be a JSON object")

    for key in data:
        if key not in PARAM_FIELDS and key not in RUN_FIELDS:
            raise ValidationError(key, "unknown key")

    pkw = {}
    for key in PARAM_FIELDS:
        if key in data:
            v = data[key]
            if key in ("n_noise", "t_max"):
                v = _as_int(key, v)
            elif isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ValidationError(key, f"must be a number (got {v!r})")
            pkw[key] = v
    params = ModelParams(**pkw)
    rkw = {k: _as_int(k, data[k]) for k in ("seed", "runs", "record_every") if k in data}
    out = data.get("out")
    if out is not None and not isinstance(out, str):
        raise ValidationError("out", "must be a path string")
    return RunConfig(params=params, out=out, **rkw)


def load_config_file(path) -> RunConfig:
    return load_config(Path(path).read_text())


def dump_config(config: RunConfig) -> str:
    return json.dumps(config.to_dict(), indent=2)


def rng_stream(seed: int, run_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(run_index,))))


@dataclass(frozen=True)
class AbortedRun:
    run_index: int
    t: int | None
    cause: str
    message: str
    frame: dict = field(default_factory=dict)


@dataclass
class Trajectory:
    """Recorded frames as parallel columns (see ``CSV_COLUMNS``)."""

    columns: dict[str, np.ndarray]
    terminal: SimState | None = None
    aborted: AbortedRun | None = None
    run_index: int = 0

    def __getattr__(self, name):
        cols = self.__dict__.get("columns", {})
        if name in cols:
            return cols[name]
        raise AttributeError(name)

    def __len__(self) -> int:
        return len(self.columns["t"])

    def thin(self, every: int) -> "Trajectory":
        """Keep every ``every``-th step plus the last recorded one."""
        if every == 1 or len(self) == 0:
            return self
        t = self.columns["t"]
        keep = (t % every) == 0
        keep[-1] = True
        cols = {k: v[keep] for k, v in self.columns.items()}
        return Trajectory(cols, self.terminal, self.aborted, self.run_index)


def run_simulation(config: RunConfig, run_index: int = 0, record_every: int | None = None) -> Trajectory:
    """Simulate ``t_max`` steps on stream ``(config.seed, run_index)``.

    Clearing is validated on every step inside :func:`bubblesim.market.step`
    regardless of thinning.  A failing step ends the run early and is
    described by ``Trajectory.aborted``.
    """
    params = config.params
    every = config.record_every if record_every is None else record_every
    rng = rng_stream(config.seed, run_index)
    state = SimState.initial(params)
    rows = np.empty((params.t_max, len(CSV_COLUMNS)))
    aborted = None
    n = 0
    for _ in range(params.t_max):
        try:
            state, fr = step(state, params, rng)
        except SimulationAborted as exc:
            aborted = AbortedRun(run_index, exc.t, type(exc).__name__, str(exc), dict(exc.frame))
            break
        rows[n] = (fr.t, fr.price, fr.s, fr.kappa, fr.h, fr.w_rational, fr.w_noise, fr.ret, fr.div_ratio,
                   fr.p_plus, fr.p_minus)
        n += 1
    cols = {name: rows[:n, j].copy() for j, name in enumerate(CSV_COLUMNS)}
    cols["t"] = cols["t"].astype(np.int64)
    return Trajectory(cols, state, aborted, run_index).thin(every)


def analyze_trajectory(traj: Trajectory, params: ModelParams, **kwargs) -> AnalysisReport:
    return analyze(
        traj.price,
        traj.kappa,
        params.p,
        w_noise=traj.w_noise,
        w_rational=traj.w_rational,
        returns=traj.ret,
        opinion=traj.s,
        **kwargs,
    )


def write_trajectory_csv(traj: Trajectory, path_or_file) -> None:
    """Write frames with 17 significant digits so binary64 values round-trip."""
    if isinstance(path_or_file, (str, os.PathLike)):
        with open(path_or_file, "w", newline="") as fh:
            write_trajectory_csv(traj, fh)
        return
    w = csv.writer(path_or_file, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    cols = [traj.columns[c] for c in CSV_COLUMNS]
    for i in range(len(traj)):
        w.writerow([str(int(cols[0][i]))] + [format(float(c[i]), ".17g") for c in cols[1:]])


def trajectory_csv_text(traj: Trajectory) -> str:
    buf = io.StringIO()
    write_trajectory_csv(traj, buf)
    return buf.getvalue()


def read_trajectory_csv(path_or_file) -> Trajectory:
    if isinstance(path_or_file, (str, os.PathLike)):
        with open(path_or_file, newline="") as fh:
            return read_trajectory_csv(fh)
    reader = csv.reader(path_or_file)
    try:
        header = tuple(next(reader))
    except StopIteration:
        raise ParseError("empty trajectory file") from None
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise ParseError(f"trajectory file lacks columns {missing}")
    rows = [r for r in reader if r]
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    cols = {name: data[:, header.index(name)] for name in CSV_COLUMNS}
    cols["t"] = cols["t"].astype(np.int64)
    return Trajectory(cols)


def write_report_json(report: AnalysisReport | "EnsembleSummary", path_or_file) -> None:
    text = json.dumps(report.to_dict(), indent=2, default=_json_default)
    if isinstance(path_or_file, (str, os.PathLike)):
        Path(path_or_file).write_text(text + "\n")
    else:
        path_or_file.write(text + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


@dataclass
class RunResult:
    run_index: int
    report: AnalysisReport | None
    aborted: AbortedRun | None
    steps: int


def _ensemble_worker(config: RunConfig, run_index: int, out_dir: str | None) -> RunResult:
    traj = run_simulation(config, run_index, record_every=1)
    if out_dir is not None:
        write_trajectory_csv(traj.thin(config.record_every), Path(out_dir) / f"run_{run_index:04d}.csv")
    if traj.aborted is not None:
        return RunResult(run_index, None, traj.aborted, len(traj))
    return RunResult(run_index, analyze_trajectory(traj, config.params), None, len(traj))


def _quartiles(values) -> dict:
    v = np.asarray([x for x in values if x is not None and math.isfinite(x)], dtype=float)
    if len(v) == 0:
        return {"median": None, "q1": None, "q3": None, "iqr": None}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"median": float(med), "q1": float(q1), "q3": float(q3), "iqr": float(q3 - q1)}


@dataclass
class EnsembleSummary:
    """Per-run reports plus medians and IQRs over the completed runs."""

    results: list[RunResult]
    tail_alpha: dict
    episode_count: dict
    wealth_ratio_end: dict

    @classmethod
    def from_results(cls, results: list[RunResult]) -> "EnsembleSummary":
        results = sorted(results, key=lambda r: r.run_index)
        done = [r.report for r in results if r.report is not None]
        return cls(
            results=results,
            tail_alpha=_quartiles([rep.tail_alpha for rep in done]),
            episode_count=_quartiles([len(rep.episodes) for rep in done]),
            wealth_ratio_end=_quartiles([rep.wealth_ratio_end for rep in done]),
        )

    @property
    def reports(self) -> list[AnalysisReport]:
        return [r.report for r in self.results if r.report is not None]

    @property
    def failures(self) -> list[AbortedRun]:
        return [r.aborted for r in self.results if r.aborted is not None]

    def to_dict(self) -> dict:
        return {
            "completed": len(self.reports),
            "failed": len(self.failures),
            "failures": [dataclasses.asdict(f) for f in self.failures],
            "tail_alpha": self.tail_alpha,
            "episode_count": self.episode_count,
            "wealth_ratio_end": self.wealth_ratio_end,
            "runs": [
                {
                    "run_index": r.run_index,
                    "steps": r.steps,
                    "tail_alpha": None if r.report is None else r.report.tail_alpha,
                    "episodes": None if r.report is None else len(r.report.episodes),
                    "wealth_ratio_end": None if r.report is None else r.report.wealth_ratio_end,
                    "aborted": None if r.aborted is None else r.aborted.cause,
                }
                for r in self.results
            ],
        }


def resolve_threads(requested: int | None = None) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            requested = int(env)
        except ValueError:
            raise ValidationError(THREADS_ENV, f"must be an integer (got {env!r})") from None
    n = 1 if requested is None else requested
    if n < 1:
        raise ValidationError("threads", "must be >= 1")
    return n


def run_ensemble(config: RunConfig, parallelism: int = 1, out_dir=None) -> EnsembleSummary:
    """Run ``config.runs`` simulations on a bounded worker pool.

    With ``out_dir`` each run's trajectory is written to
    ``out_dir/run_NNNN.csv``.
    """
    if parallelism < 1:
        raise ValidationError("threads", "must be >= 1")
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        out_dir = str(out_dir)
    indices = range(config.runs)
    if parallelism == 1 or config.runs == 1:
        results = [_ensemble_worker(config, i, out_dir) for i in indices]
    else:
        with ProcessPoolExecutor(max_workers=min(parallelism, config.runs)) as pool:
            results = list(pool.map(_ensemble_worker, [config] * config.runs, indices, [out_dir] * config.runs))
    return EnsembleSummary.from_results(results)
