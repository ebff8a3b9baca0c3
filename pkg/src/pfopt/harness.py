"""Campaign orchestration: configs, repeated runs, CSV/SVG summaries."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exp_family import MCConfig
from .experiments import ExperimentKind, ExperimentSpec, generate_samples, initializer_for
from .lm_solver import LMSettings
from .moment_match import TargetMoments, compute_target_moments
from .pf_optimizer import IterationRecord, RunConfig, Strategy, derive_seed, init_ensemble, run

log = logging.getLogger(__name__)

CSV_HEADER = ["iteration", "strategy", "mean_error", "std_error", "best_so_far_mean", "convergence_fraction"]
TRACE_HEADER = ["strategy", "repeat", "iteration", "y", "best_so_far"]
ALL_STRATEGIES = (Strategy.NAIVE, Strategy.GENERIC, Strategy.MODIFIED)

_INIT_STREAM = 2
_REPEAT_STREAM = 3


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CampaignConfig:
    experiment: ExperimentSpec = ExperimentSpec()
    run: RunConfig = RunConfig()
    strategies: tuple[Strategy, ...] = ALL_STRATEGIES
    n_repeats: int = 10
    shared_initial_conditions: bool = True
    output_dir: str = "results"
    # None means 3 / sqrt(N_E)
    convergence_threshold: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(Strategy(s) for s in self.strategies))
        if not self.strategies:
            raise ConfigError("strategies: at least one strategy is required")
        if len(set(self.strategies)) != len(self.strategies):
            raise ConfigError("strategies: duplicates are not allowed")
        if self.n_repeats < 1:
            raise ConfigError("n_repeats: must be >= 1")
        if self.convergence_threshold is not None and not self.convergence_threshold > 0:
            raise ConfigError("convergence_threshold: must be > 0")

    @property
    def threshold(self) -> float:
        if self.convergence_threshold is not None:
            return self.convergence_threshold
        return 3.0 / math.sqrt(self.run.mc.n_samples)


SCALES = {
    "desk": dict(M=50, n_source_samples=100_000, n_e=2000, n_repeats=3, t_max=20),
    "paper": dict(M=100, n_source_samples=1_000_000, n_e=10_000, n_repeats=10, t_max=20),
}


def preset(kind: ExperimentKind | str, scale: str = "desk", master_seed: int = 0,
           output_dir: str = "results") -> CampaignConfig:
    if scale not in SCALES:
        raise ConfigError(f"scale: expected one of {sorted(SCALES)}, got {scale!r}")
    p = SCALES[scale]
    kind = ExperimentKind(kind)
    return CampaignConfig(
        experiment=ExperimentSpec(kind=kind, n_source_samples=p["n_source_samples"],
                                  seed=derive_seed(master_seed, 100)),
        run=RunConfig(M=p["M"], t_max=p["t_max"], mc=MCConfig(n_samples=p["n_e"]), master_seed=master_seed),
        n_repeats=p["n_repeats"],
        output_dir=output_dir,
    )


# -- config (de)serialization -------------------------------------------------

def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (Strategy, ExperimentKind)):
        return obj.value
    return obj


def config_to_dict(cfg: CampaignConfig) -> dict:
    return _plain(cfg)


def dump_config(cfg: CampaignConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2) + "\n"


def _build(cls, data, where: str, nested: dict | None = None):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}: unknown field")
    kwargs = dict(data)
    for key, sub in (nested or {}).items():
        if key in kwargs:
            kwargs[key] = sub(kwargs[key], f"{where}.{key}")
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _mc(d, where):
    return _build(MCConfig, d, where)


def _lm(d, where):
    return _build(LMSettings, d, where)


def _run(d, where):
    return _build(RunConfig, d, where, {"mc": _mc, "lm": _lm})


def _experiment(d, where):
    return _build(ExperimentSpec, d, where)


def config_from_dict(data) -> CampaignConfig:
    if isinstance(data, dict) and "strategies" in data:
        if not isinstance(data["strategies"], list):
            raise ConfigError("config.strategies: expected a list")
        try:
            data = {**data, "strategies": tuple(Strategy(s) for s in data["strategies"])}
        except ValueError as exc:
            raise ConfigError(f"config.strategies: {exc}") from exc
    return _build(CampaignConfig, data, "config", {"experiment": _experiment, "run": _run})


def parse_config(path) -> CampaignConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return config_from_dict(data)


# -- file helpers ----------------------------------------------------------------

def atomic_write(path, data: str | bytes) -> None:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_targets(t: TargetMoments) -> str:
    lines = ["# target moments of standardized source samples", f"n_source_samples {t.n_source_samples}"]
    lines += [f"mean_{i + 1} {float(v)!r}" for i, v in enumerate(t.mean)]
    lines += [f"std_{i + 1} {float(v)!r}" for i, v in enumerate(t.std)]
    lines += [f"t_{k + 1} {float(v)!r}" for k, v in enumerate(t.t)]
    return "\n".join(lines) + "\n"


def load_targets(text: str) -> TargetMoments:
    values = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, value = line.split()
        values[key] = value
    n_t = sum(k.startswith("t_") for k in values)
    n_x = sum(k.startswith("mean_") for k in values)
    return TargetMoments(
        t=np.array([float(values[f"t_{k + 1}"]) for k in range(n_t)]),
        n_source_samples=int(values["n_source_samples"]),
        mean=np.array([float(values[f"mean_{i + 1}"]) for i in range(n_x)]),
        std=np.array([float(values[f"std_{i + 1}"]) for i in range(n_x)]),
    )


# -- campaign --------------------------------------------------------------------

@dataclass
class StrategySummary:
    mean_error: np.ndarray
    std_error: np.ndarray
    best_so_far_mean: np.ndarray
    convergence_fraction: np.ndarray
    wall_time: float = 0.0
    n_failed: int = 0


@dataclass
class CampaignSummary:
    config: CampaignConfig
    strategies: dict[Strategy, StrategySummary]
    traces: list[tuple[str, int, int, float, float]] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)
    initial_alphas: dict[Strategy, list[np.ndarray]] = field(default_factory=dict)

    @property
    def all_failed(self) -> bool:
        return any(s.n_failed == self.config.n_repeats for s in self.strategies.values())


def convergence_iteration(series, threshold: float) -> int | None:
    """First 1-based iteration at which the running minimum of ``series`` is <= threshold."""
    if not threshold > 0:
        raise ValueError("threshold must be > 0")
    best = np.minimum.accumulate(np.asarray(series, dtype=float))
    hits = np.flatnonzero(best <= threshold)
    return int(hits[0]) + 1 if hits.size else None


def _padded(records: list[IterationRecord], t_max: int) -> tuple[np.ndarray, np.ndarray]:
    y = np.array([r.y for r in records])
    b = np.array([r.best_so_far for r in records])
    if len(y) < t_max:
        y = np.concatenate([y, np.full(t_max - len(y), y[-1])])
        b = np.concatenate([b, np.full(t_max - len(b), b[-1])])
    return y, b


def summarize(cfg: CampaignConfig, traces) -> dict[Strategy, StrategySummary]:
    """Per-iteration statistics over repeats from (strategy, repeat, iteration, y, best) rows."""
    t_max = cfg.run.t_max
    out = {}
    for s in cfg.strategies:
        rows = [r for r in traces if r[0] == s.value]
        repeats = sorted({r[1] for r in rows})
        y = np.full((len(repeats), t_max), np.nan)
        b = np.full((len(repeats), t_max), np.nan)
        for r in rows:
            y[repeats.index(r[1]), r[2] - 1] = r[3]
            b[repeats.index(r[1]), r[2] - 1] = r[4]
        if not repeats:
            nan = np.full(t_max, np.nan)
            out[s] = StrategySummary(nan, nan, nan, nan, n_failed=cfg.n_repeats)
            continue
        out[s] = StrategySummary(
            mean_error=y.mean(axis=0),
            std_error=y.std(axis=0),
            best_so_far_mean=b.mean(axis=0),
            convergence_fraction=(b <= cfg.threshold).mean(axis=0),
            n_failed=cfg.n_repeats - len(repeats),
        )
    return out


def prepare_targets(cfg: CampaignConfig) -> TargetMoments:
    return compute_target_moments(generate_samples(cfg.experiment))


def run_campaign(cfg: CampaignConfig, targets: TargetMoments | None = None) -> CampaignSummary:
    if targets is None:
        targets = prepare_targets(cfg)
    initializer = initializer_for(cfg.experiment.kind)
    shared = init_ensemble(initializer, cfg.run.M, derive_seed(cfg.run.master_seed, _INIT_STREAM),
                           cfg.run.lm.lambda0)
    traces = []
    failures = []
    times = {}
    initial = {}
    for si, strategy in enumerate(cfg.strategies):
        start = time.perf_counter()
        initial[strategy] = []
        for r in range(cfg.n_repeats):
            run_cfg = replace(cfg.run, strategy=strategy,
                              master_seed=derive_seed(cfg.run.master_seed, _REPEAT_STREAM, r))
            if cfg.shared_initial_conditions:
                ensemble = shared
            else:
                ensemble = init_ensemble(initializer, cfg.run.M,
                                         derive_seed(cfg.run.master_seed, _INIT_STREAM, si, r), cfg.run.lm.lambda0)
            initial[strategy].append(np.array([p.alpha for p in ensemble.particles]))
            try:
                records = run(run_cfg, targets, ensemble=ensemble)
            except Exception as exc:  # one failed repeat must not sink the campaign
                log.exception("run %s/%d failed", strategy.value, r)
                failures.append(f"{strategy.value} repeat {r}: {exc!r}")
                continue
            y, b = _padded(records, cfg.run.t_max)
            traces += [(strategy.value, r, t + 1, float(y[t]), float(b[t])) for t in range(cfg.run.t_max)]
            log.info("%s repeat %d final error %.4g", strategy.value, r, y[-1])
        times[strategy] = time.perf_counter() - start
    strategies = summarize(cfg, traces)
    for s, t in times.items():
        strategies[s].wall_time = t
    return CampaignSummary(cfg, strategies, traces, failures, initial)


# -- emission --------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def summary_csv(summary: CampaignSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for t in range(summary.config.run.t_max):
        for s, st in summary.strategies.items():
            w.writerow([t + 1, s.value, _fmt(st.mean_error[t]), _fmt(st.std_error[t]),
                        _fmt(st.best_so_far_mean[t]), _fmt(st.convergence_fraction[t])])
    return buf.getvalue()


def emit_csv(summary: CampaignSummary, path) -> None:
    atomic_write(path, summary_csv(summary))


def traces_csv(summary: CampaignSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for s, r, t, y, b in summary.traces:
        w.writerow([s, r, t, _fmt(y), _fmt(b)])
    return buf.getvalue()


def read_traces(path) -> list[tuple[str, int, int, float, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(r["strategy"], int(r["repeat"]), int(r["iteration"]), float(r["y"]), float(r["best_so_far"]))
            for r in rows]


def emit_svg(summary: CampaignSummary, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    it = np.arange(1, summary.config.run.t_max + 1)
    with plt.rc_context({"svg.hashsalt": "pfopt", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for s, st in summary.strategies.items():
            ax.errorbar(it, st.mean_error, yerr=st.std_error, marker="o", ms=3, capsize=2, label=s.value)
        ax.axhline(summary.config.threshold, color="grey", ls=":", lw=1, label="convergence threshold")
        ax.set_yscale("log")
        ax.set_xlabel("LM iteration")
        ax.set_ylabel("average error per moment")
        ax.set_title(summary.config.experiment.kind.value)
        ax.legend()
        fig.tight_layout()
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    atomic_write(path, buf.getvalue())


def metadata(summary: CampaignSummary) -> dict:
    cfg = summary.config
    return {
        "experiment": cfg.experiment.kind.value,
        "phase_variance_interpretation": "variance",
        "convergence_threshold": cfg.threshold,
        "convergence_iteration": {
            s.value: convergence_iteration(st.mean_error, cfg.threshold)
            for s, st in summary.strategies.items() if np.all(np.isfinite(st.mean_error))
        },
        "final_mean_error": {s.value: float(st.mean_error[-1]) for s, st in summary.strategies.items()},
        "wall_time_seconds": {s.value: st.wall_time for s, st in summary.strategies.items()},
        "failed_repeats": {s.value: st.n_failed for s, st in summary.strategies.items()},
        "failures": summary.failures,
    }


def write_outputs(summary: CampaignSummary, out_dir, targets: TargetMoments | None = None) -> None:
    out = Path(out_dir)
    atomic_write(out / "config.json", dump_config(summary.config))
    if targets is not None:
        atomic_write(out / "targets.txt", dump_targets(targets))
    atomic_write(out / "traces.csv", traces_csv(summary))
    emit_csv(summary, out / "summary.csv")
    emit_svg(summary, out / "convergence.svg")
    atomic_write(out / "metadata.json", json.dumps(metadata(summary), indent=2) + "\n")


def report(out_dir) -> CampaignSummary:
    """Rebuild summary.csv and the plot from a run directory's config and traces."""
    out = Path(out_dir)
    cfg = parse_config(out / "config.json")
    traces = read_traces(out / "traces.csv")
    summary = CampaignSummary(cfg, summarize(cfg, traces), traces)
    emit_csv(summary, out / "summary.csv")
    emit_svg(summary, out / "convergence.svg")
    return summary
