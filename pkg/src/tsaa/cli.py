"""Command-line runner: generate, baseline, search, augment, report."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .asha import Trial, TrialStatus
from .augment import AugmentError, PolicyDistribution, ops_histogram, policy_augmenter
from .decompose import DecompositionError, infer_period, stl_decompose
from .forecast import ForecasterSpec, TrainingError
from .search import (
    MODES,
    TsaaConfig,
    finalize,
    prepare_search_data,
    select_policy,
    step1_shared_weights,
    step2_search,
)
from .series import SeriesError, SplitSpec, TimeSeries, make_window_set, read_csv, relative_improvement, write_csv
from .synth import SynthSpec, compose_wo_rw, compose_with_rw, gen_seasonal, gen_trend_shift, rw_components
from .tpe import ObservationHistory

logger = logging.getLogger("tsaa")

EXIT_OK, EXIT_COMPUTE, EXIT_USAGE = 0, 1, 2

SYNTH_KINDS = ("seasonal", "trend-shift", "wo-rw", "with-rw")


class ConfigError(ValueError):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _only(cls, d: dict, where: str) -> dict:
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return d


@dataclass
class RunConfig:
    data: dict
    lookback: int = 96
    horizon: int = 96
    stride: int = 1
    period: int | None = None
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)
    forecaster: dict = field(default_factory=dict)
    tsaa: dict = field(default_factory=dict)
    mode: str = "tsaa"
    out: str | None = None

    def validate(self) -> None:
        if "path" not in self.data and "synth" not in self.data:
            raise ConfigError("data must hold either 'path' or 'synth'")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lookback < 1 or self.horizon < 1 or self.stride < 1:
            raise ConfigError("lookback, horizon and stride must be >= 1")
        SplitSpec(*self.split)
        self.forecaster_spec(1)
        self.tsaa_config()
        if "synth" in self.data:
            self.synth_spec()

    def synth_spec(self) -> tuple[str, SynthSpec]:
        raw = dict(self.data["synth"])
        kind = raw.pop("kind", "trend-shift")
        if kind not in SYNTH_KINDS:
            raise ConfigError(f"synth kind must be one of {SYNTH_KINDS}, got {kind!r}")
        return kind, SynthSpec(**_only(SynthSpec, raw, "data.synth"))

    def forecaster_spec(self, channels: int) -> ForecasterSpec:
        raw = _only(ForecasterSpec, dict(self.forecaster), "forecaster")
        for k in ("lookback", "horizon", "channels"):
            raw.pop(k, None)
        return ForecasterSpec(lookback=self.lookback, horizon=self.horizon, channels=channels, **raw)

    def tsaa_config(self) -> TsaaConfig:
        return TsaaConfig(**_only(TsaaConfig, dict(self.tsaa), "tsaa"))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        if "data" not in d:
            raise ConfigError("config is missing 'data'")
        d = dict(_only(cls, d, "config"))
        if "split" in d:
            d["split"] = tuple(d["split"])
        cfg = cls(**d)
        cfg.validate()
        return cfg


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    try:
        return RunConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def resolve(args) -> RunConfig:
    """Apply command-line overrides; the seed drives both the forecaster and the search."""
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.forecaster = {**cfg.forecaster, "seed": args.seed}
        cfg.tsaa = {**cfg.tsaa, "seed": args.seed}
    if getattr(args, "workers", None) is not None:
        cfg.tsaa = {**cfg.tsaa, "workers": args.workers}
    if getattr(args, "mode", None) is not None:
        cfg.mode = args.mode
    if getattr(args, "out", None) is not None:
        cfg.out = args.out
    if not cfg.out:
        raise ConfigError("no output directory: pass --out or set 'out' in the config")
    cfg.validate()
    return cfg


def synth_series(kind: str, spec: SynthSpec) -> TimeSeries:
    if kind == "seasonal":
        return gen_seasonal(spec)
    if kind == "trend-shift":
        return gen_trend_shift(spec)
    if kind == "wo-rw":
        return compose_wo_rw(spec)
    return compose_with_rw(spec)


def load_series(cfg: RunConfig) -> TimeSeries:
    if "synth" in cfg.data:
        return synth_series(*cfg.synth_spec())
    return read_csv(cfg.data["path"], cfg.data.get("frequency", ""))


def build_dataset(cfg: RunConfig, cache=None):
    series = load_series(cfg)
    return prepare_search_data(
        series, cfg.lookback, cfg.horizon, SplitSpec(*cfg.split), cfg.period, cfg.stride, cache=cache
    )


# -- generate ---------------------------------------------------------------


def synth_components(kind: str, spec: SynthSpec) -> dict[str, np.ndarray]:
    """Named pieces the composite can be rebuilt from."""
    if kind in ("wo-rw", "with-rw"):
        comp = rw_components(spec)
        return {"x_s": comp.x_s, "x_rw": comp.x_rw, "x_rw_hat": comp.x_rw_hat}
    clean = synth_series(kind, replace(spec, noise_sigma=0.0)).values[:, 0]
    full = synth_series(kind, spec).values[:, 0]
    seasonal = spec.amplitude * np.sin(2.0 * np.pi * np.arange(spec.length) / spec.period)
    return {"seasonal": seasonal, "trend": clean - seasonal, "noise": full - clean}


def cmd_generate(args) -> int:
    spec = SynthSpec(
        length=args.length, period=args.period, trend_slope=args.slope, noise_sigma=args.noise,
        rw_sigma=args.rw_sigma, amplitude=args.amplitude, seed=args.seed,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    series = synth_series(args.kind, spec)
    write_csv(out, series)
    comps = synth_components(args.kind, spec)
    sidecar = out.with_name(out.stem + ".components.csv")
    with sidecar.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(comps))
        for row in zip(*comps.values()):
            w.writerow([repr(float(v)) for v in row])
    meta = {"kind": args.kind, "frequency": spec.frequency, **asdict(spec)}
    out.with_name(out.stem + ".meta.json").write_text(_dump(meta), encoding="utf-8")
    print(f"wrote {out} ({spec.length} steps, frequency {spec.frequency}) and {sidecar}")
    return EXIT_OK


# -- baseline / search ------------------------------------------------------


def write_baseline(run: Path, shared, data) -> None:
    base = run / "baseline"
    base.mkdir(parents=True, exist_ok=True)
    for ckpt in shared.report.checkpoints:
        ckpt.save(base / f"epoch_{ckpt.epoch:03d}")
    report = {
        **shared.report.to_dict(),
        "baseline_val": shared.baseline_val,
        "baseline_test": shared.baseline_test,
        "R": shared.R,
        "omega_share_epoch": shared.omega_share.epoch,
        "standardizer": data.standardizer.to_dict(),
        "period": data.meta.get("period"),
    }
    (base / "report.json").write_text(_dump(report), encoding="utf-8")


def cmd_baseline(args) -> int:
    cfg = resolve(args)
    run = Path(cfg.out)
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.json").write_text(_dump(cfg.to_dict()), encoding="utf-8")
    data = build_dataset(cfg, cache=run / "decomposition.csv")
    shared = step1_shared_weights(cfg.forecaster_spec(data.channels), data, cfg.tsaa_config())
    write_baseline(run, shared, data)
    print(f"baseline: K={shared.K} best val {shared.baseline_val:.6g} test mse {shared.baseline_test['mse']:.6g}")
    return EXIT_OK


def _previous_trials(run: Path, cfg: RunConfig) -> list[Trial]:
    """Finished trials of an interrupted run with the same configuration (contiguous ids only)."""
    cfg_path, log_path = run / "config.json", run / "trials.jsonl"
    if not (cfg_path.exists() and log_path.exists()):
        return []
    if json.loads(cfg_path.read_text(encoding="utf-8")) != json.loads(_dump(cfg.to_dict())):
        return []
    by_id = {}
    for line in log_path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            t = Trial.from_dict(json.loads(line))
            by_id[t.trial_id] = t
    prefix = []
    while len(prefix) in by_id:
        prefix.append(by_id[len(prefix)])
    return prefix


def history_of(trials, cfg: TsaaConfig) -> ObservationHistory:
    history = ObservationHistory(gamma=cfg.gamma)
    for t in trials:
        if t.status is TrialStatus.PRUNED and not cfg.include_pruned:
            continue
        history.append(t.params, t.final_loss, t.trial_id)
    return history


def write_histogram(path: Path, trials, top_fraction: float) -> dict:
    try:
        hist = ops_histogram(trials, top_fraction)
    except AugmentError:
        hist = {}
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "percent"])
        for kind, pct in sorted(hist.items(), key=lambda kv: (-kv[1], kv[0].value)):
            w.writerow([kind.value, repr(pct)])
    return hist


def cmd_search(args) -> int:
    cfg = resolve(args)
    run = Path(cfg.out)
    run.mkdir(parents=True, exist_ok=True)
    previous = _previous_trials(run, cfg)
    if previous:
        logger.info("resuming after %d finished trials", len(previous))
    (run / "config.json").write_text(_dump(cfg.to_dict()), encoding="utf-8")

    data = build_dataset(cfg, cache=run / "decomposition.csv")
    spec = cfg.forecaster_spec(data.channels)
    tcfg = cfg.tsaa_config()
    shared = step1_shared_weights(spec, data, tcfg)
    write_baseline(run, shared, data)

    log_path = run / "trials.jsonl"
    trials: list[Trial] = []
    if cfg.mode != "baseline-only" and shared.R >= 1:
        with log_path.open("w", encoding="utf-8") as log:
            for t in previous:
                log.write(json.dumps(t.to_dict(), sort_keys=True) + "\n")
            log.flush()

            def on_trial(t: Trial) -> None:
                log.write(json.dumps(t.to_dict(), sort_keys=True) + "\n")
                log.flush()

            search_mode = "random" if cfg.mode == "random-search" else "tpe"
            trials = step2_search(shared, spec, data, tcfg, search_mode, on_trial, previous)
    # completion order may differ from id order with several workers
    log_path.write_text("".join(json.dumps(t.to_dict(), sort_keys=True) + "\n" for t in trials), encoding="utf-8")
    history_of(trials, tcfg).save_jsonl(run / "history.jsonl")

    p_star = select_policy(trials, shared.baseline_val, tcfg.k, tcfg.n, tcfg.epsilon)
    p_star.save(run / "policy.json")
    result = finalize(shared, p_star, spec, data, tcfg, trials, cfg.mode)
    (run / "result.json").write_text(_dump(result.to_dict(tcfg.T_max, tcfg.beta)), encoding="utf-8")
    write_histogram(run / "ops_histogram.csv", trials, args.top)
    print(
        f"{cfg.mode}: baseline test mse {result.baseline_test['mse']:.6g} -> {result.final_test_mse:.6g} "
        f"({result.improvement_mse:+.3f}%), |p*|={len(p_star)}, epochs {result.epochs_spent}"
    )
    return EXIT_OK


# -- augment ----------------------------------------------------------------


def cmd_augment(args) -> int:
    policy = PolicyDistribution.load(args.policy)
    series = read_csv(args.data, args.frequency or "")
    windows = make_window_set(series, args.lookback, args.horizon, args.stride)
    needs_dec = any(op.kind.value.startswith(("Trend", "Season")) for sp in policy.subpolicies for op in sp.ops)
    dec = stl_decompose(series, infer_period(args.frequency or "", args.period)) if needs_dec else None
    augment = policy_augmenter(policy, dec) if len(policy) else None
    rng = np.random.default_rng(args.seed)
    xs, ys = [], []
    for lo in range(0, len(windows), args.batch_size):
        x = windows.x[lo : lo + args.batch_size]
        y = windows.y[lo : lo + args.batch_size]
        if augment is not None:
            x, y = augment(x, y, windows.origins[lo : lo + args.batch_size], rng)
        xs.append(x)
        ys.append(y)
    x, y = np.concatenate(xs), np.concatenate(ys)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "origin", "step", "part", *series.channel_names])
        for i in range(len(windows)):
            origin = int(windows.origins[i])
            for s, row in enumerate(np.concatenate([x[i], y[i]])):
                part = "x" if s < args.lookback else "y"
                w.writerow([i, origin, s, part, *(repr(float(v)) for v in row)])
    print(f"wrote {len(windows)} augmented windows to {out}")
    return EXIT_OK


# -- report -----------------------------------------------------------------


def load_run(run: Path) -> tuple[dict, list[Trial]]:
    try:
        result = json.loads((run / "result.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{run}: no result.json (is this a finished run directory?)") from None
    trials = []
    log_path = run / "trials.jsonl"
    if log_path.exists():
        trials = [Trial.from_dict(json.loads(l)) for l in log_path.read_text(encoding="utf-8").splitlines() if l.strip()]
    return result, trials


def metrics_rows(result: dict) -> list[dict]:
    rows = []
    for metric in ("mse", "mae"):
        e_b, e_n = result[f"baseline_test_{metric}"], result[f"final_test_{metric}"]
        rows.append({
            "metric": metric.upper(),
            "baseline": e_b,
            "tsaa": e_n,
            "relative_improvement": relative_improvement(e_b, e_n),
        })
    return rows


def cmd_report(args) -> int:
    run = Path(args.run)
    result, trials = load_run(run)
    rows = metrics_rows(result)
    with (run / "metrics.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: v if isinstance(v, str) else repr(float(v)) for k, v in row.items()})
    hist = write_histogram(run / "ops_histogram.csv", trials, args.top)

    status = {s.value: sum(t.status is s for t in trials) for s in TrialStatus}
    lines = [
        f"# Run report: {run.name}",
        "",
        f"mode: {result['mode']}; K={result['K']}, R={result['R']}; "
        f"epochs spent {result['epochs_spent']} of bound {result['budget_bound']}",
        "",
        "| metric | baseline | tsaa | relative improvement (%) |",
        "|---|---|---|---|",
    ]
    lines += [f"| {r['metric']} | {r['baseline']:.6g} | {r['tsaa']:.6g} | {r['relative_improvement']:.3f} |" for r in rows]
    lines += ["", "## Selected sub-policies", ""]
    subs = result["p_star"]["subpolicies"]
    if subs:
        lines += ["- " + " -> ".join(f"{op['kind']}({op['m']:.3f})" for op in sp["ops"]) for sp in subs]
    else:
        lines.append("none improved on the baseline; the baseline model is reported")
    lines += ["", "## Trials", "", ", ".join(f"{k}: {v}" for k, v in status.items())]
    if hist:
        lines += ["", f"## Operations among the top {100 * args.top:g}% of trials", "", "| kind | %ops |", "|---|---|"]
        lines += [f"| {k.value} | {v:.1f} |" for k, v in sorted(hist.items(), key=lambda kv: (-kv[1], kv[0].value))]
    (run / "report.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {run / 'report.md'}, {run / 'metrics.csv'}, {run / 'ops_histogram.csv'}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------


def _fraction(s: str) -> float:
    v = float(s)
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError(f"expected a fraction in (0, 1], got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsaa", description="Augmentation policy search for time-series forecasting.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic series CSV plus its components")
    g.add_argument("--kind", choices=SYNTH_KINDS, default="trend-shift")
    g.add_argument("--length", type=int, default=3000)
    g.add_argument("--period", type=int, default=24)
    g.add_argument("--slope", type=float, default=0.0)
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--rw-sigma", type=float, default=0.05)
    g.add_argument("--amplitude", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output CSV path")
    g.set_defaults(func=cmd_generate)

    for name, func, help_ in (
        ("baseline", cmd_baseline, "train the un-augmented baseline and keep its checkpoints"),
        ("search", cmd_search, "run the full policy search into a run directory"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="JSON run configuration")
        s.add_argument("--seed", type=int)
        s.add_argument("--workers", type=int)
        s.add_argument("--mode", choices=MODES)
        s.add_argument("--out", help="run directory (overrides the config)")
        s.add_argument("--top", type=_fraction, default=0.25, help="trial fraction for the ops histogram")
        s.set_defaults(func=func)

    a = sub.add_parser("augment", help="apply a policy.json to the windows of a CSV")
    a.add_argument("--policy", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--frequency", default="")
    a.add_argument("--period", type=int)
    a.add_argument("--lookback", type=int, default=96)
    a.add_argument("--horizon", type=int, default=96)
    a.add_argument("--stride", type=int, default=1)
    a.add_argument("--batch-size", type=int, default=32)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_augment)

    r = sub.add_parser("report", help="write markdown and CSV tables for a finished run")
    r.add_argument("run", help="run directory")
    r.add_argument("--top", type=_fraction, default=0.25)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    level = os.environ.get("TSAA_LOG", "WARNING").upper()
    logging.basicConfig(
        level=level if isinstance(logging.getLevelName(level), int) else "WARNING",
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SeriesError, AugmentError, DecompositionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        # spec/config constructors reject bad values with ValueError
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except Exception as exc:  # noqa: BLE001
        logger.debug("unhandled failure", exc_info=True)
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
