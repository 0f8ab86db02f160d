"""Command-line front end: synth, train, forecast, copula and eval.

Every subcommand accepts ``--config FILE.json`` holding a flat object whose
keys are the long option names (dashes or underscores); explicit flags win
over the file. Each run writes its primary outputs plus a separate
``manifest_<command>.json`` echoing the resolved configuration, output
hashes and a timestamp, so the primary files stay byte-reproducible.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import os
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import copula, data, forecaster, gan, metrics
from .errors import ConfigError, DataError, NumericalError, ShapeError

log = logging.getLogger("scenario_gan")

THREADS_ENV = "SCENARIO_GAN_THREADS"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class ArgumentParser(argparse.ArgumentParser):
    """argparse reports usage errors with exit code 2; ours is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list:
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list:
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# -- parser ----------------------------------------------------------------------

def build_parser():
    parser = ArgumentParser(prog="scenario-gan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)
    table = {}

    def sub(name, func, help_text):
        p = subs.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", type=Path, help="JSON file with option values")
        p.add_argument("--out-dir", type=Path, default=Path("."), help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        table[name] = p
        return p

    p = sub("synth", cmd_synth, "write an AR(1) + diurnal synthetic power series")
    d = data.SyntheticConfig()
    p.add_argument("--rho", type=float, default=d.rho)
    p.add_argument("--base", type=float, default=d.base)
    p.add_argument("--amplitude", type=float, default=d.amplitude)
    p.add_argument("--noise-std", type=float, default=d.noise_std)
    p.add_argument("--length", type=int, default=d.length)
    p.add_argument("--step-minutes", type=int, default=d.step_minutes)
    p.add_argument("--start", default=d.start)
    p.add_argument("--no-clip", action="store_true", help="keep values outside [0, 1]")

    p = sub("train", cmd_train, "train the GAN on day-split windows of a series")
    _add_series_args(p)
    t = gan.TrainConfig()
    p.add_argument("--h", type=int, default=15, help="history length minus one")
    p.add_argument("--k", type=int, default=16, help="horizon length")
    p.add_argument("--stride", type=int, default=1, help="window stride in samples")
    p.add_argument("--split-ratio", type=float, default=0.9)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--architecture", choices=gan.ARCHITECTURES, default="conv")
    p.add_argument("--latent-dim", type=int, default=None)
    p.add_argument("--no-generator-bn", action="store_true")
    p.add_argument("--iterations", type=int, default=t.iterations)
    p.add_argument("--learning-rate", type=float, default=t.learning_rate)
    p.add_argument("--clip", type=float, default=t.clip)
    p.add_argument("--batch-size", type=int, default=t.batch_size)
    p.add_argument("--n-discri", type=int, default=t.n_discri)
    p.add_argument("--early-stop-threshold", type=float, default=None)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to continue from")

    p = sub("forecast", cmd_forecast, "scenario forecasts for test windows by latent optimization")
    _add_instance_args(p)
    p.add_argument("--model", type=Path)
    p.add_argument("--alpha", type=_floats, default=[2.0], help="comma-separated interval levels")
    p.add_argument("--alpha-sub", type=float, default=None)
    p.add_argument("--beta", type=float, default=0.01)
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--n-init", type=int, default=200)
    p.add_argument("--n-scen", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--cap", type=float, default=None)
    p.add_argument("--restarts", type=int, default=5)

    p = sub("copula", cmd_copula, "Gaussian-copula baseline scenarios for the same test windows")
    _add_instance_args(p)
    p.add_argument("--alpha", type=float, default=2.0,
                   help="interval level used only for the feasible flag")

    p = sub("eval", cmd_eval, "CRPS, autocorrelation and correlation metrics for scenario files")
    p.add_argument("--scenarios", type=Path, nargs="+")
    p.add_argument("--methods", nargs="+", default=None, help="labels, one per scenario file")
    p.add_argument("--realizations", type=Path)
    p.add_argument("--k-max", type=int, default=None, help="largest autocorrelation lag")
    return parser, table


def _add_series_args(p):
    p.add_argument("--data", type=Path, help="series CSV (timestamp,power[,forecast])")
    p.add_argument("--capacity", type=float, default=1.0, help="nominal capacity for normalization")


def _add_instance_args(p):
    _add_series_args(p)
    p.add_argument("--split", type=Path, help="split.json written by train")
    p.add_argument("--horizons", type=_ints, default=None,
                   help="comma-separated horizon lengths k (default: the trained k)")
    p.add_argument("--n-scenarios", type=int, default=20)
    p.add_argument("--max-instances", type=int, default=None,
                   help="evenly spaced subset of the test windows")


def _config_values(path: Path, parser: argparse.ArgumentParser) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config", "func")}
    out = {}
    for key, value in raw.items():
        dest = key.replace("-", "_")
        if dest not in actions:
            raise ConfigError(f"config file {path}: unknown option {key!r}")
        action = actions[dest]
        if action.nargs in ("+", "*"):
            items = value if isinstance(value, list) else [value]
            out[dest] = [action.type(str(v)) if action.type else v for v in items]
            continue
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        if action.type is not None and value is not None:
            try:
                value = action.type(value if action.type in (int, float) else str(value))
            except (argparse.ArgumentTypeError, ValueError, TypeError) as exc:
                raise ConfigError(f"config file {path}: option {key!r}: {exc}") from None
        out[dest] = value
    return out


REQUIRED = {
    "forecast": ("model", "split"),
    "copula": ("split",),
    "eval": ("scenarios", "realizations"),
}


def parse_args(argv=None):
    """Parse flags, folding in ``--config`` values underneath explicit flags."""
    parser, table = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if args.config is not None:
        sub = table[args.command]
        sub.set_defaults(**_config_values(args.config, sub))
        args = parser.parse_args(argv)
    missing = [name for name in REQUIRED.get(args.command, ()) if getattr(args, name) is None]
    if missing:
        table[args.command].error(
            "missing " + ", ".join("--" + m.replace("_", "-") for m in missing)
            + " (flag or config file)")
    return args


# -- shared helpers --------------------------------------------------------------

def threads_from_env() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {n}")
    return n


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _jsonable(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def write_manifest(args, outputs: list, extra: dict | None = None) -> Path:
    """Resolved config, output hashes and provenance, kept apart from the outputs."""
    config = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k != "func"}
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "unknown"
    doc = {
        "command": args.command,
        "config": config,
        "outputs": {Path(p).name: _sha256(p) for p in outputs},
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "package_version": version,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "threads": os.environ.get(THREADS_ENV),
    }
    if extra:
        doc.update(extra)
    path = args.out_dir / f"manifest_{args.command}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _load_series(path, capacity: float) -> data.PowerSeries:
    if path is None:
        raise ConfigError("a series CSV is required (--data)")
    if not Path(path).exists():
        raise DataError(f"series file {path} not found")
    return data.normalize(data.load_csv(path, capacity))


def _load_split(args) -> tuple:
    """Series, split document and the train/test windows it describes."""
    if not args.split.exists():
        raise DataError(f"split file {args.split} not found")
    split = json.loads(args.split.read_text())
    if split.get("format") != "scenario-gan/split":
        raise DataError(f"{args.split} is not a split document")
    data_path = args.data if args.data is not None else split["data"]
    capacity = args.capacity if args.data is not None else split["capacity"]
    series = _load_series(data_path, capacity)
    windows = data.window(series, split["h"], split["k"], split["stride"])
    by_start = {w.start: w for w in windows}
    try:
        train = [by_start[s] for s in split["train_starts"]]
        test = [by_start[s] for s in split["test_starts"]]
    except KeyError as exc:
        raise DataError(f"split refers to window start {exc} missing from the series") from None
    return series, split, train, test


def _select(windows: list, limit) -> list:
    if limit is None or limit >= len(windows):
        return list(windows)
    if limit < 1:
        raise ConfigError("max-instances must be positive")
    idx = np.unique(np.linspace(0, len(windows) - 1, limit).round().astype(int))
    return [windows[i] for i in idx]


def _horizons(args, length: int, default_k: int) -> list:
    ks = args.horizons or [default_k]
    for k in ks:
        if not 1 <= k <= length - 1:
            raise ConfigError(f"horizon {k} does not fit windows of length {length}")
    return ks


def _point_forecast(series: data.PowerSeries, w: data.Window, k: int) -> np.ndarray:
    """Forecast column when present, otherwise persistence from the last observation."""
    length = len(w.values)
    if series.forecast is not None:
        return series.forecast[w.start + length - k: w.start + length].copy()
    return data.persistence_forecast(w.values, length - k - 1, k)


def write_realizations_csv(rows: list, path) -> Path:
    """``rows`` of ``(instance, values)`` as instance,lead_index,value."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["instance", "lead_index", "value"])
        for instance, values in rows:
            for j, v in enumerate(values):
                w.writerow([instance, j + 1, repr(float(v))])
    return Path(path)


def read_realizations_csv(path) -> dict:
    out: dict = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["instance", "lead_index", "value"]:
            raise DataError(f"{path}: expected columns instance,lead_index,value")
        for rec in reader:
            out.setdefault(rec["instance"], {})[int(rec["lead_index"])] = float(rec["value"])
    return {inst: np.array([leads[j] for j in sorted(leads)]) for inst, leads in out.items()}


def _alpha_tag(alpha: float) -> str:
    return f"{alpha:g}"


# -- subcommands -----------------------------------------------------------------

def cmd_synth(args) -> list:
    config = data.SyntheticConfig(rho=args.rho, base=args.base, amplitude=args.amplitude,
                                  noise_std=args.noise_std, length=args.length, seed=args.seed,
                                  clip=not args.no_clip, step_minutes=args.step_minutes,
                                  start=args.start)
    series = data.synth_generate(config)
    path = args.out_dir / "series.csv"
    data.save_csv(series, path)
    print(f"wrote {len(series)} rows to {path}")
    return [path]


def cmd_train(args) -> list:
    series = _load_series(args.data, args.capacity)
    windows = data.window(series, args.h, args.k, args.stride)
    train_w, test_w = data.split_by_day(windows, args.split_ratio, seed=args.split_seed)
    if not train_w or not test_w:
        raise DataError("day split left an empty partition; use a longer series")
    split_path = _write_json(args.out_dir / "split.json", {
        "format": "scenario-gan/split",
        "data": str(args.data), "capacity": args.capacity,
        "h": args.h, "k": args.k, "stride": args.stride,
        "ratio": args.split_ratio, "seed": args.split_seed,
        "train_starts": [w.start for w in train_w],
        "test_starts": [w.start for w in test_w],
    })
    ckpt = args.out_dir / "checkpoint.json"
    if args.resume is not None:
        if not args.resume.exists():
            raise DataError(f"checkpoint {args.resume} not found")
        trainer = gan.Trainer.from_checkpoint(args.resume, train_w, iterations=args.iterations)
    else:
        config = gan.TrainConfig(learning_rate=args.learning_rate, clip=args.clip,
                                 batch_size=args.batch_size, n_discri=args.n_discri,
                                 iterations=args.iterations, seed=args.seed,
                                 early_stop_threshold=args.early_stop_threshold)
        model = gan.GanModel.build(args.h, args.k, args.latent_dim, args.architecture,
                                   seed=args.seed, generator_bn=not args.no_generator_bn)
        trainer = gan.Trainer(model, train_w, config)
    log.info("training on %d windows, %d held out", len(train_w), len(test_w))
    trainer.run(checkpoint_every=args.checkpoint_every, checkpoint_path=ckpt)
    trainer.save_checkpoint(ckpt)
    model = gan.finalize(trainer)
    model_path = args.out_dir / "model.json"
    model.save(model_path)
    log_path = args.out_dir / "trainlog.csv"
    log_path.write_text(trainer.log.to_csv())
    print(f"trained {trainer.iteration} iterations on {len(train_w)} windows; "
          f"model {model.model_id} written to {model_path}")
    return [split_path, model_path, log_path, ckpt]


def cmd_forecast(args) -> list:
    model = gan.GanModel.load(args.model)
    series, split, _, test = _load_split(args)
    if split["h"] + split["k"] + 1 != model.window_length:
        raise ConfigError("model and split disagree on the window length")
    instances = _select(test, args.max_instances)
    workers = threads_from_env()
    outputs, total, feasible = [], 0, 0
    summary = {}
    for k in _horizons(args, model.window_length, model.k):
        split_model = model.with_split(k)
        h = model.window_length - k - 1
        outputs.append(write_realizations_csv(
            [(str(w.start), w.values[h + 1:]) for w in instances],
            args.out_dir / f"realizations_k{k}.csv"))
        for alpha in args.alpha:
            sets, reports = [], {}
            for i, w in enumerate(instances):
                problem = forecaster.ForecastProblem(
                    w.values[: h + 1], _point_forecast(series, w, k), alpha=alpha,
                    alpha_sub=args.alpha_sub, beta=args.beta, gamma=args.gamma,
                    n_scenarios=args.n_scenarios, n_init=args.n_init, n_scen=args.n_scen,
                    lr=args.lr, momentum=args.momentum, cap=args.cap, restarts=args.restarts)
                sset = forecaster.forecast_scenarios(problem, split_model, seed=[args.seed, i],
                                                     workers=workers)
                sset.instance = str(w.start)
                sets.append(sset)
                report = forecaster.feasibility_report(sset)
                reports[sset.instance] = report
                total += len(sset)
                feasible += sum(s.feasible for s in sset.scenarios)
            stem = f"scenarios_k{k}_a{_alpha_tag(alpha)}"
            forecaster.write_scenarios_csv(sets, args.out_dir / f"{stem}.csv")
            forecaster.write_scenarios_json(sets, args.out_dir / f"{stem}.json")
            n = sum(len(s) for s in sets)
            frac = sum(sum(x.feasible for x in s.scenarios) for s in sets) / n if n else None
            summary[stem] = frac
            rep = _write_json(args.out_dir / f"feasibility_k{k}_a{_alpha_tag(alpha)}.json",
                              {"feasible_fraction": frac, "instances": reports})
            outputs += [args.out_dir / f"{stem}.csv", args.out_dir / f"{stem}.json", rep]
            print(f"k={k} alpha={alpha:g}: {len(sets)} instances, feasible fraction {frac}")
    if total and feasible == 0:
        write_manifest(args, outputs, {"feasible_fraction": summary})
        raise NumericalError("no scenario reached the prediction interval")
    return outputs


def cmd_copula(args) -> list:
    series, split, train, test = _load_split(args)
    length = split["h"] + split["k"] + 1
    instances = _select(test, args.max_instances)
    outputs = []
    for k in _horizons(args, length, split["k"]):
        h = length - k - 1
        model = copula.fit_copula([w.values[h + 1:] for w in train])
        model_id = hashlib.sha256(model.correlation.tobytes()
                                  + b"".join(m.tobytes() for m in model.marginals)).hexdigest()[:16]
        sets = []
        for i, w in enumerate(instances):
            bounds = forecaster.interval_bounds(
                forecaster.apply_forecast_floor(_point_forecast(series, w, k)), args.alpha)
            draws = copula.sample_copula(model, args.n_scenarios, np.random.default_rng([args.seed, i]))
            scenarios = [forecaster.Scenario(v, None, None, float("nan"), bounds.contains(v))
                         for v in draws]
            sets.append(forecaster.ScenarioSet(
                scenarios, None, model_id, [args.seed, i], method="copula", instance=str(w.start),
                extra={"alpha": args.alpha, "jitter": model.jitter, "n_train": len(train)}))
        stem = f"scenarios_k{k}_copula"
        forecaster.write_scenarios_csv(sets, args.out_dir / f"{stem}.csv")
        forecaster.write_scenarios_json(sets, args.out_dir / f"{stem}.json")
        real = write_realizations_csv([(str(w.start), w.values[h + 1:]) for w in instances],
                                      args.out_dir / f"realizations_k{k}.csv")
        outputs += [args.out_dir / f"{stem}.csv", args.out_dir / f"{stem}.json", real]
        print(f"k={k}: copula fitted on {len(train)} windows, {len(sets)} instances sampled")
    return outputs


def cmd_eval(args) -> list:
    methods = args.methods or [p.stem for p in args.scenarios]
    if len(methods) != len(args.scenarios):
        raise ConfigError("give one method label per scenario file")
    if len(set(methods)) != len(methods):
        raise ConfigError("method labels must be distinct")
    for p in [*args.scenarios, args.realizations]:
        if not p.exists():
            raise DataError(f"{p} not found")
    real = read_realizations_csv(args.realizations)
    if not real:
        raise DataError(f"{args.realizations} holds no realizations")
    order = list(real)
    obs = [real[i] for i in order]
    k = len(obs[0])
    k_max = k - 1 if args.k_max is None else args.k_max
    outputs = []
    report = {"k": k, "k_max": k_max, "n_instances": len(order), "methods": {}}

    def write_rows(name, header, rows):
        path = args.out_dir / name
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        outputs.append(path)

    realized = np.stack(obs)
    if len(order) >= 2:
        write_rows("correlation_realized.csv", ["i", "j", "rho"],
                   [(i, j, repr(r)) for i, j, r in metrics.pearson_matrix(realized).table()])
    _, pooled = metrics.autocorrelation_set(realized, k_max)
    write_rows("autocorr_realized.csv", ["lag", "r"], [(lag, repr(float(r))) for lag, r in enumerate(pooled)])

    for method, path in zip(methods, args.scenarios):
        sets = forecaster.read_scenarios_csv(path)
        missing = [i for i in order if i not in sets]
        extra = [i for i in sets if i not in real]
        if missing or extra:
            raise DataError(f"{path}: instances do not match realizations "
                            f"(missing {missing[:3]}, unexpected {extra[:3]})")
        scen = [sets[i] for i in order]
        curve = metrics.crps_curve(scen, obs)
        write_rows(f"crps_{method}.csv", ["lead_index", "crps"],
                   [(int(lead), repr(float(v))) for lead, v in zip(curve.leads, curve.values)])
        vectors = np.concatenate(scen)
        _, pooled = metrics.autocorrelation_set(vectors, k_max)
        write_rows(f"autocorr_{method}.csv", ["lag", "r"],
                   [(lag, repr(float(r))) for lag, r in enumerate(pooled)])
        write_rows(f"correlation_{method}.csv", ["i", "j", "rho"],
                   [(i, j, repr(r)) for i, j, r in metrics.pearson_matrix(vectors).table()])
        report["methods"][method] = {
            "crps": curve.values.tolist(),
            "mean_crps": float(curve.values.mean()),
            "n_scenarios": curve.n_scenarios,
            "autocorrelation": pooled.tolist(),
        }
    ranking = sorted(report["methods"], key=lambda m: report["methods"][m]["mean_crps"])
    report["ranking_by_mean_crps"] = ranking
    if {"gan", "copula"} <= set(methods):
        report["gan_below_copula"] = (report["methods"]["gan"]["mean_crps"]
                                      < report["methods"]["copula"]["mean_crps"])
    outputs.append(_write_json(args.out_dir / "report.json", report))
    for m in ranking:
        print(f"{m}: mean CRPS {report['methods'][m]['mean_crps']:.6f}")
    return outputs


# -- entry point -----------------------------------------------------------------

def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"scenario-gan: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help, or a usage error already reported by argparse
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        outputs = args.func(args)
        write_manifest(args, outputs)
    except ConfigError as exc:
        print(f"scenario-gan {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError, OSError) as exc:
        print(f"scenario-gan {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"scenario-gan {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
