"""Command-line entry point: ``canet <command> ...``.

Exit codes: 0 success, 1 I/O failure or failed gradient check, 2 bad
flags or config, 3 data problems, 4 training failures.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


from . import data as D
from . import fusion
from . import gradsuite
from .models import ModelFileError, check_registry, export_attention, forward, load_model_with_meta, save_model
from .numeric import NonFiniteError
from .train import TrainConfig, evaluate, fit


EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_DATA, EXIT_TRAIN = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# -- run configuration ----------------------------------------------------------------------


@dataclass
class DataConfig:
    path: str = ""
    test_fraction: float = 0.145  # 22 of 152 segments
    window_seconds: float = 3.0
    overlap: float = 0.8
    keypoint_mode: str = "frame-bbox"


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    out: str = ""

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["train"] = {k: str(v) for k, v in asdict(self.train).items()}
        cp["data"] = {k: str(v) for k, v in asdict(self.data).items()}
        cp["run"] = {"out": self.out}
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in cp[section].items())
            lines.append("")
        return "\n".join(lines)


def _coerce(value: str, default):
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    return type(default)(value)


def _section(cls, cp: configparser.ConfigParser, name: str, overrides: dict):
    defaults = cls()
    known = {f.name for f in fields(cls)}
    values = {}
    if cp.has_section(name):
        unknown = set(cp[name]) - known
        if unknown:
            raise CliError(f"config [{name}]: unknown keys {sorted(unknown)}", EXIT_CONFIG)
        for key, raw in cp[name].items():
            try:
                values[key] = _coerce(raw, getattr(defaults, key))
            except ValueError as exc:
                raise CliError(f"config [{name}] {key}: {exc}", EXIT_CONFIG) from exc
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise CliError(f"config [{name}]: {exc}", EXIT_CONFIG) from exc


def resolve_run_config(config_path: str | None, train_overrides: dict, data_overrides: dict, out: str) -> RunConfig:
    """Config file values, then command-line overrides on top."""
    cp = configparser.ConfigParser()
    if config_path:
        try:
            with open(config_path) as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise CliError(f"cannot read config {config_path}: {exc}", EXIT_CONFIG) from exc
        except configparser.Error as exc:
            raise CliError(f"config {config_path}: {exc}", EXIT_CONFIG) from exc
        extra = set(cp.sections()) - {"train", "data", "run"}
        if extra:
            raise CliError(f"config {config_path}: unknown sections {sorted(extra)}", EXIT_CONFIG)
    train = _section(TrainConfig, cp, "train", train_overrides)
    data = _section(DataConfig, cp, "data", data_overrides)
    out = out or (cp["run"].get("out", "") if cp.has_section("run") else "")
    if not data.path:
        raise CliError("no dataset given (--data or [data] path)", EXIT_CONFIG)
    if not out:
        raise CliError("no output directory given (--out or [run] out)", EXIT_CONFIG)
    if not 0.0 < data.test_fraction < 1.0:
        raise CliError(f"test_fraction must lie in (0, 1), got {data.test_fraction}", EXIT_CONFIG)
    return RunConfig(train, data, out)


# -- helpers --------------------------------------------------------------------------------------


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    elif not args.quiet:
        print(text)


def _load_segments(path: str):
    try:
        return D.load_dataset(path)
    except D.DatasetError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc


def _windows(segments, registry, data_cfg: dict) -> D.WindowSet:
    try:
        return D.make_windows(
            segments, registry, data_cfg["window_seconds"], data_cfg["overlap"], data_cfg["keypoint_mode"]
        )
    except (D.DatasetError, ValueError) as exc:
        raise CliError(str(exc), EXIT_DATA) from exc


def _split_windows(path: str, meta: dict, split: str) -> D.WindowSet:
    """Rebuild the windows of a saved model's split from its recorded settings."""
    registry, segments = _load_segments(path)
    data_cfg = {**asdict(DataConfig()), **meta.get("data", {})}
    if split != "all":
        train, test = D.split_by_segment(segments, data_cfg["test_fraction"], meta.get("split_seed", 0))
        segments = test if split == "test" else train
    return _windows(segments, registry, data_cfg)


def _load_model(path: str):
    try:
        return load_model_with_meta(path)
    except ModelFileError as exc:
        raise CliError(str(exc), EXIT_IO) from exc


def _check(params, windows: D.WindowSet) -> None:
    try:
        check_registry(params, windows.registry)
    except D.RegistryMismatchError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc


def _write_json(path: Path, payload: dict) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc


# -- commands ------------------------------------------------------------------------------------


def cmd_gen_synth(args) -> int:
    spec = D.SyntheticSpec(
        segments=args.segments,
        frames_per_segment=args.frames,
        informative_component=args.informative,
        burst_frames=args.burst,
        burst_period=args.burst_period,
        amplitude=args.amplitude,
        noise_std=args.noise,
        seed=args.seed or 0,
        skeleton=args.skeleton,
    )
    try:
        spec = spec.resolved()
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    try:
        manifest = D.generate_synthetic(spec, args.out)
    except OSError as exc:
        raise CliError(f"cannot write dataset to {args.out}: {exc}", EXIT_IO) from exc
    length, stride = D.window_geometry(spec.fps)
    n_windows = spec.segments * D.window_count(spec.frames_per_segment, length, stride)
    summary = f"{len(manifest.segments)} segments, {n_windows} windows"
    degenerate = spec.amplitude == 0
    if degenerate:
        summary += " (degenerate: classes identical)"
    payload = {
        "segments": len(manifest.segments),
        "windows": n_windows,
        "components": spec.registry.names,
        "informative": spec.informative_component,
        "degenerate": degenerate,
        "out": str(args.out),
    }
    _emit(args, payload, summary)
    return EXIT_OK


def cmd_train(args) -> int:
    train_overrides = {
        "model": args.model,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.lr,
        "seed": args.seed,
    }
    data_overrides = {"path": args.data, "test_fraction": args.test_fraction}
    run = resolve_run_config(args.config, train_overrides, data_overrides, args.out)
    registry, segments = _load_segments(run.data.path)
    if run.train.model == "gcn-canet" and not registry.has_skeleton():
        raise CliError(
            f"--model gcn-canet needs the joints modality (13 keypoint components); dataset has {registry.names}",
            EXIT_DATA,
        )
    try:
        train_segs, test_segs = D.split_by_segment(segments, run.data.test_fraction, run.train.seed)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    data_cfg = asdict(run.data)
    train_ws = _windows(train_segs, registry, data_cfg)
    test_ws = _windows(test_segs, registry, data_cfg)
    if len(train_ws) == 0:
        raise CliError("no training windows: segments are shorter than one window", EXIT_DATA)
    try:
        params, history = fit(run.train, train_ws, test_ws)
    except (NonFiniteError, FloatingPointError, ArithmeticError) as exc:
        raise CliError(f"training failed: {exc}", EXIT_TRAIN) from exc
    out = Path(run.out)
    meta = {"split_seed": run.train.seed, "data": data_cfg, "train": run.train.to_dict()}
    try:
        out.mkdir(parents=True, exist_ok=True)
        save_model(params, out / "model.json", meta)
        (out / "config.ini").write_text(run.to_ini())
    except OSError as exc:
        raise CliError(f"cannot write outputs to {out}: {exc}", EXIT_IO) from exc
    _write_json(out / "history.json", history.to_dict())
    payload = {"out": str(out), "train_windows": len(train_ws), "test_windows": len(test_ws), "final": history.final}
    acc = history.final.get("accuracy")
    _emit(args, payload, f"trained {run.train.model} on {len(train_ws)} windows; test accuracy "
          f"{'n/a' if acc is None else f'{acc:.4f}'}; outputs in {out}")
    return EXIT_OK


def _metrics_out(args, default_dir: Path, payload: dict, text: str) -> int:
    _write_json(Path(args.out) if args.out else default_dir / "metrics.json", payload)
    _emit(args, payload, text)
    return EXIT_OK


def cmd_eval(args) -> int:
    params, meta = _load_model(args.model)
    windows = _split_windows(args.data, meta, args.split)
    _check(params, windows)
    if len(windows) == 0:
        raise CliError("no windows to evaluate", EXIT_DATA)
    m = evaluate(params, windows)
    payload = {"split": args.split, "n": m.n, **m.to_dict()}
    return _metrics_out(args, Path(args.model).parent, payload, f"accuracy {m.accuracy:.4f}, macro-F1 {m.macro_f1:.4f} on {m.n} windows")


def cmd_fuse(args) -> int:
    if len(args.model) < fusion.MIN_VOTERS:
        raise CliError(
            f"late fusion needs at least triple predictions: got {len(args.model)} --model flag(s)", EXIT_CONFIG
        )
    loaded = [_load_model(p) for p in args.model]
    windows = _split_windows(args.data, loaded[0][1], args.split)
    for params, _ in loaded:
        _check(params, windows)
    if len(windows) == 0:
        raise CliError("no windows to evaluate", EXIT_DATA)
    m = fusion.late_fuse_evaluate([p for p, _ in loaded], windows)
    payload = {"split": args.split, "n": m.n, "models": list(args.model), **m.to_dict()}
    return _metrics_out(args, Path(args.model[0]).parent, payload, f"fused accuracy {m.accuracy:.4f}, macro-F1 {m.macro_f1:.4f} on {m.n} windows")


def cmd_export_attention(args) -> int:
    params, meta = _load_model(args.model)
    windows = _split_windows(args.data, meta, args.split)
    _check(params, windows)
    if not 0 <= args.window < len(windows):
        raise CliError(f"--window {args.window} out of range for {len(windows)} windows", EXIT_CONFIG)
    p, record = forward(params, windows.subset([args.window]))
    record = record.instance(0)
    out = Path(args.out)
    formats = ("csv", "ppm") if args.format == "both" else (args.format,)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for fmt in formats:
            for which in ("temporal", "component"):
                written.append(str(export_attention(record, out / f"{which}.{fmt}", fmt, which)))
    except OSError as exc:
        raise CliError(f"cannot write attention maps to {out}: {exc}", EXIT_IO) from exc
    payload = {
        "window": args.window,
        "segment": windows.segment_ids[args.window],
        "start": int(windows.starts[args.window]),
        "components": record.components,
        "probabilities": p.data[0].tolist(),
        "files": written,
    }
    _emit(args, payload, "\n".join(written))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = args.seed or 0
    results = gradsuite.run_suite(range(seed, seed + args.seeds), args.tol)
    failed = [r for r in results if not r.passed]
    payload = {
        "passed": not failed,
        "tol": args.tol,
        "checks": [{"case": r.case, "seed": r.seed, "max_rel_error": r.report.max_rel_error} for r in results],
    }
    worst = max(results, key=lambda r: r.report.max_rel_error)
    _emit(args, payload, f"{len(results) - len(failed)}/{len(results)} gradient checks passed; "
          f"worst {worst.report.max_rel_error:.3g} ({worst.case}, seed {worst.seed})")
    return EXIT_IO if failed else EXIT_OK


# -- parser ----------------------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(f"{self.prog}: {message}", EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    def globals_parser(suppress: bool) -> argparse.ArgumentParser:
        # subcommands repeat the global flags without clobbering values given before them
        p = argparse.ArgumentParser(add_help=False)
        kw = {"default": argparse.SUPPRESS} if suppress else {}
        p.add_argument("--seed", type=int, help="seed for data, init, shuffling and splits", **({"default": None} | kw))
        p.add_argument("--json", action="store_true", help="print machine-readable JSON on stdout", **kw)
        p.add_argument("--quiet", action="store_true", help="suppress progress logging", **kw)
        return p

    common = globals_parser(suppress=True)
    parser = _Parser(
        prog="canet",
        description="Component-attention networks for multimodal movement data.",
        parents=[globals_parser(suppress=False)],
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-synth", parents=[common], help="write a synthetic two-class dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--segments", type=int, default=152)
    g.add_argument("--frames", type=int, default=515)
    g.add_argument("--informative", default=None, help="component carrying the class signal")
    g.add_argument("--burst", type=int, default=20, help="burst length in frames")
    g.add_argument("--burst-period", type=int, default=60)
    g.add_argument("--amplitude", type=float, default=3.0)
    g.add_argument("--noise", type=float, default=1.0)
    g.add_argument("--skeleton", action="store_true", help="13 joints plus two IMU noise components")
    g.set_defaults(func=cmd_gen_synth)

    t = sub.add_parser("train", parents=[common], help="split, fit and save a model")
    t.add_argument("--config", default=None, help="INI file with [train], [data] and [run] sections")
    t.add_argument("--data", default=None)
    t.add_argument("--model", choices=("canet", "gcn-canet"), default=None)
    t.add_argument("--out", default="")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--test-fraction", type=float, default=None)
    t.set_defaults(func=cmd_train)

    def scoring(name, func, help, many=False):
        s = sub.add_parser(name, parents=[common], help=help)
        if many:
            s.add_argument("--model", action="append", default=[], help="model file; repeat at least three times")
        else:
            s.add_argument("--model", required=True)
        s.add_argument("--data", required=True)
        s.add_argument("--split", choices=("test", "train", "all"), default="test")
        s.set_defaults(func=func)
        return s

    e = scoring("eval", cmd_eval, "metrics of a saved model")
    e.add_argument("--out", default=None, help="metrics file (default: metrics.json next to the model)")
    f = scoring("fuse", cmd_fuse, "majority-vote fusion of three or more models", many=True)
    f.add_argument("--out", default=None, help="metrics file (default: metrics.json next to the first model)")
    x = scoring("export-attention", cmd_export_attention, "write attention heat maps for one window")
    x.add_argument("--window", type=int, default=0, help="window index within the split")
    x.add_argument("--out", required=True, help="output directory")
    x.add_argument("--format", choices=("csv", "ppm", "both"), default="both")

    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every layer and model")
    c.add_argument("--seeds", type=int, default=5)
    c.add_argument("--tol", type=float, default=1e-4)
    c.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        print(exc, file=sys.stderr)
        return exc.code
    logging.basicConfig(
        level=logging.WARNING if args.quiet or args.json else logging.INFO,
        format="%(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        return args.func(args)
    except CliError as exc:
        print(f"canet {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
