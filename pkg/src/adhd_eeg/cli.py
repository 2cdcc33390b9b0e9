"""Command-line front end: ``adhd-eeg {synth,inspect,train,evaluate,gradcheck,report}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""
import argparse
import logging
import os
import sys

import numpy as np

from . import _jsonio, __version__, matio
from .dataset import load_table, save_table, synth_generate, synth_recordings
from .exceptions import ConfigError, NumericalError, PipelineError
from .metrics import TABLE_HEADER, table_row, write_table_csv
from .models import MODEL_NAMES, build_lssrepl_dnn, build_ssrepl_adhd
from .nnkit import Network, grad_check
from .pipeline import DATA_ENV, build_config, evaluate_run, read_config_file, run_pipeline


def _band(text):
    low, sep, high = text.partition(":")
    try:
        if not sep:
            raise ValueError
        return float(low), float(high)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LOW:HIGH in Hz, got {text!r}") from None


def _key_value(text):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key.strip(), value.strip()


def build_parser():
    parser = argparse.ArgumentParser(prog="adhd-eeg", description="ADHD detection pipeline for EEG tables.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic two-class dataset")
    p.add_argument("--out", required=True, help=".csv / .bin table, or a directory of .mat files")
    p.add_argument("--format", choices=("csv", "bin", "mat"), help="default: from the --out extension")
    p.add_argument("--n-per-class", type=int, default=200)
    p.add_argument("--n-adhd", type=int)
    p.add_argument("--n-control", type=int)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=42)

    p = sub.add_parser("inspect", parents=[common], help="summarise a .mat file or an instance table")
    p.add_argument("path")

    p = sub.add_parser("train", parents=[common], help="run the full pipeline and write a run directory")
    p.add_argument("--config", help="flat key = value file or a run_manifest.json")
    p.add_argument("--model", choices=MODEL_NAMES)
    p.add_argument("--seed", type=int)
    p.add_argument("--data-dir", help=f"directory of .mat recordings (fallback: ${DATA_ENV})")
    p.add_argument("--label-map", help="stem=ADHD,other=Control (default: infer from names)")
    p.add_argument("--table", help="cached instance table (.csv or .bin)")
    p.add_argument("--synth", action="store_true", help="use synthetic data")
    p.add_argument("--out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--no-smote", action="store_true")
    p.add_argument("--filter", type=_band, metavar="LOW:HIGH", help="FIR band-pass before assembly")
    p.add_argument("--set", type=_key_value, action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key")

    p = sub.add_parser("evaluate", parents=[common], help="re-score a finished run")
    p.add_argument("run_dir")
    p.add_argument("--table", help="score this table instead of the run's own test split")
    p.add_argument("--out", help="write the metrics JSON here")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of a model's gradients")
    p.add_argument("--model", choices=("ssrepl_adhd", "lssrepl_dnn"), default="ssrepl_adhd")
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--samples", type=int, default=8, help="entries checked per parameter (0 = all)")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("report", parents=[common], help="merge runs into one comparison table")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", help="CSV path")
    return parser


def train_overrides(args):
    values = dict(args.set)
    if args.synth:
        values["source"] = "synth"
    if args.data_dir:
        values.update(source="mat", data_dir=args.data_dir)
    if args.table:
        values.update(source="table", table_path=args.table)
    if args.label_map:
        values["label_map"] = args.label_map
    if args.no_smote:
        values["smote"] = "false"
    if args.filter:
        values.update({"filter": "true", "filter_low": args.filter[0], "filter_high": args.filter[1]})
    for key in ("model", "seed", "out", "epochs", "batch_size"):
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    return values


def cmd_train(args):
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = build_config(file_values, train_overrides(args))
    except ConfigError as exc:
        exc.stage = "config"
        raise
    result = run_pipeline(cfg)
    if result.exit_code != 0:
        err = result.error
        print(f"error [{err.stage}] {type(err).__name__}: {err}", file=sys.stderr)
        return result.exit_code
    r = result.report
    print(f"{result.config.model}: accuracy {r.accuracy:.2f}  precision {r.precision_weighted:.2f}  "
          f"recall {r.recall_weighted:.2f}  f1 {r.f1_weighted:.2f}")
    print(f"artifacts in {result.out}")
    return 0


def cmd_synth(args):
    n_adhd = args.n_adhd if args.n_adhd is not None else args.n_per_class
    n_control = args.n_control if args.n_control is not None else args.n_per_class
    fmt = args.format
    if fmt is None:
        ext = os.path.splitext(args.out)[1].lower()
        fmt = {".csv": "csv", ".bin": "bin"}.get(ext, "mat")
    params = dict(class_separation=args.separation, noise=args.noise, seed=args.seed)
    try:
        if fmt == "mat":
            os.makedirs(args.out, exist_ok=True)
            for rec in synth_recordings((n_adhd, n_control), **params):
                path = os.path.join(args.out, f"{rec.group}.mat")
                matio.save_mat(path, [matio.MatMatrix.from_array("eeg", rec.samples)])
                print(f"{path}: {rec.samples.shape[0]} x {rec.samples.shape[1]}")
        else:
            table = synth_generate((n_adhd, n_control), **params)
            save_table(table, args.out)
            print(f"{args.out}: {len(table)} rows, {table.n_features} features")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return 0


def _describe(values):
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return "no finite values"
    return f"min {finite.min():.6g}  max {finite.max():.6g}  mean {finite.mean():.6g}"


def cmd_inspect(args):
    if args.path.lower().endswith(".mat"):
        mat = matio.read_mat(args.path, skip_unsupported=True)
        print(f"{args.path}: MAT v5 {mat.endianness}-endian, version 0x{mat.version:04x}")
        print(f"  header: {mat.description_text.strip()}")
        for m in mat.matrices:
            dims = "x".join(str(d) for d in m.dims)
            print(f"  {m.name:<24} {m.element_class:<4} {dims:<12} {_describe(m.values)}")
        for offset, reason in mat.skipped:
            print(f"  skipped element at byte {offset}: {reason}")
        return 0
    table = load_table(args.path)
    counts = table.class_counts()
    print(f"{args.path}: {len(table)} rows x {table.n_features} features; "
          f"ADHD {counts[1]}, Control {counts[0]}")
    n_missing = int(np.isnan(table.features).sum())
    if n_missing:
        print(f"  missing values: {n_missing}")
    for j, name in enumerate(table.feature_names):
        print(f"  {name:<8} {_describe(table.features[:, j])}")
    return 0


def cmd_evaluate(args):
    table = load_table(args.table) if args.table else None
    report = evaluate_run(args.run_dir, table)
    if args.out:
        _jsonio.dump(report.to_dict(), args.out)
    print(report.to_json())
    return 0


def cmd_gradcheck(args):
    if args.batch < 1:
        raise ConfigError("--batch must be >= 1")
    spec = build_ssrepl_adhd() if args.model == "ssrepl_adhd" else build_lssrepl_dnn()
    net = Network(spec, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    x = rng.standard_normal((args.batch,) + spec.input_shape)
    y = rng.integers(0, 2, size=args.batch)
    report = grad_check(net, x, y, tol=args.tol, samples_per_param=args.samples or None, seed=args.seed)
    print(report.summary())
    for name, err in report.per_param.items():
        print(f"  {name:<32} {err:.3e}")
    if not report.passed:
        raise NumericalError(report.summary(), stage="gradcheck")
    return 0


def cmd_report(args):
    rows = []
    for run in args.run_dirs:
        path = os.path.join(run, "metrics.json")
        if not os.path.exists(path):
            raise ConfigError(f"{run} has no metrics.json")
        metrics = _jsonio.load(path)
        rows.append(table_row(metrics.get("model", os.path.basename(run.rstrip(os.sep))), metrics))
    if args.out:
        write_table_csv(rows, args.out)
    widths = [max(len(str(r[i])) for r in rows + [TABLE_HEADER]) for i in range(len(TABLE_HEADER))]
    for row in [TABLE_HEADER] + rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(row, widths)))
    return 0


COMMANDS = {"synth": cmd_synth, "inspect": cmd_inspect, "train": cmd_train,
            "evaluate": cmd_evaluate, "gradcheck": cmd_gradcheck, "report": cmd_report}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except PipelineError as exc:
        stage = exc.stage or args.command
        print(f"error [{stage}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error [{args.command}] {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
