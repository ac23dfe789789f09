"""Command line entry point: ``gaitseg {synth,preprocess,inspect,train,eval,stream}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import datapipe, metrics, model, synth, train
from .container import ContainerError
from .runtime import check_stream_model, checkpoint_meta, load_checkpoint, run_stream, save_checkpoint

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("gaitseg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def cmd_synth(args):
    recs = synth.synth_dataset(subjects=args.subjects, duration_s=args.duration, seed=args.seed)
    for rec, events in recs:
        datapipe.write_recording(rec, events, args.out)
    total = sum(r.duration_s for r, _ in recs)
    print(f"wrote {len(recs)} recordings ({total:.1f} s) to {args.out}")


def cmd_preprocess(args):
    bases = datapipe.list_recordings(args.input)
    if not bases:
        raise datapipe.DataFormatError(f"no *.imu.csv recordings in {args.input}")
    recs = [datapipe.read_recording(b) for b in bases]
    ds = datapipe.preprocess_recordings(recs, args.rate, args.layout, replicas=args.downsample_replicas, seed=args.seed)
    datapipe.save_dataset(ds, args.out)
    print(f"{len(ds.train)} train windows, {len(ds.test)} test windows of {ds.window_len} samples -> {args.out}")


def inspect_lines(variant: str, rate: int, layout: str = "spatial") -> list[tuple[str, str]]:
    spec = _spec_for(variant, rate, layout)
    net = model.build_network(spec, seed=0)
    macs = model.count_macs(net)
    rf = model.receptive_field(spec)
    return [
        ("model", variant),
        ("rate_hz", str(rate)),
        ("layout", layout),
        ("input", "x".join(map(str, spec.input_shape))),
        ("padded_length", str(spec.padded_len)),
        ("pool", f"1x{spec.pool_k}"),
        ("parameters", str(model.count_params(net))),
        ("macs", str(macs)),
        ("flops_2_per_mac", str(2 * macs)),
        ("receptive_field", str(rf)),
        ("receptive_field_gt_half_window", str(rf > spec.window_len / 2)),
    ]


def cmd_inspect(args):
    for k, v in inspect_lines(args.model, args.rate, args.layout):
        print(f"{k},{v}")


def _spec_for(variant: str, rate: float, layout: str) -> model.NetworkSpec:
    window = int(round(rate))
    pool_k = 2 if (variant == "unet" or rate <= 20) else 4
    return model.NetworkSpec(variant=variant, layout=layout, pool_k=pool_k, window_len=window)


def cmd_train(args):
    ds = datapipe.load_dataset(args.data)
    overrides = {"seed": args.seed, "epochs": args.epochs, "batch_size": args.batch_size}
    cfg = train.TrainConfig.from_file(args.config, **overrides) if args.config else train.TrainConfig(
        **{k: v for k, v in overrides.items() if v is not None})
    plan = train.make_folds(ds, cfg.folds, cfg.val_fraction, cfg.seed)
    if not 0 <= args.fold < len(plan):
        raise UsageError(f"--fold must be in [0, {len(plan) - 1}]")
    fold = plan[args.fold]
    spec = _spec_for(args.model, ds.rate_hz, ds.layout)
    net = model.build_network(spec, seed=cfg.seed)
    net, history = train.train_model(net, ds.train.subset(fold.train_idx), cfg, ds.train.subset(fold.val_idx))
    out = Path(args.out)
    best = min(history, key=lambda h: h["val_loss"])
    save_checkpoint(net, out, extra={
        "fold": args.fold, "folds": cfg.folds, "seed": cfg.seed, "val_fraction": cfg.val_fraction,
        "best_epoch": best["epoch"], "test_subjects": ",".join(fold.test_subjects),
    })
    hist_path = out.with_suffix(".history.csv")
    train.write_history(history, hist_path)
    from .report import plot_history
    plot_history(history, out.with_suffix(".loss.png"))
    print(f"best epoch {best['epoch']} val loss {best['val_loss']:.5f}; checkpoint {out}, history {hist_path}")


def cmd_eval(args):
    net = load_checkpoint(args.ckpt)
    meta = checkpoint_meta(args.ckpt)
    ds = datapipe.load_dataset(args.data)
    if ds.layout != net.spec.layout or ds.window_len != net.spec.window_len:
        raise datapipe.DataFormatError(
            f"dataset ({ds.layout}, window {ds.window_len}) does not match model "
            f"({net.spec.layout}, window {net.spec.window_len})")
    if "test_subjects" in meta:
        subjects = meta["test_subjects"].split(",")
    else:
        subjects = ds.subjects
    sel = np.flatnonzero(np.isin(ds.test.window_subjects(), subjects))
    windows = ds.test.subset(sel)
    pred = train.predict_windows(net, windows)
    seqs = train.recording_sequences(windows, pred)
    result = metrics.evaluate_sequences(seqs.values(), ds.rate_hz, args.tol_ms)
    report = Path(args.report)
    result.write_csv(report)
    print(result.table())
    from .report import plot_phases
    first = next(iter(seqs))
    plot_phases(*seqs[first], ds.rate_hz, report.with_suffix(".phases.png"), title=first)


def _read_stream_rows(source: str):
    fh = sys.stdin if source == "-" else open(source, newline="")
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != ("t",) + datapipe.CHANNELS:
            raise datapipe.DataFormatError(f"stream header must be t,{','.join(datapipe.CHANNELS)}")
        for row in reader:
            if not row:
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise datapipe.DataFormatError(f"bad stream row {row}") from exc
            if len(vals) != 7:
                raise datapipe.DataFormatError(f"stream row needs 7 fields, got {len(vals)}")
            yield vals[0], np.array(vals[1:])
    finally:
        if fh is not sys.stdin:
            fh.close()


def cmd_stream(args):
    net = load_checkpoint(args.ckpt)
    try:
        check_stream_model(net, net.spec.window_len)
    except ValueError as exc:
        raise datapipe.DataFormatError(str(exc)) from exc
    state = run_stream(net, _read_stream_rows(args.input), threaded=args.threaded)
    with open(args.events_out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "kind"])
        for ev in state.events:
            w.writerow([repr(ev.time_s), ev.kind])
    if args.latency_out:
        with open(args.latency_out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["window", "ms"])
            for i, ms in enumerate(state.latency.samples_ms):
                w.writerow([i, f"{ms:.4f}"])
        from .report import plot_latency
        plot_latency(state.latency.samples_ms, Path(args.latency_out).with_suffix(".png"))
    if args.labels_out:
        with open(args.labels_out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "phase"])
            for t, p in zip(np.concatenate(state.phase_times) if state.phase_times else [], state.labels()):
                w.writerow([repr(float(t)), int(p)])
    lat = state.latency
    print(f"{state.windows_done} windows, {len(state.events)} events; "
          f"latency ms min/mean/max {lat.min:.2f}/{lat.mean:.2f}/{lat.max:.2f}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gaitseg", description="IMU gait phase segmentation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic CSV corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--duration", type=float, default=None, help="seconds per recording (default: 1593 s total)")
    s.add_argument("--subjects", type=int, default=3)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="synchronize, window and normalize a CSV corpus")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--rate", type=int, choices=(1000, 20), default=1000)
    s.add_argument("--layout", choices=model.LAYOUTS, default="spatial")
    s.add_argument("--downsample-replicas", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("inspect", help="parameter count, FLOPs and receptive field")
    s.add_argument("--model", choices=model.VARIANTS, default="imunet")
    s.add_argument("--rate", type=int, choices=(1000, 20), default=1000)
    s.add_argument("--layout", choices=model.LAYOUTS, default="spatial")
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("train", help="train one cross-validation fold")
    s.add_argument("--data", required=True)
    s.add_argument("--model", choices=model.VARIANTS, default="imunet")
    s.add_argument("--config", default=None)
    s.add_argument("--fold", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--batch-size", type=int, default=None)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on its fold's test subjects")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--tol-ms", type=float, default=50.0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("stream", help="segment a 20 Hz sample stream in real time")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="input", default="-", help="CSV file or '-' for stdin")
    s.add_argument("--events-out", required=True)
    s.add_argument("--latency-out", default=None)
    s.add_argument("--labels-out", default=None)
    s.add_argument("--threaded", action="store_true")
    s.set_defaults(func=cmd_stream)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"gaitseg: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except train.NumericError as exc:
        print(f"gaitseg: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (datapipe.DataFormatError, ContainerError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"gaitseg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
