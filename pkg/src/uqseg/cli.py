"""Command-line pipeline: fit, swag-finalize, infer, validate, bench, render.

Exit codes: 0 success, 1 usage or input validation failure, 2 numeric
failure inside a computation.  No subcommand mutates its inputs; every
output lands under the path given by --out (or the explicit output flag).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .container import LabelMap, Tensor, read_container, write_pgm
from .epsoftmax import RatioVariant, ep_softmax
from .errors import ContainerError, DomainError, ShapeError
from .fit import FitConfig, load_dataset, sgd_fit
from .heads import GaussianHead, LogitMoments, load_head, predict_moments, save_head
from .oracle import mc_logit_moments, mc_softmax_moments, rng_stream
from .swag import SwagAccumulator, load_snapshot_stream, save_snapshot_stream
from .uncertainty import make_bundle, save_bundle


class _Stage:
    def __init__(self):
        self.name = "startup"

    def __call__(self, name: str):
        self.name = name


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; the pipeline reserves 2
    # for numeric failures, so usage problems are remapped to 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _load_features(path, stage):
    stage("read-features")
    container = read_container(path)
    if "features" in container:
        entry = container["features"]
    else:
        tensors = [e for e in container if isinstance(e, Tensor) and e.data.ndim == 3]
        if len(tensors) != 1:
            raise ShapeError(
                f"'{path}' needs a 'features' entry or exactly one rank-3 tensor; "
                f"found {container.names()}"
            )
        entry = tensors[0]
    if entry.data.ndim != 3:
        raise ShapeError(f"features must be (H, W, D), got {entry.data.shape}")
    return entry.data


def _auto_range(data):
    lo = float(np.min(data))
    hi = float(np.max(data))
    if hi <= lo:
        hi = lo + 1.0
    return lo, hi


def _render_map(path, data, lo=None, hi=None):
    if lo is None or hi is None:
        auto_lo, auto_hi = _auto_range(data)
        lo = auto_lo if lo is None else lo
        hi = auto_hi if hi is None else hi
    write_pgm(path, np.asarray(data, dtype=np.float64), lo, hi)


def _parse_classes(text):
    if not text:
        return []
    try:
        return [int(tok) for tok in text.split(",") if tok != ""]
    except ValueError:
        raise _UsageError(f"--classes expects comma-separated integers, got '{text}'")


_CONFIG_FIELDS = {f.name for f in fields(FitConfig)}


def _read_config_file(path):
    values = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise _UsageError(f"bad config line '{raw}' in {path}")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _CONFIG_FIELDS:
            raise _UsageError(f"unknown config key '{key}' in {path}")
        values[key] = value
    return values


def _build_fit_config(args) -> FitConfig:
    values = {}
    if args.config:
        values.update(_read_config_file(args.config))
    for name in _CONFIG_FIELDS:
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            values[name] = flag_value
    kwargs = {}
    for f in fields(FitConfig):
        if f.name in values:
            cast = int if f.type == "int" else float
            kwargs[f.name] = cast(values[f.name])
    return FitConfig(**kwargs)


def _cmd_fit(args, stage) -> int:
    cfg = _build_fit_config(args)
    if args.print_config:
        print(cfg.defaults_text())
        return 0
    if not args.data or not args.out:
        raise _UsageError("fit requires --data and --out")

    stage("load-dataset")
    dataset = load_dataset(args.data)
    d = dataset[0][0].shape[-1]
    if args.num_classes:
        k = args.num_classes
    else:
        ignore = dataset[0][1].ignore_value if isinstance(dataset[0][1], LabelMap) else 255
        k = 0
        for _, labels in dataset:
            data = labels.data if isinstance(labels, LabelMap) else labels
            valid = data[data != ignore]
            if valid.size:
                k = max(k, int(valid.max()) + 1)
        if k < 2:
            raise DomainError("could not infer a class count >= 2 from the labels")

    stage("sgd-fit")
    init = GaussianHead(np.zeros((k, d)), np.zeros(k), np.zeros((k, d)), np.zeros(k), 0.0)
    result = sgd_fit(dataset, init, cfg)

    stage("write-outputs")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_snapshot_stream(out / "snapshots.eusg", result.stream)
    save_head(out / "head_point.eusg", result.point_head())
    print(
        f"fit: {cfg.total_iters} iterations, {len(result.stream)} snapshots, "
        f"final loss {result.loss_history[-1]:.6f}"
    )
    print(f"fit: wrote {out / 'snapshots.eusg'} and {out / 'head_point.eusg'}")
    return 0


def _cmd_swag_finalize(args, stage) -> int:
    stage("read-snapshots")
    stream = load_snapshot_stream(args.snapshots)
    stage("read-head")
    point = load_head(args.head)
    stage("finalize")
    acc = SwagAccumulator(stream.layout).observe_stream(stream)
    head = acc.finalize(
        stream.layout.pack(point.mean_weight, point.mean_bias),
        noise=args.noise,
        variance_center=args.variance_center,
        var_floor=args.var_floor,
    )
    stage("write-outputs")
    save_head(args.out, head)
    print(
        f"swag-finalize: {len(stream)} snapshots -> '{args.out}' "
        f"(mean |var| {float(np.mean(head.var_weight)):.3e})"
    )
    return 0


def _cmd_infer(args, stage) -> int:
    features = _load_features(args.features, stage)
    stage("read-head")
    head = load_head(args.head)
    if args.noise is not None:
        head = GaussianHead(
            head.mean_weight, head.mean_bias, head.var_weight, head.var_bias, args.noise
        )
    classes = _parse_classes(args.classes)
    labels = None
    if args.labels:
        stage("read-labels")
        labels = read_container(args.labels)["labels"]
        labels.validate_classes(head.num_classes)

    stage("predict-moments")
    logits = predict_moments(features, head)
    stage("ep-softmax")
    probs = ep_softmax(logits, RatioVariant.parse(args.ratio_variant))
    stage("make-bundle")
    bundle = make_bundle(probs, logits, args.entropy_space, classes)

    stage("write-outputs")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_bundle(out / "bundle.eusg", bundle)
    _render_map(out / "label.pgm", bundle.label, 0.0, max(head.num_classes - 1, 1))
    _render_map(out / "epistemic.pgm", bundle.epistemic)
    _render_map(out / "aleatoric.pgm", bundle.aleatoric)
    for c, std_map in bundle.class_std:
        _render_map(out / f"class_std_{c}.pgm", std_map)
    print(
        f"infer: {features.shape[0]}x{features.shape[1]} grid, K={head.num_classes}, "
        f"variant={probs.variant.value}, entropy-space={args.entropy_space}"
    )
    if labels is not None:
        scored = labels.data != labels.ignore_value
        if scored.any():
            accuracy = float((bundle.label[scored] == labels.data[scored]).mean())
            print(f"infer: pixel accuracy {accuracy:.4f} over {int(scored.sum())} pixels")
    print(f"infer: outputs under {out}")
    return 0


def _cmd_validate(args, stage) -> int:
    stage("validate")
    text, csv_lines = validation_report(
        seed=args.seed,
        samples=args.samples,
        logit_cases=args.logit_cases,
        softmax_cases=args.softmax_cases,
    )
    print(text)
    if args.out:
        Path(args.out).write_text("\n".join(csv_lines) + "\n")
        print(f"validate: wrote {args.out}")
    return 0


def _cmd_bench(args, stage) -> int:
    if args.features:
        design = _load_features(args.features, stage)
        stage("read-head")
        head = load_head(args.head) if args.head else None
        if head is None:
            raise _UsageError("bench with --features also needs --head")
    else:
        stage("synthesize-input")
        try:
            h, w, d = (int(v) for v in args.grid.split("x"))
        except ValueError:
            raise _UsageError(f"--grid expects HxWxD, got '{args.grid}'")
        k = args.num_classes
        gen = rng_stream(args.seed, 3)
        design = gen.normal(size=(h, w, d)).astype(np.float32)
        head = GaussianHead(
            gen.normal(size=(k, d), scale=0.3),
            gen.normal(size=k, scale=0.1),
            gen.uniform(0.0, 0.05, size=(k, d)),
            gen.uniform(0.0, 0.05, size=k),
            0.0,
        )

    stage("bench")
    report = bench_mod.run_bench(
        design,
        head,
        mode=args.mode,
        iterations=args.iters,
        warmup_passes=args.warmup,
        variant=RatioVariant.parse(args.ratio_variant),
        entropy_space=args.entropy_space,
        threads=args.threads,
    )
    print(report.text())
    if args.csv:
        Path(args.csv).write_text(report.CSV_HEADER + "\n" + report.csv_row() + "\n")
        print(f"bench: wrote {args.csv}")
    return 0


def _cmd_render(args, stage) -> int:
    stage("read-container")
    container = read_container(args.container)
    if args.entry not in container:
        raise ShapeError(f"no entry '{args.entry}' in '{args.container}'; have {container.names()}")
    entry = container[args.entry]
    data = entry.data.astype(np.float64)
    if data.ndim != 2:
        raise ShapeError(f"entry '{args.entry}' has rank {data.ndim}, need 2 for PGM")
    stage("write-outputs")
    _render_map(args.out, data, args.lo, args.hi)
    print(f"render: wrote {args.out}")
    return 0


def validation_report(seed=0, samples=200_000, logit_cases=4, softmax_cases=4):
    """Deterministic analytic-vs-Monte-Carlo comparison table.

    Logit moments are exact, so their rows carry a z-score gate (|z| <= 4
    -> ok).  Softmax moments are approximations by design; their rows report
    the deviation without a gate.
    """
    gen = rng_stream(seed, 4)
    rows = []
    for i in range(logit_cases):
        d = int(gen.integers(2, 33))
        k = int(gen.integers(2, 8))
        head = GaussianHead(
            gen.normal(size=(k, d), scale=0.5),
            gen.normal(size=k, scale=0.2),
            gen.uniform(0.0, 0.2, size=(k, d)),
            gen.uniform(0.0, 0.2, size=k),
            float(gen.uniform(0.0, 0.1)),
        )
        x = gen.normal(size=d)
        analytic = predict_moments(x[None, None, :], head)
        est = mc_logit_moments(x, head, samples, seed, stream=100 + i)
        for j in range(k):
            for quantity, a, m, se in (
                ("mean", float(analytic.mean[0, 0, j]), est.mean[j], est.se_mean[j]),
                ("var", float(analytic.var[0, 0, j]), est.variance[j], est.se_variance[j]),
            ):
                z = abs(a - m) / se if se > 0 else 0.0
                rows.append(
                    (f"logit-{i}", quantity, j, a, float(m), float(se), z,
                     "ok" if z <= 4.0 else "DEVIATES")
                )
    for i in range(softmax_cases):
        k = int(gen.integers(2, 9))
        mu = gen.normal(size=k, scale=1.5)
        var = gen.uniform(0.0, 1.0, size=k)
        analytic = ep_softmax(LogitMoments(mu[None, None, :].astype(np.float32),
                                           var[None, None, :].astype(np.float32)))
        est = mc_softmax_moments(mu, var, samples, seed, stream=200 + i)
        for j in range(k):
            for quantity, a, m, se in (
                ("mean", float(analytic.mean[0, 0, j]), est.mean[j], est.se_mean[j]),
                ("var", float(analytic.var[0, 0, j]), est.variance[j], est.se_variance[j]),
            ):
                z = abs(a - m) / se if se > 0 else 0.0
                rows.append((f"softmax-{i}", quantity, j, a, float(m), float(se), z, "approx"))

    header = f"{'case':<12}{'qty':<6}{'cls':<5}{'analytic':<15}{'mc':<15}{'se':<13}{'|z|':<10}status"
    lines = [f"validation report: seed={seed} samples={samples}", header]
    csv_lines = ["case,quantity,class,analytic,mc,se,z,status"]
    for case, qty, j, a, m, se, z, status in rows:
        lines.append(f"{case:<12}{qty:<6}{j:<5}{a:<15.6e}{m:<15.6e}{se:<13.3e}{z:<10.2f}{status}")
        csv_lines.append(f"{case},{qty},{j},{a:.9e},{m:.9e},{se:.9e},{z:.4f},{status}")
    return "\n".join(lines), csv_lines


def _add_fit_config_flags(sub):
    sub.add_argument("--total-iters", dest="total_iters", type=int)
    sub.add_argument("--warmup-iters", dest="warmup_iters", type=int)
    sub.add_argument("--base-lr", dest="base_lr", type=float)
    sub.add_argument("--weight-decay", dest="weight_decay", type=float)
    sub.add_argument("--snapshot-every", dest="snapshot_every", type=int)
    sub.add_argument("--ohem-threshold", dest="ohem_threshold", type=float)
    sub.add_argument("--ohem-min-kept", dest="ohem_min_kept", type=int)
    sub.add_argument("--batch-size", dest="batch_size", type=int)
    sub.add_argument("--momentum", dest="momentum", type=float)
    sub.add_argument("--seed", dest="seed", type=int)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uqseg", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("fit", parents=[], help="train the final layer, record snapshots")
    p.add_argument("--data", help="directory of features_XXXX.eusg / labels_XXXX.eusg")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--num-classes", type=int, default=0)
    p.add_argument("--print-config", action="store_true")
    _add_fit_config_flags(p)
    p.set_defaults(func=_cmd_fit)

    p = subs.add_parser("swag-finalize", help="snapshots + point head -> Gaussian head")
    p.add_argument("--snapshots", required=True)
    p.add_argument("--head", required=True, help="point/pretrained head (posterior mean)")
    p.add_argument("--out", required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--variance-center", choices=("swa", "pretrained"), default="swa")
    p.add_argument("--var-floor", type=float, default=0.0)
    p.set_defaults(func=_cmd_swag_finalize)

    p = subs.add_parser("infer", help="features + head -> uncertainty bundle + PGM maps")
    p.add_argument("--features", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--labels", help="optional label container; prints pixel accuracy")
    p.add_argument("--ratio-variant", choices=("delta", "printed"), default="delta")
    p.add_argument("--entropy-space", choices=("logit", "prob"), default="logit")
    p.add_argument("--classes", default="", help="comma-separated class indices for std maps")
    p.add_argument("--noise", type=float, default=None, help="override head observation noise")
    p.set_defaults(func=_cmd_infer)

    p = subs.add_parser("validate", help="analytic-vs-Monte-Carlo report")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=200_000)
    p.add_argument("--logit-cases", type=int, default=4)
    p.add_argument("--softmax-cases", type=int, default=4)
    p.add_argument("--out", help="also write CSV here")
    p.set_defaults(func=_cmd_validate)

    p = subs.add_parser("bench", help="latency of point vs bayes forward passes")
    p.add_argument("--mode", choices=bench_mod.MODES, default="bayes")
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--warmup", type=int, default=20)
    p.add_argument("--features", help="stored design matrix container")
    p.add_argument("--head")
    p.add_argument("--grid", default="256x256x32", help="HxWxD synthetic input")
    p.add_argument("--num-classes", type=int, default=19)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratio-variant", choices=("delta", "printed"), default="delta")
    p.add_argument("--entropy-space", choices=("logit", "prob"), default="logit")
    p.add_argument("--threads", type=int, default=0,
                   help="pin the BLAS pool for the pixel path (0 = machine default)")
    p.add_argument("--csv", help="write a CSV report here")
    p.set_defaults(func=_cmd_bench)

    p = subs.add_parser("render", help="render one rank-2 container entry as PGM")
    p.add_argument("--container", required=True)
    p.add_argument("--entry", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lo", type=float, default=None)
    p.add_argument("--hi", type=float, default=None)
    p.set_defaults(func=_cmd_render)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    stage = _Stage()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"error [usage]: {e}", file=sys.stderr)
        return 1
    try:
        return args.func(args, stage)
    except _UsageError as e:
        print(f"error [usage]: {e}", file=sys.stderr)
        return 1
    except (DomainError,) as e:
        print(f"error [{stage.name}]: {e}", file=sys.stderr)
        return 2
    except (ContainerError, ShapeError, ValueError, OSError) as e:
        print(f"error [{stage.name}]: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
