"""Command-line entry point: ``geoseg <subcommand> [flags]``.

Failures print one line ``error: code=<n> kind=<name> msg=<text>`` on
stderr and exit with the code below.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .boundary import mine_boundaries
from .experiment import (
    ABLATIONS,
    ExperimentConfig,
    desk_experiment,
    format_experiment,
    load_datasets,
    load_experiment,
    with_ablation,
    with_seed,
)
from .geomfeat import (
    color_features,
    eigenspace_knn,
    gcfr_features,
    local_covariance_eigenvalues,
    local_density,
)
from .pointcloud import CloudFormatError, load_cloud, load_scene_spec, generate_scene, save_cloud, save_labels
from .spatial import build_index, knn
from .textconfig import ConfigError
from .training import ClassCountError, DivergenceError, evaluate, load_model, predict, train

log = logging.getLogger("geoseg")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_CONFIG = 4
EXIT_CLASSES = 5
EXIT_PARSE = 6
EXIT_DIVERGED = 7
EXIT_GRADCHECK = 8
EXIT_INTERNAL = 1

METRIC_COLUMNS = ["name", "lambda1", "lambda2", "OA", "mIoU", "mACC", "boundary_mIoU", "boundary_OA"]


class CliError(Exception):
    def __init__(self, code: int, kind: str, msg: str):
        super().__init__(msg)
        self.code, self.kind = code, kind


def _need(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(EXIT_MISSING, "missing_file", f"no such file: {p}")
    return p


def _experiment(args) -> ExperimentConfig:
    cfg = desk_experiment()
    if getattr(args, "config", None):
        cfg = load_experiment(_need(args.config), base=cfg)
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    net = {}
    for flag, key in (("k1", "k1"), ("k2", "k2"), ("lambda1", "lambda1"), ("lambda2", "lambda2"), ("tau", "tau")):
        v = getattr(args, flag, None)
        if v is not None and not isinstance(v, list):
            net[key] = v
    tr = {}
    if getattr(args, "epochs", None) is not None:
        tr["epochs"] = args.epochs
    if getattr(args, "batch", None) is not None:
        tr["batch_size"] = args.batch
    try:
        return replace(cfg, network=replace(cfg.network, **net), train=replace(cfg.train, **tr))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _write_table(rows: list[dict], columns: list[str], out) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    if out:
        Path(out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def _metric_row(name: str, cfg: ExperimentConfig, m) -> dict:
    return {"name": name, "lambda1": cfg.network.lambda1, "lambda2": cfg.network.lambda2, "OA": m.oa,
            "mIoU": m.miou, "mACC": m.macc, "boundary_mIoU": m.boundary.miou, "boundary_OA": m.boundary.oa}


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    spec = load_scene_spec(_need(args.spec))
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    cloud = generate_scene(spec)
    save_cloud(cloud, args.out)
    log.info("wrote %d points to %s", len(cloud), args.out)
    return EXIT_OK


def cmd_boundary(args) -> int:
    cloud = load_cloud(_need(args.inp))
    mask = mine_boundaries(cloud.positions, cloud.labels, args.radius)
    out = args.out or str(Path(args.inp).with_suffix(".boundary.txt"))
    save_labels(cloud, mask.astype(np.int64), out, header="x y z r g b label boundary")
    log.info("%d of %d points on a boundary", int(mask.sum()), len(cloud))
    return EXIT_OK


def cmd_features(args) -> int:
    """Writes ``<out>_eigen.csv``, ``_gcfr.csv``, ``_density.csv`` and ``_color.csv``."""
    cloud = load_cloud(_need(args.inp))
    n = len(cloud)
    k = min(args.k1 or 16, n)
    table = knn(build_index(cloud.positions), cloud.positions, k)
    eig = local_covariance_eigenvalues(cloud.positions, table)
    ke = min(args.k_eigen, n)
    full = table.concat(eigenspace_knn(eig, ke))
    gc = gcfr_features(cloud.positions, full)
    dens = local_density(cloud.positions, table)
    col = color_features(cloud.colors, full)
    stem = Path(args.out or Path(args.inp).with_suffix(""))
    stem.parent.mkdir(parents=True, exist_ok=True)
    fmt = "%.9g"

    def dump(suffix, header, data):
        np.savetxt(f"{stem}_{suffix}.csv", data, fmt=fmt, delimiter=",", header=header, comments="")

    idx = np.arange(n)
    dump("eigen", "point,lambda1,lambda2,lambda3", np.column_stack([idx, eig]))
    kk = full.k
    rows = np.column_stack([np.repeat(idx, kk), full.indices.reshape(-1), gc.dis.reshape(-1),
                            gc.rel_phi.reshape(-1), gc.rel_theta.reshape(-1)])
    dump("gcfr", "point,neighbor,dis,rel_phi,rel_theta", rows)
    dump("density", "point,ratio,degenerate", np.column_stack([idx, dens.ratio, dens.degenerate]))
    dump("color", "point,var_r,var_g,var_b", np.column_stack([idx, col.variance]))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _experiment(args)
    train_set, held = load_datasets(cfg)
    ckpt = args.checkpoint or cfg.output.checkpoint or "geoseg.ckpt"
    log_path = args.out or cfg.output.log or None
    result = train(train_set, cfg.network, cfg.train, heldout=held or None, log_path=log_path, checkpoint_path=ckpt)
    last = result.log[-1]
    print(f"epochs={len(result.log)} total={last['total']:.6f} checkpoint={ckpt}")
    return EXIT_OK


def cmd_eval(args) -> int:
    path = _need(args.checkpoint)
    try:
        net = load_model(path)
    except (ValueError, KeyError, OSError) as exc:
        raise CliError(EXIT_PARSE, "parse_error", f"{path}: not a readable checkpoint ({exc})") from None
    c = net.cfg.num_classes
    clouds = []
    for path in args.inp:
        cloud = load_cloud(_need(path))
        if cloud.num_classes > c:
            raise ClassCountError(f"{path}: label {cloud.num_classes - 1} but checkpoint has {c} classes")
        clouds.append(type(cloud)(cloud.positions, cloud.colors, cloud.labels, c))
    m = evaluate(net, clouds, exclude_absent=not args.zero_absent, seed=args.seed)
    if args.predictions:
        for path, cloud in zip(args.inp, clouds):
            save_labels(cloud, predict(net, cloud, args.seed), Path(path).with_suffix(".pred.txt"))
    cfg = desk_experiment()
    cfg = replace(cfg, network=net.cfg)
    _write_table([_metric_row("eval", cfg, m)], METRIC_COLUMNS, args.out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(seed=args.seed or 0)
    worst = 0.0
    for name, err in results:
        print(f"{name:<28s} max_rel_err={err:.3e}")
        worst = max(worst, err)
    ok = worst < 1e-3
    print(f"{'PASS' if ok else 'FAIL'} worst={worst:.3e} threshold=1e-3")
    return EXIT_OK if ok else EXIT_GRADCHECK


def _grid(values, default):
    return values if values else [default]


def cmd_sweep(args) -> int:
    base = _experiment(args)
    rows = []
    runs: list[tuple[str, ExperimentConfig]] = []
    for name in args.ablations or []:
        runs.append((name, with_ablation(base, name)))
    if args.lambda1 or args.lambda2 or not runs:
        for l1 in _grid(args.lambda1, base.network.lambda1):
            for l2 in _grid(args.lambda2, base.network.lambda2):
                cfg = replace(base, network=replace(base.network, lambda1=l1, lambda2=l2))
                runs.append((f"lambda1={l1:g},lambda2={l2:g}", cfg))
    for name, cfg in runs:
        train_set, held = load_datasets(cfg)
        result = train(train_set, cfg.network, cfg.train)
        m = evaluate(result.net, held or train_set)
        rows.append(_metric_row(name, cfg, m))
        log.info("%s: mIoU %.4f boundary mIoU %.4f", name, m.miou, m.boundary.miou)
    _write_table(rows, METRIC_COLUMNS, args.out)
    return EXIT_OK


def cmd_config(args) -> int:
    sys.stdout.write(format_experiment(_experiment(args)))
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="geoseg", description="Desk-scale point-cloud segmentation with boundary-aware training.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        sp.add_argument("--seed", type=int, default=None)
        if config:
            sp.add_argument("--config", help="experiment file ([data] [network] [train] [output])")

    def overrides(sp, lists=False):
        sp.add_argument("--k1", type=int)
        sp.add_argument("--k2", type=int)
        lam = _float_list if lists else float
        sp.add_argument("--lambda1", type=lam)
        sp.add_argument("--lambda2", type=lam)
        sp.add_argument("--tau", type=float)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--batch", type=int)

    sp = sub.add_parser("gen", help="scene spec -> point file")
    common(sp, config=False)
    sp.add_argument("--spec", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("features", help="point file -> eigen/gcfr/density/color CSVs")
    common(sp, config=False)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", help="output path prefix")
    sp.add_argument("--k1", type=int, default=16)
    sp.add_argument("--k-eigen", type=int, default=16)
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("boundary", help="point file -> point file with a boundary column")
    common(sp, config=False)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out")
    sp.add_argument("--radius", type=float, default=0.1)
    sp.set_defaults(func=cmd_boundary)

    sp = sub.add_parser("train", help="experiment config -> checkpoint and epoch log")
    common(sp)
    overrides(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--out", help="epoch log CSV")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="checkpoint + point files -> metrics table")
    common(sp, config=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--in", dest="inp", nargs="+", required=True)
    sp.add_argument("--out")
    sp.add_argument("--zero-absent", action="store_true", help="score absent classes as IoU 0")
    sp.add_argument("--predictions", action="store_true", help="also write <file>.pred.txt")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every op and the network")
    common(sp, config=False)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("sweep", help="loss-weight grid and block ablations -> metrics table")
    common(sp)
    overrides(sp, lists=True)
    sp.add_argument("--ablations", type=_names, help=f"comma list from: {', '.join(ABLATIONS)}")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("config", help="print the resolved experiment config")
    common(sp)
    overrides(sp)
    sp.set_defaults(func=cmd_config)
    return p


def _fail(code: int, kind: str, msg: str) -> int:
    msg = " ".join(str(msg).split())
    print(f"error: code={code} kind={kind} msg={msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except CliError as exc:
        return _fail(exc.code, exc.kind, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        return _fail(exc.code, exc.kind, exc)
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING, "missing_file", exc)
    except ClassCountError as exc:
        return _fail(EXIT_CLASSES, "class_mismatch", exc)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "bad_config", exc)
    except CloudFormatError as exc:
        return _fail(EXIT_PARSE, "parse_error", exc)
    except DivergenceError as exc:
        return _fail(EXIT_DIVERGED, "diverged", f"{exc} checkpoint={exc.checkpoint}")
    except ValueError as exc:
        return _fail(EXIT_CONFIG, "bad_value", exc)
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        return _fail(EXIT_INTERNAL, "internal", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
