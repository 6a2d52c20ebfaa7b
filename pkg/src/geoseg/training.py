"""Multi-stage loss, segmentation metrics, the training loop and evaluation."""
from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .boundary import cbl_loss_with_stats, mine_boundaries
from .network import NUM_STAGES, GeoSegNet, NetworkConfig, NetworkOutput, StageState, build_stages
from .pointcloud import LabeledCloud, column_indices
from .spatial import NeighborTable

log = logging.getLogger(__name__)

LOG_COLUMNS = (["epoch", "L_final"] + [f"L_pred_{i}" for i in range(1, NUM_STAGES + 1)]
               + ["L_CBL", "total", "OA", "mIoU", "mACC", "boundary_mIoU"])


class DivergenceError(RuntimeError):
    def __init__(self, msg: str, checkpoint: Path | None = None):
        super().__init__(msg)
        self.checkpoint = checkpoint


class ClassCountError(ValueError):
    pass


# ---------------------------------------------------------------------- loss


@dataclass
class StageTargets:
    labels: np.ndarray
    boundary: np.ndarray | None = None
    positions: np.ndarray | None = None
    neighbors: NeighborTable | None = None


def stage_targets(stages: Sequence[StageState]) -> list[StageTargets]:
    return [StageTargets(s.labels, s.boundary, s.positions, s.cbl_table) for s in stages]


@dataclass
class LossReport:
    final: float
    preds: tuple[float, ...]
    cbl: float
    total: float
    boundary_points: int = 0
    cbl_skipped: int = 0

    def row(self) -> dict[str, float]:
        out = {"L_final": self.final}
        out.update({f"L_pred_{i + 1}": v for i, v in enumerate(self.preds)})
        out.update({"L_CBL": self.cbl, "total": self.total})
        return out


def multi_stage_loss(out: NetworkOutput, final_labels, targets: Sequence[StageTargets],
                     lambda1: float = 0.1, lambda2: float = 0.2, tau: float = 1.0,
                     k: int = 16) -> tuple[ad.Value, LossReport]:
    """``L_final + lambda1 * sum_n L_pred^n + lambda2 * sum_n L_CBL^n``.

    CBL terms are taken on each stage's decoder features; stages without
    a neighbor table get one from their positions with ``k`` neighbors.
    """
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("loss weights must be nonnegative")
    if len(targets) != len(out.stage_logits):
        raise ValueError(f"{len(out.stage_logits)} stage outputs but {len(targets)} targets")
    l_final = ad.cross_entropy(out.final_logits, final_labels)
    l_preds = [ad.cross_entropy(z, t.labels) for z, t in zip(out.stage_logits, targets)]
    l_cbl = []
    n_boundary = n_skipped = 0
    for feats, t in zip(out.decoder_features, targets):
        if t.boundary is None or not t.boundary.any() or len(t.labels) < 2:
            continue
        kk = min(k, len(t.labels) - 1)
        term, stats = cbl_loss_with_stats(feats, t.positions, t.labels, t.boundary, kk, tau, t.neighbors)
        n_boundary += stats.boundary
        n_skipped += stats.skipped
        if stats.used:
            l_cbl.append(term)
    pred_sum = l_preds[0]
    for term in l_preds[1:]:
        pred_sum = pred_sum + term
    cbl_sum = ad.constant(np.zeros((), dtype=l_final.dtype))
    for term in l_cbl:
        cbl_sum = cbl_sum + term
    total = l_final + pred_sum * lambda1 + cbl_sum * lambda2
    report = LossReport(l_final.item(), tuple(p.item() for p in l_preds), cbl_sum.item(), total.item(),
                        n_boundary, n_skipped)
    return total, report


# ------------------------------------------------------------------- metrics


@dataclass
class Metrics:
    confusion: np.ndarray  # rows: ground truth, columns: prediction
    oa: float
    miou: float
    macc: float
    iou: np.ndarray
    acc: np.ndarray
    boundary: "Metrics | None" = None

    def row(self) -> dict[str, float]:
        return {"OA": self.oa, "mIoU": self.miou, "mACC": self.macc,
                "boundary_mIoU": self.boundary.miou if self.boundary is not None else float("nan")}


def confusion_matrix(gt, pred, num_classes: int) -> np.ndarray:
    gt = np.asarray(gt, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if gt.shape != pred.shape:
        raise ValueError("gt and pred differ in length")
    return np.bincount(gt * num_classes + pred, minlength=num_classes**2).reshape(num_classes, num_classes)


def metrics_from_confusion(conf, exclude_absent: bool = True) -> Metrics:
    """OA, per-class IoU/accuracy and their means.

    With ``exclude_absent`` classes missing from both ground truth and
    prediction are left out of mIoU; otherwise they count as IoU 0. mACC
    always averages over classes present in the ground truth.
    """
    conf = np.asarray(conf, dtype=np.int64)
    tp = np.diag(conf).astype(np.float64)
    gt_count = conf.sum(axis=1)
    pred_count = conf.sum(axis=0)
    union = gt_count + pred_count - tp
    total = conf.sum()
    oa = float(tp.sum() / total) if total else float("nan")
    iou = np.divide(tp, union, out=np.zeros_like(tp), where=union > 0)
    acc = np.divide(tp, gt_count, out=np.zeros_like(tp), where=gt_count > 0)
    present = union > 0 if exclude_absent else np.ones_like(tp, dtype=bool)
    miou = float(iou[present].mean()) if present.any() else float("nan")
    macc = float(acc[gt_count > 0].mean()) if (gt_count > 0).any() else float("nan")
    return Metrics(conf, oa, miou, macc, iou, acc)


def segmentation_metrics(gt, pred, num_classes: int, boundary_mask=None, exclude_absent: bool = True) -> Metrics:
    m = metrics_from_confusion(confusion_matrix(gt, pred, num_classes), exclude_absent)
    if boundary_mask is not None:
        b = np.asarray(boundary_mask, dtype=bool)
        m.boundary = metrics_from_confusion(
            confusion_matrix(np.asarray(gt)[b], np.asarray(pred)[b], num_classes), exclude_absent)
    return m


# ------------------------------------------------------------------ training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 2
    steps_per_epoch: int = 0  # 0: ceil(len(dataset) / batch_size)
    points: int = 1024
    section: float = 2.0
    lr: float = 1e-3
    lr_decay: float = 1.0  # multiplicative per epoch
    rotate: bool = True
    scale: bool = False
    scale_range: tuple[float, float] = (0.9, 1.1)
    jitter: float = 0.005
    color_drop: float = 0.0  # probability of zeroing an item's colors
    seed: int = 0
    threads: int = 0  # 0: GEOSEG_THREADS or 1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.points < 1 or self.steps_per_epoch < 0:
            raise ValueError("bad training sizes")


def worker_threads(cfg: TrainConfig) -> int:
    if cfg.threads:
        return cfg.threads
    return max(1, int(os.environ.get("GEOSEG_THREADS", "1")))


def center_xy(positions: np.ndarray, center_xy_=None) -> np.ndarray:
    pos = np.array(positions, dtype=np.float64)
    c = pos[:, :2].mean(axis=0) if center_xy_ is None else np.asarray(center_xy_)
    pos[:, :2] -= c
    return pos


def augment(cloud: LabeledCloud, tcfg: TrainConfig, rng: np.random.Generator) -> LabeledCloud:
    """z-rotation, then scaling, then jitter; colors optionally dropped."""
    pos = cloud.positions
    if tcfg.rotate:
        a = rng.uniform(0.0, 2.0 * np.pi)
        c, s = np.cos(a), np.sin(a)
        pos = pos @ np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    if tcfg.scale:
        pos = pos * rng.uniform(*tcfg.scale_range)
    if tcfg.jitter:
        pos = pos + rng.normal(0.0, tcfg.jitter, pos.shape)
    colors = cloud.colors
    if tcfg.color_drop and rng.random() < tcfg.color_drop:
        colors = np.zeros_like(colors)
    return LabeledCloud(pos, colors, cloud.labels, cloud.num_classes)


def training_item(scene: LabeledCloud, tcfg: TrainConfig, rng: np.random.Generator) -> LabeledCloud:
    idx, _ = column_indices(scene, tcfg.points, tcfg.section, seed=int(rng.integers(2**31)))
    col = scene.subset(idx)
    return augment(col.with_positions(center_xy(col.positions)), tcfg, rng)


def prepare_eval(scene: LabeledCloud) -> LabeledCloud:
    return scene.with_positions(center_xy(scene.positions))


@dataclass
class TrainResult:
    net: GeoSegNet
    log: list[dict] = field(default_factory=list)
    reports: list[LossReport] = field(default_factory=list)


def _write_log(path, rows: list[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})


def train(dataset: Sequence[LabeledCloud], cfg: NetworkConfig, tcfg: TrainConfig = TrainConfig(),
          heldout: Sequence[LabeledCloud] | None = None, log_path=None, checkpoint_path=None) -> TrainResult:
    """Train a fresh network; deterministic given ``cfg.seed`` and ``tcfg.seed``.

    After every epoch the mean loss report and metrics on ``heldout`` (when
    given) are appended to the log. A non-finite loss restores the last
    good parameters, writes them to ``checkpoint_path`` and raises
    :class:`DivergenceError`.
    """
    if not dataset:
        raise ValueError("empty dataset")
    for scene in dataset:
        if scene.num_classes != cfg.num_classes:
            raise ClassCountError(f"scene has {scene.num_classes} classes, config {cfg.num_classes}")
    net = GeoSegNet(cfg)
    params = net.parameters()
    opt = ad.Adam(params, lr=tcfg.lr)
    rng = np.random.default_rng(tcfg.seed)
    steps = tcfg.steps_per_epoch or -(-len(dataset) // tcfg.batch_size)
    threads = worker_threads(tcfg)
    result = TrainResult(net)
    good_state = {k: v.copy() for k, v in net.state_dict().items()}
    pool = ThreadPoolExecutor(threads) if threads > 1 else None

    def stages_for(item_seed):
        r = np.random.default_rng(item_seed)
        scene = dataset[int(r.integers(len(dataset)))]
        return build_stages(training_item(scene, tcfg, r), cfg, seed=int(r.integers(2**31)))

    try:
        for epoch in range(tcfg.epochs):
            opt.lr = tcfg.lr * tcfg.lr_decay**epoch
            net.train()
            epoch_reports = []
            for _ in range(steps):
                seeds = [int(s) for s in rng.integers(2**31, size=tcfg.batch_size)]
                batch = list(pool.map(stages_for, seeds)) if pool else [stages_for(s) for s in seeds]
                ad.zero_grad(params)
                for stages in batch:
                    out = net.forward(stages)
                    total, rep = multi_stage_loss(out, stages[0].labels, stage_targets(stages),
                                                  cfg.lambda1, cfg.lambda2, cfg.tau, cfg.k1)
                    if not np.isfinite(rep.total):
                        net.load_state_dict(good_state)
                        ckpt = None
                        if checkpoint_path is not None:
                            ckpt = Path(checkpoint_path)
                            save_model(ckpt, net)
                        raise DivergenceError(f"non-finite loss at epoch {epoch}", ckpt)
                    (total * (1.0 / len(batch))).backward()
                    epoch_reports.append(rep)
                    result.reports.append(rep)
                opt.step()
                good_state = {k: v.copy() for k, v in net.state_dict().items()}
            row = {"epoch": epoch}
            mean = {k: float(np.mean([r.row()[k] for r in epoch_reports])) for k in epoch_reports[0].row()}
            row.update(mean)
            if heldout:
                row.update(evaluate(net, heldout).row())
            else:
                row.update({k: float("nan") for k in ("OA", "mIoU", "mACC", "boundary_mIoU")})
            result.log.append(row)
            log.info("epoch %d total %.4f", epoch, row["total"])
            if log_path is not None:
                _write_log(log_path, result.log)
    finally:
        if pool:
            pool.shutdown()
    if checkpoint_path is not None:
        save_model(checkpoint_path, net)
    return result


def predict(net: GeoSegNet, cloud: LabeledCloud, seed=None) -> np.ndarray:
    net.eval()
    stages = build_stages(prepare_eval(cloud), net.cfg, seed, with_labels=False)
    out = net.forward(stages)
    return np.argmax(out.final_logits.data, axis=1)


def evaluate(net: GeoSegNet, dataset: Sequence[LabeledCloud], exclude_absent: bool = True, seed=None) -> Metrics:
    """Confusion over every point of every scene; boundary metrics on ground-truth boundary points."""
    c = net.cfg.num_classes
    conf = np.zeros((c, c), dtype=np.int64)
    bconf = np.zeros((c, c), dtype=np.int64)
    was_training = net.training
    try:
        for scene in dataset:
            if scene.num_classes != c:
                raise ClassCountError(f"scene has {scene.num_classes} classes, checkpoint {c}")
            pred = predict(net, scene, seed)
            bmask = mine_boundaries(scene.positions, scene.labels, net.cfg.boundary_radius)
            conf += confusion_matrix(scene.labels, pred, c)
            bconf += confusion_matrix(scene.labels[bmask], pred[bmask], c)
    finally:
        net.train(was_training)
    m = metrics_from_confusion(conf, exclude_absent)
    m.boundary = metrics_from_confusion(bconf, exclude_absent)
    return m


# ---------------------------------------------------------------- checkpoint


def save_model(path, net: GeoSegNet) -> None:
    ad.save_checkpoint(path, net.state_dict(), {"network": net.cfg.to_dict()})


def load_model(path) -> GeoSegNet:
    tensors, config = ad.load_checkpoint(path)
    d = dict(config.get("network", {}))
    for key in ("downsample", "widths"):
        if key in d:
            d[key] = tuple(d[key])
    net = GeoSegNet(NetworkConfig.from_dict(d))
    net.load_state_dict(tensors)
    return net
