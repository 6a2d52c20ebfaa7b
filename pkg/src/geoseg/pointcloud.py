"""Labeled point clouds: ASCII I/O, synthetic box scenes, column sampling."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .textconfig import ConfigError, parse_blocks, to_bool, to_floats, to_ints


class CloudFormatError(ValueError):
    """Malformed point file."""


@dataclass(frozen=True, eq=False)
class LabeledCloud:
    positions: np.ndarray  # (N, 3) float64, meters
    colors: np.ndarray  # (N, 3) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64 in [0, num_classes)
    num_classes: int

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        col = np.ascontiguousarray(self.colors, dtype=np.float64)
        lab = np.ascontiguousarray(self.labels, dtype=np.int64)
        n = pos.shape[0]
        if n < 1:
            raise ValueError("a cloud needs at least one point")
        if pos.shape != (n, 3) or col.shape != (n, 3) or lab.shape != (n,):
            raise ValueError(
                f"shape mismatch: positions {pos.shape}, colors {col.shape}, labels {lab.shape}"
            )
        if lab.min() < 0 or lab.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if col.min() < 0.0 or col.max() > 1.0:
            raise ValueError("colors must lie in [0, 1]")
        for a in (pos, col, lab):
            a.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)
        object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def subset(self, indices) -> "LabeledCloud":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledCloud(
            self.positions[indices], self.colors[indices], self.labels[indices], self.num_classes
        )

    def with_positions(self, positions) -> "LabeledCloud":
        return LabeledCloud(positions, self.colors, self.labels, self.num_classes)


# --------------------------------------------------------------------------- I/O


def load_cloud(path, num_classes: int | None = None) -> LabeledCloud:
    """Read ``x y z r g b label [extra...]`` lines; ``#`` starts a comment.

    Colors are divided by 255 when any channel in the file exceeds 1.
    Extra trailing columns (e.g. a prediction column written by
    :func:`save_labels`) are ignored.
    """
    path = Path(path)
    rows = []
    labels = []
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) < 7:
                raise CloudFormatError(f"{path}:{lineno}: expected 7 columns, got {len(parts)}")
            try:
                rows.append([float(v) for v in parts[:6]])
                lab = float(parts[6])
            except ValueError as exc:
                raise CloudFormatError(f"{path}:{lineno}: {exc}") from None
            if lab != int(lab) or lab < 0:
                raise CloudFormatError(f"{path}:{lineno}: label must be a nonnegative integer")
            labels.append(int(lab))
    if not rows:
        raise CloudFormatError(f"{path}: no points")
    data = np.asarray(rows, dtype=np.float64)
    if not np.isfinite(data).all():
        raise CloudFormatError(f"{path}: non-finite value")
    colors = data[:, 3:6]
    if colors.max() > 1.0:
        colors = colors / 255.0
    labels = np.asarray(labels, dtype=np.int64)
    c = int(labels.max()) + 1 if num_classes is None else num_classes
    try:
        return LabeledCloud(data[:, :3], colors, labels, c)
    except ValueError as exc:
        raise CloudFormatError(f"{path}: {exc}") from None


def _write_rows(path, columns: list[np.ndarray], header: str | None) -> None:
    fmt = ["%.9g"] * 6 + ["%d"] * (len(columns) - 2)
    table = np.column_stack(columns)
    with Path(path).open("w") as fh:
        if header:
            fh.write(f"# {header}\n")
        np.savetxt(fh, table, fmt=fmt)


def save_cloud(cloud: LabeledCloud, path) -> None:
    _write_rows(path, [cloud.positions, cloud.colors, cloud.labels], "x y z r g b label")


def save_labels(cloud: LabeledCloud, predicted, path, header: str = "x y z r g b gt pred") -> None:
    predicted = np.asarray(predicted)
    if predicted.shape != (len(cloud),):
        raise ValueError(f"predicted has shape {predicted.shape}, expected ({len(cloud)},)")
    _write_rows(path, [cloud.positions, cloud.colors, cloud.labels, predicted], header)


# ------------------------------------------------------------------ scene synth


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    label: int
    color: tuple[float, float, float] = (0.8, 0.3, 0.2)


@dataclass(frozen=True)
class SceneSpec:
    """Axis-aligned room with box objects.

    ``wall_class < 0`` disables walls. Later boxes win label overlaps.
    """

    extent: tuple[float, float, float] = (4.0, 4.0, 2.5)
    objects: tuple[Box, ...] = ()
    density: float = 100.0  # points per square meter
    color_noise: float = 0.02
    jitter: float = 0.0
    seed: int = 0
    floor_class: int = 0
    floor_color: tuple[float, float, float] = (0.55, 0.55, 0.5)
    wall_class: int = -1
    wall_color: tuple[float, float, float] = (0.85, 0.85, 0.8)
    num_classes: int | None = None

    def __post_init__(self):
        if min(self.extent) <= 0:
            raise ValueError("room extents must be positive")
        if self.density <= 0:
            raise ValueError("density must be positive")
        if self.color_noise < 0 or self.jitter < 0:
            raise ValueError("noise levels must be nonnegative")
        c = self.classes
        ids = [self.floor_class] + [b.label for b in self.objects]
        if self.wall_class >= 0:
            ids.append(self.wall_class)
        if min(ids) < 0 or max(ids) >= c:
            raise ValueError(f"class ids must lie in [0, {c})")
        for b in self.objects:
            if any(h <= l for l, h in zip(b.lo, b.hi)):
                raise ValueError(f"degenerate box {b}")

    @property
    def classes(self) -> int:
        if self.num_classes is not None:
            return self.num_classes
        ids = [self.floor_class, self.wall_class] + [b.label for b in self.objects]
        return max(ids) + 1


def _sample_rect(rng, origin, u, v, density):
    """Uniform points on the parallelogram origin + s*u + t*v."""
    area = float(np.linalg.norm(np.cross(u, v)))
    n = int(round(area * density))
    st = rng.random((n, 2))
    return origin + st[:, :1] * u + st[:, 1:] * v


def _box_faces(lo, hi):
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    d = hi - lo
    ex, ey, ez = np.diag(d)
    return [
        (lo, ex, ey),
        (lo + ez, ex, ey),
        (lo, ex, ez),
        (lo + ey, ex, ez),
        (lo, ey, ez),
        (lo + ex, ey, ez),
    ]


def generate_scene(spec: SceneSpec) -> LabeledCloud:
    """Sample floor, optional walls and box faces; pure function of ``spec``.

    Floor and wall points covered by a box are occluded and dropped, as is
    the bottom face of a box resting on the floor. Box surface points that
    fall inside (or on) a later box take that box's label.
    """
    rng = np.random.default_rng(spec.seed)
    lx, ly, lz = spec.extent
    parts: list[tuple[np.ndarray, int, tuple]] = []
    o = np.zeros(3)
    parts.append((_sample_rect(rng, o, np.array([lx, 0, 0.0]), np.array([0, ly, 0.0]), spec.density),
                  spec.floor_class, spec.floor_color))
    if spec.wall_class >= 0:
        up = np.array([0, 0, lz])
        walls = [
            (o, np.array([lx, 0, 0.0])),
            (np.array([0, ly, 0.0]), np.array([lx, 0, 0.0])),
            (o, np.array([0, ly, 0.0])),
            (np.array([lx, 0, 0.0]), np.array([0, ly, 0.0])),
        ]
        for origin, u in walls:
            parts.append((_sample_rect(rng, origin, u, up, spec.density), spec.wall_class, spec.wall_color))
    for box in spec.objects:
        faces = _box_faces(box.lo, box.hi)
        if box.lo[2] <= 0.0:
            faces = faces[1:]  # bottom rests on the floor and is never seen
        pts = [_sample_rect(rng, *face, spec.density) for face in faces]
        parts.append((np.concatenate(pts), box.label, box.color))

    positions = np.concatenate([p for p, _, _ in parts])
    labels = np.concatenate([np.full(len(p), lab) for p, lab, _ in parts]).astype(np.int64)
    base = np.concatenate([np.tile(np.asarray(c, float), (len(p), 1)) for p, _, c in parts])
    owner = np.concatenate([np.full(len(p), i) for i, (p, _, _) in enumerate(parts)])

    first_box_part = len(parts) - len(spec.objects)
    eps = 1e-9
    occluded = np.zeros(len(positions), dtype=bool)
    for j, box in enumerate(spec.objects):
        inside = np.all((positions >= np.asarray(box.lo) - eps) & (positions <= np.asarray(box.hi) + eps), axis=1)
        occluded |= inside & (owner < first_box_part)
        inside &= (owner >= first_box_part) & (owner < first_box_part + j)
        labels[inside] = box.label
        base[inside] = box.color
    keep = ~occluded
    positions, labels, base = positions[keep], labels[keep], base[keep]

    colors = np.clip(base + rng.normal(0.0, spec.color_noise, base.shape), 0.0, 1.0) if spec.color_noise else base
    if spec.jitter:
        positions = positions + rng.normal(0.0, spec.jitter, positions.shape)
    if len(positions) == 0:
        raise ValueError("scene produced no points; raise density")
    return LabeledCloud(positions, colors, labels, spec.classes)


def random_box_scene(
    seed: int,
    extent=(3.0, 3.0, 2.0),
    n_boxes: int = 3,
    density: float = 120.0,
    box_class: int = 1,
    color_noise: float = 0.03,
) -> SceneSpec:
    """Floor (class 0) plus ``n_boxes`` random boxes of ``box_class``."""
    rng = np.random.default_rng(seed)
    lx, ly, _ = extent
    boxes = []
    for _ in range(n_boxes):
        size = rng.uniform([0.3, 0.3, 0.25], [0.9, 0.9, 0.8])
        x0 = rng.uniform(0.0, lx - size[0])
        y0 = rng.uniform(0.0, ly - size[1])
        col = tuple(float(c) for c in rng.uniform(0.2, 0.9, 3))
        lo = (float(x0), float(y0), 0.0)
        hi = (float(x0 + size[0]), float(y0 + size[1]), float(size[2]))
        boxes.append(Box(lo, hi, box_class, col))
    return SceneSpec(extent=tuple(extent), objects=tuple(boxes), density=density,
                     color_noise=color_noise, seed=seed, num_classes=max(2, box_class + 1))


_SCENE_KEYS = {"extent", "density", "color_noise", "jitter", "seed", "floor_class", "floor_color",
               "wall_class", "wall_color", "num_classes"}
_BOX_KEYS = {"class", "min", "max", "color"}


def parse_scene_spec(text: str, source: str = "<string>") -> SceneSpec:
    blocks = parse_blocks(text, source)
    kw: dict = {}
    boxes = []
    for name, entries in blocks:
        if name == "":
            unknown = set(entries) - _SCENE_KEYS
            if unknown:
                raise ConfigError(f"{source}: unknown scene key(s) {sorted(unknown)}")
            for key, value in entries.items():
                if key in ("extent", "floor_color", "wall_color"):
                    kw[key] = to_floats(value, 3, key)
                elif key in ("density", "color_noise", "jitter"):
                    kw[key] = to_floats(value, 1, key)[0]
                elif key in ("seed", "floor_class", "wall_class", "num_classes"):
                    (kw[key],) = to_ints(value, key)
        elif name == "object":
            unknown = set(entries) - _BOX_KEYS
            missing = {"class", "min", "max"} - set(entries)
            if unknown or missing:
                raise ConfigError(f"{source}: [object] unknown {sorted(unknown)} missing {sorted(missing)}")
            box_kw = dict(
                lo=to_floats(entries["min"], 3, "min"),
                hi=to_floats(entries["max"], 3, "max"),
                label=to_ints(entries["class"], "class")[0],
            )
            if "color" in entries:
                box_kw["color"] = to_floats(entries["color"], 3, "color")
            boxes.append(Box(**box_kw))
        else:
            raise ConfigError(f"{source}: unknown section [{name}]")
    try:
        return SceneSpec(objects=tuple(boxes), **kw)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_scene_spec(path) -> SceneSpec:
    path = Path(path)
    return parse_scene_spec(path.read_text(), str(path))


def format_scene_spec(spec: SceneSpec) -> str:
    def vec(v):
        return " ".join(f"{x:g}" for x in v)

    lines = [
        f"extent = {vec(spec.extent)}",
        f"density = {spec.density:g}",
        f"color_noise = {spec.color_noise:g}",
        f"jitter = {spec.jitter:g}",
        f"seed = {spec.seed}",
        f"floor_class = {spec.floor_class}",
        f"floor_color = {vec(spec.floor_color)}",
        f"wall_class = {spec.wall_class}",
        f"wall_color = {vec(spec.wall_color)}",
        f"num_classes = {spec.classes}",
    ]
    for b in spec.objects:
        lines += ["", "[object]", f"class = {b.label}", f"min = {vec(b.lo)}", f"max = {vec(b.hi)}",
                  f"color = {vec(b.color)}"]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------- column sampler


def column_indices(cloud: LabeledCloud, n: int, section: float = 2.0, seed=None) -> tuple[np.ndarray, bool]:
    """Indices of an ``n``-point sample from a vertical column.

    The column is the ``section`` x ``section`` square (in xy) around a random
    point, shifted to lie inside the cloud's xy bounding box where the box is
    wide enough and centered on it where it is not. Returns ``(indices, with_replacement)``; when the column holds
    fewer than ``n`` points every one of them is kept and the remainder is
    drawn with replacement.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(cloud) == 0:
        raise ValueError("empty cloud")
    rng = np.random.default_rng(seed)
    center = cloud.positions[rng.integers(len(cloud)), :2]
    half = section / 2.0
    lo, hi = cloud.positions[:, :2].min(axis=0), cloud.positions[:, :2].max(axis=0)
    center = np.where(hi - lo <= section, (lo + hi) / 2.0, np.clip(center, lo + half, hi - half))
    d = np.abs(cloud.positions[:, :2] - center)
    avail = np.flatnonzero((d[:, 0] <= half) & (d[:, 1] <= half))
    if len(avail) >= n:
        return np.sort(rng.choice(avail, size=n, replace=False)), False
    extra = rng.choice(avail, size=n - len(avail), replace=True)
    return np.sort(np.concatenate([avail, extra])), True


def sample_column(cloud: LabeledCloud, n: int, section: float = 2.0, seed=None) -> LabeledCloud:
    idx, _ = column_indices(cloud, n, section, seed)
    return cloud.subset(idx)
