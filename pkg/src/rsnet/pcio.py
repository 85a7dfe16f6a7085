"""Point-cloud data model, RSNPC text I/O and synthetic scene generators."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptySceneError, IoError, ParseError, ValidationError

MAGIC = "RSNPC"
FORMAT_VERSION = 1

ROOM_CLASSES = ("ceiling", "floor", "wall", "table", "chair", "bookcase")
CONTEXT_CLASSES = ("covered", "exposed")

# Base RGB per class; ceiling/wall and table/bookcase overlap on purpose so
# colour alone does not separate them.
_PALETTE = {
    "ceiling": (0.84, 0.83, 0.80),
    "floor": (0.45, 0.40, 0.35),
    "wall": (0.80, 0.78, 0.73),
    "table": (0.56, 0.40, 0.25),
    "chair": (0.32, 0.32, 0.38),
    "bookcase": (0.62, 0.46, 0.30),
}


@dataclass(eq=False)
class LabeledCloud:
    """``n x d_raw`` points (xyz, optionally rgb) with optional per-point labels."""

    points: np.ndarray
    labels: np.ndarray | None = None
    num_classes: int = 0
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise ValidationError(f"points must be a non-empty n x d matrix, got shape {self.points.shape}")
        if self.points.shape[1] not in (3, 6):
            raise ValidationError(f"d_raw must be 3 or 6, got {self.points.shape[1]}")
        if not np.all(np.isfinite(self.points)):
            raise ValidationError("non-finite coordinate or colour value")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.n,):
                raise ValidationError(f"labels shape {self.labels.shape} does not match n={self.n}")
            if self.num_classes <= 0:
                self.num_classes = int(self.labels.max()) + 1
            if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
                raise ValidationError(f"label out of range [0, {self.num_classes})")
        if self.class_names and len(self.class_names) != self.num_classes:
            raise ValidationError("class_names length must equal num_classes")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d_raw(self) -> int:
        return self.points.shape[1]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def equals(self, other: "LabeledCloud", atol: float = 0.0) -> bool:
        if self.points.shape != other.points.shape or self.has_labels != other.has_labels:
            return False
        if self.num_classes != other.num_classes:
            return False
        if not np.allclose(self.points, other.points, rtol=0.0, atol=atol):
            return False
        return not self.has_labels or bool(np.array_equal(self.labels, other.labels))


def write_cloud(cloud: LabeledCloud, path) -> None:
    path = Path(path)
    has_labels = int(cloud.has_labels)
    lines = [f"{MAGIC} {FORMAT_VERSION} {cloud.n} {cloud.d_raw} {has_labels}"]
    if cloud.num_classes:
        lines.append(f"# num_classes {cloud.num_classes}")
    if cloud.class_names:
        lines.append("# classes " + " ".join(cloud.class_names))
    for i, row in enumerate(cloud.points):
        body = " ".join(f"{v:.9g}" for v in row)
        if has_labels:
            body += f" {cloud.labels[i]}"
        lines.append(body)
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _parse_header(text: str, lineno: int) -> tuple[int, int, bool]:
    parts = text.split()
    if len(parts) != 5 or parts[0] != MAGIC:
        raise ParseError(f"expected '{MAGIC} 1 <n> <d_raw> <has_labels>', got {text!r}", lineno)
    if parts[1] != str(FORMAT_VERSION):
        raise ParseError(f"unsupported format version {parts[1]!r}", lineno)
    try:
        n, d_raw, flag = int(parts[2]), int(parts[3]), int(parts[4])
    except ValueError:
        raise ParseError(f"non-integer header field in {text!r}", lineno) from None
    if n < 1 or d_raw not in (3, 6) or flag not in (0, 1):
        raise ParseError(f"invalid header values n={n} d_raw={d_raw} has_labels={flag}", lineno)
    return n, d_raw, bool(flag)


def read_cloud(path, num_classes: int | None = None) -> LabeledCloud:
    """Parse an RSNPC v1 file.

    ``num_classes`` overrides the optional ``# num_classes`` comment; when
    neither is present K is inferred as ``max(label) + 1``.
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8").split("\n")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    header = None
    declared_k = None
    names: tuple[str, ...] = ()
    rows: list[list[float]] = []
    labels: list[int] = []
    for lineno, line in enumerate(raw, start=1):
        text = line.strip()
        if header is None:
            header = _parse_header(text, lineno)
            n, d_raw, has_labels = header
            continue
        if not text:
            continue
        if text.startswith("#"):
            meta = text[1:].split()
            if len(meta) == 2 and meta[0] == "num_classes":
                try:
                    declared_k = int(meta[1])
                except ValueError:
                    raise ParseError(f"bad num_classes comment {text!r}", lineno) from None
            elif meta and meta[0] == "classes":
                names = tuple(meta[1:])
            continue
        fields = text.split()
        width = d_raw + int(has_labels)
        if len(fields) != width:
            raise ParseError(f"expected {width} fields, got {len(fields)}", lineno)
        if len(rows) >= n:
            raise ParseError(f"more than the declared {n} data rows", lineno)
        try:
            rows.append([float(v) for v in fields[:d_raw]])
            if has_labels:
                labels.append(int(fields[d_raw]))
        except ValueError:
            raise ParseError(f"malformed number in {text!r}", lineno) from None
    if header is None:
        raise ParseError("empty file, missing header", 1)
    if len(rows) != n:
        raise ParseError(f"header declares {n} rows but file has {len(rows)}", len(raw))

    k = num_classes if num_classes is not None else declared_k
    points = np.array(rows, dtype=np.float64)
    label_arr = np.array(labels, dtype=np.int64) if has_labels else None
    if label_arr is not None and k is not None and (label_arr.max() >= k or label_arr.min() < 0):
        raise ValidationError(f"label out of range [0, {k})")
    if names and k is not None and len(names) != k:
        names = ()
    return LabeledCloud(points, label_arr, num_classes=k or 0, class_names=names)


# --------------------------------------------------------------------------
# synthetic scenes


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of one synthetic scene; ``seed`` fully determines the output.

    ``mode="room"`` builds a furnished room labelled with ``ROOM_CLASSES``.
    ``mode="context"`` builds the slab-stacking task over a grid of
    ``cell_size`` cells covering ``extent`` x/y, labelled with ``CONTEXT_CLASSES``.
    Cells should match the cube block size so each cube holds one cell.
    """

    extent: tuple[float, float, float] = (5.0, 4.0, 2.6)
    object_counts: Mapping[str, int] = field(
        default_factory=lambda: {"table": 2, "chair": 4, "bookcase": 2}
    )
    surfaces: tuple[str, ...] = ("floor", "ceiling", "wall")
    seed: int = 0
    num_points: int = 20000
    classes: tuple[str, ...] = ROOM_CLASSES
    with_color: bool = True
    noise: float = 0.005
    mode: str = "room"
    cell_size: float = 0.5

    def __post_init__(self):
        if any(s <= 0 for s in self.extent):
            raise ValidationError(f"extent spans must be positive, got {self.extent}")
        if self.num_points < 1:
            raise ValidationError("num_points must be >= 1")
        if self.mode not in ("room", "context"):
            raise ValidationError(f"unknown scene mode {self.mode!r}")


@dataclass
class _Rect:
    origin: np.ndarray
    u: np.ndarray
    v: np.ndarray
    label: int
    color: np.ndarray

    @property
    def area(self) -> float:
        return float(np.linalg.norm(np.cross(self.u, self.v)))


def _rect(origin, u, v, label, color) -> _Rect:
    return _Rect(np.asarray(origin, float), np.asarray(u, float), np.asarray(v, float), label, color)


def _box_faces(lo, hi, label, color, top=True, bottom=False) -> list[_Rect]:
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    dx, dy, dz = x1 - x0, y1 - y0, z1 - z0
    faces = [
        _rect((x0, y0, z0), (dx, 0, 0), (0, 0, dz), label, color),
        _rect((x0, y1, z0), (dx, 0, 0), (0, 0, dz), label, color),
        _rect((x0, y0, z0), (0, dy, 0), (0, 0, dz), label, color),
        _rect((x1, y0, z0), (0, dy, 0), (0, 0, dz), label, color),
    ]
    if top:
        faces.append(_rect((x0, y0, z1), (dx, 0, 0), (0, dy, 0), label, color))
    if bottom:
        faces.append(_rect((x0, y0, z0), (dx, 0, 0), (0, dy, 0), label, color))
    return faces


def _legs(x0, y0, x1, y1, height, label, color, t=0.04) -> list[_Rect]:
    faces = []
    for lx, ly in ((x0, y0), (x1 - t, y0), (x0, y1 - t), (x1 - t, y1 - t)):
        faces += _box_faces((lx, ly, 0.0), (lx + t, ly + t, height), label, color, top=False)
    return faces


def _table(x, y, w, d, rng, label, color) -> list[_Rect]:
    h = rng.uniform(0.70, 0.78)
    top = _box_faces((x, y, h - 0.04), (x + w, y + d, h), label, color, top=True, bottom=True)
    return top + _legs(x, y, x + w, y + d, h - 0.04, label, color)


def _chair(x, y, s, rng, label, color) -> list[_Rect]:
    seat = rng.uniform(0.42, 0.48)
    back = rng.uniform(0.85, 0.95)
    faces = _box_faces((x, y, seat - 0.03), (x + s, y + s, seat), label, color, bottom=True)
    side = rng.integers(4)
    if side == 0:
        lo, hi = (x, y, seat), (x + s, y + 0.04, back)
    elif side == 1:
        lo, hi = (x, y + s - 0.04, seat), (x + s, y + s, back)
    elif side == 2:
        lo, hi = (x, y, seat), (x + 0.04, y + s, back)
    else:
        lo, hi = (x + s - 0.04, y, seat), (x + s, y + s, back)
    faces += _box_faces(lo, hi, label, color)
    return faces + _legs(x, y, x + s, y + s, seat - 0.03, label, color)


def _bookcase(x, y, w, d, rng, label, color) -> list[_Rect]:
    h = rng.uniform(1.7, 2.0)
    faces = _box_faces((x, y, 0.0), (x + w, y + d, h), label, color)
    for k in range(1, 5):
        z = h * k / 5
        faces.append(_rect((x, y, z), (w, 0, 0), (0, d, 0), label, color))
    return faces


def _place(footprints, w, d, xs, ys, rng, tries=200, against_wall=False):
    for _ in range(tries):
        if against_wall:
            side = rng.integers(4)
            if side < 2:
                x = rng.uniform(0.05, xs - w - 0.05)
                y = 0.02 if side == 0 else ys - d - 0.02
            else:
                w, d = d, w
                y = rng.uniform(0.05, ys - d - 0.05)
                x = 0.02 if side == 2 else xs - w - 0.02
        else:
            x = rng.uniform(0.3, max(0.31, xs - w - 0.3))
            y = rng.uniform(0.3, max(0.31, ys - d - 0.3))
        box = (x - 0.1, y - 0.1, x + w + 0.1, y + d + 0.1)
        if all(box[2] <= f[0] or f[2] <= box[0] or box[3] <= f[1] or f[3] <= box[1] for f in footprints):
            footprints.append(box)
            return x, y, w, d
    return None


def _truncated_normal(rng, sigma, size):
    out = rng.normal(0.0, sigma, size)
    bad = np.abs(out) > 3 * sigma
    while bad.any():
        out[bad] = rng.normal(0.0, sigma, int(bad.sum()))
        bad = np.abs(out) > 3 * sigma
    return out


def _sample_rects(rects: Sequence[_Rect], num_points, rng, noise, with_color):
    areas = np.array([r.area for r in rects])
    counts = rng.multinomial(num_points, areas / areas.sum())
    pts, labels, cols = [], [], []
    for rect, m in zip(rects, counts):
        if m == 0:
            continue
        st = rng.random((m, 2))
        pts.append(rect.origin + st[:, :1] * rect.u + st[:, 1:] * rect.v)
        labels.append(np.full(m, rect.label, dtype=np.int64))
        cols.append(np.repeat(rect.color[None], m, axis=0))
    xyz = np.concatenate(pts)
    xyz = xyz + _truncated_normal(rng, noise, xyz.shape)
    lab = np.concatenate(labels)
    if with_color:
        rgb = np.clip(np.concatenate(cols) + rng.normal(0.0, 0.03, xyz.shape), 0.0, 1.0)
        xyz = np.hstack([xyz, rgb])
    return xyz, lab


def _room_rects(spec: SceneSpec, rng) -> list[_Rect]:
    xs, ys, zs = spec.extent
    cls = {name: i for i, name in enumerate(spec.classes)}

    def color(name):
        base = np.array(_PALETTE.get(name, (0.5, 0.5, 0.5)))
        return np.clip(base + rng.normal(0.0, 0.05, 3), 0.0, 1.0)

    rects = []
    if "floor" in spec.surfaces:
        rects.append(_rect((0, 0, 0), (xs, 0, 0), (0, ys, 0), cls["floor"], color("floor")))
    if "ceiling" in spec.surfaces:
        rects.append(_rect((0, 0, zs), (xs, 0, 0), (0, ys, 0), cls["ceiling"], color("ceiling")))
    if "wall" in spec.surfaces:
        c, w = color("wall"), cls["wall"]
        rects += [
            _rect((0, 0, 0), (xs, 0, 0), (0, 0, zs), w, c),
            _rect((0, ys, 0), (xs, 0, 0), (0, 0, zs), w, c),
            _rect((0, 0, 0), (0, ys, 0), (0, 0, zs), w, c),
            _rect((xs, 0, 0), (0, ys, 0), (0, 0, zs), w, c),
        ]

    footprints: list = []
    for name in ("bookcase", "table", "chair"):
        for _ in range(int(spec.object_counts.get(name, 0))):
            if name == "bookcase":
                slot = _place(footprints, rng.uniform(0.8, 1.2), rng.uniform(0.30, 0.40), xs, ys, rng, against_wall=True)
                if slot:
                    rects += _bookcase(*slot, rng, cls[name], color(name))
            elif name == "table":
                slot = _place(footprints, rng.uniform(0.9, 1.5), rng.uniform(0.6, 0.9), xs, ys, rng)
                if slot:
                    rects += _table(*slot, rng, cls[name], color(name))
            else:
                s = rng.uniform(0.42, 0.50)
                slot = _place(footprints, s, s, xs, ys, rng)
                if slot:
                    rects += _chair(slot[0], slot[1], s, rng, cls[name], color(name))
    return rects


def _context_rects(spec: SceneSpec, rng) -> list[_Rect]:
    # One square base slab per cell, in a random quadrant. Exactly half of the
    # cells (rounded down) also get a smaller slab 0.3-0.7 m higher in the
    # diagonally opposite quadrant, so no x-, y- or z-slice holds both. Base
    # slabs under a cover are "covered" (0); every other slab is "exposed" (1).
    cs = spec.cell_size
    gx = max(1, int(round(spec.extent[0] / cs)))
    gy = max(1, int(round(spec.extent[1] / cs)))
    covered_cells = rng.permutation(gx * gy) < (gx * gy) // 2
    grey = np.array([0.5, 0.5, 0.5])
    base_side, top_side, margin = 0.34 * cs, 0.12 * cs, 0.08 * cs
    rects = []
    for i in range(gx):
        for j in range(gy):
            # cell (0, 0) pins the scene minimum so the cube grid tracks cells
            q = 0 if (i == 0 and j == 0) else int(rng.integers(4))
            qx, qy = q & 1, q >> 1
            covered = bool(covered_cells[i * gy + j])
            z = rng.uniform(0.0, 1.0)
            x0 = (i + 0.5 * qx) * cs + margin
            y0 = (j + 0.5 * qy) * cs + margin
            rects.append(_rect((x0, y0, z), (base_side, 0, 0), (0, base_side, 0), 0 if covered else 1, grey))
            if covered:
                tz = z + rng.uniform(0.3, 0.7)
                tx = (i + 0.5 * (1 - qx) + 0.25) * cs - top_side / 2
                ty = (j + 0.5 * (1 - qy) + 0.25) * cs - top_side / 2
                rects.append(_rect((tx, ty, tz), (top_side, 0, 0), (0, top_side, 0), 1, grey))
    return rects


def generate_scene(spec: SceneSpec) -> LabeledCloud:
    """Deterministically sample a labelled synthetic scene from ``spec``."""
    rng = np.random.default_rng(spec.seed)
    if spec.mode == "context":
        rects = _context_rects(spec, rng)
        xyz, lab = _sample_rects(rects, spec.num_points, rng, spec.noise, with_color=False)
        return LabeledCloud(xyz, lab, num_classes=len(CONTEXT_CLASSES), class_names=CONTEXT_CLASSES)

    if not spec.surfaces and not any(spec.object_counts.values()):
        raise EmptySceneError("scene has no surfaces and no objects")
    unknown = set(spec.surfaces) - set(spec.classes)
    unknown |= {k for k, v in spec.object_counts.items() if v} - set(spec.classes)
    if unknown:
        raise ValidationError(f"categories not in class vocabulary: {sorted(unknown)}")
    rects = _room_rects(spec, rng)
    if not rects:
        raise EmptySceneError("no primitive could be placed in the room")
    xyz, lab = _sample_rects(rects, spec.num_points, rng, spec.noise, spec.with_color)
    return LabeledCloud(xyz, lab, num_classes=len(spec.classes), class_names=tuple(spec.classes))


def scene_series(count: int, seed: int, **overrides) -> list[LabeledCloud]:
    """``count`` scenes with per-scene seeds derived from ``seed``.

    Room extents vary per scene unless ``extent`` is given explicitly.
    """
    scenes = []
    ss = np.random.SeedSequence(seed)
    for child in ss.spawn(count):
        rng = np.random.default_rng(child)
        kwargs = dict(overrides)
        if "extent" not in kwargs and kwargs.get("mode", "room") == "room":
            kwargs["extent"] = (
                round(float(rng.uniform(4.0, 6.0)), 2),
                round(float(rng.uniform(3.5, 5.0)), 2),
                round(float(rng.uniform(2.4, 2.8)), 2),
            )
        kwargs["seed"] = int(rng.integers(2**31))
        scenes.append(generate_scene(SceneSpec(**kwargs)))
    return scenes


def class_histogram(cloud: LabeledCloud) -> np.ndarray:
    return np.bincount(cloud.labels, minlength=cloud.num_classes)
