"""Heightfield terrain: bilinear queries, egocentric scans, penetration
tests, and procedural generators for the obstacle families used by the
dataset, fine-tuning, and evaluation stages.

Grid convention: heights[row, col] with col along +x and row along +y;
node (row, col) sits at world (origin_x + col*cell, origin_y + row*cell).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidSpecError, ValidationError

CELL_SIZE_DEFAULT = 0.05
SUPERSAMPLE = 4  # per-axis samples per cell when rasterizing analytic obstacles

# declared parameter bounds per obstacle family (height m, etc.)
BOUNDS = {
    "box_height": (0.05, 0.90),
    "pyramid_height": (0.05, 0.90),
    "hurdle_height": (0.10, 0.60),
    "stair_height": (0.08, 0.30),
    "stair_width": (0.20, 0.60),
    "yaw": (-0.8, 0.8),
    "pitch": (-0.3, 0.3),
    "scatter_density": (0.0, 1.0),
    "scatter_height": (0.03, 0.20),
}


def _check_bound(name: str, value: float) -> None:
    lo, hi = BOUNDS[name]
    if not lo <= value <= hi:
        raise InvalidSpecError(f"{name}={value:.3g} outside allowed range [{lo:g}, {hi:g}]")


@dataclass(frozen=True)
class HeightField:
    origin: np.ndarray        # (2,) world xy of node (0, 0), m
    cell_size: float
    heights: np.ndarray       # (ny, nx), m

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValidationError("cell_size must be positive")
        if self.heights.ndim != 2 or self.heights.size == 0:
            raise ValidationError("heights must be a non-empty 2-d grid")
        if not np.all(np.isfinite(self.heights)):
            raise ValidationError("heights must be finite")
        self.heights.flags.writeable = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.heights.shape

    def extent(self) -> tuple[float, float, float, float]:
        ny, nx = self.heights.shape
        return (self.origin[0], self.origin[1],
                self.origin[0] + (nx - 1) * self.cell_size,
                self.origin[1] + (ny - 1) * self.cell_size)


def flat_field(value: float = 0.0, size_xy: tuple[float, float] = (12.0, 6.0),
               origin: tuple[float, float] = (-2.0, -3.0),
               cell_size: float = CELL_SIZE_DEFAULT) -> HeightField:
    nx = int(round(size_xy[0] / cell_size)) + 1
    ny = int(round(size_xy[1] / cell_size)) + 1
    return HeightField(np.asarray(origin, dtype=np.float64), cell_size,
                       np.full((ny, nx), float(value)))


def height_at(field: HeightField, xy: np.ndarray) -> np.ndarray:
    """Bilinear height at world xy (…, 2); clamps to the nearest edge outside."""
    xy = np.asarray(xy, dtype=np.float64)
    ny, nx = field.heights.shape
    gx = np.clip((xy[..., 0] - field.origin[0]) / field.cell_size, 0.0, nx - 1.0)
    gy = np.clip((xy[..., 1] - field.origin[1]) / field.cell_size, 0.0, ny - 1.0)
    ix = np.minimum(gx.astype(np.int64), nx - 2) if nx > 1 else np.zeros_like(gx, dtype=np.int64)
    iy = np.minimum(gy.astype(np.int64), ny - 2) if ny > 1 else np.zeros_like(gy, dtype=np.int64)
    fx = gx - ix
    fy = gy - iy
    h = field.heights
    ix1 = np.minimum(ix + 1, nx - 1)
    iy1 = np.minimum(iy + 1, ny - 1)
    h00 = h[iy, ix]
    h10 = h[iy, ix1]
    h01 = h[iy1, ix]
    h11 = h[iy1, ix1]
    return (h00 * (1 - fx) * (1 - fy) + h10 * fx * (1 - fy)
            + h01 * (1 - fx) * fy + h11 * fx * fy)


def penetration(field: HeightField, points: np.ndarray) -> np.ndarray:
    """Depth of world points (…, 3) below the surface; 0 when above."""
    points = np.asarray(points, dtype=np.float64)
    return np.maximum(height_at(field, points[..., :2]) - points[..., 2], 0.0)


# ---- scans -----------------------------------------------------------------------


@dataclass(frozen=True)
class ScanPattern:
    rows: int = 11            # along the base's forward axis
    cols: int = 11            # lateral
    spacing: float = 0.1
    forward_center: float = 0.3

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.spacing <= 0:
            raise ValidationError("scan pattern needs rows, cols >= 1 and positive spacing")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    @property
    def forward_extent(self) -> float:
        return (self.rows - 1) * self.spacing

    @property
    def lateral_extent(self) -> float:
        return (self.cols - 1) * self.spacing

    def local_points(self) -> np.ndarray:
        """Scan points in the base yaw frame, (rows*cols, 2), row-major
        front-to-back then left-to-right."""
        fwd = self.forward_center + self.forward_extent / 2.0 - np.arange(self.rows) * self.spacing
        lat = self.lateral_extent / 2.0 - np.arange(self.cols) * self.spacing
        fd, lt = np.meshgrid(fwd, lat, indexing="ij")
        return np.stack([fd.reshape(-1), lt.reshape(-1)], axis=-1)


def sample_scan(field: HeightField, base_pos: np.ndarray, base_yaw: float | np.ndarray,
                pattern: ScanPattern) -> np.ndarray:
    """Terrain heights relative to base height on a yaw-aligned grid.

    base_pos may be (3,) or (N, 3) with base_yaw scalar or (N,); returns
    (rows*cols,) or (N, rows*cols).
    """
    base_pos = np.asarray(base_pos, dtype=np.float64)
    base_yaw = np.asarray(base_yaw, dtype=np.float64)
    local = pattern.local_points()  # (S, 2)
    c, s = np.cos(base_yaw), np.sin(base_yaw)
    wx = base_pos[..., :1] + c[..., None] * local[:, 0] - s[..., None] * local[:, 1]
    wy = base_pos[..., 1:2] + s[..., None] * local[:, 0] + c[..., None] * local[:, 1]
    h = height_at(field, np.stack([wx, wy], axis=-1))
    return h - base_pos[..., 2:3]


# ---- specs and generators ---------------------------------------------------------


@dataclass(frozen=True)
class TerrainSpec:
    """One obstacle family with its parameters.

    kind: flat | box | hurdle | stairs | pyramid | mixed | scatter
    Obstacles sit on flat ground and begin at x = start_x, centered in y;
    `mixed` lays its parts along +x separated by `gap`.
    """
    kind: str
    height: float = 0.0          # box/hurdle/pyramid height; stairs step height
    width: float = 0.0           # box depth / hurdle thickness / stairs step width (along travel)
    yaw: float = 0.0
    pitch: float = 0.0
    steps: int = 0               # stairs step count; pyramid levels
    direction: int = 1           # stairs: +1 ascending, -1 descending
    density: float = 0.0         # scatter: boxes per square meter
    start_x: float = 2.0
    parts: tuple["TerrainSpec", ...] = ()
    gap: float = 1.5
    size_xy: tuple[float, float] = (12.0, 6.0)
    origin: tuple[float, float] = (-2.0, -3.0)
    cell_size: float = CELL_SIZE_DEFAULT

    def validate(self) -> None:
        k = self.kind
        if k == "flat":
            return
        if k == "box":
            _check_bound("box_height", self.height)
            _check_bound("yaw", self.yaw)
            _check_bound("pitch", self.pitch)
        elif k == "hurdle":
            _check_bound("hurdle_height", self.height)
            _check_bound("yaw", self.yaw)
        elif k == "stairs":
            _check_bound("stair_height", self.height)
            _check_bound("stair_width", self.width)
            if self.steps < 1:
                raise InvalidSpecError("stairs need steps >= 1")
            if self.direction not in (1, -1):
                raise InvalidSpecError("stairs direction must be +1 or -1")
        elif k == "pyramid":
            _check_bound("pyramid_height", self.height)
            if self.steps < 1:
                raise InvalidSpecError("pyramid needs steps >= 1")
        elif k == "scatter":
            _check_bound("scatter_density", self.density)
        elif k == "mixed":
            if not self.parts:
                raise InvalidSpecError("mixed terrain needs at least one part")
            for p in self.parts:
                p.validate()
        else:
            raise InvalidSpecError(f"unknown terrain kind {k!r}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        for key in ("height", "width", "yaw", "pitch", "steps", "direction",
                    "density", "start_x", "gap"):
            v = getattr(self, key)
            if v not in (0.0, 0, ()) or key in ("height", "start_x"):
                d[key] = v
        d["direction"] = self.direction
        if self.parts:
            d["parts"] = [p.to_dict() for p in self.parts]
        d["size_xy"] = list(self.size_xy)
        d["origin"] = list(self.origin)
        d["cell_size"] = self.cell_size
        return d

    @staticmethod
    def from_dict(d: dict) -> "TerrainSpec":
        d = dict(d)
        parts = tuple(TerrainSpec.from_dict(p) for p in d.pop("parts", []))
        for key in ("size_xy", "origin"):
            if key in d:
                d[key] = tuple(d[key])
        return TerrainSpec(parts=parts, **d)


def _surface_box(spec: TerrainSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    depth = spec.width if spec.width > 0 else 1.5
    half_wide = 1.4  # lateral half extent of climbing platforms
    cx = spec.start_x + depth / 2.0
    c, s = np.cos(spec.yaw), np.sin(spec.yaw)
    xr = c * (x - cx) + s * y
    yr = -s * (x - cx) + c * y
    inside = (np.abs(xr) <= depth / 2.0) & (np.abs(yr) <= half_wide)
    top = spec.height - np.tan(spec.pitch) * xr
    return np.where(inside, np.clip(top, 0.0, None), 0.0)


def _surface_hurdle(spec: TerrainSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    thick = spec.width if spec.width > 0 else 0.2
    cx = spec.start_x + thick / 2.0
    c, s = np.cos(spec.yaw), np.sin(spec.yaw)
    xr = c * (x - cx) + s * y
    yr = -s * (x - cx) + c * y
    inside = (np.abs(xr) <= thick / 2.0) & (np.abs(yr) <= 1.4)
    return np.where(inside, spec.height, 0.0)


def _surface_stairs(spec: TerrainSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    n, sh, sw = spec.steps, spec.height, spec.width
    rel = x - spec.start_x
    k = np.clip(np.floor(rel / sw) + 1.0, 0.0, n)
    if spec.direction > 0:
        return k * sh  # ascending flight, plateau beyond stays at the top
    return (n - k) * sh  # descending: elevated before start_x, stepping down


def _surface_pyramid(spec: TerrainSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    levels = spec.steps
    level_h = spec.height / levels
    base_half = 0.4 + 0.35 * levels  # footprint shrinks toward the top
    cx = spec.start_x + base_half
    d = np.maximum(np.abs(x - cx), np.abs(y))
    k = np.clip(np.ceil((base_half - d) / 0.35), 0.0, levels)
    return k * level_h


def generate(spec: TerrainSpec, rng: np.random.Generator | None = None) -> HeightField:
    """Rasterize a spec to a heightfield (deterministic given spec and rng seed)."""
    spec.validate()
    if rng is None:
        rng = np.random.default_rng(0)
    nx = int(round(spec.size_xy[0] / spec.cell_size)) + 1
    ny = int(round(spec.size_xy[1] / spec.cell_size)) + 1
    ox, oy = spec.origin
    # supersample each cell and keep the max so thin obstacles never alias away
    ss = SUPERSAMPLE
    sub = (np.arange(ss) - (ss - 1) / 2.0) / ss * spec.cell_size
    xs = ox + np.arange(nx) * spec.cell_size
    ys = oy + np.arange(ny) * spec.cell_size
    xg = (xs[:, None] + sub[None, :]).reshape(-1)     # (nx*ss,)
    yg = (ys[:, None] + sub[None, :]).reshape(-1)     # (ny*ss,)
    xm, ym = np.meshgrid(xg, yg, indexing="xy")       # (ny*ss, nx*ss)

    def rasterize(surface) -> np.ndarray:
        z = surface(xm, ym)
        z = z.reshape(ny, ss, nx, ss)
        return z.max(axis=(1, 3))

    if spec.kind == "flat":
        heights = np.zeros((ny, nx))
    elif spec.kind == "box":
        heights = rasterize(lambda x, y: _surface_box(spec, x, y))
    elif spec.kind == "hurdle":
        heights = rasterize(lambda x, y: _surface_hurdle(spec, x, y))
    elif spec.kind == "stairs":
        heights = rasterize(lambda x, y: _surface_stairs(spec, x, y))
    elif spec.kind == "pyramid":
        heights = rasterize(lambda x, y: _surface_pyramid(spec, x, y))
    elif spec.kind == "scatter":
        base = flat_field(0.0, spec.size_xy, spec.origin, spec.cell_size)
        boxes = scatter_boxes(spec, rng)
        return with_small_boxes(base, boxes)
    elif spec.kind == "mixed":
        heights = np.zeros((ny, nx))
        cursor = spec.start_x
        for part in spec.parts:
            shifted = replace(part, start_x=cursor, size_xy=spec.size_xy,
                              origin=spec.origin, cell_size=spec.cell_size)
            sub_field = generate(shifted, rng)
            heights = np.maximum(heights, sub_field.heights)
            cursor += _part_span(shifted) + spec.gap
    else:  # pragma: no cover - validate() already rejects
        raise InvalidSpecError(f"unknown terrain kind {spec.kind!r}")
    return HeightField(np.array([ox, oy]), spec.cell_size, heights)


def _part_span(spec: TerrainSpec) -> float:
    if spec.kind == "box":
        return spec.width if spec.width > 0 else 1.5
    if spec.kind == "hurdle":
        return spec.width if spec.width > 0 else 0.2
    if spec.kind == "stairs":
        return spec.steps * spec.width + 1.0  # include a stretch of plateau
    if spec.kind == "pyramid":
        return 2.0 * (0.4 + 0.35 * spec.steps)
    return 1.0


def scatter_boxes(spec: TerrainSpec, rng: np.random.Generator,
                  path_y: float = 0.0) -> list[tuple[float, float, float, float]]:
    """Random small boxes (x, y, side, height) along the +x travel corridor."""
    lo, hi = BOUNDS["scatter_height"]
    x0, x1 = spec.start_x, spec.origin[0] + spec.size_xy[0] - 1.0
    area = (x1 - x0) * 2.0
    count = rng.poisson(spec.density * area)
    boxes = []
    for _ in range(count):
        x = rng.uniform(x0, x1)
        y = path_y + rng.uniform(-1.0, 1.0)
        side = rng.uniform(0.2, 0.45)
        h = rng.uniform(max(lo, 0.05), min(hi, 0.15))
        boxes.append((float(x), float(y), float(side), float(h)))
    return boxes


def with_small_boxes(field: HeightField,
                     boxes: list[tuple[float, float, float, float]]) -> HeightField:
    """New field with axis-aligned small boxes (x, y, side, height) added."""
    heights = field.heights.copy()
    ny, nx = heights.shape
    for (bx, by, side, h) in boxes:
        c0 = int(np.floor((bx - side / 2 - field.origin[0]) / field.cell_size))
        c1 = int(np.ceil((bx + side / 2 - field.origin[0]) / field.cell_size))
        r0 = int(np.floor((by - side / 2 - field.origin[1]) / field.cell_size))
        r1 = int(np.ceil((by + side / 2 - field.origin[1]) / field.cell_size))
        c0, c1 = max(c0, 0), min(c1 + 1, nx)
        r0, r1 = max(r0, 0), min(r1 + 1, ny)
        if c0 < c1 and r0 < r1:
            heights[r0:r1, c0:c1] = np.maximum(heights[r0:r1, c0:c1], h)
    return HeightField(field.origin.copy(), field.cell_size, heights)


def scale_obstacle(spec: TerrainSpec, new_height: float) -> TerrainSpec:
    """Same obstacle with its (step) height replaced."""
    return replace(spec, height=new_height)


# ---- heightfield files -------------------------------------------------------------
#
# Header line: JSON {cols, rows, cell_size, origin_x, origin_y, encoding};
# payload is row-major heights, little-endian float64 or decimal text rows.


def save_heightfield(path, field: HeightField, text: bool = False) -> None:
    ny, nx = field.heights.shape
    header = {"cols": nx, "rows": ny, "cell_size": field.cell_size,
              "origin_x": float(field.origin[0]), "origin_y": float(field.origin[1]),
              "encoding": "text" if text else "binary"}
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        if text:
            for row in field.heights:
                f.write(" ".join(repr(float(v)) for v in row).encode() + b"\n")
        else:
            f.write(field.heights.astype("<f8").tobytes())


def load_heightfield(path) -> HeightField:
    with open(path, "rb") as f:
        header = json.loads(f.readline())
        ny, nx = header["rows"], header["cols"]
        if header["encoding"] == "text":
            rows = [np.array([float(v) for v in f.readline().split()]) for _ in range(ny)]
            heights = np.stack(rows)
        else:
            heights = np.frombuffer(f.read(ny * nx * 8), dtype="<f8").reshape(ny, nx).copy()
    return HeightField(np.array([header["origin_x"], header["origin_y"]]),
                       header["cell_size"], heights)
