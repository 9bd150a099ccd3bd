"""Planar kitting: one asymmetric tool, one kit plate with a conformal cavity.

World coordinates follow the raster convention of :mod:`histoport.fields`:
pixel ``(r, c)`` sits at ``x = c - (W - 1) / 2``, ``y = (H - 1) / 2 - r``.
A pose ``(x, y, theta)`` maps a model-frame point ``q`` to ``R(theta) q + (x, y)``;
shape models are centered on their area centroid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .policy import Action

BACKGROUND, PLATE, CAVITY, TOOL = 0.0, 0.2, 0.0, 0.4
STATES = ("on_table", "kitted", "misplaced")


class GenerationError(RuntimeError):
    pass


@dataclass
class KittingConfig:
    h: int = 64
    w: int = 64
    clearance: float = 1.0
    n: int = 36
    cells: tuple[int, int] = (4, 8)
    diameter: tuple[float, float] = (10.0, 14.0)
    crop: int = 25
    channels: int = 1
    supersample: int = 4
    iou_bound: float = 0.85
    # asymmetry is judged on a fixed C_36 grid: finer grids contain near-identity turns
    asym_n: int = 36
    plate_margin: float = 2.0
    attempts: int = 1000

    def validate(self) -> None:
        if self.diameter[1] > self.crop - 4:
            raise ValueError(f"tools up to {self.diameter[1]} px do not fit a {self.crop} px crop")
        if not 1 <= self.channels <= 4:
            raise ValueError("channels must be in 1..4")
        if self.n < 2 or self.n % 2:
            raise ValueError("N must be even")


# -- polygon geometry --

def rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def polygon_area_centroid(poly: np.ndarray) -> tuple[float, np.ndarray]:
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = cross.sum() / 2
    cx = ((x + xn) * cross).sum() / (6 * area)
    cy = ((y + yn) * cross).sum() / (6 * area)
    return float(area), np.array([cx, cy])


def points_in_polygon(poly: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Even-odd rule for ``(..., 2)`` points."""
    x, y = pts[..., 0], pts[..., 1]
    inside = np.zeros(x.shape, dtype=bool)
    for (x1, y1), (x2, y2) in zip(poly, np.roll(poly, -1, axis=0)):
        if y1 == y2:
            continue
        crosses = (y1 > y) != (y2 > y)
        xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xint)
    return inside


def distance_to_polygon(poly: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Euclidean distance from points to the polygon boundary."""
    best = np.full(pts.shape[:-1], np.inf)
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        ab = b - a
        t = np.clip(((pts - a) @ ab) / (ab @ ab), 0.0, 1.0)
        d = np.linalg.norm(pts - (a + t[..., None] * ab), axis=-1)
        np.minimum(best, d, out=best)
    return best


def _trace_outline(cells: set[tuple[int, int]]) -> np.ndarray | None:
    """Counter-clockwise outline of a union of unit squares; ``None`` unless it is one simple loop."""
    nxt: dict[tuple[int, int], tuple[int, int]] = {}
    for i, j in cells:
        # square [i, i+1] x [j, j+1]; edges listed counter-clockwise
        sides = [((i, j), (i + 1, j), (i, j - 1)), ((i + 1, j), (i + 1, j + 1), (i + 1, j)),
                 ((i + 1, j + 1), (i, j + 1), (i, j + 1)), ((i, j + 1), (i, j), (i - 1, j))]
        for a, b, nb in sides:
            if nb in cells:
                continue
            if a in nxt:
                return None  # pinch vertex
            nxt[a] = b
    start = min(nxt)
    loop, v = [start], nxt[start]
    while v != start:
        loop.append(v)
        v = nxt[v]
    if len(loop) != len(nxt):
        return None  # holes or several components
    pts = np.array(loop, dtype=np.float64)
    prev, post = np.roll(pts, 1, axis=0), np.roll(pts, -1, axis=0)
    turn = (pts[:, 0] - prev[:, 0]) * (post[:, 1] - pts[:, 1]) - (pts[:, 1] - prev[:, 1]) * (post[:, 0] - pts[:, 0])
    return pts[turn != 0]


def _grow_polyomino(rng, count: int) -> set[tuple[int, int]]:
    cells = {(0, 0)}
    while len(cells) < count:
        i, j = sorted(cells)[rng.integers(len(cells))]
        di, dj = ((1, 0), (-1, 0), (0, 1), (0, -1))[rng.integers(4)]
        cells.add((i + di, j + dj))
    return cells


def _remove_corner(rng, cells: set[tuple[int, int]]) -> set[tuple[int, int]]:
    """Halve the grid and drop one quarter-cell sitting on a convex corner."""
    fine = {(2 * i + a, 2 * j + b) for i, j in cells for a in (0, 1) for b in (0, 1)}
    corners = [
        c for c in sorted(fine)
        if sum(((c[0] + di, c[1]) not in fine) for di in (-1, 1)) == 1
        and sum(((c[0], c[1] + dj) not in fine) for dj in (-1, 1)) == 1
    ]
    fine.discard(corners[rng.integers(len(corners))])
    return fine


def diameter(poly: np.ndarray) -> float:
    d = poly[:, None, :] - poly[None, :, :]
    return float(np.sqrt((d ** 2).sum(-1)).max())


def _supersample_grid(extent: float, ss: int) -> np.ndarray:
    n = int(math.ceil(2 * extent)) + 2
    ax = (np.arange(n * ss) + 0.5) / ss - n / 2
    xx, yy = np.meshgrid(ax, ax)
    return np.stack([xx, yy], axis=-1)


def rotation_iou(poly: np.ndarray, theta: float, ss: int = 4) -> float:
    """Silhouette IoU between a centered polygon and its rotation by ``theta``."""
    pts = _supersample_grid(np.abs(poly).max() + 1, ss)
    a = points_in_polygon(poly, pts)
    b = points_in_polygon(poly @ rot(theta).T, pts)
    return float((a & b).sum() / (a | b).sum())


def max_rotation_iou(poly: np.ndarray, n: int, ss: int = 4) -> float:
    pts = _supersample_grid(np.abs(poly).max() + 1, ss)
    a = points_in_polygon(poly, pts)
    best = 0.0
    for i in range(1, n):
        b = points_in_polygon(poly @ rot(2 * math.pi * i / n).T, pts)
        best = max(best, (a & b).sum() / (a | b).sum())
    return float(best)


@dataclass(frozen=True)
class ShapeSpec:
    """Tool polygon in its model frame (area centroid at the origin), in pixels."""

    vertices: np.ndarray = field(compare=False)

    @property
    def diameter(self) -> float:
        return diameter(self.vertices)

    @property
    def radius(self) -> float:
        return float(np.linalg.norm(self.vertices, axis=1).max())

    def world(self, pose) -> np.ndarray:
        x, y, th = pose
        return self.vertices @ rot(th).T + np.array([x, y])

    def samples(self, ss: int = 4) -> np.ndarray:
        """Model-frame containment samples: interior grid points plus every vertex."""
        pts = _supersample_grid(self.radius + 1, ss).reshape(-1, 2)
        return np.concatenate([pts[points_in_polygon(self.vertices, pts)], self.vertices])


def random_shape(rng, cfg: KittingConfig) -> ShapeSpec:
    for _ in range(cfg.attempts):
        cells = _grow_polyomino(rng, int(rng.integers(cfg.cells[0], cfg.cells[1] + 1)))
        outline = _trace_outline(_remove_corner(rng, cells))
        if outline is None:
            continue
        _, cen = polygon_area_centroid(outline)
        poly = outline - cen
        poly *= rng.uniform(*cfg.diameter) / diameter(poly)
        if max_rotation_iou(poly, cfg.asym_n, cfg.supersample) <= cfg.iou_bound:
            return ShapeSpec(poly)
    raise GenerationError(f"no asymmetric shape after {cfg.attempts} attempts")


@dataclass(frozen=True)
class Scene:
    shape: ShapeSpec
    tool: tuple[float, float, float]
    kit: tuple[float, float, float]
    plate_half: float
    clearance: float = 1.0
    h: int = 64
    w: int = 64
    state: str = "on_table"
    seed: int | None = None

    def plate_polygon(self) -> np.ndarray:
        s = self.plate_half
        sq = np.array([[-s, -s], [s, -s], [s, s], [-s, s]])
        x, y, th = self.kit
        return sq @ rot(th).T + np.array([x, y])

    def pixel_to_world(self, u, v) -> np.ndarray:
        return np.array([v - (self.w - 1) / 2, (self.h - 1) / 2 - u], dtype=np.float64)

    def world_to_pixel(self, p) -> tuple[int, int]:
        return int(round((self.h - 1) / 2 - p[1])), int(round(p[0] + (self.w - 1) / 2))

    def rotated_quarter(self, k: int = 1) -> Scene:
        """The same scene with all poses turned by ``k`` quarter turns about the workspace center."""
        r = rot(k * math.pi / 2)
        move = lambda p: tuple(r @ np.array(p[:2])) + ((p[2] + k * math.pi / 2) % (2 * math.pi),)  # noqa: E731
        return replace(self, tool=move(self.tool), kit=move(self.kit))


def _inside_workspace(pts: np.ndarray, h: int, w: int, margin: float = 1.0) -> bool:
    return bool((np.abs(pts[:, 0]) <= w / 2 - margin).all() and (np.abs(pts[:, 1]) <= h / 2 - margin).all())


def generate_episode(seed: int, cfg: KittingConfig | None = None) -> Scene:
    cfg = cfg or KittingConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    shape = random_shape(rng, cfg)
    half = shape.radius + cfg.clearance + cfg.plate_margin
    for _ in range(cfg.attempts):
        tool = (rng.uniform(-cfg.w / 2, cfg.w / 2), rng.uniform(-cfg.h / 2, cfg.h / 2), rng.uniform(0, 2 * math.pi))
        kit = (rng.uniform(-cfg.w / 2, cfg.w / 2), rng.uniform(-cfg.h / 2, cfg.h / 2), rng.uniform(0, 2 * math.pi))
        scene = Scene(shape, tool, kit, half, cfg.clearance, cfg.h, cfg.w, seed=seed)
        if not _inside_workspace(shape.world(tool), cfg.h, cfg.w):
            continue
        if not _inside_workspace(scene.plate_polygon(), cfg.h, cfg.w):
            continue
        if _overlaps(scene, cfg.supersample):
            continue
        return scene
    raise GenerationError(f"no collision-free placement after {cfg.attempts} attempts")


def _overlaps(scene: Scene, ss: int, gap: float = 1.0) -> bool:
    # tool samples (vertices included) closer than ``gap`` to the plate count as contact
    pts = scene.shape.samples(ss) @ rot(scene.tool[2]).T + np.array(scene.tool[:2])
    plate = scene.plate_polygon()
    return bool((points_in_polygon(plate, pts) | (distance_to_polygon(plate, pts) < gap)).any())


# -- rendering --

def _pixel_samples(h: int, w: int, ss: int) -> np.ndarray:
    off = (np.arange(ss) + 0.5) / ss - 0.5
    xs = (np.arange(w)[:, None] + off[None]).reshape(-1) - (w - 1) / 2
    ys = (h - 1) / 2 - (np.arange(h)[:, None] + off[None]).reshape(-1)
    xx, yy = np.meshgrid(xs, ys)
    return np.stack([xx, yy], axis=-1)


def _box_down(mask: np.ndarray, ss: int) -> np.ndarray:
    h, w = mask.shape[0] // ss, mask.shape[1] // ss
    return mask.reshape(h, ss, w, ss).mean(axis=(1, 3))


def cavity_mask(scene: Scene, pts: np.ndarray) -> np.ndarray:
    """Points within ``clearance`` of the tool silhouette placed at the kit pose."""
    poly = scene.shape.world(scene.kit)
    return points_in_polygon(poly, pts) | (distance_to_polygon(poly, pts) <= scene.clearance)


def render_layers(scene: Scene | None, h: int = 64, w: int = 64, ss: int = 4) -> dict[str, np.ndarray]:
    """Supersampled tool, plate and cavity occupancy, box-downsampled to pixels."""
    if scene is None:
        z = np.zeros((h, w))
        return {"height": z, "tool": z, "plate": z, "cavity": z}
    h, w = scene.h, scene.w
    pts = _pixel_samples(h, w, ss)
    tool = points_in_polygon(scene.shape.world(scene.tool), pts)
    plate = points_in_polygon(scene.plate_polygon(), pts)
    cav = plate & cavity_mask(scene, pts)
    height = np.where(tool, TOOL, np.where(plate & ~cav, PLATE, BACKGROUND))
    return {
        "height": _box_down(height, ss),
        "tool": _box_down(tool.astype(float), ss),
        "plate": _box_down((plate & ~cav).astype(float), ss),
        "cavity": _box_down(cav.astype(float), ss),
    }


def render_observation(scene: Scene | None, channels: int = 1, ss: int = 4, h: int = 64, w: int = 64) -> np.ndarray:
    """``channels x H x W`` heightmap; extra channels carry per-part occupancy."""
    layers = render_layers(scene, h, w, ss)
    order = ["height", "tool", "plate", "cavity"][:channels]
    return np.stack([layers[k] for k in order])


# -- oracle and dynamics --

def _on_tool(scene: Scene, u: int, v: int) -> bool:
    p = scene.pixel_to_world(u, v)
    return bool(points_in_polygon(scene.shape.world(scene.tool), p[None])[0])


def oracle_actions(scene: Scene, n: int = 36) -> tuple[Action, Action]:
    if scene.state != "on_table":
        raise ValueError(f"oracle needs the tool on the table, state is {scene.state!r}")
    step = 2 * math.pi / n
    x, y, th = scene.tool
    u, v = scene.world_to_pixel((x, y))
    if not (0 <= u < scene.h and 0 <= v < scene.w and _on_tool(scene, u, v)):
        rr, cc = np.mgrid[:scene.h, :scene.w]
        centers = np.stack([cc - (scene.w - 1) / 2, (scene.h - 1) / 2 - rr], axis=-1)
        inside = points_in_polygon(scene.shape.world(scene.tool), centers)
        d = np.where(inside, np.hypot(centers[..., 0] - x, centers[..., 1] - y), np.inf)
        u, v = divmod(int(np.argmin(d)), scene.w)
    pick_bin = int(round((th % math.pi) / step)) % (n // 2)
    p = scene.pixel_to_world(u, v)
    q = rot(-th) @ (p - np.array([x, y]))
    target = rot(scene.kit[2]) @ q + np.array(scene.kit[:2])
    pu, pv = scene.world_to_pixel(target)
    place_bin = int(round(((scene.kit[2] - th) % (2 * math.pi)) / step)) % n
    return Action(u, v, pick_bin, "pick"), Action(pu, pv, place_bin, "place")


def apply_action(scene: Scene, pick: Action, place: Action, n: int = 36) -> Scene:
    """Rigid transport about the pick pixel; a pick off the tool changes nothing."""
    if not (0 <= pick.u < scene.h and 0 <= pick.v < scene.w) or not _on_tool(scene, pick.u, pick.v):
        return scene
    x, y, th = scene.tool
    p = scene.pixel_to_world(pick.u, pick.v)
    q = rot(-th) @ (p - np.array([x, y]))
    th_new = th + 2 * math.pi * place.theta_index / n
    pos = scene.pixel_to_world(place.u, place.v) - rot(th_new) @ q
    moved = replace(scene, tool=(float(pos[0]), float(pos[1]), th_new % (2 * math.pi)))
    ok, _, _ = check_success(moved)
    return replace(moved, state="kitted" if ok else "misplaced")


def wrap_angle(a: float) -> float:
    """Wrap to ``(-pi, pi]``."""
    a = math.remainder(a, 2 * math.pi)
    return math.pi if a == -math.pi else a


def check_success(scene: Scene, ss: int = 4) -> tuple[bool, float, float]:
    """Containment of the tool silhouette in the cavity, plus centroid and angle errors."""
    pts = scene.shape.samples(ss) @ rot(scene.tool[2]).T + np.array(scene.tool[:2])
    inside = bool(cavity_mask(scene, pts).all())
    dt = math.hypot(scene.tool[0] - scene.kit[0], scene.tool[1] - scene.kit[1])
    return inside, dt, wrap_angle(scene.tool[2] - scene.kit[2])


# -- demonstrations --

@dataclass
class DemoStep:
    obs: np.ndarray
    pick: Action
    place: Action


@dataclass
class Demo:
    seed: int
    n: int
    steps: list[DemoStep]


def make_demo(seed: int, cfg: KittingConfig | None = None) -> Demo:
    cfg = cfg or KittingConfig()
    scene = generate_episode(seed, cfg)
    pick, place = oracle_actions(scene, cfg.n)
    obs = render_observation(scene, cfg.channels, cfg.supersample)
    return Demo(seed, cfg.n, [DemoStep(obs, pick, place)])


__all__ = [
    "KittingConfig", "ShapeSpec", "Scene", "Demo", "DemoStep", "GenerationError", "STATES",
    "generate_episode", "render_observation", "render_layers", "oracle_actions", "apply_action",
    "check_success", "make_demo", "random_shape", "max_rotation_iou", "rotation_iou",
    "points_in_polygon", "distance_to_polygon", "wrap_angle",
]
