"""Seedable scene generators and rasterizers for the four toy tasks.

A scene is a pure function of (config, seed, index): the per-scene RNG is
derived from a SeedSequence over (seed, index), so streaming, on-disk and
multi-worker generation all produce identical scenes for the same index.

Tasks:
  points    n white discs, any order, each with one of three radii
  line      one white 7-segment polyline of 8 ordered points from the
            bottom-left, green marker discs on every point
  gates     n convex quadrilaterals built from 4 radially jittered points
            at 90-degree spacing on a random circle, stroked outlines
  polygons  like gates but m in [m_min, m_max] corners, star-shaped,
            not necessarily convex

Coordinates are normalized to [0, 1] with y pointing down; pixel sizes in the
config refer to the configured canvas, so the same pixel numbers scale
proportionally on smaller canvases. Images are RGB uint8: black background,
white shapes, green markers. No anti-aliasing, so re-rasterizing a scene's
labels with its recorded style reproduces the stored image bit-exactly.
"""

import dataclasses
import json
import multiprocessing
import os
from pathlib import Path

import numpy as np
from PIL import Image

from polyseq import geometry
from polyseq._kernels import draw_disc, draw_segment

TASKS = ("points", "line", "gates", "polygons")

LINE_POINTS = 8
LINE_THICKNESS_PX = 3.0  # the polyline stroke; markers sit on top
MARKER_RADIUS_PX = 3.0  # fixed-size green endpoint discs

# canvas codes before RGB mapping
_BG, _WHITE, _GREEN = 0, 1, 2
PALETTE = np.array([[0, 0, 0], [255, 255, 255], [0, 255, 0]], dtype=np.uint8)

MAX_PLACEMENT_ATTEMPTS = 1000


class GenerationError(RuntimeError):
    """A shape could not be placed in-frame after many attempts."""


@dataclasses.dataclass(frozen=True)
class GenConfig:
    task: str
    image_w: int = 256
    image_h: int = 256
    n_min: int = 1
    n_max: int = 1
    m_min: int = 3
    m_max: int = 7
    seed: int = 0
    thickness_choices: tuple = (1.0, 3.0, 5.0)
    point_size_choices: tuple = (2.0, 3.0, 5.0)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}, expected one of {TASKS}")
        if self.image_w < 8 or self.image_h < 8:
            raise ValueError("canvas must be at least 8x8")
        if not (1 <= self.n_min <= self.n_max):
            raise ValueError("need 1 <= n_min <= n_max")
        if not (3 <= self.m_min <= self.m_max):
            raise ValueError("need 3 <= m_min <= m_max")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must fit in 64 unsigned bits")
        for name in ("thickness_choices", "point_size_choices"):
            vals = getattr(self, name)
            if len(vals) != 3 or any(v <= 0 for v in vals):
                raise ValueError(f"{name} must hold exactly 3 positive values")
        # the largest disc must fit fully inside the frame
        if 2 * max(self.point_size_choices) >= min(self.image_w, self.image_h):
            raise ValueError("image too small for the largest point size")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["thickness_choices"] = list(self.thickness_choices)
        d["point_size_choices"] = list(self.point_size_choices)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["thickness_choices"] = tuple(d["thickness_choices"])
        d["point_size_choices"] = tuple(d["point_size_choices"])
        return cls(**d)


@dataclasses.dataclass
class Scene:
    task: str
    image: np.ndarray  # (h, w, 3) uint8
    labels: list  # ordered list of (k, 2) float64 arrays
    style: dict  # normalized stroke/disc sizes needed to re-render exactly
    index: int = 0


def scene_rng(seed, index):
    """Per-scene generator; (seed, index) fully determines the stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index])))


def _norm(px, cfg):
    # pixel sizes are relative to the configured canvas width
    return float(px) / cfg.image_w


def generate_scene(cfg, index):
    rng = scene_rng(cfg.seed, index)
    gen = {
        "points": gen_points,
        "line": gen_line,
        "gates": gen_gate,
        "polygons": gen_polygon,
    }[cfg.task]
    scene = gen(cfg, rng)
    scene.index = index
    return scene


def gen_points(cfg, rng):
    n = int(rng.integers(cfg.n_min, cfg.n_max + 1))
    labels, radii = [], []
    for _ in range(n):
        radius = _norm(cfg.point_size_choices[int(rng.integers(0, 3))], cfg)
        cx = rng.uniform(radius, 1.0 - radius)
        cy = rng.uniform(radius, 1.0 - radius)
        labels.append(np.array([[cx, cy]]))
        radii.append(radius)
    style = {"disc_radii": radii}
    return Scene(cfg.task, rasterize(labels, cfg, style), labels, style)


def gen_line(cfg, rng):
    # base points equally spaced on the bottom-left -> top-right diagonal,
    # jittered along the perpendicular (unit vector (1, 1)/sqrt(2) in y-down)
    t = np.arange(LINE_POINTS) / (LINE_POINTS - 1)
    base = np.stack([t, 1.0 - t], axis=1)
    shift = rng.uniform(-0.15, 0.15, size=LINE_POINTS)
    u = 1.0 / np.sqrt(2.0)
    pts = base + shift[:, None] * np.array([u, u])
    pts = np.clip(pts, 0.0, 1.0)
    labels = [pts]
    style = {
        "stroke_halfwidth": _norm(LINE_THICKNESS_PX / 2.0, cfg),
        "marker_radius": _norm(MARKER_RADIUS_PX, cfg),
    }
    return Scene(cfg.task, rasterize(labels, cfg, style), labels, style)


def _radial_shape(cfg, rng, m):
    """One star-shaped m-gon that fits in-frame, or raises GenerationError.

    Draws shape parameters first, then places the center uniformly over the
    exact range of positions where every stroked vertex stays inside the
    frame; shapes too large for any placement are redrawn.
    """
    hw = _norm(cfg.thickness_choices[int(rng.integers(0, 3))] / 2.0, cfg)
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        r = rng.uniform(0.05, 0.40)
        phi = rng.uniform(0.0, 2.0 * np.pi)
        delta = rng.uniform(-0.25, 0.25, size=m)
        ang = phi + 2.0 * np.pi * np.arange(m) / m
        rad = r * (1.0 + delta)
        off = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
        xlo = hw - off[:, 0].min()
        xhi = 1.0 - hw - off[:, 0].max()
        ylo = hw - off[:, 1].min()
        yhi = 1.0 - hw - off[:, 1].max()
        if xlo > xhi or ylo > yhi:
            continue
        center = np.array([rng.uniform(xlo, xhi), rng.uniform(ylo, yhi)])
        return geometry.canonicalize(center + off), hw
    raise GenerationError(
        f"no in-frame placement for an {m}-gon after {MAX_PLACEMENT_ATTEMPTS} attempts"
    )


def gen_gate(cfg, rng):
    n = int(rng.integers(cfg.n_min, cfg.n_max + 1))
    labels, hws = [], []
    for _ in range(n):
        verts, hw = _radial_shape(cfg, rng, 4)
        labels.append(verts)
        hws.append(hw)
    style = {"stroke_halfwidths": hws}
    return Scene(cfg.task, rasterize(labels, cfg, style), labels, style)


def gen_polygon(cfg, rng):
    n = int(rng.integers(cfg.n_min, cfg.n_max + 1))
    labels, hws = [], []
    for _ in range(n):
        m = int(rng.integers(cfg.m_min, cfg.m_max + 1))
        verts, hw = _radial_shape(cfg, rng, m)
        labels.append(verts)
        hws.append(hw)
    style = {"stroke_halfwidths": hws}
    return Scene(cfg.task, rasterize(labels, cfg, style), labels, style)


def default_style(task, cfg, labels):
    """Mid-choice style for rendering labels with no recorded style."""
    if task == "points":
        return {"disc_radii": [_norm(cfg.point_size_choices[1], cfg)] * len(labels)}
    if task == "line":
        return {
            "stroke_halfwidth": _norm(LINE_THICKNESS_PX / 2.0, cfg),
            "marker_radius": _norm(MARKER_RADIUS_PX, cfg),
        }
    return {
        "stroke_halfwidths": [_norm(cfg.thickness_choices[1] / 2.0, cfg)] * len(labels)
    }


def rasterize(labels, cfg, style=None, task=None):
    """Render labels to an RGB image; deterministic, no anti-aliasing."""
    task = task or cfg.task
    if style is None:
        style = default_style(task, cfg, labels)
    canvas = np.zeros((cfg.image_h, cfg.image_w), dtype=np.uint8)
    if task == "points":
        for pts, radius in zip(labels, style["disc_radii"]):
            draw_disc(canvas, pts[0, 0], pts[0, 1], radius, _WHITE)
    elif task == "line":
        for pts in labels:
            hw = style["stroke_halfwidth"]
            for a, b in zip(pts[:-1], pts[1:]):
                draw_segment(canvas, a[0], a[1], b[0], b[1], hw, _WHITE)
            for p in pts:
                draw_disc(canvas, p[0], p[1], style["marker_radius"], _GREEN)
    elif task in ("gates", "polygons"):
        for verts, hw in zip(labels, style["stroke_halfwidths"]):
            m = verts.shape[0]
            for k in range(m):
                a, b = verts[k], verts[(k + 1) % m]
                draw_segment(canvas, a[0], a[1], b[0], b[1], hw, _WHITE)
    else:
        raise ValueError(f"unknown task {task!r}")
    return PALETTE[canvas]


def stream_dataset(cfg, count=None, start=0):
    """Yield scenes lazily; index-addressable, infinite when count is None."""
    index = start
    while count is None or index < start + count:
        yield generate_scene(cfg, index)
        index += 1


def _sidecar(scene):
    return {
        "task": scene.task,
        "objects": [pts.tolist() for pts in scene.labels],
        "style": scene.style,
    }


def _write_one(args):
    cfg, index, out_dir = args
    scene = generate_scene(cfg, index)
    stem = Path(out_dir) / f"{index:06d}"
    try:
        Image.fromarray(scene.image).save(stem.with_suffix(".png"))
        stem.with_suffix(".json").write_text(json.dumps(_sidecar(scene)))
    except OSError as e:
        raise OSError(f"failed writing scene {index} under {out_dir}: {e}") from e


def write_dataset(cfg, count, out_dir, workers=None):
    """Write count scenes plus a manifest; returns the directory path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if workers is None:
        workers = int(os.environ.get("POLYSEQ_WORKERS", "1"))
    jobs = [(cfg, i, str(out)) for i in range(count)]
    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            pool.map(_write_one, jobs, chunksize=32)
    else:
        for job in jobs:
            _write_one(job)
    manifest = {"config": cfg.to_dict(), "seed": cfg.seed, "count": count}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out


def read_manifest(dataset_dir):
    path = Path(dataset_dir) / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except OSError as e:
        raise OSError(f"cannot read dataset manifest at {path}: {e}") from e
    return GenConfig.from_dict(manifest["config"]), manifest["count"]


def load_scene(dataset_dir, index):
    stem = Path(dataset_dir) / f"{index:06d}"
    image = np.asarray(Image.open(stem.with_suffix(".png")).convert("RGB"))
    meta = json.loads(stem.with_suffix(".json").read_text())
    labels = [np.asarray(obj, dtype=np.float64) for obj in meta["objects"]]
    return Scene(meta["task"], image, labels, meta["style"], index)


def load_dataset(dataset_dir):
    """Yield all scenes of a written dataset in index order."""
    _, count = read_manifest(dataset_dir)
    for i in range(count):
        yield load_scene(dataset_dir, i)
