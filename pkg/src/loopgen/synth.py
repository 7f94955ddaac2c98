"""Procedural videos of a single moving shape, with exact occupancy masks."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParameterError

PALETTE = {
    "red": (0.9, 0.15, 0.1),
    "green": (0.15, 0.8, 0.2),
    "blue": (0.15, 0.3, 0.95),
    "yellow": (0.95, 0.9, 0.15),
    "cyan": (0.1, 0.85, 0.9),
    "magenta": (0.85, 0.15, 0.8),
    "white": (0.97, 0.97, 0.97),
    "orange": (0.95, 0.55, 0.1),
    "navy": (0.05, 0.08, 0.3),
    "gray": (0.45, 0.45, 0.45),
    "black": (0.0, 0.0, 0.0),
}
SHAPES = ("disk", "square")
TRAJECTORIES = ("linear", "circular", "loopable-sine")
BACKGROUNDS = ("constant", "gradient")
_MOTION_PHRASE = {
    "linear": "in a straight line",
    "circular": "in a circle",
    "loopable-sine": "back and forth",
}


@dataclass(frozen=True)
class SyntheticSpec:
    width: int = 64
    height: int = 64
    length: int = 43
    shape: str = "disk"
    radius: float = 8.0
    color: str = "red"
    trajectory: str = "circular"
    speed: float = 1.0
    background: str = "constant"
    background_color: str = "navy"
    seed: int = 0

    def __post_init__(self):
        if self.width % 8 or self.height % 8 or self.width <= 0 or self.height <= 0:
            raise ParameterError(f"extents must be positive multiples of 8, got {self.width}x{self.height}")
        if self.length < 2:
            raise ParameterError("length must be >= 2")
        if self.shape not in SHAPES:
            raise ParameterError(f"shape must be one of {SHAPES}")
        if self.trajectory not in TRAJECTORIES:
            raise ParameterError(f"trajectory must be one of {TRAJECTORIES}")
        if self.background not in BACKGROUNDS:
            raise ParameterError(f"background must be one of {BACKGROUNDS}")
        for c in (self.color, self.background_color):
            if c not in PALETTE:
                raise ParameterError(f"unknown color {c!r}")
        if self.radius <= 0:
            raise ParameterError("radius must be positive")

    @property
    def loopable(self) -> bool:
        return self.trajectory != "linear"

    def caption(self) -> str:
        return f"a {self.color} {self.shape} moving {_MOTION_PHRASE[self.trajectory]}"

    def to_dict(self) -> dict:
        return asdict(self)


def positions(spec: SyntheticSpec) -> np.ndarray:
    """Object centre per frame, ``(length, 2)`` as ``(x, y)`` in pixels."""
    rng = np.random.default_rng(spec.seed)
    cx = spec.width / 2 + rng.uniform(-0.1, 0.1) * spec.width
    cy = spec.height / 2 + rng.uniform(-0.1, 0.1) * spec.height
    phase0 = rng.uniform(0, 2 * math.pi)
    period = spec.length - 1
    out = np.zeros((spec.length, 2))
    for i in range(spec.length):
        # frame `period` maps to phase 0 exactly, so loopable paths close bit-exactly
        theta = 2 * math.pi * ((i % period) / period) + phase0
        if spec.trajectory == "circular":
            orbit = spec.speed * period / (2 * math.pi)
            out[i] = (cx + orbit * math.cos(theta), cy + orbit * math.sin(theta))
        elif spec.trajectory == "loopable-sine":
            amp = spec.speed * period / 4
            out[i] = (cx + amp * math.sin(theta), cy)
        else:
            out[i] = (cx + spec.speed * (i - period / 2), cy)
    return out


def rasterize(spec: SyntheticSpec, centre) -> np.ndarray:
    """Binary occupancy: a pixel is covered when its centre lies inside the shape."""
    ys = np.arange(spec.height)[:, None] + 0.5
    xs = np.arange(spec.width)[None, :] + 0.5
    dx, dy = xs - centre[0], ys - centre[1]
    if spec.shape == "disk":
        inside = dx * dx + dy * dy <= spec.radius * spec.radius
    else:
        inside = (np.abs(dx) <= spec.radius) & (np.abs(dy) <= spec.radius)
    return inside.astype(np.uint8)


def _background(spec: SyntheticSpec) -> np.ndarray:
    base = np.array(PALETTE[spec.background_color])
    bg = np.broadcast_to(base, (spec.height, spec.width, 3)).copy()
    if spec.background == "gradient":
        ramp = np.linspace(1.0, 0.3, spec.height)[:, None, None]
        bg = bg * ramp + (1 - ramp) * 0.1
    return bg


def render(spec: SyntheticSpec):
    """Return ``(frames, masks)``: uint8 ``(L, H, W, 3)`` and uint8 ``(L, H, W)`` in {0, 1}."""
    bg = _background(spec)
    fg = np.array(PALETTE[spec.color])
    frames = np.zeros((spec.length, spec.height, spec.width, 3), dtype=np.uint8)
    masks = np.zeros((spec.length, spec.height, spec.width), dtype=np.uint8)
    for i, c in enumerate(positions(spec)):
        m = rasterize(spec, c)
        img = np.where(m[..., None].astype(bool), fg, bg)
        frames[i] = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
        masks[i] = m
    return frames, masks


def random_spec(rng: np.random.Generator, **overrides) -> SyntheticSpec:
    colors = [c for c in PALETTE if c not in ("navy", "black", "gray")]
    kwargs = dict(
        shape=str(rng.choice(SHAPES)),
        radius=float(rng.integers(6, 11)),
        color=str(rng.choice(colors)),
        trajectory=str(rng.choice(["circular", "loopable-sine"])),
        speed=float(rng.choice([0.5, 1.0, 1.5])),
        background=str(rng.choice(BACKGROUNDS)),
        background_color=str(rng.choice(["navy", "gray", "black"])),
        seed=int(rng.integers(2**31)),
    )
    kwargs.update(overrides)
    return SyntheticSpec(**kwargs)
