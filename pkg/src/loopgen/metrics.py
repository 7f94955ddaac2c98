"""Video metrics: SSIM-based motion, frame consistency, loopability, first-frame MSE.

Videos are float arrays ``(N, 3, H, W)`` (or lists of ``(3, H, W)`` frames)
with values in [0, 1].
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, DimensionError, ParameterError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

# Reference values reported for the full model (stage 3); not reproducible
# with the toy network, listed for context only.
REFERENCE_STAGE3 = {"clip_i": 0.956, "mse_f0": 47.2, "fc": 0.987, "motion": 0.851, "loop_c": 0.969}

Embedder = Callable[[np.ndarray], np.ndarray]


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - size // 2
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable weighted window sums over the last two axes, no padding
    k = len(g)
    x = sliding_window_view(x, k, axis=-2) @ g
    return sliding_window_view(x, k, axis=-1) @ g


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over channels and all valid 11x11 Gaussian windows."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 3:
        raise DimensionError(f"ssim needs matching (C, H, W) images, got {a.shape} and {b.shape}")
    if min(a.shape[1:]) < SSIM_WINDOW:
        raise DimensionError(f"images must be at least {SSIM_WINDOW}px on each side")
    g = gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def _as_video(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 4 or v.shape[1] != 3:
        raise DimensionError(f"video must be (N, 3, H, W), got {v.shape}")
    return v


def _need_pairs(v: np.ndarray) -> None:
    if len(v) < 2:
        raise ParameterError("metric needs at least two frames")


def motion_score(v) -> float:
    """``1 - mean SSIM`` of consecutive frames; 0 for a static clip, at most 2."""
    v = _as_video(v)
    _need_pairs(v)
    return 1.0 - float(np.mean([ssim(v[i], v[i + 1]) for i in range(len(v) - 1)]))


def pixel_embedder(image: np.ndarray, block: int = 8) -> np.ndarray:
    """8x8 block-mean pooled pixels, flattened and L2-normalised."""
    image = np.asarray(image, dtype=np.float64)
    C, H, W = image.shape
    if H % block or W % block:
        raise DimensionError(f"extents {H}x{W} not divisible by {block}")
    pooled = image.reshape(C, H // block, block, W // block, block).mean(axis=(2, 4)).ravel()
    norm = np.linalg.norm(pooled)
    if norm == 0:
        raise DataError("cannot embed an all-zero frame")
    return pooled / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    if np.array_equal(a, b):
        return 1.0
    c = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return min(1.0, max(-1.0, c))


def frame_consistency(v, embedder: Embedder = pixel_embedder) -> float:
    v = _as_video(v)
    _need_pairs(v)
    emb = [embedder(fr) for fr in v]
    return float(np.mean([cosine(emb[i], emb[i + 1]) for i in range(len(emb) - 1)]))


def loop_c(v, embedder: Embedder = pixel_embedder) -> float:
    v = _as_video(v)
    _need_pairs(v)
    return cosine(embedder(v[0]), embedder(v[-1]))


def mse_f0(v, input_image: np.ndarray) -> float:
    """Mean squared error between frame 0 and the input, on the 0-255 scale."""
    v = _as_video(v)
    input_image = np.asarray(input_image, dtype=np.float64)
    if v.shape[1:] != input_image.shape:
        raise DimensionError(f"frame {v.shape[1:]} vs input {input_image.shape}")
    d = 255.0 * (v[0] - input_image)
    return float(np.mean(d * d))


def evaluate(v, input_image=None, embedder: Embedder = pixel_embedder, video_id: str = "") -> dict:
    """One report record with every metric (``mse_f0`` is None without an input image)."""
    v = _as_video(v)
    return {
        "video_id": video_id,
        "clip_i": None,
        "mse_f0": None if input_image is None else mse_f0(v, input_image),
        "fc": frame_consistency(v, embedder),
        "motion": motion_score(v),
        "loop_c": loop_c(v, embedder),
        "frames": int(len(v)),
    }
