"""Assembly of the 9-channel denoiser input.

Channels are ``[noisy latent (4) | stacked first/last latent (4) | mask (1)]``.
Pixels map to latents through a fixed orthonormal projection of each 8x8x3
patch onto four basis vectors, which stands in for a learned autoencoder.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, ParameterError, ProviderError
from .schedule import NoiseSchedule, q_sample

PATCH = 8
LATENT_CHANNELS = 4
# brings per-patch coefficients of [0, 1] images to roughly unit scale
LATENT_SCALE = 0.15

TRAINING = "training"
INFERENCE = "inference"


def _basis() -> np.ndarray:
    b = np.zeros((LATENT_CHANNELS, 3, PATCH, PATCH))
    b[0] = 1.0
    b[1, 0], b[1, 1] = 1.0, -1.0
    b[2, 0], b[2, 1], b[2, 2] = 1.0, 1.0, -2.0
    b[3] = np.arange(PATCH) - (PATCH - 1) / 2.0
    b = b.reshape(LATENT_CHANNELS, -1)
    return b / np.linalg.norm(b, axis=1, keepdims=True)


BASIS = _basis()  # (4, 192), orthonormal rows; spans all per-channel constants


def toy_encode(image: np.ndarray) -> np.ndarray:
    """``(..., 3, H, W)`` pixels to ``(..., 4, H/8, W/8)`` patch coefficients."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim < 3 or image.shape[-3] != 3:
        raise DimensionError(f"expected (..., 3, H, W), got {image.shape}")
    H, W = image.shape[-2:]
    if H % PATCH or W % PATCH:
        raise DimensionError(f"extents {H}x{W} not divisible by {PATCH}")
    lead, h, w = image.shape[:-3], H // PATCH, W // PATCH
    x = image.reshape(-1, 3, h, PATCH, w, PATCH).transpose(0, 2, 4, 1, 3, 5)
    coeffs = x.reshape(-1, h, w, 3 * PATCH * PATCH) @ BASIS.T
    return coeffs.transpose(0, 3, 1, 2).reshape(*lead, LATENT_CHANNELS, h, w)


def toy_decode(latent: np.ndarray) -> np.ndarray:
    latent = np.asarray(latent, dtype=np.float64)
    if latent.ndim < 3 or latent.shape[-3] != LATENT_CHANNELS:
        raise DimensionError(f"expected (..., 4, h, w), got {latent.shape}")
    lead, (h, w) = latent.shape[:-3], latent.shape[-2:]
    z = latent.reshape(-1, LATENT_CHANNELS, h, w).transpose(0, 2, 3, 1) @ BASIS
    z = z.reshape(-1, h, w, 3, PATCH, PATCH).transpose(0, 3, 1, 4, 2, 5)
    return z.reshape(*lead, 3, h * PATCH, w * PATCH)


def encode_frames(frames: np.ndarray) -> np.ndarray:
    """Scaled latents used everywhere downstream of the encoder."""
    return toy_encode(frames) * LATENT_SCALE


def decode_latents(latents: np.ndarray) -> np.ndarray:
    return toy_decode(np.asarray(latents) / LATENT_SCALE)


@dataclass(frozen=True)
class LatentVideo:
    frames: np.ndarray  # (2f-1, 4, h, w)
    f: int

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[0] != 2 * self.f - 1:
            raise DimensionError(f"need {2 * self.f - 1} latent frames, got {self.frames.shape}")


@dataclass(frozen=True)
class MaskPair:
    m0: np.ndarray  # (1, h, w), values in {0, 1}
    m_last: Optional[np.ndarray] = None

    def __post_init__(self):
        for m in (self.m0, self.m_last):
            if m is not None and not np.all((m == 0) | (m == 1)):
                raise ParameterError("masks must be binary")


@dataclass(frozen=True)
class ConditionBundle:
    z_t: np.ndarray
    z_sd: np.ndarray
    z_m: np.ndarray
    z_c: np.ndarray

    @property
    def frames(self) -> int:
        return self.z_c.shape[0]

    @property
    def f(self) -> int:
        return (self.frames + 1) // 2


# -- last-frame dropout ----------------------------------------------------------


def draw_drop(r: float, rng: np.random.Generator) -> bool:
    if not 0.0 <= r <= 1.0:
        raise ParameterError(f"drop probability must be in [0, 1], got {r}")
    return bool(rng.random() < r)


def drop_last_frame(latent: np.ndarray, r: float, rng: np.random.Generator) -> np.ndarray:
    return np.zeros_like(latent) if draw_drop(r, rng) else latent


# -- condition channels ----------------------------------------------------------


def build_sdslc(f0_lat, flast_lat_or_zero, f: int, mode: str = TRAINING) -> np.ndarray:
    if f < 2:
        raise ParameterError(f"f must be >= 2, got {f}")
    f0_lat = np.asarray(f0_lat, dtype=np.float64)
    out = np.zeros((2 * f - 1,) + f0_lat.shape)
    out[0] = f0_lat
    out[-1] = f0_lat
    if mode == TRAINING:
        flast = np.asarray(flast_lat_or_zero, dtype=np.float64)
        if flast.shape != f0_lat.shape:
            raise DimensionError(f"latent shapes differ: {f0_lat.shape} vs {flast.shape}")
        out[f - 1] = flast
    elif mode != INFERENCE:
        raise ParameterError(f"unknown mode {mode!r}")
    return out


def build_fgsm(
    masks: MaskPair,
    f: int,
    stage: int,
    mode: str = TRAINING,
    r: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    dropped: Optional[bool] = None,
) -> np.ndarray:
    """Mask channel. A dropped last mask becomes all-ones (no information).

    Pass ``dropped`` to share the drop decision with the stacked latent;
    otherwise it is drawn here from ``r`` and ``rng``.
    """
    if f < 2:
        raise ParameterError(f"f must be >= 2, got {f}")
    m0 = np.asarray(masks.m0, dtype=np.float64)
    out = np.ones((2 * f - 1,) + m0.shape)
    if mode == TRAINING and stage == 1:
        return out
    if mode not in (TRAINING, INFERENCE):
        raise ParameterError(f"unknown mode {mode!r}")
    if stage not in (1, 2, 3):
        raise ParameterError(f"stage must be 1, 2 or 3, got {stage}")
    out[0] = m0
    out[-1] = m0
    if mode == TRAINING:
        if dropped is None:
            dropped = draw_drop(r, rng) if r > 0 else False
        if not dropped:
            if masks.m_last is None:
                raise ParameterError("stage 2/3 training needs the last-frame mask")
            out[f - 1] = masks.m_last
    return out


def assemble_condition(z_t, z_sd, z_m) -> ConditionBundle:
    z_t, z_sd, z_m = (np.asarray(a, dtype=np.float64) for a in (z_t, z_sd, z_m))
    if z_t.ndim != 4 or z_sd.ndim != 4 or z_m.ndim != 4:
        raise DimensionError("condition parts must be (frames, channels, h, w)")
    if z_t.shape[1] != 4 or z_sd.shape[1] != 4 or z_m.shape[1] != 1:
        raise DimensionError(f"channel extents must be 4/4/1, got {z_t.shape[1]}/{z_sd.shape[1]}/{z_m.shape[1]}")
    if not (z_t.shape[0] == z_sd.shape[0] == z_m.shape[0]) or not (
        z_t.shape[2:] == z_sd.shape[2:] == z_m.shape[2:]
    ):
        raise DimensionError(f"extent mismatch: {z_t.shape}, {z_sd.shape}, {z_m.shape}")
    z_c = np.concatenate([z_t, z_sd, z_m], axis=1)
    return ConditionBundle(z_t, z_sd, z_m, z_c)


# -- masks -----------------------------------------------------------------------

MaskProvider = Callable[[np.ndarray], np.ndarray]


def null_mask_provider(image: np.ndarray) -> np.ndarray:
    return np.ones(np.asarray(image).shape[-2:])


def call_provider(provider: MaskProvider, image: np.ndarray) -> np.ndarray:
    """Run ``provider`` and validate its output as a binary ``(H, W)`` mask."""
    try:
        mask = np.asarray(provider(image), dtype=np.float64)
    except Exception as exc:  # surfaced, never silently replaced
        raise ProviderError(f"mask provider failed: {exc}") from exc
    if mask.ndim == 3 and mask.shape[0] == 1:
        mask = mask[0]
    if mask.shape != np.asarray(image).shape[-2:]:
        raise ProviderError(f"mask shape {mask.shape} does not match image {np.asarray(image).shape[-2:]}")
    if not np.all((mask == 0) | (mask == 1)):
        raise ProviderError("mask provider returned non-binary values")
    return mask


def downsample_mask(mask: np.ndarray) -> np.ndarray:
    """Pixel mask ``(H, W)`` to latent ``(1, H/8, W/8)`` by block majority, ties to 1."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim == 3:
        mask = mask[0]
    H, W = mask.shape
    if H % PATCH or W % PATCH:
        raise DimensionError(f"mask extents {H}x{W} not divisible by {PATCH}")
    votes = mask.reshape(H // PATCH, PATCH, W // PATCH, PATCH).sum(axis=(1, 3))
    return (2 * votes >= PATCH * PATCH).astype(np.float64)[None]


# -- bundle builders -------------------------------------------------------------


def make_training_bundle(
    latents: np.ndarray,
    indices,
    f: int,
    stage: int,
    t: int,
    eps: np.ndarray,
    sched: NoiseSchedule,
    dropped: bool,
    latent_masks: Optional[np.ndarray] = None,
):
    """Training bundle for a clip whose frames are addressed by ``indices``.

    ``latents`` is ``(N, 4, h, w)``; ``latent_masks`` is ``(N, 1, h, w)`` and
    only consulted for stages 2 and 3. Returns ``(bundle, z0)``.
    """
    indices = list(indices)
    if len(indices) != 2 * f - 1:
        raise DimensionError(f"need {2 * f - 1} indices, got {len(indices)}")
    z0 = latents[indices]
    z_t = q_sample(z0, t, eps, sched)
    first, turn = indices[0], indices[f - 1]
    last = np.zeros_like(latents[turn]) if dropped else latents[turn]
    z_sd = build_sdslc(latents[first], last, f, TRAINING)
    if stage == 1:
        z_m = np.ones((2 * f - 1, 1) + latents.shape[2:])
    else:
        if latent_masks is None:
            raise ParameterError("stage 2/3 training needs masks")
        pair = MaskPair(latent_masks[first], latent_masks[turn])
        z_m = build_fgsm(pair, f, stage, TRAINING, dropped=dropped)
    return assemble_condition(z_t, z_sd, z_m), z0


def make_inference_bundle(
    image_latent: np.ndarray, f: int, z_t: np.ndarray, m0: Optional[np.ndarray] = None
) -> ConditionBundle:
    """Inference bundle: everything derives from the single input image."""
    z_sd = build_sdslc(image_latent, None, f, INFERENCE)
    if m0 is None:
        m0 = np.ones((1,) + np.asarray(image_latent).shape[1:])
    z_m = build_fgsm(MaskPair(m0), f, stage=3, mode=INFERENCE)
    return assemble_condition(z_t, z_sd, z_m)
