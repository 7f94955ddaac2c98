"""Image-to-video generation with a trained network."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .conditioning import decode_latents, downsample_mask, encode_frames, make_inference_bundle
from .embedders import EmbeddingProviders
from .model import RoutingConfig, UNetLite, forward
from .schedule import NoiseSchedule, denoise_loop, initial_latent, make_linear_schedule


def generate_video(
    net: UNetLite,
    image: np.ndarray,
    caption: str,
    f: int,
    sched: Optional[NoiseSchedule] = None,
    num_steps: int = 25,
    seed: int = 0,
    mask: Optional[np.ndarray] = None,
    init_mode: str = "noise",
    providers: Optional[EmbeddingProviders] = None,
    routing: Optional[RoutingConfig] = None,
) -> np.ndarray:
    """Generate ``2f - 1`` frames ``(3, H, W)`` in [0, 1] from one image.

    ``mask`` is an optional pixel-resolution binary mask of the input's
    salient object; without it the mask channel is all ones.
    """
    sched = sched or make_linear_schedule()
    providers = providers or EmbeddingProviders.default(net.config.ctx_dim)
    rng = np.random.default_rng(seed)
    latent = encode_frames(image)
    m0 = downsample_mask(mask) if mask is not None else None
    z_t = initial_latent((2 * f - 1,) + latent.shape, rng, sched, init_mode, latent)
    bundle = make_inference_bundle(latent, f, z_t, m0)
    image_ctx = providers.image_embedder(image)
    text_ctx = providers.text_embedder(caption)

    def model(z_c, t):
        return forward(net, z_c, t, image_ctx, text_ctx, routing)

    z0 = denoise_loop(model, bundle, sched, num_steps)
    return np.clip(decode_latents(z0), 0.0, 1.0)
