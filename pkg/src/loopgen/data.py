"""Frame files, dataset manifests and in-memory clips.

Frames are 8-bit RGB PNGs named ``frame_00000.png`` ...; masks are
single-channel PNGs (0 or 255) named ``mask_00000.png``. A manifest is a
JSON-lines file, one :class:`ManifestRecord` per line, with directories
relative to the manifest's own location.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .conditioning import downsample_mask, encode_frames
from .errors import DataError
from .synth import SyntheticSpec, render


def write_rgb(path, array: np.ndarray) -> None:
    Image.fromarray(np.asarray(array, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255, mode="L").save(path, format="PNG")


def read_rgb(path) -> np.ndarray:
    """PNG to float ``(3, H, W)`` in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from None
    return arr.transpose(2, 0, 1)


def read_mask(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from None
    return (arr >= 128).astype(np.float64)


def to_uint8(frames: np.ndarray) -> np.ndarray:
    """Float ``(..., 3, H, W)`` in [0, 1] to uint8 ``(..., H, W, 3)``."""
    x = np.round(np.clip(frames, 0.0, 1.0) * 255).astype(np.uint8)
    return np.moveaxis(x, -3, -1)


def frame_files(directory, prefix: str = "frame_") -> list:
    return sorted(Path(directory).glob(f"{prefix}*.png"))


def write_frames(directory, frames_u8: np.ndarray, prefix: str = "frame_") -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, fr in enumerate(frames_u8):
        p = directory / f"{prefix}{i:05d}.png"
        write_rgb(p, fr)
        paths.append(p)
    return paths


def read_frames(directory, prefix: str = "frame_") -> np.ndarray:
    files = frame_files(directory, prefix)
    if not files:
        raise DataError(f"no {prefix}*.png files in {directory}")
    frames = [read_rgb(p) for p in files]
    if len({f.shape for f in frames}) != 1:
        raise DataError(f"frames in {directory} have differing extents")
    return np.stack(frames)


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    frames_dir: str
    caption: str
    mask_dir: Optional[str]
    length: int


def gen_synthetic(spec: SyntheticSpec, out_dir, video_id: str, root=None) -> ManifestRecord:
    """Render ``spec`` under ``out_dir/video_id`` and return its manifest record.

    Paths in the record are relative to ``root`` (defaults to ``out_dir``).
    """
    out_dir = Path(out_dir)
    root = Path(root) if root is not None else out_dir
    frames, masks = render(spec)
    vdir = out_dir / video_id
    fdir, mdir = vdir / "frames", vdir / "masks"
    try:
        write_frames(fdir, frames)
        mdir.mkdir(parents=True, exist_ok=True)
        for i, m in enumerate(masks):
            write_mask(mdir / f"mask_{i:05d}.png", m)
        (vdir / "spec.json").write_text(json.dumps(spec.to_dict(), sort_keys=True) + "\n")
    except OSError as exc:
        raise DataError(f"writing {vdir} failed: {exc}") from None
    return ManifestRecord(
        id=video_id,
        frames_dir=str(fdir.relative_to(root)),
        caption=spec.caption(),
        mask_dir=str(mdir.relative_to(root)),
        length=spec.length,
    )


def write_manifest(path, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")


def read_manifest(path, validate: bool = True) -> list:
    """Parse a manifest; with ``validate`` the frame and mask counts are checked on disk."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from None
    records = []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = ManifestRecord(**json.loads(line))
        except (json.JSONDecodeError, TypeError) as exc:
            raise DataError(f"{path}:{n}: bad record: {exc}") from None
        if validate:
            nframes = len(frame_files(path.parent / rec.frames_dir))
            if nframes != rec.length:
                raise DataError(f"{path}:{n}: {rec.id} declares {rec.length} frames, found {nframes}")
            if rec.mask_dir is not None:
                nmasks = len(frame_files(path.parent / rec.mask_dir, "mask_"))
                if nmasks != rec.length:
                    raise DataError(f"{path}:{n}: {rec.id} has {nmasks} masks for {rec.length} frames")
        records.append(rec)
    return records


@dataclass
class VideoClip:
    id: str
    frames: np.ndarray  # (N, 3, H, W) float in [0, 1]
    caption: str
    masks: Optional[np.ndarray] = None  # (N, H, W) binary

    @cached_property
    def latents(self) -> np.ndarray:
        return encode_frames(self.frames)

    @cached_property
    def latent_masks(self) -> Optional[np.ndarray]:
        if self.masks is None:
            return None
        return np.stack([downsample_mask(m) for m in self.masks])

    def __len__(self):
        return len(self.frames)


def load_dataset(manifest) -> list:
    manifest = Path(manifest)
    clips = []
    for rec in read_manifest(manifest):
        frames = read_frames(manifest.parent / rec.frames_dir)
        masks = None
        if rec.mask_dir is not None:
            masks = np.stack([read_mask(p) for p in frame_files(manifest.parent / rec.mask_dir, "mask_")])
        clips.append(VideoClip(rec.id, frames, rec.caption, masks))
    if not clips:
        raise DataError(f"manifest {manifest} lists no videos")
    return clips
