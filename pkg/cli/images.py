"""
8-bit netpbm output of generated frames: PGM for one channel, PPM for three.
"""

from pathlib import Path
from typing import List

import numpy as np

from evaluation.exporters import encode_pgm
from shared.exceptions import ContractViolation
from shared.utils import PathLike, atomic_write_bytes

ROLE_RECONSTRUCTION = 'reconstruction'
ROLE_PREDICTION = 'prediction'


def quantize(frame: np.ndarray) -> np.ndarray:
    """[C, H, W] pixels in [0, 1] -> [H, W, C] uint8 as round(255 * x), clamped."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3:
        raise ContractViolation(f"quantize: expected a frame [C, H, W], got shape {frame.shape}")
    levels = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(levels.transpose(1, 2, 0))


def encode_frame(frame: np.ndarray) -> bytes:
    """
    Binary netpbm image of one frame.

    Raises:
        ContractViolation: If the frame has neither 1 nor 3 channels
    """
    pixels = quantize(frame)
    height, width, channels = pixels.shape
    if channels == 1:
        return encode_pgm(pixels[:, :, 0])
    if channels == 3:
        return f"P6\n{width} {height}\n255\n".encode('ascii') + pixels.tobytes()
    raise ContractViolation(f"cannot write a {channels}-channel frame as PGM/PPM")


def frame_filename(role: str, position: int, channels: int) -> str:
    return f"{role}-{position:02d}.{'pgm' if channels == 1 else 'ppm'}"


def write_frames(directory: PathLike, frames: np.ndarray, role: str, first_position: int) -> List[Path]:
    """
    Write frames [m, C, H, W] as `<role>-<position>.pgm|ppm`.

    Args:
        directory: Output directory (created if missing)
        frames: Frames in position order
        role: 'reconstruction' or 'prediction'
        first_position: 1-based episode position of the first frame

    Returns:
        Written paths in position order
    """
    directory = Path(directory)
    paths = []
    for offset, frame in enumerate(frames):
        path = directory / frame_filename(role, first_position + offset, frame.shape[0])
        paths.append(atomic_write_bytes(path, encode_frame(frame)))
    return paths
