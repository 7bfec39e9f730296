"""
Rendering and generation of the synthetic action corpus.

An episode is a pure function of (class, seed, dataset config): every random
choice is drawn from one RngStream seeded by the episode seed, shapes are
rasterized with hard edges against pixel centres, and no state is shared
between episodes, so episodes can be rendered in any order or in parallel.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from episodes.catalog import (
    MOTION_CONVERGE, MOTION_SCALE, MOTION_TRANSLATE, SHAPE_CIRCLE, SHAPE_SQUARE, TRANSFORM_MIRROR,
    ActionClassSpec, MotionProgram, get_class, resolve_base
)
from episodes.repository import EpisodeRepository, ManifestRepository
from episodes.sampling import equally_spaced_indices
from episodes.types import DatasetConfig, DatasetManifest, ManifestEntry
from network.types import EpisodeTensor
from shared.constants import EPISODE_SUFFIX, SPLIT_CHOICES
from shared.exceptions import ConfigurationError, GenerationError
from shared.utils import PathLike
from substrate.rng import RngStream

logger = logging.getLogger(__name__)

# shapes keep at least this many pixels between their extent and the border
CANVAS_MARGIN = 1.0
BOUNDS_SLACK = 1e-9
MIN_RADIUS = 1.0


@dataclass(frozen=True)
class ShapeTrack:
    """A shape's kind, colour and per-frame centre (x, y) and radius."""
    kind: str
    color: np.ndarray
    centers: np.ndarray
    radii: np.ndarray


def episode_seed(master_seed: int, episode_id: int) -> int:
    """64-bit seed of one episode, derived from the master seed and its id."""
    sequence = np.random.SeedSequence([int(master_seed), int(episode_id)])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def _draw(rng: RngStream, low: float, high: float, what: str, spec_name: str) -> float:
    if high < low:
        raise GenerationError(f"class '{spec_name}': no room for {what} (range [{low:.3f}, {high:.3f}])")
    return float(rng.uniform(1, low, high)[0])


def _pick_shape(rng: RngStream, spec: ActionClassSpec, channels: int) -> Tuple[str, np.ndarray]:
    kind = spec.shapes[int(rng.integers(0, len(spec.shapes)))]
    color = rng.uniform(channels, *spec.foreground).astype(np.float32)
    return kind, color


def _plan_translate(rng, spec, motion: MotionProgram, size: float, frames: int, channels: int) -> List[ShapeTrack]:
    kind, color = _pick_shape(rng, spec, channels)
    radius = max(MIN_RADIUS, size * _draw(rng, *motion.radius, 'radius', spec.name))
    travel = size * _draw(rng, *motion.travel, 'travel', spec.name)
    margin = radius + CANVAS_MARGIN
    start = np.empty(2)
    for axis, step in enumerate(motion.direction):
        if step > 0:
            start[axis] = _draw(rng, margin, size - margin - travel, 'start position', spec.name)
        elif step < 0:
            start[axis] = _draw(rng, margin + travel, size - margin, 'start position', spec.name)
        else:
            start[axis] = _draw(rng, margin, size - margin, 'start position', spec.name)
    progress = np.linspace(0.0, 1.0, frames)[:, np.newaxis]
    centers = start + progress * travel * np.asarray(motion.direction, dtype=np.float64)
    return [ShapeTrack(kind, color, centers, np.full(frames, radius))]


def _plan_scale(rng, spec, motion: MotionProgram, size: float, frames: int, channels: int) -> List[ShapeTrack]:
    kind, color = _pick_shape(rng, spec, channels)
    start_radius = max(MIN_RADIUS, size * _draw(rng, *motion.radius, 'radius', spec.name))
    end_radius = max(start_radius, size * _draw(rng, *motion.end_radius, 'end radius', spec.name))
    margin = end_radius + CANVAS_MARGIN
    center = np.array([_draw(rng, margin, size - margin, 'centre', spec.name) for _ in range(2)])
    radii = np.linspace(start_radius, end_radius, frames)
    return [ShapeTrack(kind, color, np.tile(center, (frames, 1)), radii)]


def _plan_converge(rng, spec, motion: MotionProgram, size: float, frames: int, channels: int) -> List[ShapeTrack]:
    tracks = []
    shapes = []
    for side in (0, 1):
        kind, color = _pick_shape(rng, spec, channels)
        radius = max(MIN_RADIUS, size * _draw(rng, *motion.radius, 'radius', spec.name))
        margin = radius + CANVAS_MARGIN
        if side == 0:
            x = _draw(rng, margin, 0.3 * size, 'left start', spec.name)
        else:
            x = _draw(rng, 0.7 * size, size - margin, 'right start', spec.name)
        y = _draw(rng, margin, size - margin, 'row', spec.name)
        shapes.append((kind, color, radius, x, y))
    (_, _, left_radius, left_x, _), (_, _, right_radius, right_x, _) = shapes
    gap = max(right_x - left_x - left_radius - right_radius, 0.0)
    travel = 0.5 * gap * _draw(rng, *motion.travel, 'travel', spec.name)
    progress = np.linspace(0.0, 1.0, frames)
    for (kind, color, radius, x, y), sign in zip(shapes, (1.0, -1.0)):
        centers = np.stack([x + sign * travel * progress, np.full(frames, y)], axis=1)
        tracks.append(ShapeTrack(kind, color, centers, np.full(frames, radius)))
    return tracks


_PLANNERS = {
    MOTION_TRANSLATE: _plan_translate,
    MOTION_SCALE: _plan_scale,
    MOTION_CONVERGE: _plan_converge,
}


def _check_inside(tracks: List[ShapeTrack], size: float, spec_name: str) -> None:
    for track in tracks:
        low = track.centers - track.radii[:, np.newaxis]
        high = track.centers + track.radii[:, np.newaxis]
        below = np.any(low < CANVAS_MARGIN - BOUNDS_SLACK, axis=1)
        above = np.any(high > size - CANVAS_MARGIN + BOUNDS_SLACK, axis=1)
        outside = np.flatnonzero(below | above)
        if outside.size:
            raise GenerationError(f"class '{spec_name}': {track.kind} leaves the canvas at frame {int(outside[0])}")


def _shape_mask(kind: str, cx: float, cy: float, radius: float, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    if kind == SHAPE_SQUARE:
        return (np.abs(xs - cx) <= radius) & (np.abs(ys - cy) <= radius)
    if kind == SHAPE_CIRCLE:
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= radius * radius
    # triangle with its apex up
    top = cy - radius
    return (ys >= top) & (ys <= cy + radius) & (np.abs(xs - cx) <= 0.5 * (ys - top))


def render_episode(
    spec: ActionClassSpec,
    seed: int,
    config: Optional[DatasetConfig] = None,
    episode_id: Optional[int] = None
) -> EpisodeTensor:
    """
    Render one labelled episode.

    The base program is rendered over `source_frames` frames, `sequence_length`
    equally spaced frames are kept, and a derived class then applies its
    mirror or time-reversal transform.

    Args:
        spec: Action class
        seed: Episode seed
        config: Frame size, channels and lengths (defaults to DatasetConfig())
        episode_id: Id recorded on the returned episode

    Returns:
        EpisodeTensor [n, C, H, W] (float32, pixels in [0, 1]) labelled with spec.name

    Raises:
        GenerationError: If the motion program cannot keep shapes on the canvas
    """
    config = config or DatasetConfig()
    base, transform = resolve_base(spec)
    rng = RngStream(seed)
    size = float(config.frame_size)
    background = rng.uniform(config.channels, *base.background).astype(np.float32)
    tracks = _PLANNERS[base.motion.kind](rng, base, base.motion, size, config.source_frames, config.channels)
    _check_inside(tracks, size, base.name)

    ys, xs = np.mgrid[0:config.frame_size, 0:config.frame_size] + 0.5
    indices = equally_spaced_indices(config.source_frames, config.sequence_length)
    frames = np.empty((len(indices), config.channels, config.frame_size, config.frame_size), dtype=np.float32)
    for position, t in enumerate(indices):
        canvas = np.broadcast_to(background[:, np.newaxis, np.newaxis], frames.shape[1:]).copy()
        for track in tracks:
            cx, cy = track.centers[t]
            mask = _shape_mask(track.kind, cx, cy, track.radii[t], xs, ys)
            canvas[:, mask] = track.color[:, np.newaxis]
        frames[position] = canvas

    if transform == TRANSFORM_MIRROR:
        frames = frames[..., ::-1]
    elif transform is not None:
        frames = frames[::-1]
    return EpisodeTensor(np.ascontiguousarray(frames), label=spec.name, episode_id=episode_id)


def plan_manifest(config: DatasetConfig, master_seed: int) -> DatasetManifest:
    """
    Assign ids, splits, labels, seeds and file paths without rendering.

    Ids run through the train split first; within a split, classes are
    interleaved so every prefix of the id range is close to balanced.

    Raises:
        ConfigurationError: If the config is invalid or the master seed negative
        GenerationError: If two episodes would share a seed
    """
    config.validate()
    if master_seed < 0:
        raise ConfigurationError(f"master seed must be >= 0, got {master_seed}")
    entries = []
    episode_id = 0
    for split in SPLIT_CHOICES:
        for _ in range(config.per_class(split)):
            for label in config.classes:
                path = f'{split}/episode-{episode_id:06d}{EPISODE_SUFFIX}'
                entries.append(ManifestEntry(episode_id, split, label, episode_seed(master_seed, episode_id), path))
                episode_id += 1
    if len({entry.seed for entry in entries}) != len(entries):
        raise GenerationError(f"episode seed collision under master seed {master_seed}")
    return DatasetManifest(config=config, master_seed=master_seed, entries=entries)


class EpisodeGenerationService:
    """
    Service class for synthetic corpus generation.
    Renders planned episodes, writes one file per episode and the manifest last.
    """

    def __init__(self):
        self.episodes = EpisodeRepository()
        self.manifests = ManifestRepository()

    def render_entry(self, entry: ManifestEntry, config: DatasetConfig) -> EpisodeTensor:
        return render_episode(get_class(entry.label), entry.seed, config, episode_id=entry.episode_id)

    def generate_dataset(
        self,
        config: DatasetConfig,
        master_seed: int,
        out_path: PathLike,
        workers: int = 1,
        echo: Optional[Dict[str, Any]] = None
    ) -> DatasetManifest:
        """
        Generate a corpus under `out_path`.

        Args:
            config: Dataset settings
            master_seed: Seed the whole corpus derives from
            out_path: Dataset directory (created if missing)
            workers: Threads rendering episodes concurrently
            echo: Run configuration echoed into the manifest

        Returns:
            The written manifest

        Raises:
            ConfigurationError: On invalid settings
            GenerationError: If a motion program leaves the canvas
            PersistenceError: If a file cannot be written; no manifest is written then
        """
        if workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {workers}")
        manifest = plan_manifest(config, master_seed)
        root = Path(out_path)
        logger.info(
            f"Generating {len(manifest.entries)} episodes ({len(config.classes)} classes, "
            f"{config.frame_size}x{config.frame_size}x{config.channels}) into {root}"
        )

        def write(entry: ManifestEntry) -> None:
            self.episodes.save(self.render_entry(entry, config), root / entry.path)

        if workers == 1:
            for entry in manifest.entries:
                write(entry)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(write, manifest.entries))
        self.manifests.save(manifest, root, echo)
        return manifest


def generate_dataset(
    config: DatasetConfig,
    master_seed: int,
    out_path: PathLike,
    workers: int = 1,
    echo: Optional[Dict[str, Any]] = None
) -> DatasetManifest:
    """Shortcut for EpisodeGenerationService().generate_dataset."""
    return EpisodeGenerationService().generate_dataset(config, master_seed, out_path, workers, echo)
