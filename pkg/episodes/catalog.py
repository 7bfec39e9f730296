"""
Catalog of synthetic action classes.

Each class is a motion program over one or two hard-edged shapes. Extents
are fractions of the frame size so that the same catalog renders at any
resolution. Some classes are defined as a frame transform of another class
(mirror or time reversal) rather than by a program of their own.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from shared.exceptions import ConfigurationError, NotFoundError

# Motion program kinds
MOTION_TRANSLATE = 'translate'
MOTION_SCALE = 'scale'
MOTION_CONVERGE = 'converge'
MOTION_CHOICES = (MOTION_TRANSLATE, MOTION_SCALE, MOTION_CONVERGE)

# Frame transforms relating paired classes
TRANSFORM_MIRROR = 'mirror'
TRANSFORM_REVERSE = 'reverse'
TRANSFORM_CHOICES = (TRANSFORM_MIRROR, TRANSFORM_REVERSE)

SHAPE_SQUARE = 'square'
SHAPE_CIRCLE = 'circle'
SHAPE_TRIANGLE = 'triangle'
SHAPE_CHOICES = (SHAPE_SQUARE, SHAPE_CIRCLE, SHAPE_TRIANGLE)

Range = Tuple[float, float]


@dataclass(frozen=True)
class MotionProgram:
    """
    Parametric trajectory.

    Attributes:
        kind: translate, scale or converge
        direction: Unit step (dx, dy) for translate
        travel: Range of total displacement over the clip, as a fraction of the frame size
        radius: Range of the (start) shape radius, fraction of the frame size
        end_radius: Range of the final radius for scale programs
    """
    kind: str
    direction: Tuple[int, int] = (0, 0)
    travel: Range = (0.0, 0.0)
    radius: Range = (0.07, 0.12)
    end_radius: Range = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in MOTION_CHOICES:
            raise ConfigurationError(f"unknown motion kind '{self.kind}'")
        for name in ('travel', 'radius', 'end_radius'):
            low, high = getattr(self, name)
            if low < 0 or high < low:
                raise ConfigurationError(f"invalid {name} range ({low}, {high})")


@dataclass(frozen=True)
class ActionClassSpec:
    """
    One action class.

    Attributes:
        class_id: Position in the catalog
        name: Label written to manifests and memory metadata
        motion: Program rendered for this class (None for derived classes)
        derived_from: (base class name, transform) for paired classes
        shapes: Shape kinds sampled per episode
        background: Range of the per-channel background tint
        foreground: Range of the per-channel shape colour
    """
    class_id: int
    name: str
    motion: Optional[MotionProgram] = None
    derived_from: Optional[Tuple[str, str]] = None
    shapes: Tuple[str, ...] = SHAPE_CHOICES
    background: Range = (0.05, 0.45)
    foreground: Range = (0.6, 1.0)

    def __post_init__(self):
        if (self.motion is None) == (self.derived_from is None):
            raise ConfigurationError(f"class '{self.name}' needs exactly one of motion or derived_from")
        if self.derived_from is not None and self.derived_from[1] not in TRANSFORM_CHOICES:
            raise ConfigurationError(f"class '{self.name}': unknown transform '{self.derived_from[1]}'")
        unknown = set(self.shapes) - set(SHAPE_CHOICES)
        if not self.shapes or unknown:
            raise ConfigurationError(f"class '{self.name}': invalid shapes {sorted(unknown) or '()'}")


SLIDE_TRAVEL = (0.35, 0.45)

DEFAULT_CLASSES: Tuple[ActionClassSpec, ...] = (
    ActionClassSpec(0, 'slide-right', MotionProgram(MOTION_TRANSLATE, direction=(1, 0), travel=SLIDE_TRAVEL)),
    ActionClassSpec(1, 'slide-left', derived_from=('slide-right', TRANSFORM_MIRROR)),
    ActionClassSpec(2, 'slide-up', MotionProgram(MOTION_TRANSLATE, direction=(0, -1), travel=SLIDE_TRAVEL)),
    ActionClassSpec(3, 'slide-down', MotionProgram(MOTION_TRANSLATE, direction=(0, 1), travel=SLIDE_TRAVEL)),
    ActionClassSpec(4, 'approach', MotionProgram(MOTION_SCALE, radius=(0.06, 0.1), end_radius=(0.22, 0.3))),
    ActionClassSpec(5, 'recede', derived_from=('approach', TRANSFORM_REVERSE)),
    ActionClassSpec(6, 'converge', MotionProgram(MOTION_CONVERGE, travel=(0.6, 0.9), radius=(0.06, 0.1))),
    ActionClassSpec(7, 'diverge', derived_from=('converge', TRANSFORM_REVERSE)),
)

CLASS_NAMES: Tuple[str, ...] = tuple(spec.name for spec in DEFAULT_CLASSES)

_BY_NAME: Dict[str, ActionClassSpec] = {spec.name: spec for spec in DEFAULT_CLASSES}


def get_class(name: str) -> ActionClassSpec:
    """
    Raises:
        NotFoundError: If the catalog has no class of this name
    """
    try:
        return _BY_NAME[name]
    except KeyError:
        raise NotFoundError(f"Unknown action class '{name}'; known: {', '.join(CLASS_NAMES)}")


def resolve_base(spec: ActionClassSpec) -> Tuple[ActionClassSpec, Optional[str]]:
    """The class whose program renders `spec`, and the transform applied afterwards."""
    if spec.derived_from is None:
        return spec, None
    base_name, transform = spec.derived_from
    base = get_class(base_name)
    if base.derived_from is not None:
        raise ConfigurationError(f"class '{spec.name}' derives from derived class '{base_name}'")
    return base, transform
