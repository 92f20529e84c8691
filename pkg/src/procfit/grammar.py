"""Parametric model families: parameter addressing, priors, instantiation.

A family maps a ParamVector (calling-trace-keyed parameter map) to a list
of geometry primitives. Families with variable parameter counts (the
buildings) derive their active key set from the current structural values:
a building with height for n floors exposes one window-width and one
window-height parameter per floor, keyed "win_w@F3" style, so surviving
parameters keep their identity when n changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .geometry import (
    ALL_QUADRANTS,
    FrameRegion,
    HoledQuad,
    Point3,
    Sphere,
    rigid_place,
)

FAMILY_IDS = (
    "frame_full",
    "frame_3q",
    "frame_2q",
    "frame_1q",
    "sphere",
    "building_4f",
    "building_1f",
    "facade_corrupt_test",
)

# nested quadrant subsets: each partial frame contains the smaller ones
_FRAME_QUADRANTS = {
    "frame_full": frozenset(("I", "II", "III", "IV")),
    "frame_3q": frozenset(("IV", "I", "II")),
    "frame_2q": frozenset(("I", "II")),
    "frame_1q": frozenset(("I",)),
}


@dataclass(frozen=True)
class ParamDescriptor:
    key: str
    kind: str = "continuous"  # "continuous" | "discrete"
    bounds: Optional[Tuple[float, float]] = None
    values: Optional[Tuple] = None  # discrete value set

    def __post_init__(self):
        if self.kind == "continuous":
            if self.bounds is None or not self.bounds[0] < self.bounds[1]:
                raise ValueError(f"{self.key}: continuous descriptor needs min < max")
        elif self.kind == "discrete":
            if not self.values:
                raise ValueError(f"{self.key}: discrete descriptor needs a value set")
        else:
            raise ValueError(f"unknown kind {self.kind!r}")

    def contains(self, value) -> bool:
        if self.kind == "continuous":
            return self.bounds[0] <= value <= self.bounds[1]
        return value in self.values

    def sample(self, rng: np.random.Generator):
        if self.kind == "continuous":
            return float(rng.uniform(self.bounds[0], self.bounds[1]))
        return self.values[rng.integers(len(self.values))]


@dataclass(frozen=True)
class ParamVector:
    """Immutable map from parameter key to value, tagged with its family."""

    family_id: str
    values: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "values", dict(self.values))

    def get(self, key: str) -> float:
        return self.values[key]

    def with_value(self, key: str, value) -> "ParamVector":
        new = dict(self.values)
        new[key] = value
        return ParamVector(self.family_id, new)

    def with_values(self, updates: Dict[str, float]) -> "ParamVector":
        new = dict(self.values)
        new.update(updates)
        return ParamVector(self.family_id, new)


@dataclass(frozen=True)
class ModelFamily:
    """A catalog entry: family id plus structural constants and bounds.

    Structural values (floor height, windows per floor) shape the model
    but are not fitted. `bounds` overrides the default per-parameter
    ranges.
    """

    id: str
    floor_height: float = 1.0
    windows_per_floor: int = 4
    bounds: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.id not in FAMILY_IDS:
            raise ValueError(f"unknown family {self.id!r}")
        if not self.floor_height > 0:
            raise ValueError("floor_height must be positive")
        if self.windows_per_floor < 1:
            raise ValueError("windows_per_floor must be >= 1")


_DEFAULT_BOUNDS = {
    "x": (0.0, 2.0),
    "cx": (-2.0, 2.0),
    "cy": (-2.0, 2.0),
    "cz": (-2.0, 2.0),
    "R": (0.1, 2.0),
    "rot": (-math.pi / 4, math.pi / 4),
    "tx": (-1.0, 1.0),
    "ty": (-1.0, 1.0),
    "tz": (-1.0, 1.0),
    "height": (0.5, 4.0),
    "length": (1.0, 5.0),
    "width": (1.0, 5.0),
    "win_w": (0.05, 1.0),
    "win_h": (0.05, 0.9),
}


def get_family(family_id: str, **overrides) -> ModelFamily:
    return ModelFamily(id=family_id, **overrides)


def _descriptor(family: ModelFamily, key: str) -> ParamDescriptor:
    base = key.split("@", 1)[0]
    bounds = family.bounds.get(key, family.bounds.get(base, _DEFAULT_BOUNDS[base]))
    return ParamDescriptor(key=key, kind="continuous", bounds=tuple(bounds))


def _base_keys(family: ModelFamily) -> List[str]:
    if family.id.startswith("frame"):
        return ["x"]
    if family.id == "sphere":
        return ["cx", "cy", "cz", "R"]
    if family.id == "building_4f":
        return ["rot", "tx", "ty", "tz", "height", "length", "width"]
    # building_1f and the corrupted-facade test family have no width
    return ["rot", "tx", "ty", "tz", "height", "length"]


def n_floors(family: ModelFamily, height: float) -> int:
    return max(1, math.floor(height / family.floor_height))


def active_params(family: ModelFamily, params: ParamVector) -> Dict[str, ParamDescriptor]:
    """Descriptors of the currently active parameters, keyed by trace.

    For buildings the floor count n follows the current height, so the
    total is 7+2n (four-facade) or 6+2n (single-facade).
    """
    keys = _base_keys(family)
    if family.id.startswith("building") or family.id == "facade_corrupt_test":
        if "height" not in params.values:
            raise KeyError("missing structural key 'height'")
        n = n_floors(family, params.get("height"))
        for i in range(1, n + 1):
            keys.append(f"win_w@F{i}")
            keys.append(f"win_h@F{i}")
    return {k: _descriptor(family, k) for k in keys}


def log_prior(family: ModelFamily, params: ParamVector) -> float:
    """Log of the uniform prior: 0 in bounds, -inf outside (up to a constant)."""
    for key, desc in active_params(family, params).items():
        if key not in params.values or not desc.contains(params.get(key)):
            return -math.inf
    return 0.0


def resync_params(family: ModelFamily, params: ParamVector, rng: np.random.Generator) -> ParamVector:
    """Fill newly active keys from their priors; keep everything else.

    Inactive keys are retained untouched, so shrinking and re-growing the
    floor count restores the old window sizes.
    """
    missing = {}
    for key, desc in active_params(family, params).items():
        if key not in params.values:
            missing[key] = desc.sample(rng)
    if not missing:
        return params
    return params.with_values(missing)


def sample_prior(family: ModelFamily, rng: np.random.Generator) -> ParamVector:
    """Draw a complete parameter vector from the prior."""
    values = {}
    for key in _base_keys(family):
        values[key] = _descriptor(family, key).sample(rng)
    vec = ParamVector(family.id, values)
    return resync_params(family, vec, rng)


# =============================================================================
# INSTANTIATION
# =============================================================================


def _facade_holes(family: ModelFamily, params: ParamVector, length: float, height: float):
    """Window rectangles for one facade, clamped to stay disjoint and inside.

    Windows sit in a per-floor band, evenly spaced along the facade; all
    windows of a floor share one size. Oversized requests shrink to fit
    with a minimum gap of 5% of the facade length; a band too thin for
    any opening gets none.
    """
    margin = 0.05 * length
    wpf = family.windows_per_floor
    slot = length / wpf
    holes = []
    n = n_floors(family, height)
    for i in range(1, n + 1):
        band_lo = (i - 1) * family.floor_height
        band_hi = min(i * family.floor_height, height)
        w = min(params.get(f"win_w@F{i}"), slot - margin)
        h = min(params.get(f"win_h@F{i}"), band_hi - band_lo - margin)
        if w <= 0 or h <= 0:
            continue
        vc = 0.5 * (band_lo + band_hi)
        for j in range(1, wpf + 1):
            uc = (j - 0.5) * slot
            holes.append((uc - w / 2, vc - h / 2, w, h))
    return tuple(holes)


def _canonical_facade(length, height, holes, origin, u_dir):
    return HoledQuad(
        origin=Point3(*origin),
        u_dir=u_dir,
        v_dir=(0.0, 0.0, 1.0),
        lu=length,
        lv=height,
        holes=holes,
    )


def instantiate(family: ModelFamily, params: ParamVector) -> List:
    """Build the primitive list for a parameter vector.

    Raises ValueError("invalid parameter") when any active value is out of
    bounds; window overflow never errors (clamped instead).
    """
    active = active_params(family, params)
    for key, desc in active.items():
        if key not in params.values:
            raise ValueError(f"invalid parameter: missing {key}")
        if not desc.contains(params.get(key)):
            raise ValueError(f"invalid parameter: {key}={params.get(key)} out of bounds")

    if family.id.startswith("frame"):
        x = params.get("x")
        return [
            FrameRegion(
                outer_len=4.0,
                inner_len=2.0 * x,
                active_quadrants=_FRAME_QUADRANTS[family.id],
            )
        ]

    if family.id == "sphere":
        return [
            Sphere(
                center=Point3(params.get("cx"), params.get("cy"), params.get("cz")),
                radius=params.get("R"),
            )
        ]

    height = params.get("height")
    length = params.get("length")
    holes = _facade_holes(family, params, length, height)
    t = Point3(params.get("tx"), params.get("ty"), params.get("tz"))
    rot = params.get("rot")

    if family.id in ("building_1f", "facade_corrupt_test"):
        facade = _canonical_facade(length, height, holes, (-length / 2, 0.0, 0.0), (1.0, 0.0, 0.0))
        return [rigid_place(facade, rot, t)]

    width = params.get("width")
    prims = [
        # windowed long walls, then solid short walls
        _canonical_facade(length, height, holes, (-length / 2, width / 2, 0.0), (1.0, 0.0, 0.0)),
        _canonical_facade(length, height, holes, (-length / 2, -width / 2, 0.0), (1.0, 0.0, 0.0)),
        _canonical_facade(width, height, (), (length / 2, -width / 2, 0.0), (0.0, 1.0, 0.0)),
        _canonical_facade(width, height, (), (-length / 2, -width / 2, 0.0), (0.0, 1.0, 0.0)),
    ]
    return [rigid_place(p, rot, t) for p in prims]
