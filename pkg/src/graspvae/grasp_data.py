"""Grasp and tabletop-plane types, dataset container, normalization, file I/O.

Network-unit layout of a normalized record (12 values)::

    0:3   position, min-max scaled to [0, 1]
    3:7   quaternion (qx, qy, qz, qw), canonical sign, unscaled
    7     spread, scaled by the physical range [0, pi/2]
    8:11  plane normal (a, b, c), unit
    11    plane offset d divided by the position extent of the normal's
          dominant axis
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import quat
from .errors import (
    DegenerateDatasetError,
    DegenerateOrientationError,
    FormatError,
    PathError,
    ShapeError,
    ValidationError,
)

SPREAD_MAX = math.pi / 2
UNIT_TOL = 1e-9
LOAD_UNIT_TOL = 1e-6
POSITION_AXES = ("position.x", "position.y", "position.z")
CSV_HEADER = ("x", "y", "z", "qx", "qy", "qz", "qw", "spread", "a", "b", "c", "d", "grasp_type")


@dataclass(frozen=True)
class GraspConfiguration:
    """Gripper configuration in the object frame.

    The quaternion is renormalized and sign-canonicalized on construction;
    inputs further than ``unit_tol`` from unit norm are rejected.
    """

    position: tuple
    orientation: tuple
    spread: float
    unit_tol: float = field(default=UNIT_TOL, repr=False, compare=False)

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float)
        q = np.asarray(self.orientation, dtype=float)
        if p.shape != (3,) or q.shape != (4,):
            raise ShapeError(f"position needs 3 and orientation 4 components, got {p.shape} and {q.shape}")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q)) and math.isfinite(self.spread)):
            raise ValidationError("non-finite grasp component")
        norm = float(np.linalg.norm(q))
        if abs(norm - 1.0) > self.unit_tol:
            raise ValidationError(f"quaternion norm {norm:.9g} is not 1")
        if not 0.0 <= self.spread <= SPREAD_MAX:
            raise ValidationError(f"spread {self.spread!r} outside [0, pi/2]")
        object.__setattr__(self, "position", tuple(float(v) for v in p))
        object.__setattr__(self, "orientation", tuple(float(v) for v in quat.canonicalize(q / norm)))
        object.__setattr__(self, "spread", float(self.spread))

    def as_vector(self):
        return np.array(self.position + self.orientation + (self.spread,))

    @classmethod
    def from_vector(cls, v, unit_tol=UNIT_TOL):
        v = np.asarray(v, dtype=float)
        return cls(tuple(v[0:3]), tuple(v[3:7]), float(v[7]), unit_tol=unit_tol)


@dataclass(frozen=True)
class TabletopPlane:
    """Table plane ``a*x + b*y + c*z + d = 0`` in the object frame.

    Coefficients are rescaled so the normal is unit. The sign is kept as
    given: the positive half-space (``a*x + b*y + c*z + d > 0``) is the
    object side, so the signed distance of a point above the table is
    ``signed_distance(p)``.
    """

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        coeffs = np.array([self.a, self.b, self.c, self.d], dtype=float)
        if not np.all(np.isfinite(coeffs)):
            raise ValidationError("non-finite plane coefficient")
        norm = float(np.linalg.norm(coeffs[:3]))
        if norm < 1e-12:
            raise ValidationError("plane normal is zero")
        coeffs /= norm
        for name, value in zip("abcd", coeffs):
            object.__setattr__(self, name, float(value))

    @property
    def normal(self):
        return np.array([self.a, self.b, self.c])

    def as_vector(self):
        return np.array([self.a, self.b, self.c, self.d])

    def signed_distance(self, points):
        return np.asarray(points, dtype=float) @ self.normal + self.d

    def matches(self, other, tol=1e-6):
        return bool(np.all(np.abs(self.as_vector() - other.as_vector()) <= tol))


@dataclass(frozen=True)
class GraspRecord:
    grasp: GraspConfiguration
    plane: TabletopPlane
    grasp_type: Optional[int] = None


@dataclass(frozen=True)
class NormalizationStats:
    position_min: tuple
    position_max: tuple
    spread_min: float = 0.0
    spread_max: float = SPREAD_MAX

    def __post_init__(self):
        lo = np.asarray(self.position_min, dtype=float)
        hi = np.asarray(self.position_max, dtype=float)
        for axis, name in enumerate(POSITION_AXES):
            if not hi[axis] > lo[axis]:
                raise DegenerateDatasetError(f"dimension {name} has max == min ({lo[axis]!r})", name)
        if not self.spread_max > self.spread_min:
            raise DegenerateDatasetError("dimension spread has max == min", "spread")
        object.__setattr__(self, "position_min", tuple(float(v) for v in lo))
        object.__setattr__(self, "position_max", tuple(float(v) for v in hi))

    @property
    def position_scale(self):
        return np.asarray(self.position_max) - np.asarray(self.position_min)

    @classmethod
    def from_positions(cls, positions):
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        if len(positions) == 0:
            raise DegenerateDatasetError("empty dataset: no statistics derivable")
        return cls(tuple(positions.min(axis=0)), tuple(positions.max(axis=0)))

    def to_dict(self):
        return {
            "position_min": list(self.position_min),
            "position_max": list(self.position_max),
            "spread_min": self.spread_min,
            "spread_max": self.spread_max,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["position_min"]), tuple(d["position_max"]), d["spread_min"], d["spread_max"])


class Normalized(NamedTuple):
    values: np.ndarray
    out_of_range: bool


class Denormalized(NamedTuple):
    grasp: GraspConfiguration
    spread_clamped: bool


# --------------------------------------------------------------------------
# array forms (used by training and evaluation)
# --------------------------------------------------------------------------


def normalize_arrays(grasps, planes, stats):
    """(N, 8) physical grasps and (N, 4) planes -> (N, 12) network units."""
    grasps = np.atleast_2d(np.asarray(grasps, dtype=float))
    planes = np.atleast_2d(np.asarray(planes, dtype=float))
    lo = np.asarray(stats.position_min)
    scale = stats.position_scale
    out = np.empty((len(grasps), 12))
    out[:, 0:3] = (grasps[:, 0:3] - lo) / scale
    out[:, 3:7] = quat.canonicalize(grasps[:, 3:7])
    out[:, 7] = (grasps[:, 7] - stats.spread_min) / (stats.spread_max - stats.spread_min)
    out[:, 8:12] = normalize_planes(planes, stats)
    return out


def normalize_planes(planes, stats):
    """(N, 4) plane coefficients -> network units (d over dominant-axis extent)."""
    planes = np.atleast_2d(np.asarray(planes, dtype=float))
    out = planes.copy()
    dominant = np.argmax(np.abs(planes[:, 0:3]), axis=1)
    out[:, 3] = planes[:, 3] / stats.position_scale[dominant]
    return out


def denormalize_arrays(values, stats):
    """(N, 8) network outputs -> (N, 8) physical grasps and a spread-clamp mask.

    The quaternion slice is renormalized and sign-canonicalized.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.shape[1] != 8:
        raise ShapeError(f"expected 8 network outputs, got {values.shape[1]}")
    q = values[:, 3:7]
    norm = np.linalg.norm(q, axis=1)
    if np.any(norm <= 1e-9):
        raise DegenerateOrientationError("quaternion output has near-zero norm")
    out = np.empty_like(values)
    out[:, 0:3] = np.asarray(stats.position_min) + values[:, 0:3] * stats.position_scale
    out[:, 3:7] = quat.canonicalize(q / norm[:, None])
    spread = stats.spread_min + values[:, 7] * (stats.spread_max - stats.spread_min)
    clamped = (spread < 0.0) | (spread > SPREAD_MAX)
    out[:, 7] = np.clip(spread, 0.0, SPREAD_MAX)
    return out, clamped


def normalize(record: GraspRecord, stats: NormalizationStats) -> Normalized:
    values = normalize_arrays(record.grasp.as_vector(), record.plane.as_vector(), stats)[0]
    scaled = np.r_[values[0:3], values[7]]
    return Normalized(values, bool(np.any((scaled < 0.0) | (scaled > 1.0))))


def denormalize(vector, stats: NormalizationStats) -> Denormalized:
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (8,):
        raise ShapeError(f"expected an 8-vector, got shape {vector.shape}")
    physical, clamped = denormalize_arrays(vector, stats)
    return Denormalized(GraspConfiguration.from_vector(physical[0]), bool(clamped[0]))


# --------------------------------------------------------------------------
# dataset
# --------------------------------------------------------------------------


class GraspDataset:
    """Ordered, immutable collection of grasp records plus their stats.

    An empty dataset is allowed in memory (``stats`` is then ``None``) but
    cannot be loaded from disk or trained on.
    """

    def __init__(self, records: Sequence[GraspRecord], stats: Optional[NormalizationStats] = None):
        self.records = tuple(records)
        self.grasps = np.array([r.grasp.as_vector() for r in self.records]).reshape(-1, 8)
        self.planes = np.array([r.plane.as_vector() for r in self.records]).reshape(-1, 4)
        if stats is None and self.records:
            stats = NormalizationStats.from_positions(self.grasps[:, 0:3])
        self.stats = stats
        self.grasps.flags.writeable = False
        self.planes.flags.writeable = False

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def normalized(self):
        return normalize_arrays(self.grasps, self.planes, self.stats)

    def distinct_planes(self):
        planes = []
        for r in self.records:
            if not any(r.plane.matches(p) for p in planes):
                planes.append(r.plane)
        return planes


def record_to_dict(record: GraspRecord) -> dict:
    g = record.grasp
    d = {
        "position": list(g.position),
        "quaternion": list(g.orientation),
        "spread": g.spread,
        "plane": list(record.plane.as_vector()),
    }
    if record.grasp_type is not None:
        d["grasp_type"] = record.grasp_type
    return d


def record_from_dict(obj: dict, unit_tol=LOAD_UNIT_TOL) -> GraspRecord:
    try:
        position = obj["position"]
        orientation = obj["quaternion"]
        spread = obj["spread"]
        plane = obj["plane"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"missing key {exc}") from None
    if len(position) != 3 or len(orientation) != 4 or len(plane) != 4:
        raise FormatError("position/quaternion/plane need 3/4/4 numbers")
    try:
        grasp = GraspConfiguration(tuple(position), tuple(orientation), float(spread), unit_tol=unit_tol)
        tabletop = TabletopPlane(*(float(v) for v in plane))
    except (TypeError, ValueError) as exc:
        raise FormatError(str(exc)) from None
    grasp_type = obj.get("grasp_type")
    return GraspRecord(grasp, tabletop, None if grasp_type is None else int(grasp_type))


def load_dataset(path) -> GraspDataset:
    path = Path(path)
    if not path.is_file():
        raise PathError(f"dataset file not found: {path}")
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(exc.msg, line=lineno) from None
            try:
                records.append(record_from_dict(obj))
            except FormatError as exc:
                raise FormatError(str(exc), line=lineno) from None
            except ValidationError as exc:
                raise type(exc)(f"line {lineno}: {exc}") from None
    if not records:
        raise DegenerateDatasetError(f"{path}: empty dataset, no statistics derivable")
    return GraspDataset(records)


def save_dataset(dataset, path):
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in dataset:
            fh.write(json.dumps(record_to_dict(record)) + "\n")


def export_csv(dataset, path):
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in dataset:
            row = list(r.grasp.as_vector()) + list(r.plane.as_vector())
            writer.writerow([repr(float(v)) for v in row] + ["" if r.grasp_type is None else r.grasp_type])
