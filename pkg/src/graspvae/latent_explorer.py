"""Generating grasp configurations from a trained model's latent space."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import UsageError, ValidationError
from .grasp_data import GraspConfiguration, GraspRecord, TabletopPlane, record_to_dict


@dataclass(frozen=True)
class SweepPlan:
    """Circles around ``center`` in the plane of two latent axes.

    ``center`` defaults to the origin. Coordinates off the swept axes stay at
    their center value.
    """

    plane: TabletopPlane
    center: Optional[tuple] = None
    diameters: tuple = (0.5, 1.0)
    points_per_circle: int = 8
    axes: tuple = (0, 1)

    def __post_init__(self):
        object.__setattr__(self, "diameters", tuple(float(d) for d in self.diameters))
        if any(not d > 0 for d in self.diameters):
            raise ValidationError("circle diameters must be > 0")
        if self.points_per_circle < 1:
            raise ValidationError("points_per_circle must be >= 1")
        if len(self.axes) != 2 or self.axes[0] == self.axes[1] or min(self.axes) < 0:
            raise ValidationError(f"axes must be two distinct non-negative indices, got {self.axes}")

    def latents(self, latent_dim):
        """(1 + len(diameters) * points_per_circle, latent_dim) sweep points in output order."""
        if max(self.axes) >= latent_dim:
            raise UsageError(f"sweep axes {self.axes} out of range for latent dimension {latent_dim}")
        center = np.zeros(latent_dim) if self.center is None else np.asarray(self.center, dtype=float)
        if center.shape != (latent_dim,):
            raise UsageError(f"center has {center.size} components, latent dimension is {latent_dim}")
        angles = 2.0 * np.pi * np.arange(self.points_per_circle) / self.points_per_circle
        rows = [center]
        for d in sorted(self.diameters):
            ring = np.tile(center, (self.points_per_circle, 1))
            ring[:, self.axes[0]] += 0.5 * d * np.cos(angles)
            ring[:, self.axes[1]] += 0.5 * d * np.sin(angles)
            rows.extend(ring)
        return np.array(rows)


def _configs(physical):
    return [GraspConfiguration.from_vector(g) for g in physical]


def sample_prior(model, plane: TabletopPlane, count, rng):
    """``count`` configurations decoded from standard-normal latents."""
    return sample_prior_with_latents(model, plane, count, rng)[1]


def sample_prior_with_latents(model, plane, count, rng):
    if count == 0:
        return np.empty((0, model.latent_dim)), []
    z = rng.standard_normal((count, model.latent_dim))
    return z, _configs(model.decode_arrays(z, plane.as_vector()))


def sweep(model, plan: SweepPlan):
    """Ordered ``(latent, configuration)`` pairs: center, then rings inner to outer.

    Each ring starts at angle 0 on the first axis and runs counterclockwise.
    """
    z = plan.latents(model.latent_dim)
    return list(zip(z, _configs(model.decode_arrays(z, plan.plane.as_vector()))))


def write_jsonl(path, pairs, plane: TabletopPlane):
    """One grasp record per line plus its ``latent`` coordinates."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for z, g in pairs:
            d = record_to_dict(GraspRecord(g, plane))
            d["latent"] = [float(v) for v in z]
            fh.write(json.dumps(d) + "\n")


def write_csv(path, pairs):
    pairs = list(pairs)
    n = len(pairs[0][0]) if pairs else 0
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"l{i + 1}" for i in range(n)] + ["x", "y", "z", "qx", "qy", "qz", "qw", "spread"])
        for z, g in pairs:
            w.writerow([repr(float(v)) for v in list(z) + list(g.as_vector())])
