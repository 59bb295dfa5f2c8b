"""Synthetic cylinder grasp task, success oracle, metrics and hyperparameter sweeps.

The task stands in for a simulator: a vertical cylinder (axis = object z,
origin at the centre of its base) whose grasp space is the set of radial
approaches at angle ``phi`` around the axis, standoff ``s`` from the surface
and height ``z`` on the graspable band, with a fixed finger spread. Each
stable pose contributes a tabletop plane that rules out grasps too close to
the table.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path
from typing import Optional

import numpy as np

from . import quat
from .errors import FormatError, PathError, UndefinedCorrelationError, UsageError, ValidationError
from .grasp_data import GraspConfiguration, GraspDataset, GraspRecord, TabletopPlane
from .hgg_vae import (
    HggArchitecture,
    HggModel,
    TrainingConfig,
    architecture_for_size,
    build_hgg,
    dataset_kl_per_variable,
    count_used,
    loss,
    train,
)

log = logging.getLogger(__name__)

DISCRETE_SPREADS = (0.0, math.pi / 6, math.pi / 4, math.pi / 2)
FAILURE_REASONS = ("radial", "height", "angular", "spread", "table-collision")


def default_stable_poses(radius=0.04):
    """Upright on its base, and lying on its side with the table at x = -radius."""
    return (TabletopPlane(0.0, 0.0, 1.0, 0.0), TabletopPlane(1.0, 0.0, 0.0, radius))


@dataclass(frozen=True)
class SyntheticGraspTask:
    radius: float = 0.04
    height: float = 0.20
    standoff_range: tuple = (0.01, 0.03)
    height_range: tuple = (0.05, 0.15)
    spread: float = math.pi / 6
    radial_tol: float = 0.01
    angular_tol: float = math.radians(10.0)
    spread_tol: float = math.radians(5.0)
    clearance: float = 0.02
    stable_poses: tuple = field(default_factory=default_stable_poses)

    def __post_init__(self):
        object.__setattr__(self, "standoff_range", tuple(float(v) for v in self.standoff_range))
        object.__setattr__(self, "height_range", tuple(float(v) for v in self.height_range))
        poses = tuple(p if isinstance(p, TabletopPlane) else TabletopPlane(*p) for p in self.stable_poses)
        object.__setattr__(self, "stable_poses", poses)
        if not (self.radius > 0 and self.height > 0):
            raise ValidationError("cylinder radius and height must be > 0")
        if not (self.standoff_range[0] <= self.standoff_range[1] and self.height_range[0] <= self.height_range[1]):
            raise ValidationError("empty standoff or height range")
        if not any(math.isclose(self.spread, s, abs_tol=1e-12) for s in DISCRETE_SPREADS):
            raise ValidationError(f"spread {self.spread} not in {{0, pi/6, pi/4, pi/2}}")
        if min(self.radial_tol, self.angular_tol, self.spread_tol, self.clearance) <= 0:
            raise ValidationError("tolerances must be > 0")
        if not poses:
            raise ValidationError("task needs at least one stable pose")

    def pose_index(self, plane: TabletopPlane):
        for i, p in enumerate(self.stable_poses):
            if p.matches(plane):
                return i
        raise UsageError(f"plane {plane.as_vector().tolist()} is not a stable pose of the task")

    def to_dict(self):
        d = asdict(self)
        d["stable_poses"] = [p.as_vector().tolist() for p in self.stable_poses]
        d["standoff_range"] = list(self.standoff_range)
        d["height_range"] = list(self.height_range)
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise FormatError(f"unknown task keys: {sorted(unknown)}")
        return cls(**d)


def load_task(path) -> SyntheticGraspTask:
    path = Path(path)
    if not path.is_file():
        raise PathError(f"task file not found: {path}")
    try:
        return SyntheticGraspTask.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, line=exc.lineno) from None


def manifold_grasps(task, phi, standoff, z):
    """Grasp vectors (N, 8) at manifold coordinates: radial approach, axis-aligned fingers."""
    phi = np.asarray(phi, dtype=float)
    rho = task.radius + np.asarray(standoff, dtype=float)
    out = np.empty((phi.size, 8))
    out[:, 0] = rho * np.cos(phi)
    out[:, 1] = rho * np.sin(phi)
    out[:, 2] = z
    # gripper frame: z = approach (toward the axis), x = object z, y = z cross x
    for i, p in enumerate(phi.ravel()):
        approach = np.array([-math.cos(p), -math.sin(p), 0.0])
        ex = np.array([0.0, 0.0, 1.0])
        ey = np.cross(approach, ex)
        out[i, 3:7] = quat.from_matrix(np.column_stack([ex, ey, approach]))
    out[:, 7] = task.spread
    return out


def generate_primitives(task: SyntheticGraspTask, per_pose_count, rng) -> GraspDataset:
    """Sample primitives uniformly on the grasp manifold of each stable pose.

    ``per_pose_count`` is an int (same for every pose) or one count per pose.
    Candidates the oracle rejects (table clearance) are resampled, so every
    record is a successful grasp.
    """
    counts = [per_pose_count] * len(task.stable_poses) if np.isscalar(per_pose_count) else list(per_pose_count)
    if len(counts) != len(task.stable_poses):
        raise UsageError("need one count per stable pose")
    records = []
    for pose, (plane, count) in enumerate(zip(task.stable_poses, counts)):
        kept = np.empty((0, 8))
        while len(kept) < count:
            m = 2 * (count - len(kept)) + 8
            cand = manifold_grasps(
                task,
                rng.uniform(0.0, 2 * math.pi, m),
                rng.uniform(*task.standoff_range, m),
                rng.uniform(*task.height_range, m),
            )
            ok, _ = oracle_check(task, cand, np.tile(plane.as_vector(), (m, 1)))
            kept = np.vstack([kept, cand[ok]])
        for g in kept[:count]:
            records.append(GraspRecord(GraspConfiguration.from_vector(g), plane, pose))
    return GraspDataset(records)


def oracle_check(task: SyntheticGraspTask, grasps, planes):
    """Vectorized oracle: ``(ok, reason)`` arrays; reason is '' on success.

    Clauses are checked in order radial, height, angular, spread,
    table-collision; the reason names the first violated one.
    """
    grasps = np.atleast_2d(np.asarray(grasps, dtype=float))
    planes = np.atleast_2d(np.asarray(planes, dtype=float))
    pos = grasps[:, 0:3]
    rho = np.hypot(pos[:, 0], pos[:, 1])
    lo = task.radius + task.standoff_range[0]
    hi = task.radius + task.standoff_range[1]
    radial_gap = np.maximum(np.maximum(lo - rho, rho - hi), 0.0)
    radial_ok = radial_gap <= task.radial_tol
    z = pos[:, 2]
    height_ok = (z >= task.height_range[0] - task.radial_tol) & (z <= task.height_range[1] + task.radial_tol)
    approach = quat.to_matrix(grasps[:, 3:7])[:, :, 2]
    inward = -np.column_stack([pos[:, 0], pos[:, 1], np.zeros(len(pos))]) / np.maximum(rho, 1e-300)[:, None]
    cosang = np.clip(np.sum(approach * inward, axis=1), -1.0, 1.0)
    angular_ok = (rho > 0) & (np.arccos(cosang) <= task.angular_tol)
    spread_ok = np.abs(grasps[:, 7] - task.spread) <= task.spread_tol
    clearance = np.sum(pos * planes[:, 0:3], axis=1) + planes[:, 3]
    table_ok = clearance >= task.clearance
    reason = np.full(len(grasps), "", dtype=object)
    for name, ok in zip(FAILURE_REASONS[::-1], (table_ok, spread_ok, angular_ok, height_ok, radial_ok)):
        reason[~ok] = name
    return reason == "", reason


def oracle_success(task: SyntheticGraspTask, record: GraspRecord):
    """``(success, reason)`` for one record; reason is ``None`` on success."""
    task.pose_index(record.plane)
    ok, reason = oracle_check(task, record.grasp.as_vector(), record.plane.as_vector())
    return bool(ok[0]), (None if ok[0] else str(reason[0]))


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalMetrics:
    position_error: float  # m, mean over training records
    orientation_error: float  # degrees
    success_share: float  # fraction of prior samples, in [0, 1]

    @property
    def success_percent(self):
        return 100.0 * self.success_share


def reconstruction_errors(model: HggModel, dataset):
    """Per-record position (m) and orientation (deg) errors through the means."""
    mu, _ = model.encode_arrays(dataset.grasps, dataset.planes)
    recon = model.decode_arrays(mu, dataset.planes)
    pos_err = np.linalg.norm(recon[:, 0:3] - dataset.grasps[:, 0:3], axis=1)
    ori_err = np.degrees(quat.angle_between(recon[:, 3:7], dataset.grasps[:, 3:7]))
    return pos_err, ori_err


def sample_success(model, task, n_samples, rng, plane: Optional[TabletopPlane] = None):
    """Fraction of decoded prior samples the oracle accepts.

    Without ``plane`` the samples are spread round-robin over the task poses.
    """
    if n_samples == 0:
        return float("nan")
    if plane is not None:
        task.pose_index(plane)
        planes = np.tile(plane.as_vector(), (n_samples, 1))
    else:
        pv = np.array([p.as_vector() for p in task.stable_poses])
        planes = pv[np.arange(n_samples) % len(pv)]
    z = rng.standard_normal((n_samples, model.latent_dim))
    grasps = model.decode_arrays(z, planes)
    ok, _ = oracle_check(task, grasps, planes)
    return float(ok.mean())


def evaluate_model(model, task, dataset, plane=None, n_samples=1000, rng=None) -> EvalMetrics:
    rng = rng if rng is not None else np.random.default_rng(0)
    pos_err, ori_err = reconstruction_errors(model, dataset)
    return EvalMetrics(float(pos_err.mean()), float(ori_err.mean()),
                       sample_success(model, task, n_samples, rng, plane))


# --------------------------------------------------------------------------
# rank correlation
# --------------------------------------------------------------------------


def average_ranks(values):
    """1-based ranks; tied values share the mean of their positions."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    start = 0
    for end in range(1, len(values) + 1):
        if end == len(values) or sorted_vals[end] != sorted_vals[start]:
            ranks[order[start:end]] = 0.5 * (start + end - 1) + 1.0
            start = end
    return ranks


def spearman(xs, ys) -> float:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1 or len(xs) < 2:
        raise UsageError("spearman needs two equal-length series of length >= 2")
    rx = average_ranks(xs)
    ry = average_ranks(ys)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if denom == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant series")
    return float(np.clip((dx @ dy) / denom, -1.0, 1.0))


# --------------------------------------------------------------------------
# hyperparameter sweep
# --------------------------------------------------------------------------

HYPERPARAMETERS = ("latent_dim", "kl_coefficient", "network_size")
INDICATORS = ("used_latent_variables", "reconstruction_error", "kl_divergence", "success_share")
SIZE_BOUNDS = (12_000, 31_000)
LATENT_BOUNDS = (2, 6)
BETA_BOUNDS = (0.0002, 0.01)


@dataclass(frozen=True)
class SweepRecord:
    network_size: int
    latent_dim: int
    kl_coefficient: float
    seed: int
    reconstruction_error: float  # summed MSE in network units, decoded from the means
    kl_divergence: float  # dataset-mean KL averaged over latent variables
    kl_total: float  # dataset-mean KL summed over latent variables
    used_latent_variables: int
    success_share: float
    position_error: float
    orientation_error: float

    def __post_init__(self):
        values = [getattr(self, f) for f in self.__dataclass_fields__]
        if not all(math.isfinite(float(v)) for v in values):
            raise ValidationError(f"non-finite sweep indicator in {self}")
        if not 0.0 <= self.success_share <= 1.0:
            raise ValidationError("success share outside [0, 1]")


@dataclass
class SweepResult:
    records: list
    table: dict  # indicator -> hyperparameter -> rho (None when undefined)
    failures: list

    def write_csv(self, path):
        import csv

        names = list(SweepRecord.__dataclass_fields__)
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for r in self.records:
                w.writerow([repr(getattr(r, n)) if isinstance(getattr(r, n), float) else getattr(r, n)
                            for n in names])

    def write_table(self, path):
        Path(path).write_text(json.dumps({"table": self.table, "failures": self.failures}, indent=2) + "\n",
                              encoding="utf-8")


def check_grid(grid):
    for key in HYPERPARAMETERS:
        if key not in grid or not grid[key]:
            raise UsageError(f"grid needs a non-empty {key!r} list")
    for size in grid["network_size"]:
        if not SIZE_BOUNDS[0] <= size <= SIZE_BOUNDS[1]:
            raise UsageError(f"network_size {size} outside {SIZE_BOUNDS}")
    for n in grid["latent_dim"]:
        if not LATENT_BOUNDS[0] <= n <= LATENT_BOUNDS[1]:
            raise UsageError(f"latent_dim {n} outside {LATENT_BOUNDS}")
    for beta in grid["kl_coefficient"]:
        if not BETA_BOUNDS[0] <= beta <= BETA_BOUNDS[1]:
            raise UsageError(f"kl_coefficient {beta} outside {BETA_BOUNDS}")


def run_point(task, dataset, network_size, latent_dim, kl_coefficient, seed, base_config, n_samples=1000):
    """Train and score one grid point. Pure given its arguments."""
    arch = architecture_for_size(network_size, latent_dim)
    model = build_hgg(arch, seed=seed)
    config = TrainingConfig(kl_coefficient=kl_coefficient, epochs=base_config.epochs,
                            batch_size=base_config.batch_size, learning_rate=base_config.learning_rate,
                            seed=seed)
    model, report = train(model, dataset, config)
    kl_per = dataset_kl_per_variable(model, dataset)
    metrics = evaluate_model(model, task, dataset, n_samples=n_samples, rng=np.random.default_rng(seed))
    return SweepRecord(
        network_size=model.parameter_count,
        latent_dim=latent_dim,
        kl_coefficient=kl_coefficient,
        seed=seed,
        reconstruction_error=loss(model, dataset, kl_coefficient).reconstruction,
        kl_divergence=float(kl_per.mean()),
        kl_total=float(kl_per.sum()),
        used_latent_variables=count_used(kl_per),
        success_share=metrics.success_share,
        position_error=metrics.position_error,
        orientation_error=metrics.orientation_error,
    )


def _run_point_args(args):
    return run_point(*args)


def correlation_table(records):
    table = {}
    for ind in INDICATORS:
        row = {}
        ys = [float(getattr(r, ind)) for r in records]
        for hp in HYPERPARAMETERS:
            xs = [float(getattr(r, hp)) for r in records]
            try:
                row[hp] = spearman(xs, ys)
            except (UndefinedCorrelationError, UsageError):
                row[hp] = None
        table[ind] = row
    return table


def run_sweep(task, grid, seeds=(0,), per_pose_count=75, data_seed=0, base_config=TrainingConfig(),
              n_samples=1000, jobs=1) -> SweepResult:
    """One trained model per grid point and seed, then the Spearman table.

    ``grid`` maps ``network_size``, ``latent_dim`` and ``kl_coefficient`` to
    lists. All runs share one dataset drawn with ``data_seed``. Results come
    back in grid order regardless of ``jobs``.
    """
    check_grid(grid)
    dataset = generate_primitives(task, per_pose_count, np.random.default_rng(data_seed))
    points = [
        (task, dataset, size, n, beta, seed, base_config, n_samples)
        for size, n, beta in product(grid["network_size"], grid["latent_dim"], grid["kl_coefficient"])
        for seed in seeds
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_point_args, p) for p in points]
            outcomes = []
            for f in futures:
                try:
                    outcomes.append(f.result())
                except Exception as exc:  # recorded, not fatal
                    outcomes.append(exc)
    else:
        outcomes = []
        for p in points:
            try:
                outcomes.append(run_point(*p))
            except Exception as exc:  # recorded, not fatal
                outcomes.append(exc)
    records, failures = [], []
    for p, out in zip(points, outcomes):
        if isinstance(out, Exception):
            failures.append({"network_size": p[2], "latent_dim": p[3], "kl_coefficient": p[4], "seed": p[5],
                             "error": f"{type(out).__name__}: {out}"})
            log.warning("sweep point failed: %s", failures[-1])
        else:
            records.append(out)
    return SweepResult(records, correlation_table(records), failures)
