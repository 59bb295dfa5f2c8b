import json

import numpy as np
import pytest

from graspvae.errors import UsageError, ValidationError
from graspvae.eval_harness import oracle_check
from graspvae.hgg_vae import decode
from graspvae.latent_explorer import SweepPlan, sample_prior, sample_prior_with_latents, sweep, write_csv, write_jsonl


def test_ring_layout_counts_and_order():
    plan = SweepPlan(plane=None, diameters=(1.0, 0.5), points_per_circle=12)
    z = plan.latents(2)
    assert z.shape == (25, 2)
    np.testing.assert_array_equal(z[0], [0, 0])
    np.testing.assert_allclose(np.linalg.norm(z[1:13], axis=1), 0.25)
    np.testing.assert_allclose(np.linalg.norm(z[13:], axis=1), 0.5)
    np.testing.assert_allclose(z[1], [0.25, 0.0])
    assert z[2, 1] > 0  # counterclockwise
    for ring in (z[1:13], z[13:]):
        np.testing.assert_allclose(ring[:6] + ring[6:], 0.0, atol=1e-15)


def test_off_axis_coordinates_hold_center():
    plan = SweepPlan(plane=None, center=(0.1, 0.2, 0.3, 0.4), axes=(1, 3), points_per_circle=5)
    z = plan.latents(4)
    assert np.all(z[:, 0] == 0.1) and np.all(z[:, 2] == 0.3)
    with pytest.raises(UsageError):
        SweepPlan(plane=None, axes=(0, 4)).latents(3)
    with pytest.raises(ValidationError):
        SweepPlan(plane=None, diameters=(0.0,))


def test_sweep_starts_at_origin_decode(trained, dataset):
    model, _ = trained
    plane = dataset[0].plane
    pairs = sweep(model, SweepPlan(plane, points_per_circle=12))
    assert len(pairs) == 25
    first = pairs[0][1]
    np.testing.assert_allclose(first.as_vector(), decode(model, np.zeros(3), plane).as_vector(), atol=1e-15)
    again = sweep(model, SweepPlan(plane, points_per_circle=12))
    assert all(a[1] == b[1] for a, b in zip(pairs, again))


def test_neighbouring_ring_points_stay_close(trained, dataset):
    model, _ = trained
    extent = float(np.linalg.norm(dataset.stats.position_scale))
    gaps = []
    for plane in dataset.distinct_planes():
        pairs = sweep(model, SweepPlan(plane, diameters=(0.5, 1.0, 2.0), points_per_circle=24))
        for r in range(3):
            ring = np.array([g.position for _, g in pairs[1 + 24 * r:1 + 24 * (r + 1)]])
            gaps.extend(np.linalg.norm(ring - np.roll(ring, 1, axis=0), axis=1))
    assert np.percentile(gaps, 95) < 0.25 * extent


def test_prior_samples(trained, dataset, task):
    model, _ = trained
    plane = dataset[0].plane
    assert sample_prior(model, plane, 0, np.random.default_rng(0)) == []
    a = sample_prior(model, plane, 1000, np.random.default_rng(1))
    b = sample_prior(model, plane, 1000, np.random.default_rng(1))
    assert a == b
    grasps = np.array([g.as_vector() for g in a])
    ok, _ = oracle_check(task, grasps, np.tile(plane.as_vector(), (1000, 1)))
    assert ok.mean() >= 0.6


def test_exports(tmp_path, trained, dataset):
    model, _ = trained
    plane = dataset[0].plane
    z, configs = sample_prior_with_latents(model, plane, 4, np.random.default_rng(2))
    pairs = list(zip(z, configs))
    write_jsonl(tmp_path / "g.jsonl", pairs, plane)
    rows = [json.loads(l) for l in (tmp_path / "g.jsonl").read_text().splitlines()]
    assert len(rows) == 4 and rows[0]["latent"] == list(z[0])
    write_csv(tmp_path / "g.csv", pairs)
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0].startswith("l1,l2,l3,x,y,z") and len(lines) == 5
