"""Conditional VAE over grasp configurations, conditioned on the tabletop plane.

Encoder: four input heads (position, orientation, spread, tabletop) feed a
main encoding network that outputs ``n`` means then ``n`` log-variances.
Decoder: the latent sample and a tabletop head feed a main decoding network
(hidden widths mirrored from the encoder), followed by position (sigmoid),
orientation (quaternion normalizer) and spread (sigmoid) output heads.

All sub-networks share one flat parameter buffer so a single Adam state
trains the whole model.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from . import dense_nn
from .dense_nn import DenseNetwork, LayerSpec
from .errors import FormatError, NonFiniteError, PathError, ShapeError, UsageError, ValidationError
from .grasp_data import (
    GraspConfiguration,
    GraspRecord,
    NormalizationStats,
    TabletopPlane,
    denormalize_arrays,
    normalize_arrays,
    normalize_planes,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
USED_LATENT_THRESHOLD = 0.05  # nats, dataset-mean KL per variable


@dataclass(frozen=True)
class HggArchitecture:
    latent_dim: int = 3
    input_head_widths: tuple = (16, 16)
    main_widths: tuple = (112, 64)
    output_head_widths: tuple = (16,)

    def __post_init__(self):
        object.__setattr__(self, "input_head_widths", tuple(int(w) for w in self.input_head_widths))
        object.__setattr__(self, "main_widths", tuple(int(w) for w in self.main_widths))
        object.__setattr__(self, "output_head_widths", tuple(int(w) for w in self.output_head_widths))
        widths = (self.latent_dim,) + self.input_head_widths + self.main_widths + self.output_head_widths
        if any(w < 1 for w in widths):
            raise ShapeError(f"all widths and latent_dim must be >= 1: {self}")
        if not self.input_head_widths or not self.main_widths:
            raise ShapeError("input heads and main networks need at least one hidden layer")

    @property
    def head_out(self):
        return self.input_head_widths[-1]

    def subnet_specs(self):
        """Ordered ``{name: [LayerSpec]}`` for every sub-network."""
        n = self.latent_dim

        def stack(widths, acts):
            return [LayerSpec(a, b, act) for a, b, act in zip(widths, widths[1:], acts)]

        def tanh_stack(widths):
            return stack(widths, ["tanh"] * (len(widths) - 1))

        heads = self.input_head_widths
        main = self.main_widths
        mirrored = main[::-1]
        out_hidden = self.output_head_widths
        specs = {
            "enc_position": tanh_stack((3,) + heads),
            "enc_orientation": tanh_stack((4,) + heads),
            "enc_spread": tanh_stack((1,) + heads),
            "enc_plane": tanh_stack((4,) + heads),
            "enc_main": tanh_stack((4 * self.head_out,) + main) + [LayerSpec(main[-1], 2 * n, "linear")],
            "dec_plane": tanh_stack((4,) + heads),
            "dec_main": tanh_stack((n + self.head_out,) + mirrored),
        }
        for name, width, act in (("dec_position", 3, "sigmoid"),
                                 ("dec_orientation", 4, "quaternion_normalizer"),
                                 ("dec_spread", 1, "sigmoid")):
            hidden = (mirrored[-1],) + out_hidden
            specs[name] = tanh_stack(hidden) + [LayerSpec(hidden[-1], width, act)]
        return specs

    def parameter_count(self):
        return sum(dense_nn.param_count(s) for s in self.subnet_specs().values())

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["latent_dim"]), tuple(d["input_head_widths"]), tuple(d["main_widths"]),
                   tuple(d["output_head_widths"]))


def architecture_for_size(target, latent_dim=3, base=None):
    """Scale the main widths of ``base`` so the total count is closest to ``target``."""
    base = base or HggArchitecture(latent_dim=latent_dim)
    best = None
    for w0 in range(4, 1024):
        w1 = max(2, round(w0 * base.main_widths[-1] / base.main_widths[0]))
        main = (w0,) + tuple(max(2, round(w0 * w / base.main_widths[0])) for w in base.main_widths[1:-1]) + (w1,)
        arch = HggArchitecture(latent_dim, base.input_head_widths, main, base.output_head_widths)
        gap = abs(arch.parameter_count() - target)
        if best is None or gap < best[0]:
            best = (gap, arch)
        elif arch.parameter_count() > target:
            break
    return best[1]


@dataclass(frozen=True)
class LatentDistribution:
    means: np.ndarray
    log_variances: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.means, dtype=float)
        lv = np.asarray(self.log_variances, dtype=float)
        if mu.shape != lv.shape:
            raise ShapeError("means and log-variances differ in shape")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(lv))):
            raise ValidationError("non-finite latent distribution")
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "log_variances", lv)

    @property
    def dim(self):
        return self.means.shape[-1]


class HggModel:
    def __init__(self, arch: HggArchitecture, stats: Optional[NormalizationStats] = None):
        self.arch = arch
        self.stats = stats
        specs = arch.subnet_specs()
        total = sum(dense_nn.param_count(s) for s in specs.values())
        self.params = np.zeros(total)
        self.nets = {}
        self.offsets = {}
        off = 0
        for name, layer_specs in specs.items():
            size = dense_nn.param_count(layer_specs)
            self.nets[name] = DenseNetwork(layer_specs, self.params[off:off + size])
            self.offsets[name] = off
            off += size

    @property
    def latent_dim(self):
        return self.arch.latent_dim

    @property
    def parameter_count(self):
        return int(self.params.size)

    @property
    def guard_count(self):
        return self.nets["dec_orientation"].guard_count

    def init_glorot(self, rng):
        for net in self.nets.values():
            net.init_glorot(rng)

    def mark_updated(self):
        for net in self.nets.values():
            net.mark_updated()

    def locate(self, index):
        for name, net in self.nets.items():
            off = self.offsets[name]
            if off <= index < off + net.parameter_count:
                return f"{name} {net.locate(index - off)}"
        return "unknown"

    def _stats(self):
        if self.stats is None:
            raise UsageError("model has no normalization statistics; train it or attach stats")
        return self.stats

    # -- array-level passes (network units) --------------------------------

    def encode_units(self, x):
        """(N, 12) normalized inputs -> (means, log-variances, caches)."""
        n = self.latent_dim
        f = dense_nn.forward
        hp, cp = f(self.nets["enc_position"], x[:, 0:3])
        ho, co = f(self.nets["enc_orientation"], x[:, 3:7])
        hs, cs = f(self.nets["enc_spread"], x[:, 7:8])
        ht, ct = f(self.nets["enc_plane"], x[:, 8:12])
        out, cm = f(self.nets["enc_main"], np.hstack([hp, ho, hs, ht]))
        return out[:, :n], out[:, n:], (cp, co, cs, ct, cm)

    def decode_units(self, z, plane_units):
        """(N, n) latents and (N, 4) normalized planes -> (N, 8) outputs, caches."""
        f = dense_nn.forward
        ht, ct = f(self.nets["dec_plane"], plane_units)
        hm, cm = f(self.nets["dec_main"], np.hstack([z, ht]))
        p, cp = f(self.nets["dec_position"], hm)
        q, cq = f(self.nets["dec_orientation"], hm)
        s, cs = f(self.nets["dec_spread"], hm)
        return np.hstack([p, q, s]), (ct, cm, cp, cq, cs)

    def _backward_decoder(self, caches, grad_out, grads):
        ct, cm, cp, cq, cs = caches
        b = self._bwd
        g_hm = b("dec_position", cp, grad_out[:, 0:3], grads)
        g_hm = g_hm + b("dec_orientation", cq, grad_out[:, 3:7], grads)
        g_hm = g_hm + b("dec_spread", cs, grad_out[:, 7:8], grads)
        g_in = b("dec_main", cm, g_hm, grads)
        n = self.latent_dim
        b("dec_plane", ct, g_in[:, n:], grads)
        return g_in[:, :n]

    def _backward_encoder(self, caches, g_mu, g_lv, grads):
        cp, co, cs, ct, cm = caches
        h = self.arch.head_out
        g = self._bwd("enc_main", cm, np.hstack([g_mu, g_lv]), grads)
        self._bwd("enc_position", cp, g[:, 0:h], grads)
        self._bwd("enc_orientation", co, g[:, h:2 * h], grads)
        self._bwd("enc_spread", cs, g[:, 2 * h:3 * h], grads)
        self._bwd("enc_plane", ct, g[:, 3 * h:4 * h], grads)

    def _bwd(self, name, cache, grad_out, grads):
        net = self.nets[name]
        off = self.offsets[name]
        _, grad_in = dense_nn.backward(net, cache, grad_out, grads[off:off + net.parameter_count])
        return grad_in

    # -- physical-unit helpers ----------------------------------------------

    def encode_arrays(self, grasps, planes):
        x = normalize_arrays(grasps, planes, self._stats())
        mu, lv, _ = self.encode_units(x)
        return mu, lv

    def decode_arrays(self, z, planes):
        """Latents (N, n) and physical planes (N, 4) -> physical grasps (N, 8)."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        planes = np.broadcast_to(np.asarray(planes, dtype=float), (len(z), 4))
        if z.shape[1] != self.latent_dim:
            raise ShapeError(f"latent has {z.shape[1]} components, model expects {self.latent_dim}")
        if not np.all(np.isfinite(z)):
            raise ValidationError("non-finite latent")
        out, _ = self.decode_units(z, normalize_planes(planes, self._stats()))
        physical, _ = denormalize_arrays(out, self._stats())
        return physical

    # -- serialization -------------------------------------------------------

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "architecture": self.arch.to_dict(),
            "stats": None if self.stats is None else self.stats.to_dict(),
            "networks": {name: net.to_dict() for name, net in self.nets.items()},
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != FORMAT_VERSION:
            raise FormatError(f"unsupported model format_version {d.get('format_version')!r}")
        arch = HggArchitecture.from_dict(d["architecture"])
        stats = None if d.get("stats") is None else NormalizationStats.from_dict(d["stats"])
        model = cls(arch, stats)
        for name, net in model.nets.items():
            loaded = DenseNetwork.from_dict(d["networks"][name])
            if loaded.specs != net.specs:
                raise FormatError(f"network {name} does not match the architecture")
            net.params[...] = loaded.params
        return model


def build_hgg(arch: HggArchitecture = None, seed=0, stats=None) -> HggModel:
    model = HggModel(arch or HggArchitecture(), stats)
    model.init_glorot(np.random.default_rng(seed))
    return model


def save_model(model: HggModel, path):
    Path(path).write_text(json.dumps(model.to_dict()) + "\n", encoding="utf-8")


def load_model(path) -> HggModel:
    path = Path(path)
    if not path.is_file():
        raise PathError(f"model file not found: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, line=exc.lineno) from None
    return HggModel.from_dict(d)


# --------------------------------------------------------------------------
# encode / sample / decode
# --------------------------------------------------------------------------


def encode(model: HggModel, record: GraspRecord) -> LatentDistribution:
    mu, lv = model.encode_arrays(record.grasp.as_vector(), record.plane.as_vector())
    return LatentDistribution(mu[0].copy(), lv[0].copy())


def reparameterize(dist: LatentDistribution, rng) -> np.ndarray:
    eps = rng.standard_normal(dist.means.shape)
    return dist.means + eps * np.exp(0.5 * dist.log_variances)


def decode(model: HggModel, latent, plane: TabletopPlane) -> GraspConfiguration:
    physical = model.decode_arrays(np.asarray(latent, dtype=float).reshape(1, -1), plane.as_vector())
    return GraspConfiguration.from_vector(physical[0])


def kl_terms(means, log_variances):
    """Elementwise KL(N(mu, exp(lv)) || N(0, 1))."""
    return 0.5 * (means * means + np.exp(log_variances) - 1.0 - log_variances)


def kl_divergence(dist: LatentDistribution):
    """Per-variable KL vector and its sum."""
    per = kl_terms(dist.means, dist.log_variances)
    return per, float(per.sum())


# --------------------------------------------------------------------------
# loss
# --------------------------------------------------------------------------


class LossBreakdown(NamedTuple):
    position: float
    orientation: float
    spread: float
    kl: float
    total: float

    @property
    def reconstruction(self):
        return self.position + self.orientation + self.spread


def _loss_from(recon, target, mu, lv, beta):
    b = len(target)
    mse = ((recon - target) ** 2).mean(axis=0)
    kl = float(kl_terms(mu, lv).sum(axis=1).mean())
    pos, ori, spr = float(mse[0:3].sum()), float(mse[3:7].sum()), float(mse[7])
    return LossBreakdown(pos, ori, spr, kl, pos + ori + spr + beta * kl), b


def forward_backward(model: HggModel, x, eps, beta, grads):
    """Loss on normalized batch ``x`` (N, 12) with noise ``eps``; fills ``grads``."""
    b = len(x)
    mu, lv, enc_caches = model.encode_units(x)
    std = np.exp(0.5 * lv)
    z = mu + eps * std
    recon, dec_caches = model.decode_units(z, x[:, 8:12])
    target = x[:, 0:8]
    breakdown, _ = _loss_from(recon, target, mu, lv, beta)
    g_recon = 2.0 * (recon - target) / b
    g_z = model._backward_decoder(dec_caches, g_recon, grads)
    g_mu = g_z + beta * mu / b
    g_lv = g_z * eps * 0.5 * std + beta * 0.5 * (np.exp(lv) - 1.0) / b
    model._backward_encoder(enc_caches, g_mu, g_lv, grads)
    return breakdown


def loss(model: HggModel, batch, beta, eps=None) -> LossBreakdown:
    """Batch loss: summed per-parameter MSE plus ``beta`` times the mean KL.

    ``eps`` is the reparameterization noise, shape (N, n); ``None`` means
    zero noise (decode from the means).
    """
    batch = list(batch)
    if not batch:
        raise UsageError("loss needs a non-empty batch")
    grasps = np.array([r.grasp.as_vector() for r in batch])
    planes = np.array([r.plane.as_vector() for r in batch])
    x = normalize_arrays(grasps, planes, model._stats())
    mu, lv, _ = model.encode_units(x)
    if eps is None:
        eps = np.zeros_like(mu)
    recon, _ = model.decode_units(mu + eps * np.exp(0.5 * lv), x[:, 8:12])
    return _loss_from(recon, x[:, 0:8], mu, lv, beta)[0]


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingConfig:
    kl_coefficient: float = 0.0005
    epochs: int = 2000
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not self.kl_coefficient > 0:
            raise ValidationError("kl_coefficient must be > 0")
        if self.epochs < 0 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValidationError(f"invalid training config {self}")


@dataclass
class TrainingReport:
    recon_position: list = field(default_factory=list)
    recon_orientation: list = field(default_factory=list)
    recon_spread: list = field(default_factory=list)
    kl: list = field(default_factory=list)
    total: list = field(default_factory=list)
    kl_per_variable: Optional[np.ndarray] = None
    used_latent_variables: int = 0

    @property
    def reconstruction(self):
        return [a + b + c for a, b, c in zip(self.recon_position, self.recon_orientation, self.recon_spread)]

    def write_csv(self, path):
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "recon_position", "recon_orientation", "recon_spread", "kl", "total"])
            for i, row in enumerate(zip(self.recon_position, self.recon_orientation, self.recon_spread,
                                        self.kl, self.total), start=1):
                w.writerow([i] + [repr(float(v)) for v in row])


def dataset_kl_per_variable(model: HggModel, dataset) -> np.ndarray:
    mu, lv = model.encode_arrays(dataset.grasps, dataset.planes)
    return kl_terms(mu, lv).mean(axis=0)


def count_used(kl_per_variable, threshold=USED_LATENT_THRESHOLD):
    return int(np.sum(np.asarray(kl_per_variable) > threshold))


def train(model: HggModel, dataset, config: TrainingConfig = TrainingConfig(), progress=None):
    """Fit ``model`` in place on ``dataset``; returns ``(model, report)``.

    Deterministic for a given ``config.seed``: the same generator drives the
    epoch shuffles and the reparameterization noise.
    """
    if len(dataset) == 0:
        raise ValidationError("cannot train on an empty dataset")
    if config.batch_size > len(dataset):
        raise ValidationError(f"batch_size {config.batch_size} exceeds dataset size {len(dataset)}")
    model.stats = dataset.stats
    x_all = dataset.normalized()
    rng = np.random.default_rng(config.seed)
    state = dense_nn.AdamState.for_params(model.params, lr=config.learning_rate)
    grads = np.zeros_like(model.params)
    beta = config.kl_coefficient
    report = TrainingReport()
    n = len(x_all)
    n_latent = model.latent_dim
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        sums = np.zeros(4)
        for bi, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            xb = x_all[idx]
            eps = rng.standard_normal((len(idx), n_latent))
            part = forward_backward(model, xb, eps, beta, grads)
            if not np.isfinite(part.total):
                raise NonFiniteError(f"non-finite loss at epoch {epoch}, batch {bi}")
            dense_nn.adam_step(model, grads, state)
            sums += len(idx) * np.array([part.position, part.orientation, part.spread, part.kl])
        pos, ori, spr, kl = sums / n
        report.recon_position.append(pos)
        report.recon_orientation.append(ori)
        report.recon_spread.append(spr)
        report.kl.append(kl)
        report.total.append(pos + ori + spr + beta * kl)
        if progress is not None:
            progress(epoch, report)
    report.kl_per_variable = dataset_kl_per_variable(model, dataset)
    report.used_latent_variables = count_used(report.kl_per_variable)
    if model.guard_count:
        log.warning("quaternion normalizer guard fired %d times", model.guard_count)
    return model, report
