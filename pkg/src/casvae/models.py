"""Phase-1 autoencoder, latent-prior VAEs, and their training loops.

The cascade trains an AE with batch norm on pixels, freezes it, then fits a
two-latent VAE on the 30-d codes: unit ``z1`` keeps a standard-normal prior,
unit ``z2`` a two-peak prior through one of the divergence surrogates. The
posterior mean of ``z2`` is the classification score. The vanilla and
DKL-VAE baselines reuse the same ``Vae`` class on raw pixels.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import divergence as dv
from .divergence import DiagGaussian, SurrogateKind, TwoPeakPrior
from .errors import (ConfigError, DimensionError, DomainError, InsufficientDataError,
                     TrainingDivergedError, UntrainedModelError)
from . import container
from .nn import AdamState, BatchNorm, Dense, Stack, adam_step
from .rng import Rng

STD = SurrogateKind.STD_NORMAL_KL


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 30
    head_epochs: int = 30
    seed: int = 0
    surrogate: SurrogateKind = SurrogateKind.PW
    m: float = 2.0
    s: float = 1.0
    alpha: float = 0.5
    lambda1: float = 1.0
    lambda2: float = 1.0
    eval_noise: bool = False
    recon_space: str = "code"  # phase-2 target: "code" or "pixel"
    code_dim: int = 30
    latent_dim: int = 2  # baseline VAEs
    activation: str = "tanh"
    per_dim_divergence: bool = True  # divide divergence weights by the output width

    def __post_init__(self):
        self.surrogate = SurrogateKind.parse(self.surrogate)
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        for name in ("batch_size", "epochs", "head_epochs", "code_dim", "latent_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.recon_space not in ("code", "pixel"):
            raise ConfigError("recon_space must be 'code' or 'pixel'")
        try:
            self.prior
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def prior(self) -> TwoPeakPrior:
        return TwoPeakPrior(self.m, self.s, self.alpha)


def _check_finite(value: float, step: int) -> None:
    if not math.isfinite(value):
        raise TrainingDivergedError(step, value)


def _batches(n: int, batch_size: int, rng: Rng):
    """Shuffled full batches; the ragged tail is dropped (batch norm needs B >= 2)."""
    order = rng.permutation(n)
    for k in range(n // batch_size):
        yield order[k * batch_size:(k + 1) * batch_size]


def _as_matrix(data) -> np.ndarray:
    x = getattr(data, "images", data)
    x = np.asarray(x, dtype=np.float32)
    return x.reshape(len(x), -1)


# -- phase 1: autoencoder ------------------------------------------------------

class AeModel:
    def __init__(self, input_dim: int, rng: Rng, code_dim: int = 30,
                 hidden: Sequence[int] = (256, 64), activation: str = "tanh"):
        dims = [input_dim, *hidden, code_dim]
        self.encoder = Stack.mlp(dims, rng, activation, batch_norm=True, final_activation=activation)
        self.decoder = Stack.mlp(dims[::-1], rng, activation, batch_norm=True)
        self.input_dim = input_dim
        self.code_dim = code_dim
        self.trained = False

    def params(self) -> list[np.ndarray]:
        return self.encoder.params() + self.decoder.params()

    def set_mode(self, mode: str) -> None:
        self.encoder.set_mode(mode)
        self.decoder.set_mode(mode)

    def reconstruct(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        return self.decoder(self.encoder(x, train), train)


def ae_loss(model: AeModel, batch, train: bool = False) -> float:
    """Mean squared reconstruction error over batch and pixels."""
    x = _as_matrix(batch)
    if x.shape[1] != model.input_dim:
        raise DimensionError(f"model expects {model.input_dim} inputs, got {x.shape[1]}")
    r = model.reconstruct(x, train)
    return float(np.mean((r.astype(np.float64) - x) ** 2))


def _ae_step(model: AeModel, x: np.ndarray):
    code = model.encoder(x, train=True)
    r = model.decoder(code, train=True)
    diff = r - x
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    g, g_dec = model.decoder.backward((2.0 / diff.size) * diff)
    _, g_enc = model.encoder.backward(g)
    return loss, g_enc + g_dec


def train_ae(data, cfg: TrainConfig) -> tuple[AeModel, list[float]]:
    x = _as_matrix(data)
    if len(x) < 2 * cfg.batch_size:
        raise InsufficientDataError(f"need at least {2 * cfg.batch_size} samples, got {len(x)}")
    rng = Rng.derive(cfg.seed, 1)
    model = AeModel(x.shape[1], rng, cfg.code_dim, activation=cfg.activation)
    params = model.params()
    opt = AdamState.for_params(params, lr=cfg.lr)
    history, step = [], 0
    for _ in range(cfg.epochs):
        losses = []
        for idx in _batches(len(x), cfg.batch_size, rng):
            loss, grads = _ae_step(model, x[idx])
            step += 1
            _check_finite(loss, step)
            adam_step(params, grads, opt)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    model.set_mode("inference")
    model.trained = True
    return model, history


def encode_codes(model: AeModel, data, batch_size: int = 1024) -> np.ndarray:
    """Inference-mode codes (N x code_dim); independent of batch composition."""
    if not model.trained:
        raise UntrainedModelError("autoencoder has not been trained")
    x = _as_matrix(data)
    out = [model.encoder(x[i:i + batch_size], train=False) for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.code_dim), np.float32)


# -- phase 2 and baselines: VAEs with per-unit priors ----------------------------

def reparameterize(q: DiagGaussian, epsilon):
    return np.asarray(q.mu) + np.exp(0.5 * np.asarray(q.log_var)) * epsilon


class Vae:
    """Gaussian-latent VAE whose latent units each carry their own prior.

    ``unit_kinds[j]`` names the divergence penalizing unit ``j``;
    ``unit_weights[j]`` scales it.
    """

    def __init__(self, input_dim: int, hidden: Sequence[int], unit_kinds: Sequence[SurrogateKind],
                 rng: Rng, prior: TwoPeakPrior | None = None,
                 unit_weights: Sequence[float] | None = None, activation: str = "tanh",
                 output_dim: int | None = None):
        self.input_dim = input_dim
        self.output_dim = output_dim or input_dim
        self.unit_kinds = [SurrogateKind.parse(k) for k in unit_kinds]
        self.latent_dim = len(self.unit_kinds)
        if self.latent_dim < 1:
            raise ConfigError("need at least one latent unit")
        self.unit_weights = np.asarray(unit_weights if unit_weights is not None
                                       else [1.0] * self.latent_dim, dtype=np.float64)
        self.prior = prior or TwoPeakPrior()
        enc_dims = [input_dim, *hidden, 2 * self.latent_dim]
        dec_dims = [self.latent_dim, *hidden[::-1], self.output_dim]
        self.encoder = Stack.mlp(enc_dims, rng, activation)
        self.decoder = Stack.mlp(dec_dims, rng, activation)
        self.trained = False

    def params(self) -> list[np.ndarray]:
        return self.encoder.params() + self.decoder.params()

    def posterior(self, x: np.ndarray) -> DiagGaussian:
        h = self.encoder(np.asarray(x, dtype=self.encoder.params()[0].dtype))
        d = self.latent_dim
        return DiagGaussian(h[:, :d], h[:, d:])

    def divergences(self, q: DiagGaussian) -> np.ndarray:
        """Per-sample, per-unit divergence (B x latent_dim), unweighted."""
        mu, lv = np.asarray(q.mu, np.float64), np.asarray(q.log_var, np.float64)
        out = np.empty_like(mu)
        for j, kind in enumerate(self.unit_kinds):
            out[:, j] = dv.surrogate(kind, DiagGaussian(mu[:, j], lv[:, j]), self.prior)
        return out

    def divergence_grads(self, q: DiagGaussian):
        mu, lv = np.asarray(q.mu, np.float64), np.asarray(q.log_var, np.float64)
        g_mu, g_lv = np.empty_like(mu), np.empty_like(lv)
        for j, kind in enumerate(self.unit_kinds):
            g_mu[:, j], g_lv[:, j] = dv.surrogate_grad(kind, DiagGaussian(mu[:, j], lv[:, j]), self.prior)
        return g_mu, g_lv


class CasVaeHead(Vae):
    """Two-unit VAE over AE codes: z1 standard normal, z2 two-peak surrogate."""

    def __init__(self, code_dim: int, rng: Rng, surrogate: SurrogateKind = SurrogateKind.PW,
                 prior: TwoPeakPrior | None = None, lambda1: float = 1.0, lambda2: float = 1.0,
                 hidden: Sequence[int] = (16,), activation: str = "tanh"):
        super().__init__(code_dim, hidden, [STD, surrogate], rng, prior, [lambda1, lambda2], activation)
        self.surrogate = SurrogateKind.parse(surrogate)
        self.lambda1, self.lambda2 = lambda1, lambda2


class VanillaVae(Vae):
    def __init__(self, input_dim: int, rng: Rng, latent_dim: int = 2,
                 hidden: Sequence[int] = (256, 64), activation: str = "tanh",
                 two_peak_unit: SurrogateKind | None = None, prior: TwoPeakPrior | None = None):
        kinds = [STD] * latent_dim
        if two_peak_unit is not None:
            kinds[-1] = SurrogateKind.parse(two_peak_unit)
        super().__init__(input_dim, hidden, kinds, rng, prior, None, activation)


@dataclass
class VaeLosses:
    total: float
    recon: float
    divergences: np.ndarray  # batch-mean per unit, unweighted

    @property
    def kl_z1(self) -> float:
        return float(self.divergences[0])

    @property
    def surrogate_z2(self) -> float:
        return float(self.divergences[-1])


def vae_forward_backward(model: Vae, x: np.ndarray, target: np.ndarray, eps: np.ndarray | None,
                         grad: bool = True, pixel_decoder: Stack | None = None):
    """One pass of the VAE objective.

    ``total = mean_sq(decoder(z) - target) + sum_j w_j * mean_b div_j``.
    With ``pixel_decoder`` (a frozen network in inference mode) the VAE output
    is pushed through it before comparing with ``target``.
    Returns ``(VaeLosses, grads | None)``.
    """
    B, d = len(x), model.latent_dim
    h = model.encoder(x)
    mu, lv = h[:, :d], h[:, d:]
    std = np.exp(0.5 * lv)
    z = mu if eps is None else mu + std * eps.astype(h.dtype)
    out = model.decoder(z)
    recon_out = pixel_decoder(out) if pixel_decoder is not None else out
    diff = recon_out - target
    recon = float(np.mean(diff.astype(np.float64) ** 2))
    q = DiagGaussian(mu, lv)
    divs = model.divergences(q).mean(axis=0)
    total = recon + float(np.dot(model.unit_weights, divs))
    losses = VaeLosses(total, recon, divs)
    if not grad:
        return losses, None
    g = (2.0 / diff.size) * diff
    if pixel_decoder is not None:
        g, _ = pixel_decoder.backward(g)
    g_z, g_dec = model.decoder.backward(g)
    g_mu_div, g_lv_div = model.divergence_grads(q)
    w = model.unit_weights / B
    g_mu = g_z + w * g_mu_div
    g_lv = w * g_lv_div
    if eps is not None:
        g_lv = g_lv + g_z * eps * 0.5 * std
    _, g_enc = model.encoder.backward(np.concatenate([g_mu, g_lv], axis=1).astype(h.dtype))
    return losses, g_enc + g_dec


def casvae_loss(head: CasVaeHead, codes, eps: np.ndarray | None = None):
    """``(total, recon, kl_z1, surrogate_z2)``, batch averaged; ``eps=None`` uses z = mu."""
    c = np.asarray(codes, dtype=head.encoder.params()[0].dtype)
    if c.ndim != 2 or c.shape[1] != head.input_dim:
        raise DimensionError(f"head expects codes of width {head.input_dim}, got {c.shape}")
    losses, _ = vae_forward_backward(head, c, c, eps, grad=False)
    return losses.total, losses.recon, losses.kl_z1, losses.surrogate_z2


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)

    def append(self, epoch: int, losses: Sequence[VaeLosses]) -> None:
        self.rows.append({
            "epoch": epoch,
            "total": float(np.mean([l.total for l in losses])),
            "recon": float(np.mean([l.recon for l in losses])),
            "kl_z1": float(np.mean([l.kl_z1 for l in losses])),
            "surrogate_z2": float(np.mean([l.surrogate_z2 for l in losses])),
        })

    @property
    def total(self) -> list[float]:
        return [r["total"] for r in self.rows]

    def to_csv(self) -> str:
        lines = ["epoch,total,recon,kl_z1,surrogate_z2"]
        for r in self.rows:
            lines.append(f"{r['epoch']},{r['total']!r},{r['recon']!r},{r['kl_z1']!r},{r['surrogate_z2']!r}")
        return "\n".join(lines) + "\n"


def fit_vae(model: Vae, x: np.ndarray, target: np.ndarray, lr: float, batch_size: int,
            epochs: int, rng: Rng, pixel_decoder: Stack | None = None,
            on_step: Callable[[VaeLosses], None] | None = None) -> History:
    if len(x) < 2 * batch_size:
        raise InsufficientDataError(f"need at least {2 * batch_size} samples, got {len(x)}")
    params = model.params()
    opt = AdamState.for_params(params, lr=lr)
    history, step = History(), 0
    for epoch in range(epochs):
        losses = []
        for idx in _batches(len(x), batch_size, rng):
            eps = rng.normal(size=(len(idx), model.latent_dim)).astype(np.float32)
            l, grads = vae_forward_backward(model, x[idx], target[idx], eps, pixel_decoder=pixel_decoder)
            step += 1
            _check_finite(l.total, step)
            if on_step is not None:
                on_step(l)
            adam_step(params, grads, opt)
            losses.append(l)
        history.append(epoch, losses)
    model.trained = True
    return history


def train_casvae(ae: AeModel, data, cfg: TrainConfig,
                 on_step: Callable[[VaeLosses], None] | None = None) -> tuple[CasVaeHead, History]:
    """Phase two: fit the head on frozen AE codes (AE parameters never touched)."""
    if not ae.trained:
        raise UntrainedModelError("phase-one autoencoder must be trained first")
    x = _as_matrix(data)
    codes = encode_codes(ae, x)
    rng = Rng.derive(cfg.seed, 2)
    out_dim = x.shape[1] if cfg.recon_space == "pixel" else ae.code_dim
    scale = 1.0 / out_dim if cfg.per_dim_divergence else 1.0
    head = CasVaeHead(ae.code_dim, rng, cfg.surrogate, cfg.prior, cfg.lambda1 * scale,
                      cfg.lambda2 * scale, activation=cfg.activation)
    if cfg.recon_space == "pixel":
        decoder = ae.decoder.copy()
        decoder.set_mode("inference")
        history = fit_vae(head, codes, x, cfg.lr, cfg.batch_size, cfg.head_epochs, rng,
                          pixel_decoder=decoder, on_step=on_step)
    else:
        history = fit_vae(head, codes, codes, cfg.lr, cfg.batch_size, cfg.head_epochs, rng,
                          on_step=on_step)
    return head, history


def posterior_means(model: Vae, x, batch_size: int = 1024) -> np.ndarray:
    if not model.trained:
        raise UntrainedModelError("VAE has not been trained")
    x = np.asarray(x)
    out = [np.asarray(model.posterior(x[i:i + batch_size]).mu) for i in range(0, len(x), batch_size)]
    return np.concatenate(out)


def score(ae: AeModel, head: CasVaeHead, images, eval_noise: bool = False,
          rng: Rng | None = None) -> np.ndarray:
    """Classifier-unit score per image: posterior mean of z2 (or a sample if ``eval_noise``)."""
    codes = encode_codes(ae, images)
    if not head.trained:
        raise UntrainedModelError("CasVAE head has not been trained")
    q = head.posterior(codes)
    mu, lv = np.asarray(q.mu)[:, 1], np.asarray(q.log_var)[:, 1]
    if eval_noise:
        return reparameterize(DiagGaussian(mu, lv), (rng or Rng(0)).normal(size=mu.shape)).astype(np.float64)
    return mu.astype(np.float64)


def train_vanilla_vae(data, cfg: TrainConfig, two_peak_unit: SurrogateKind | None = None):
    """Baseline VAE on flattened pixels; returns ``(model, posterior means, history)``.

    ``two_peak_unit`` swaps the last unit's KL for a two-peak surrogate (the
    DKL-VAE baseline).
    """
    x = _as_matrix(data)
    rng = Rng.derive(cfg.seed, 3)
    model = VanillaVae(x.shape[1], rng, cfg.latent_dim, activation=cfg.activation,
                       two_peak_unit=two_peak_unit, prior=cfg.prior)
    scale = 1.0 / x.shape[1] if cfg.per_dim_divergence else 1.0
    model.unit_weights = model.unit_weights * scale
    history = fit_vae(model, x, x, cfg.lr, cfg.batch_size, cfg.epochs, rng)
    return model, posterior_means(model, x), history


# -- checkpoints -------------------------------------------------------------------

def stack_tensors(prefix: str, stack: Stack) -> dict[str, np.ndarray]:
    """Named float32 tensors of a stack, batch-norm running statistics included."""
    out = {}
    for i, layer in enumerate(stack.layers):
        if isinstance(layer, Dense):
            names = ("weight", "bias")
        elif isinstance(layer, BatchNorm):
            names = ("gamma", "beta", "running_mean", "running_var")
        else:
            continue
        for name in names:
            out[f"{prefix}.{i}.{name}"] = np.asarray(getattr(layer, name), dtype=np.float32)
    return out


def save_checkpoint(path, models: dict, meta: dict | None = None) -> None:
    """Write ``{name: model}`` as sections ``name.encoder.<layer>.<tensor>`` plus meta."""
    sections: dict[str, np.ndarray] = {}
    for name, model in models.items():
        sections.update(stack_tensors(f"{name}.encoder", model.encoder))
        sections.update(stack_tensors(f"{name}.decoder", model.decoder))
    sections["meta"] = container.encode_meta(meta or {})
    container.write_sections(path, sections)


def load_checkpoint(path, models: dict) -> dict[str, str]:
    """Copy saved tensors into freshly built models of matching shape; returns meta."""
    sections = container.read_sections(path)
    for name, model in models.items():
        for part in ("encoder", "decoder"):
            stack = getattr(model, part)
            for key, arr in stack_tensors(f"{name}.{part}", stack).items():
                if key not in sections or sections[key].shape != arr.shape:
                    raise container.ContainerError(f"checkpoint section {key!r} missing or misshapen")
                _, _, idx, attr = key.split(".")
                getattr(stack.layers[int(idx)], attr)[...] = sections[key]
        if isinstance(model, AeModel):
            model.set_mode("inference")
        model.trained = True
    return container.decode_meta(sections["meta"]) if "meta" in sections else {}
