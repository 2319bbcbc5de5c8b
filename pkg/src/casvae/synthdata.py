"""Synthetic multi-band star/galaxy cutouts.

Stars are Gaussian point-spread functions; galaxies are elliptical
exponential discs convolved with the same PSF (rendered analytically in the
Fourier domain). Each image draws its parameters from its own substream
``Rng.derive(seed, split, index)`` so generation is order independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import container
from .errors import ConfigError, DomainError, InsufficientDataError
from .rng import Rng

STAR, GALAXY = 0, 1
SERSIC1_B = 1.6783469900166608  # half-light radius / scale length of an exponential disc


@dataclass
class SceneParams:
    object_class: int
    flux: float
    center_jitter: tuple[float, float] = (0.0, 0.0)  # (dy, dx) pixels
    psf_sigma: float = 1.2
    half_light_radius: float = 3.0
    axis_ratio: float = 1.0
    position_angle: float = 0.0
    channel_ratios: tuple[float, ...] = (1.0,)

    def validate(self) -> None:
        if self.object_class not in (STAR, GALAXY):
            raise DomainError(f"object_class must be 0 or 1, got {self.object_class}")
        if not self.flux > 0:
            raise DomainError("flux must be positive")
        if not self.psf_sigma > 0:
            raise DomainError("psf_sigma must be positive")
        if not 0 < self.axis_ratio <= 1:
            raise DomainError("axis_ratio must lie in (0, 1]")
        if self.object_class == GALAXY and not self.half_light_radius > self.psf_sigma:
            raise DomainError("galaxies need half_light_radius > psf_sigma")


@dataclass
class GeneratorConfig:
    """Population the scene parameters are drawn from."""

    flux_range: tuple[float, float] = (50.0, 5000.0)  # log-uniform
    psf_sigma_range: tuple[float, float] = (1.0, 1.4)
    hlr_range: tuple[float, float] = (1.5, 3.5)
    axis_ratio_range: tuple[float, float] = (0.3, 1.0)
    jitter_std: float = 0.5
    color_mean: tuple[float, float] = (0.0, 0.4)  # per class, log flux slope across bands
    color_std: float = 0.3
    contaminant_radius: tuple[float, float] = (0.25, 0.4)  # fraction of frame size
    contaminant_flux: tuple[float, float] = (0.3, 0.7)


@dataclass
class ImageSet:
    images: np.ndarray  # (N, C, H, W) float32
    labels: np.ndarray | None = None  # (N,) uint8, 0=star 1=galaxy
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        if self.images.ndim != 4:
            raise DomainError(f"images must be N x C x H x W, got {self.images.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.uint8)
            if self.labels.shape != (len(self.images),):
                raise DomainError("labels length must equal the number of images")

    def __len__(self) -> int:
        return len(self.images)

    def flat(self) -> np.ndarray:
        return self.images.reshape(len(self.images), -1)

    def without_labels(self) -> "ImageSet":
        return ImageSet(self.images, None, dict(self.meta))


@dataclass
class NormStats:
    beta: np.ndarray  # asinh softening per channel
    mean: np.ndarray  # post-stretch mean per channel
    std: np.ndarray  # post-stretch std per channel

    STD_FLOOR = 1e-6

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float32)
        self.mean = np.asarray(self.mean, dtype=np.float32)
        self.std = np.asarray(self.std, dtype=np.float32)
        if np.any(self.std <= 0) or np.any(self.beta <= 0):
            raise DomainError("normalization std and beta must be positive")

    def save(self, path: str | Path) -> None:
        container.write_sections(path, {"beta": self.beta, "mean": self.mean, "std": self.std})

    @classmethod
    def load(cls, path: str | Path) -> "NormStats":
        s = container.read_sections(path)
        return cls(s["beta"], s["mean"], s["std"])


# -- rendering ---------------------------------------------------------------

def _center(params: SceneParams, H: int, W: int) -> tuple[float, float]:
    dy, dx = params.center_jitter
    cy, cx = (H - 1) / 2 + dy, (W - 1) / 2 + dx
    if not (0 <= cy <= H - 1 and 0 <= cx <= W - 1):
        raise DomainError(f"source center ({cy:.2f}, {cx:.2f}) falls outside the {H}x{W} frame")
    return cy, cx


def _ratios(params: SceneParams, C: int) -> np.ndarray:
    r = np.asarray(params.channel_ratios, dtype=np.float64)
    if r.size == 1:
        return np.full(C, r[0])
    if r.size != C:
        raise DomainError(f"need {C} channel ratios, got {r.size}")
    return r


def _star_plane(flux, sigma, cy, cx, H, W):
    y = np.arange(H)[:, None] - cy
    x = np.arange(W)[None, :] - cx
    return flux / (2 * math.pi * sigma ** 2) * np.exp(-(x * x + y * y) / (2 * sigma ** 2))


def _galaxy_plane(flux, params: SceneParams, cy, cx, H, W):
    # render on a padded periodic grid; the disc x PSF transform is analytic
    n = 2 * max(H, W)
    oy, ox = (n - H) // 2, (n - W) // 2
    ky = np.fft.fftfreq(n)[:, None]
    kx = np.fft.fftfreq(n)[None, :]
    c, s = math.cos(params.position_angle), math.sin(params.position_angle)
    # wavevector in the disc's principal frame, minor axis compressed by q
    k_major = c * kx + s * ky
    k_minor = (-s * kx + c * ky) * params.axis_ratio
    scale = params.half_light_radius / SERSIC1_B
    disc = (1 + (2 * math.pi * scale) ** 2 * (k_major ** 2 + k_minor ** 2)) ** -1.5
    psf = np.exp(-2 * math.pi ** 2 * params.psf_sigma ** 2 * (kx ** 2 + ky ** 2))
    phase = np.exp(-2j * math.pi * (kx * (cx + ox) + ky * (cy + oy)))
    plane = np.fft.ifft2(flux * disc * psf * phase).real
    return plane[oy:oy + H, ox:ox + W]


def render_star(params: SceneParams, C: int, H: int, W: int) -> np.ndarray:
    """Isotropic Gaussian PSF; each band integrates to ``flux * ratio`` over the plane."""
    params.validate()
    cy, cx = _center(params, H, W)
    plane = _star_plane(1.0, params.psf_sigma, cy, cx, H, W)
    return (_ratios(params, C)[:, None, None] * params.flux * plane).astype(np.float32)


def render_galaxy(params: SceneParams, C: int, H: int, W: int) -> np.ndarray:
    """Exponential (Sersic n=1) elliptical disc convolved with the PSF."""
    params.validate()
    cy, cx = _center(params, H, W)
    plane = _galaxy_plane(1.0, params, cy, cx, H, W)
    return (_ratios(params, C)[:, None, None] * params.flux * plane).astype(np.float32)


def render(params: SceneParams, C: int, H: int, W: int) -> np.ndarray:
    if params.object_class == STAR:
        return render_star(params, C, H, W)
    return render_galaxy(params, C, H, W)


def draw_scene(object_class: int, rng: Rng, C: int, cfg: GeneratorConfig | None = None,
               flux: float | None = None) -> SceneParams:
    cfg = cfg or GeneratorConfig()
    lo, hi = cfg.flux_range
    log_flux = rng.uniform(math.log(lo), math.log(hi))
    psf = rng.uniform(*cfg.psf_sigma_range)
    jitter = tuple(float(v) for v in rng.normal(0.0, cfg.jitter_std, size=2))
    hlr = max(rng.uniform(*cfg.hlr_range), psf * 1.05)
    q = rng.uniform(*cfg.axis_ratio_range)
    angle = rng.uniform(0.0, math.pi)
    slope = rng.normal(cfg.color_mean[object_class], cfg.color_std)
    bands = np.arange(C) - (C - 1) / 2
    ratios = np.exp(slope * bands / max(C - 1, 1))
    ratios = ratios / ratios.mean()
    return SceneParams(object_class, math.exp(log_flux) if flux is None else flux,
                       jitter, psf, hlr, q, angle, tuple(float(r) for r in ratios))


def add_noise_and_contaminant(image: np.ndarray, noise_sigma: float, contamination_prob: float,
                              rng: Rng, primary: SceneParams | None = None,
                              cfg: GeneratorConfig | None = None) -> np.ndarray:
    """Optionally blend in an off-centre source of the opposite class, then add noise.

    The contaminant sits at 25-40 % of the frame size from the centre and
    carries 30-70 % of the primary's flux; without ``primary`` it is a star
    of unit-mean flux.
    """
    if noise_sigma < 0:
        raise DomainError("noise_sigma must be non-negative")
    cfg = cfg or GeneratorConfig()
    C, H, W = image.shape
    out = image.astype(np.float64)
    if contamination_prob > 0 and rng.random() < contamination_prob:
        base_class = STAR if primary is None else primary.object_class
        base_flux = 1.0 if primary is None else primary.flux
        frac = rng.uniform(*cfg.contaminant_flux)
        other = draw_scene(1 - base_class, rng, C, cfg, flux=frac * base_flux)
        if primary is not None:
            other.psf_sigma = primary.psf_sigma
            other.half_light_radius = max(other.half_light_radius, 1.05 * other.psf_sigma)
        radius = rng.uniform(*cfg.contaminant_radius) * min(H, W)
        theta = rng.uniform(0.0, 2 * math.pi)
        other.center_jitter = (radius * math.sin(theta), radius * math.cos(theta))
        out += render(other, C, H, W)
    if noise_sigma > 0:
        out += rng.normal(0.0, noise_sigma, size=out.shape)
    return out.astype(np.float32)


def generate_dataset(n: int, class_balance: float = 0.5, contamination_prob: float = 0.1,
                     noise_sigma: float = 1.0, seed: int = 0, C: int = 3, H: int = 32,
                     W: int = 32, split: int = 0, cfg: GeneratorConfig | None = None) -> ImageSet:
    """Generate ``n`` labelled images; ``class_balance`` is the galaxy fraction."""
    if n < 2:
        raise InsufficientDataError("need at least 2 images")
    if not 0 <= class_balance <= 1:
        raise ConfigError("class_balance must lie in [0, 1]")
    n_gal = int(round(n * class_balance))
    labels = np.zeros(n, dtype=np.uint8)
    labels[Rng.derive(seed, split, 2**32).permutation(n)[:n_gal]] = GALAXY
    images = np.empty((n, C, H, W), dtype=np.float32)
    for i in range(n):
        rng = Rng.derive(seed, split, i)
        params = draw_scene(int(labels[i]), rng, C, cfg)
        img = render(params, C, H, W)
        images[i] = add_noise_and_contaminant(img, noise_sigma, contamination_prob, rng, params, cfg)
    meta = {"seed": seed, "split": split, "n": n, "balance": class_balance,
            "contamination": contamination_prob, "noise": noise_sigma,
            "channels": C, "height": H, "width": W}
    return ImageSet(images, labels, {k: str(v) for k, v in meta.items()})


# -- normalization -------------------------------------------------------------

def compute_norm_stats(images: np.ndarray) -> NormStats:
    x = np.asarray(images, dtype=np.float64)
    C = x.shape[1]
    beta, mean, std = np.empty(C), np.empty(C), np.empty(C)
    for c in range(C):
        v = x[:, c].ravel()
        if v.std() == 0:
            raise DomainError(f"channel {c} has zero variance")
        med = np.median(v)
        mad = np.median(np.abs(v - med))
        beta[c] = mad if mad > 0 else v.std()
    beta = beta.astype(np.float32).astype(np.float64)
    for c in range(C):
        y = np.arcsinh(x[:, c] / beta[c])
        mean[c], std[c] = y.mean(), y.std()
    return NormStats(beta, mean, np.maximum(std, NormStats.STD_FLOOR))


def apply_norm(images: np.ndarray, stats: NormStats) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    beta = stats.beta.astype(np.float64)[None, :, None, None]
    mean = stats.mean.astype(np.float64)[None, :, None, None]
    std = np.maximum(stats.std.astype(np.float64), NormStats.STD_FLOOR)[None, :, None, None]
    return ((np.arcsinh(x / beta) - mean) / std).astype(np.float32)


def normalize(data: ImageSet, stats: NormStats | None = None) -> tuple[ImageSet, NormStats]:
    """asinh stretch + per-channel standardization.

    Pass the training split's ``stats`` when normalizing an evaluation split.
    """
    if stats is None:
        stats = compute_norm_stats(data.images)
        # standardize against the float32-rounded stats actually stored
        x = np.arcsinh(data.images.astype(np.float64) / stats.beta.astype(np.float64)[None, :, None, None])
        stats = NormStats(stats.beta, x.mean(axis=(0, 2, 3)), np.maximum(x.std(axis=(0, 2, 3)), NormStats.STD_FLOOR))
    meta = dict(data.meta)
    meta.update({
        "norm_beta": ",".join(repr(float(v)) for v in stats.beta),
        "norm_mean": ",".join(repr(float(v)) for v in stats.mean),
        "norm_std": ",".join(repr(float(v)) for v in stats.std),
    })
    return ImageSet(apply_norm(data.images, stats), data.labels, meta), stats


# -- persistence ---------------------------------------------------------------

def save_set(data: ImageSet, path: str | Path, include_labels: bool = True) -> None:
    sections = {"images": data.images}
    if include_labels and data.labels is not None:
        sections["labels"] = data.labels
    sections["meta"] = container.encode_meta(data.meta)
    container.write_sections(path, sections)


def load_set(path: str | Path, with_labels: bool = True) -> ImageSet:
    """Load an ImageSet; ``with_labels=False`` never decodes a labels section."""
    s = container.read_sections(path, skip=() if with_labels else ("labels",))
    if "images" not in s:
        raise container.ContainerError(f"{path}: no images section")
    meta = container.decode_meta(s["meta"]) if "meta" in s else {}
    return ImageSet(s["images"], s.get("labels"), meta)
