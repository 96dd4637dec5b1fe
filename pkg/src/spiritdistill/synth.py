"""Procedural road-scene domains for desk-scale experiments.

Each scene is a textured background (sky band over ground) with a polygonal
road wedge running from the bottom edge toward the horizon; labels are
binary (road=1, background=0). The three domains share the road geometry
distribution but differ in style:

  - source:     wide palette/illumination variety, shadows present; the
                large labeled split a toy teacher is pretrained on.
  - target:     one palette, never any shadow bands; the scarce labeled split.
  - proximity:  target-like geometry, shifted illumination/texture, shadow
                bands on many images; generated without labels.

Validation targets can draw shadowed scenes, so robustness to conditions the
tiny training split never shows is actually measurable.

Generation is pure numpy driven by ``numpy.random.Generator``; a fixed seed
reproduces every dataset bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .data import Domain, DomainDataset, Sample


@dataclass(frozen=True)
class StyleParams:
    """Per-domain appearance controls."""

    brightness: tuple[float, float] = (0.9, 1.1)
    tint: tuple[float, float, float] = (1.0, 1.0, 1.0)
    road_gray: tuple[float, float] = (0.38, 0.5)
    ground_green: tuple[float, float] = (0.25, 0.45)
    noise_sigma: float = 0.04
    texture_amp: float = 0.08
    shadow_prob: float = 0.0
    shadow_strength: tuple[float, float] = (0.45, 0.65)
    lane_marking_prob: float = 0.5


TARGET_STYLE = StyleParams()
PROXIMITY_STYLE = StyleParams(
    brightness=(0.7, 1.25),
    tint=(1.06, 1.0, 0.88),
    road_gray=(0.32, 0.55),
    ground_green=(0.2, 0.5),
    noise_sigma=0.05,
    texture_amp=0.1,
    shadow_prob=0.6,
)
SOURCE_STYLE = StyleParams(
    brightness=(0.65, 1.3),
    tint=(1.0, 1.0, 1.0),
    road_gray=(0.3, 0.58),
    ground_green=(0.18, 0.52),
    noise_sigma=0.05,
    texture_amp=0.12,
    shadow_prob=0.45,
)
VAL_STYLE = replace(TARGET_STYLE, shadow_prob=0.4)


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 64
    n_source: int = 192
    n_train_target: int = 16
    n_val_target: int = 32
    n_proximity: int = 64
    seed: int = 7
    target_style: StyleParams = TARGET_STYLE
    proximity_style: StyleParams = PROXIMITY_STYLE
    source_style: StyleParams = SOURCE_STYLE
    val_style: StyleParams = VAL_STYLE

    def __post_init__(self):
        if self.image_size < 32:
            raise ValueError("image_size must be >= 32")
        for name in ("n_source", "n_train_target", "n_val_target", "n_proximity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in
             ("image_size", "n_source", "n_train_target", "n_val_target",
              "n_proximity", "seed")}
        for k in ("target_style", "proximity_style", "source_style", "val_style"):
            d[k] = vars(getattr(self, k))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        kwargs = dict(d)
        for k in ("target_style", "proximity_style", "source_style", "val_style"):
            if k in kwargs and isinstance(kwargs[k], dict):
                sd = {kk: tuple(v) if isinstance(v, list) else v
                      for kk, v in kwargs[k].items()}
                kwargs[k] = StyleParams(**sd)
        return cls(**kwargs)


def _texture(rng: np.random.Generator, size: int, amp: float) -> np.ndarray:
    """Smooth low-frequency texture in [-amp, amp]."""
    coarse = rng.normal(0.0, 1.0, size=(size // 8 + 2, size // 8 + 2))
    # bilinear blow-up without pulling in an interpolation dependency
    ys = np.linspace(0, coarse.shape[0] - 1.001, size)
    xs = np.linspace(0, coarse.shape[1] - 1.001, size)
    y0 = ys.astype(int)
    x0 = xs.astype(int)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    g = (coarse[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
         + coarse[np.ix_(y0 + 1, x0)] * fy * (1 - fx)
         + coarse[np.ix_(y0, x0 + 1)] * (1 - fy) * fx
         + coarse[np.ix_(y0 + 1, x0 + 1)] * fy * fx)
    return (amp * g / max(1e-6, np.abs(g).max())).astype(np.float32)


def _make_scene(rng: np.random.Generator, size: int,
                style: StyleParams) -> tuple[np.ndarray, np.ndarray, bool]:
    """Render one scene; returns (image HWC float32, mask HW uint8, shadowed)."""
    h = w = size
    yy = np.arange(h, dtype=np.float32)[:, None]
    xx = np.arange(w, dtype=np.float32)[None, :]

    horizon = rng.uniform(0.3, 0.5) * h

    # road wedge: interpolate center/half-width from horizon to bottom edge
    cx_bottom = rng.uniform(0.3, 0.7) * w
    cx_top = cx_bottom + rng.uniform(-0.25, 0.25) * w
    hw_bottom = rng.uniform(0.22, 0.4) * w
    hw_top = rng.uniform(0.02, 0.07) * w
    t = np.clip((yy - horizon) / max(1.0, h - 1 - horizon), 0.0, 1.0)
    center = cx_top + (cx_bottom - cx_top) * t
    halfw = hw_top + (hw_bottom - hw_top) * t
    road = (yy >= horizon) & (np.abs(xx - center) <= halfw)

    # background: sky gradient above the horizon, textured ground below
    sky_top = np.array([0.55, 0.68, 0.85], dtype=np.float32) * rng.uniform(0.85, 1.1)
    sky_fade = np.clip(yy / max(1.0, horizon), 0, 1.2)
    green = rng.uniform(*style.ground_green)
    ground = np.array([green * 0.8, green, green * 0.45], dtype=np.float32)
    img = np.empty((h, w, 3), dtype=np.float32)
    img[:] = sky_top[None, None, :] * (1.0 - 0.25 * sky_fade)[..., None]
    below = np.broadcast_to(yy >= horizon, (h, w))
    img[below] = ground[None, :]

    img += _texture(rng, size, style.texture_amp)[..., None]

    # road surface: gray with a slight distance-lightening gradient
    gray = rng.uniform(*style.road_gray)
    shade_full = np.broadcast_to(gray * (0.9 + 0.25 * (1.0 - t)), (h, w))
    for c in range(3):
        chan = img[..., c]
        chan[road] = shade_full[road]

    # center lane marking keeps the road interior from being one flat value
    if rng.random() < style.lane_marking_prob:
        lane = road & (np.abs(xx - center) <= np.maximum(1.0, halfw * 0.06))
        for c in range(3):
            chan = img[..., c]
            chan[lane] = 0.85

    # shadow bands: multiplicative darkening across road AND background
    shadowed = False
    if rng.random() < style.shadow_prob:
        shadowed = True
        n_bands = int(rng.integers(1, 3))
        for _ in range(n_bands):
            angle = rng.uniform(-0.8, 0.8)
            offset = rng.uniform(0.2, 0.8) * h
            width = rng.uniform(0.08, 0.2) * h
            d = yy + angle * xx - offset
            band = np.abs(d) <= width
            strength = rng.uniform(*style.shadow_strength)
            img[band] *= strength

    img *= rng.uniform(*style.brightness)
    img *= np.array(style.tint, dtype=np.float32)[None, None, :]
    img += rng.normal(0.0, style.noise_sigma, size=img.shape).astype(np.float32)
    np.clip(img, 0.0, 1.0, out=img)

    return img, road.astype(np.uint8), shadowed


def generate_domain(domain: Domain, n: int, size: int, style: StyleParams,
                    seed: int, labeled: bool = True,
                    id_prefix: str | None = None) -> DomainDataset:
    rng = np.random.default_rng(seed)
    prefix = id_prefix or domain.value
    samples = []
    shadow_ids = []
    for i in range(n):
        img, mask, shadowed = _make_scene(rng, size, style)
        if shadowed:
            shadow_ids.append(f"{prefix}-{i:04d}")
        samples.append(Sample(
            id=f"{prefix}-{i:04d}",
            image=torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))),
            label=torch.from_numpy(mask.astype(np.int64)) if labeled else None,
            domain=domain,
        ))
    meta = {"shadow_ids": shadow_ids, "style": vars(style), "seed": seed}
    return DomainDataset(samples=samples, domain=domain, n_classes=2, meta=meta)


def make_synthetic_domains(cfg: SynthConfig
                           ) -> tuple[DomainDataset, DomainDataset, DomainDataset]:
    """Build the (source, target, proximity) training datasets."""
    source = generate_domain(Domain.SOURCE, cfg.n_source, cfg.image_size,
                             cfg.source_style, seed=cfg.seed * 4 + 0)
    target = generate_domain(Domain.TARGET, cfg.n_train_target, cfg.image_size,
                             cfg.target_style, seed=cfg.seed * 4 + 1)
    proximity = generate_domain(Domain.PROXIMITY, cfg.n_proximity, cfg.image_size,
                                cfg.proximity_style, seed=cfg.seed * 4 + 2,
                                labeled=False)
    return source, target, proximity


def make_validation_target(cfg: SynthConfig) -> DomainDataset:
    """Held-out labeled target-domain scenes, including shadowed ones."""
    return generate_domain(Domain.TARGET, cfg.n_val_target, cfg.image_size,
                           cfg.val_style, seed=cfg.seed * 4 + 3,
                           id_prefix="target-val")
