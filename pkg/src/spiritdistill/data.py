"""Domain datasets, preprocessing, and the ratio-r mixed sample stream.

Images are float32 CHW tensors in [0, 1]; labels are int64 HW masks with
values below the dataset's class count or ``IGNORE_INDEX``. Target-domain
training data is labeled, proximity-domain data never needs labels.

All randomness (crops, flips, mixing) flows through explicit
``numpy.random.Generator`` instances so any stream is reproducible from its
seed; torch RNG is reserved for model weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

IGNORE_INDEX = 255

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


class Domain(str, Enum):
    SOURCE = "source"
    TARGET = "target"
    PROXIMITY = "proximity"

    @property
    def requires_labels(self) -> bool:
        return self is not Domain.PROXIMITY


@dataclass
class Sample:
    """One image with an optional segmentation mask and a domain tag."""

    id: str
    image: torch.Tensor         # float32, (3, H, W), values in [0, 1]
    label: torch.Tensor | None  # int64, (H, W) or None
    domain: Domain

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"sample {self.id}: image must be (3, H, W), "
                             f"got {tuple(self.image.shape)}")
        if self.label is not None and self.label.shape != self.image.shape[-2:]:
            raise ValueError(
                f"sample {self.id}: label shape {tuple(self.label.shape)} does not "
                f"match image {tuple(self.image.shape[-2:])}")

    @property
    def size(self) -> tuple[int, int]:
        return self.image.shape[-2], self.image.shape[-1]


@dataclass
class DomainDataset:
    """An ordered collection of samples from a single domain."""

    samples: list[Sample]
    domain: Domain
    n_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for s in self.samples:
            if s.domain != self.domain:
                raise ValueError(f"sample {s.id} tagged {s.domain}, "
                                 f"dataset is {self.domain}")
            if s.label is not None:
                bad = s.label[(s.label >= self.n_classes) & (s.label != IGNORE_INDEX)]
                if bad.numel():
                    raise ValueError(
                        f"sample {s.id}: label value {int(bad[0])} >= "
                        f"n_classes={self.n_classes}")

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i: int) -> Sample:
        return self.samples[i]

    @property
    def labeled(self) -> bool:
        return all(s.label is not None for s in self.samples)


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Resize:
    height: int
    width: int


@dataclass(frozen=True)
class RandomCrop:
    size: int


@dataclass(frozen=True)
class RandomHFlip:
    p: float = 0.5


@dataclass(frozen=True)
class MaxPoolDownsample:
    kernel: int = 2


Step = Resize | RandomCrop | RandomHFlip | MaxPoolDownsample


@dataclass(frozen=True)
class PreprocessSpec:
    """Ordered preprocessing steps applied to image and label in lockstep."""

    steps: tuple[Step, ...] = ()

    def to_dict(self) -> dict:
        out = []
        for s in self.steps:
            out.append({"kind": type(s).__name__.lower(), **vars(s)})
        return {"steps": out}

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessSpec":
        kinds = {"resize": Resize, "randomcrop": RandomCrop,
                 "randomhflip": RandomHFlip, "maxpooldownsample": MaxPoolDownsample}
        steps = []
        for s in d.get("steps", []):
            s = dict(s)
            steps.append(kinds[s.pop("kind")](**s))
        return cls(steps=tuple(steps))


def target_preprocess(crop: int, hflip_p: float = 0.5,
                      maxpool_kernel: int = 2) -> PreprocessSpec:
    """Target-domain training chain: crop, flip, maxpool (in that order)."""
    return PreprocessSpec((RandomCrop(crop), RandomHFlip(hflip_p),
                           MaxPoolDownsample(maxpool_kernel)))


def proximity_preprocess(resize_to: tuple[int, int], crop: int,
                         hflip_p: float = 0.5,
                         maxpool_kernel: int = 2) -> PreprocessSpec:
    """Proximity-domain chain: resize first, then the target chain."""
    return PreprocessSpec((Resize(*resize_to), RandomCrop(crop),
                           RandomHFlip(hflip_p), MaxPoolDownsample(maxpool_kernel)))


def eval_preprocess(maxpool_kernel: int = 2) -> PreprocessSpec:
    """Deterministic evaluation chain: downsample only."""
    return PreprocessSpec((MaxPoolDownsample(maxpool_kernel),))


def _resize(image: torch.Tensor, label: torch.Tensor | None, h: int, w: int):
    image = F.interpolate(image.unsqueeze(0), size=(h, w), mode="bilinear",
                          align_corners=False).squeeze(0)
    if label is not None:
        label = F.interpolate(label.unsqueeze(0).unsqueeze(0).float(), size=(h, w),
                              mode="nearest").squeeze(0).squeeze(0).long()
    return image, label


def preprocess(sample: Sample, spec: PreprocessSpec,
               rng: np.random.Generator) -> Sample:
    """Apply the spec's steps in order; label follows every spatial move.

    Raises ValueError when a crop exceeds the current image size or a
    maxpool kernel does not divide it (silent truncation would desynchronize
    image and label grids).
    """
    image, label = sample.image, sample.label
    for step in spec.steps:
        h, w = image.shape[-2], image.shape[-1]
        if isinstance(step, Resize):
            image, label = _resize(image, label, step.height, step.width)
        elif isinstance(step, RandomCrop):
            if step.size > h or step.size > w:
                raise ValueError(
                    f"crop {step.size} larger than image {h}x{w} (sample {sample.id})")
            top = int(rng.integers(0, h - step.size + 1))
            left = int(rng.integers(0, w - step.size + 1))
            image = image[:, top:top + step.size, left:left + step.size]
            if label is not None:
                label = label[top:top + step.size, left:left + step.size]
        elif isinstance(step, RandomHFlip):
            if rng.random() < step.p:
                image = torch.flip(image, dims=[-1])
                if label is not None:
                    label = torch.flip(label, dims=[-1])
        elif isinstance(step, MaxPoolDownsample):
            k = step.kernel
            if h % k or w % k:
                raise ValueError(
                    f"maxpool kernel {k} does not divide image {h}x{w} "
                    f"(sample {sample.id})")
            image = F.max_pool2d(image.unsqueeze(0), kernel_size=k).squeeze(0)
            if label is not None:
                label = label[::k, ::k]
        else:
            raise TypeError(f"unknown preprocessing step {step!r}")
    return Sample(id=sample.id, image=image.contiguous(), label=label,
                  domain=sample.domain)


# ---------------------------------------------------------------------------
# Mixed sampling (the ratio-r stream used during feature-based distillation)
# ---------------------------------------------------------------------------

SD_ONLY = math.inf  # target-domain-only mixing (the r -> inf limit)


@dataclass(frozen=True)
class MixSpec:
    """Ratio r of target to proximity draws; ``SD_ONLY`` disables mixing."""

    r: float
    seed: int = 0

    def __post_init__(self):
        if not (self.r >= 0):
            raise ValueError(f"mixing ratio must be >= 0, got {self.r}")

    @property
    def sd_only(self) -> bool:
        return math.isinf(self.r)

    @property
    def target_probability(self) -> float:
        if self.sd_only:
            return 1.0
        return self.r / (1.0 + self.r)

    @classmethod
    def target_only(cls, seed: int = 0) -> "MixSpec":
        return cls(r=SD_ONLY, seed=seed)


def shuffle_select(d_t: DomainDataset, d_p: DomainDataset | None, mix: MixSpec,
                   count: int) -> Iterator[Sample]:
    """Emit `count` samples, each drawn from the target domain with
    probability r/(1+r) and from the proximity domain otherwise.

    Within-domain selection is uniform with replacement. The stream is a pure
    function of (d_t, d_p, mix, count).
    """
    p = mix.target_probability
    if len(d_t) == 0:
        raise ValueError("target dataset is empty")
    if p < 1.0 and (d_p is None or len(d_p) == 0):
        raise ValueError(
            f"mixing ratio r={mix.r} draws proximity samples but the proximity "
            f"dataset is empty")

    def stream() -> Iterator[Sample]:
        rng = np.random.default_rng(mix.seed)
        for _ in range(count):
            if p >= 1.0 or rng.random() < p:
                yield d_t[int(rng.integers(0, len(d_t)))]
            else:
                yield d_p[int(rng.integers(0, len(d_p)))]

    return stream()


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

def collate(samples: Sequence[Sample]) -> tuple[torch.Tensor, torch.Tensor | None]:
    """Stack samples into (images, labels); labels is None if any are missing."""
    images = torch.stack([s.image for s in samples])
    if all(s.label is not None for s in samples):
        labels = torch.stack([s.label for s in samples])
    else:
        labels = None
    return images, labels


def batches_from(stream: Iterator[Sample], batch_size: int,
                 spec: PreprocessSpec, rng: np.random.Generator
                 ) -> Iterator[list[Sample]]:
    """Group a sample stream into preprocessed batches of `batch_size`."""
    batch: list[Sample] = []
    for sample in stream:
        batch.append(preprocess(sample, spec, rng))
        if len(batch) == batch_size:
            yield batch
            batch = []
    if batch:
        yield batch


# ---------------------------------------------------------------------------
# Disk I/O (layout: <root>/images/*.png|jpg, <root>/labels/*.png)
# ---------------------------------------------------------------------------

def load_dataset(root: str | Path, domain: Domain, n_classes: int,
                 class_map: dict[int, int] | None = None) -> DomainDataset:
    """Load a dataset directory; image/label files are paired by basename.

    Raw label ids are remapped through `class_map`; ids it does not cover
    fall back to background 0. Label files are required for every sample
    unless the domain is PROXIMITY.
    """
    root = Path(root)
    images_dir = root / "images"
    labels_dir = root / "labels"
    if not images_dir.is_dir():
        raise FileNotFoundError(f"{images_dir} does not exist")

    image_files = sorted(p for p in images_dir.iterdir()
                         if p.suffix.lower() in IMAGE_SUFFIXES)
    if not image_files:
        raise ValueError(f"no images found under {images_dir}")

    label_files = {}
    if labels_dir.is_dir():
        label_files = {p.stem: p for p in labels_dir.iterdir()
                       if p.suffix.lower() == ".png"}

    if domain.requires_labels:
        missing = [p.stem for p in image_files if p.stem not in label_files]
        if missing:
            raise ValueError(
                f"domain {domain.value} requires labels but none found for: "
                + ", ".join(sorted(missing)))

    samples = []
    for path in image_files:
        try:
            image = read_image(path)
        except Exception as exc:
            raise ValueError(f"unreadable image {path}: {exc}") from exc
        label = None
        if path.stem in label_files:
            label = read_mask(label_files[path.stem])
            if class_map is not None:
                label = remap_labels(label, class_map)
        samples.append(Sample(id=path.stem, image=image, label=label, domain=domain))
    return DomainDataset(samples=samples, domain=domain, n_classes=n_classes)


def save_dataset(dataset: DomainDataset, root: str | Path) -> Path:
    """Write a dataset in the standard directory layout."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    for s in dataset.samples:
        arr = (s.image.clamp(0, 1) * 255).round().byte().permute(1, 2, 0).numpy()
        Image.fromarray(arr).save(root / "images" / f"{s.id}.png")
        if s.label is not None:
            Image.fromarray(s.label.numpy().astype(np.uint8)).save(
                root / "labels" / f"{s.id}.png")
    return root


def read_image(path: Path) -> torch.Tensor:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def read_mask(path: Path) -> torch.Tensor:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.int64)
    return torch.from_numpy(arr)


def remap_labels(label: torch.Tensor, class_map: dict[int, int]) -> torch.Tensor:
    out = torch.zeros_like(label)
    for raw, mapped in class_map.items():
        out[label == raw] = mapped
    out[label == IGNORE_INDEX] = IGNORE_INDEX
    return out
