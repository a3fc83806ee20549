"""Class splits, few-shot augmentation, episodic sampling and toy two-domain data.

On-disk layout::

    <root>/<split>/<domain>/<class_id>/<sample_id>.png

with ``split`` in ``source``, ``target_fewshot``, ``target_test`` and ``domain``
in ``source``, ``target``.  A split spec is a plain-text file with one
``<split> = <class ids...>`` line per split.
"""
from __future__ import annotations

import enum
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

SPLIT_NAMES = ("source", "target_fewshot", "target_test")
SPLIT_SPEC_FILE = "splits.txt"


class Domain(enum.IntEnum):
    SOURCE = 0
    TARGET = 1

    @property
    def dirname(self) -> str:
        return self.name.lower()


class SplitError(ValueError):
    """Invalid class partition."""


class SamplingError(ValueError):
    """An episode cannot be drawn from the given pool."""


class ConfigError(ValueError):
    """Unknown option or out-of-range setting."""


@dataclass(frozen=True)
class Sample:
    image: np.ndarray  # float32 [C, H, W] in [0, 1]
    class_id: int
    domain: Domain
    sample_id: str = ""


Pool = Dict[int, List[Sample]]


def _validate_disjoint(named: Mapping[str, Iterable[int]]) -> None:
    names = list(named)
    sets = {n: set(named[n]) for n in names}
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            common = sets[a] & sets[b]
            if common:
                raise SplitError(
                    f"class sets {a} and {b} overlap: {sorted(common)}")


@dataclass
class ClassSplit:
    source_pool: Pool
    fewshot_pool: Pool
    test_pool: Pool
    source_classes: frozenset = field(init=False)
    target_fewshot_classes: frozenset = field(init=False)
    target_test_classes: frozenset = field(init=False)

    def __post_init__(self):
        self.source_classes = frozenset(self.source_pool)
        self.target_fewshot_classes = frozenset(self.fewshot_pool)
        self.target_test_classes = frozenset(self.test_pool)
        _validate_disjoint({
            "source": self.source_classes,
            "target_fewshot": self.target_fewshot_classes,
            "target_test": self.target_test_classes,
        })
        for pool, domain in ((self.source_pool, Domain.SOURCE),
                             (self.fewshot_pool, Domain.TARGET),
                             (self.test_pool, Domain.TARGET)):
            for cls, samples in pool.items():
                for s in samples:
                    if s.domain != domain or s.class_id != cls:
                        raise SplitError(
                            f"sample {s.sample_id!r} of class {s.class_id} "
                            f"({s.domain.name}) filed under class {cls} "
                            f"({domain.name})")


@dataclass
class Episode:
    support: List[Sample]
    query: List[Sample]
    way: int
    shot: int
    queries_per_class: int
    domain: Domain

    @property
    def classes(self) -> List[int]:
        """Episode classes, in the order that defines local label 0..way-1."""
        return list(dict.fromkeys(s.class_id for s in self.support))

    def local_labels(self, samples: Sequence[Sample]) -> np.ndarray:
        index = {c: i for i, c in enumerate(self.classes)}
        return np.array([index[s.class_id] for s in samples], dtype=np.int64)

    def support_images(self) -> np.ndarray:
        return np.stack([s.image for s in self.support])

    def query_images(self) -> np.ndarray:
        return np.stack([s.image for s in self.query])


# --------------------------------------------------------------------------
# split file + loading


def parse_split_spec(text: str) -> Dict[str, List[int]]:
    spec: Dict[str, List[int]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SplitError(f"line {lineno}: expected '<split> = <ids>'")
        name, ids = (part.strip() for part in line.split("=", 1))
        if name not in SPLIT_NAMES:
            raise SplitError(f"line {lineno}: unknown split {name!r}")
        spec[name] = [int(tok) for tok in re.split(r"[,\s]+", ids) if tok]
    missing = [n for n in SPLIT_NAMES if n not in spec]
    if missing:
        raise SplitError(f"split spec lacks {missing}")
    return spec


def format_split_spec(spec: Mapping[str, Sequence[int]]) -> str:
    return "".join(f"{n} = {' '.join(str(c) for c in spec[n])}\n"
                   for n in SPLIT_NAMES)


def read_split_spec(path: os.PathLike) -> Dict[str, List[int]]:
    return parse_split_spec(Path(path).read_text())


def load_image(path: os.PathLike) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_image(image: np.ndarray, path: os.PathLike) -> None:
    arr = np.clip(np.rint(image.transpose(1, 2, 0) * 255.0), 0, 255)
    Image.fromarray(arr.astype(np.uint8)).save(path)


def load_class_dir(class_dir: Path, class_id: int, domain: Domain,
                   image_size: Optional[int] = None) -> List[Sample]:
    if not class_dir.is_dir():
        raise FileNotFoundError(f"missing class directory: {class_dir}")
    samples = []
    for png in sorted(class_dir.glob("*.png")):
        img = load_image(png)
        if image_size is not None and img.shape[1:] != (image_size, image_size):
            raise ValueError(f"{png}: expected {image_size}x{image_size}, "
                             f"got {img.shape[1]}x{img.shape[2]}")
        samples.append(Sample(img, class_id, domain, png.stem))
    if not samples:
        raise FileNotFoundError(f"no samples in {class_dir}")
    return samples


def make_splits(dataset_root: os.PathLike,
                split_spec: Optional[Mapping[str, Sequence[int]]] = None,
                k: Optional[int] = None,
                image_size: Optional[int] = None) -> ClassSplit:
    """Load the three class pools from ``dataset_root``.

    ``split_spec`` defaults to ``<root>/splits.txt``.  When ``k`` is given the
    few-shot pool is cut down to its first ``k`` samples per class.
    """
    root = Path(dataset_root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset not found: {root}")
    if split_spec is None:
        split_spec = read_split_spec(root / SPLIT_SPEC_FILE)
    _validate_disjoint({n: split_spec[n] for n in SPLIT_NAMES})

    def pool(split: str, domain: Domain) -> Pool:
        return {c: load_class_dir(root / split / domain.dirname / str(c), c,
                                  domain, image_size)
                for c in split_spec[split]}

    fewshot = pool("target_fewshot", Domain.TARGET)
    if k is not None:
        for c, samples in fewshot.items():
            if len(samples) < k:
                raise SamplingError(
                    f"class {c} has {len(samples)} few-shot samples, need {k}")
            fewshot[c] = samples[:k]
    return ClassSplit(pool("source", Domain.SOURCE), fewshot,
                      pool("target_test", Domain.TARGET))


# --------------------------------------------------------------------------
# augmentation


def hflip(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image[:, :, ::-1])


def five_crops(image: np.ndarray, pad: int = 8,
               rng: Optional[np.random.Generator] = None) -> List[np.ndarray]:
    """Four corner crops and one (optionally jittered) centre crop.

    Crops have the input size and are taken from the reflect-padded image.
    """
    _, h, w = image.shape
    padded = np.pad(image, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
    jy = jx = 0
    if rng is not None and pad > 1:
        jy, jx = rng.integers(-(pad // 2), pad // 2 + 1, size=2)
    offsets = [(0, 0), (0, 2 * pad), (2 * pad, 0), (2 * pad, 2 * pad),
               (pad + int(jy), pad + int(jx))]
    return [np.ascontiguousarray(padded[:, y:y + h, x:x + w])
            for y, x in offsets]


def augment_fewshot(fewshot_pool: Pool, k: int, pad: int = 8,
                    rng: Optional[np.random.Generator] = None) -> Pool:
    """Expand every original into 12 variants: itself plus 5 crops, each also
    horizontally flipped."""
    if k <= 0:
        raise SamplingError("few-shot pool is empty (k must be positive)")
    out: Pool = {}
    for cls in sorted(fewshot_pool):
        originals = fewshot_pool[cls]
        if len(originals) != k:
            raise SamplingError(
                f"class {cls} has {len(originals)} originals, expected {k}")
        variants = []
        for s in originals:
            views = [s.image] + five_crops(s.image, pad, rng)
            for i, view in enumerate(views):
                for flipped, img in ((0, view), (1, hflip(view))):
                    variants.append(Sample(img, s.class_id, s.domain,
                                           f"{s.sample_id}_v{i}f{flipped}"))
        out[cls] = variants
    return out


# --------------------------------------------------------------------------
# episodes


def sample_episode(pool: Pool, way: int, shot: int, queries: int,
                   rng: np.random.Generator,
                   domain: Optional[Domain] = None) -> Episode:
    if way < 1 or shot < 1 or queries < 0:
        raise SamplingError(f"invalid episode shape way={way} shot={shot} "
                            f"queries={queries}")
    classes = sorted(pool)
    if len(classes) < way:
        raise SamplingError(f"pool has {len(classes)} classes, need {way}")
    chosen = rng.choice(len(classes), size=way, replace=False)
    support, query = [], []
    for ci in chosen:
        cls = classes[int(ci)]
        samples = pool[cls]
        if len(samples) < shot + queries:
            raise SamplingError(
                f"class {cls} has {len(samples)} samples, need "
                f"{shot + queries} (shot={shot}, queries={queries})")
        idx = rng.permutation(len(samples))[:shot + queries]
        support.extend(samples[i] for i in idx[:shot])
        query.extend(samples[i] for i in idx[shot:])
    if domain is None:
        domain = support[0].domain
    if any(s.domain != domain for s in support + query):
        raise SamplingError("pool mixes domains")
    return Episode(support, query, way, shot, queries, domain)


def sample_source_episode(source_pool: Pool, n_sc: int, k: int, q: int,
                          rng: np.random.Generator,
                          n_meta: Optional[int] = None) -> Episode:
    if n_meta is not None and n_sc <= n_meta:
        raise SamplingError(f"source episodes need N_sc > N_meta "
                            f"({n_sc} <= {n_meta})")
    return sample_episode(source_pool, n_sc, k, q, rng, Domain.SOURCE)


def sample_target_episode(augmented_pool: Pool, n_dc: int, k: int, q: int,
                          rng: np.random.Generator) -> Episode:
    return sample_episode(augmented_pool, n_dc, k, q, rng, Domain.TARGET)


# --------------------------------------------------------------------------
# synthetic domain shift


def _luminance(image: np.ndarray) -> np.ndarray:
    return 0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2]


def _invert(image):
    return 1.0 - image


def _desaturate(image):
    lum = _luminance(image)
    return np.broadcast_to(lum, image.shape).copy()


# Sobel magnitude on a [0,1] image is at most 4*sqrt(2)
_SOBEL_MAX = 4.0 * np.sqrt(2.0)
_SKETCH_GAIN = 4.0


def _edge_sketch(image):
    lum = _luminance(image).astype(np.float64)
    mag = np.hypot(ndimage.sobel(lum, axis=0, mode="reflect"),
                   ndimage.sobel(lum, axis=1, mode="reflect"))
    strokes = np.clip(_SKETCH_GAIN * mag / _SOBEL_MAX, 0.0, 1.0)
    # dark strokes on a white background
    sketch = 1.0 - strokes
    return np.broadcast_to(sketch, image.shape).astype(image.dtype)


FILTERS = {"invert": _invert, "edge_sketch": _edge_sketch,
           "desaturate": _desaturate}


def synth_domain_shift(image: np.ndarray, filter: str) -> np.ndarray:
    try:
        fn = FILTERS[filter]
    except KeyError:
        raise ConfigError(f"unknown filter {filter!r}; "
                          f"choose from {sorted(FILTERS)}") from None
    out = fn(np.asarray(image, dtype=np.float32))
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# --------------------------------------------------------------------------
# toy dataset


@dataclass(frozen=True)
class _ClassPattern:
    hue: np.ndarray        # RGB foreground colour
    freq: float
    angle: float
    centre: np.ndarray     # (y, x) in [0, 1]
    radii: np.ndarray      # (ry, rx)
    shape: int             # 0 ellipse, 1 box, 2 ring


def _random_pattern(rng: np.random.Generator) -> _ClassPattern:
    return _ClassPattern(hue=rng.uniform(0.2, 1.0, size=3),
                         freq=float(rng.uniform(1.5, 5.0)),
                         angle=float(rng.uniform(0, np.pi)),
                         centre=rng.uniform(0.35, 0.65, size=2),
                         radii=rng.uniform(0.18, 0.35, size=2),
                         shape=int(rng.integers(3)))


def _render(p: _ClassPattern, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    cy, cx = p.centre + rng.normal(0, 0.04, size=2)
    ry, rx = p.radii * rng.uniform(0.85, 1.15)
    dy, dx = (yy - cy) / ry, (xx - cx) / rx
    if p.shape == 0:
        mask = dy ** 2 + dx ** 2 <= 1.0
    elif p.shape == 1:
        mask = (np.abs(dy) <= 1.0) & (np.abs(dx) <= 1.0)
    else:
        r2 = dy ** 2 + dx ** 2
        mask = (r2 <= 1.0) & (r2 >= 0.35)
    angle = p.angle + rng.normal(0, 0.1)
    phase = rng.uniform(0, 2 * np.pi)
    proj = np.cos(angle) * xx + np.sin(angle) * yy
    grating = 0.5 + 0.5 * np.sin(2 * np.pi * p.freq * proj + phase)
    colour = np.clip(p.hue + rng.normal(0, 0.08, size=3), 0, 1)
    background = rng.uniform(0.0, 0.35, size=3)
    fg = colour[:, None, None] * (0.35 + 0.65 * grating)[None]
    img = np.where(mask[None], fg, background[:, None, None])
    img = img + rng.normal(0, 0.03, size=img.shape)
    return np.clip(img, 0, 1).astype(np.float32)


def generate_toy_dataset(root: os.PathLike,
                         n_classes_per_split: Sequence[int] = (8, 4, 4),
                         samples_per_class: int = 60, image_size: int = 32,
                         seed: int = 0,
                         target_filter: str = "edge_sketch") -> Path:
    """Write a procedural two-domain dataset plus ``splits.txt`` under ``root``.

    Every class gets ``samples_per_class`` source-style images and the same
    images passed through ``target_filter`` as its target-domain copies.
    """
    counts = list(n_classes_per_split)
    if len(counts) != 3 or min(counts) <= 0:
        raise ValueError("n_classes_per_split needs three positive counts")
    if samples_per_class <= 0:
        raise ValueError("samples_per_class must be positive")
    if image_size < 8:
        raise ValueError("image_size must be at least 8")
    if target_filter not in FILTERS:
        raise ConfigError(f"unknown filter {target_filter!r}")

    root = Path(root)
    rng = np.random.default_rng(seed)
    spec, start = {}, 0
    for name, n in zip(SPLIT_NAMES, counts):
        spec[name] = list(range(start, start + n))
        start += n
    root.mkdir(parents=True, exist_ok=True)
    for name in SPLIT_NAMES:
        for cls in spec[name]:
            pattern = _random_pattern(rng)
            dirs = {d: root / name / d.dirname / str(cls) for d in Domain}
            for d in dirs.values():
                d.mkdir(parents=True, exist_ok=True)
            for i in range(samples_per_class):
                img = _render(pattern, image_size, rng)
                save_image(img, dirs[Domain.SOURCE] / f"{i:05d}.png")
                save_image(synth_domain_shift(img, target_filter),
                           dirs[Domain.TARGET] / f"{i:05d}.png")
    (root / SPLIT_SPEC_FILE).write_text(format_split_spec(spec))
    return root


def noise_pool(n_classes: int, samples_per_class: int, image_size: int,
               rng: np.random.Generator,
               domain: Domain = Domain.TARGET) -> Pool:
    """Uniform-noise images with labels independent of content."""
    return {c: [Sample(rng.uniform(0, 1, size=(3, image_size, image_size))
                       .astype(np.float32), c, domain, f"noise{c}_{i}")
                for i in range(samples_per_class)]
            for c in range(n_classes)}
