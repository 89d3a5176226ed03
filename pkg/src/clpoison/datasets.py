"""Datasets, perturbation sets, poison application, and the poison file format.

Images are float32 arrays of shape (N, C, H, W) with pixels in [0, 1].
Perturbation deltas are stored at float32 precision; their L-infinity bound
epsilon is likewise kept at float32 precision so that file round-trips are
bit-exact.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import PoisonFormatError, PoisonIntegrityError, PoisonMismatchError

SAMPLE_WISE = "sample-wise"
CLASS_WISE = "class-wise"

_MAGIC = b"CLPN"
_VERSION = 1
# magic, version u16, mode u8, epsilon f32, class_count u32, delta_count u32,
# C u32, H u32, W u32, dataset_fingerprint u64 -- little endian, no padding.
_HEADER = struct.Struct("<4sHBfIIIIIQ")
_MODE_CODES = {SAMPLE_WISE: 0, CLASS_WISE: 1}
_MODE_NAMES = {code: name for name, code in _MODE_CODES.items()}


def _content_fingerprint(images: np.ndarray, labels: np.ndarray, class_count: int) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(str(images.shape).encode())
    h.update(str(int(class_count)).encode())
    h.update(np.ascontiguousarray(labels, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(images, dtype=np.float32).tobytes())
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class LabeledImageDataset:
    """Immutable labeled image set; `fingerprint` is a 64-bit content hash."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int
    fingerprint: int = field(init=False)

    def __post_init__(self):
        images = np.ascontiguousarray(self.images, dtype=np.float32)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise ValueError(f"images must have shape (N, C, H, W), got {images.shape}")
        if labels.ndim != 1 or len(labels) != len(images):
            raise ValueError("labels must be one integer per image")
        if self.class_count < 1:
            raise ValueError("class_count must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ValueError("labels must lie in [0, class_count)")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(
            self, "fingerprint", _content_fingerprint(images, labels, self.class_count)
        )

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, indices) -> "LabeledImageDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledImageDataset(self.images[idx], self.labels[idx], self.class_count)


@dataclass(frozen=True)
class DatasetBundle:
    """Clean pretraining set D_c plus the labeled downstream/probe set D_e."""

    pretrain: LabeledImageDataset
    downstream: LabeledImageDataset


@dataclass(frozen=True)
class PoisonApplication:
    """Record of which samples a perturbation set was applied to."""

    fraction_poisoned: float
    selection_seed: int
    poisoned_indices: np.ndarray

    def __post_init__(self):
        idx = np.ascontiguousarray(self.poisoned_indices, dtype=np.int64)
        idx.setflags(write=False)
        object.__setattr__(self, "poisoned_indices", idx)


@dataclass(frozen=True)
class PerturbationSet:
    """Bounded poisoning noise: one delta per sample or one per class.

    Sample-wise sets bind to a source dataset through its content hash so a
    poison file can never be applied to misaligned data.
    """

    mode: str
    epsilon: float
    deltas: np.ndarray
    dataset_fingerprint: int = 0

    def __post_init__(self):
        if self.mode not in _MODE_CODES:
            raise ValueError(f"mode must be one of {sorted(_MODE_CODES)}, got {self.mode!r}")
        eps = float(np.float32(self.epsilon))
        if not np.isfinite(eps) or eps < 0:
            raise ValueError("epsilon must be finite and non-negative")
        deltas = np.ascontiguousarray(self.deltas, dtype=np.float32)
        if deltas.ndim != 4:
            raise ValueError(f"deltas must have shape (K, C, H, W), got {deltas.shape}")
        if deltas.size and not bool((np.abs(deltas) <= eps).all()):
            raise ValueError("every delta must satisfy max|delta| <= epsilon")
        deltas.setflags(write=False)
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "deltas", deltas)
        object.__setattr__(self, "dataset_fingerprint", int(self.dataset_fingerprint))

    def __len__(self) -> int:
        return len(self.deltas)

    @property
    def delta_shape(self) -> tuple[int, int, int]:
        return tuple(self.deltas.shape[1:])


def make_synthetic(
    class_count: int,
    per_class: int,
    height: int,
    width: int,
    seed: int,
    channels: int = 3,
    template_amplitude: float = 0.008,
    noise_amplitude: float = 0.06,
) -> LabeledImageDataset:
    """Desk-scale stand-in for CIFAR-style data.

    Each class is a distinct smooth low-frequency field (a random mix of the
    lowest 2-D cosine modes) centered at mid-gray; samples add bounded
    uniform pixel noise. The default amplitudes are calibrated so classes
    are linearly separable in raw pixel space (a full-dimension logistic
    regression succeeds) while the class signal stays weak enough that
    representation quality governs linear-probe accuracy on learned
    features.
    """
    if class_count < 2:
        raise ValueError("class_count must be >= 2")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if height < 1 or width < 1 or channels < 1:
        raise ValueError("image dimensions must be positive")

    rng = np.random.default_rng(seed)

    ys = (np.arange(height) + 0.5) / height
    xs = (np.arange(width) + 0.5) / width
    modes = [(u, v) for u in range(3) for v in range(3) if (u, v) != (0, 0)]
    basis = np.stack(
        [np.cos(np.pi * u * ys)[:, None] * np.cos(np.pi * v * xs)[None, :] for u, v in modes]
    )  # (M, H, W)

    templates = np.empty((class_count, channels, height, width), dtype=np.float64)
    for c in range(class_count):
        coeff = rng.normal(size=(channels, len(modes)))
        field_ = np.einsum("km,mhw->khw", coeff, basis)
        peak = max(np.abs(field_).max(), 1e-8)
        templates[c] = 0.5 + template_amplitude * field_ / peak

    n = class_count * per_class
    labels = np.repeat(np.arange(class_count), per_class)
    noise = rng.uniform(-noise_amplitude, noise_amplitude, size=(n, channels, height, width))
    images = np.clip(templates[labels] + noise, 0.0, 1.0).astype(np.float32)
    return LabeledImageDataset(images, labels, class_count)


def split_dataset(
    ds: LabeledImageDataset, first_fraction: float, seed: int
) -> tuple[LabeledImageDataset, LabeledImageDataset]:
    """Shuffled two-way split; both parts keep the original class_count."""
    if not 0.0 < first_fraction < 1.0:
        raise ValueError("first_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ds))
    cut = int(round(first_fraction * len(ds)))
    if cut == 0 or cut == len(ds):
        raise ValueError("split leaves one side empty")
    return ds.subset(order[:cut]), ds.subset(order[cut:])


def make_bundle(
    class_count: int,
    per_class: int,
    height: int,
    width: int,
    seed: int,
    downstream_fraction: float = 1.0 / 3.0,
    **kwargs,
) -> DatasetBundle:
    """One synthetic draw split into a pretraining set and a probe set."""
    full = make_synthetic(class_count, per_class, height, width, seed, **kwargs)
    pretrain, downstream = split_dataset(full, 1.0 - downstream_fraction, seed=seed + 1)
    return DatasetBundle(pretrain=pretrain, downstream=downstream)


def select_poison_indices(n: int, fraction: float, seed: int) -> np.ndarray:
    """Deterministic uniform subset of round(fraction * n) indices, sorted."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    k = int(round(fraction * n))
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=k, replace=False)).astype(np.int64)


def apply_perturbations(
    ds: LabeledImageDataset, ps: PerturbationSet, fraction: float, seed: int
) -> tuple[LabeledImageDataset, PoisonApplication]:
    """Add deltas to a selected subset and clamp back to valid pixels.

    Labels are never touched. Sample-wise sets must carry the dataset's
    fingerprint; class-wise sets must provide one delta per class.
    """
    if ps.delta_shape != ds.image_shape:
        raise ValueError(
            f"delta shape {ps.delta_shape} does not match image shape {ds.image_shape}"
        )
    if ps.mode == SAMPLE_WISE:
        if ps.dataset_fingerprint != ds.fingerprint:
            raise PoisonMismatchError(
                "sample-wise perturbation set was built for a different dataset "
                f"(fingerprint {ps.dataset_fingerprint:#018x} != {ds.fingerprint:#018x})"
            )
        if len(ps) != len(ds):
            raise PoisonMismatchError(
                f"sample-wise set has {len(ps)} deltas for {len(ds)} samples"
            )
    else:
        if len(ps) != ds.class_count:
            raise PoisonMismatchError(
                f"class-wise set has {len(ps)} deltas for {ds.class_count} classes"
            )

    indices = select_poison_indices(len(ds), fraction, seed)
    images = np.array(ds.images, dtype=np.float32)
    if indices.size:
        if ps.mode == SAMPLE_WISE:
            deltas = ps.deltas[indices]
        else:
            deltas = ps.deltas[ds.labels[indices]]
        images[indices] = np.clip(images[indices] + deltas, 0.0, 1.0)
    poisoned = LabeledImageDataset(images, ds.labels, ds.class_count)
    return poisoned, PoisonApplication(float(fraction), int(seed), indices)


def save_perturbations(ps: PerturbationSet) -> bytes:
    """Serialize to the CLPN v1 binary layout (little-endian, f32 deltas)."""
    count, c, h, w = ps.deltas.shape
    class_count = count if ps.mode == CLASS_WISE else 0
    fingerprint = ps.dataset_fingerprint if ps.mode == SAMPLE_WISE else 0
    header = _HEADER.pack(
        _MAGIC, _VERSION, _MODE_CODES[ps.mode], np.float32(ps.epsilon),
        class_count, count, c, h, w, fingerprint,
    )
    return header + ps.deltas.astype("<f4").tobytes()


def load_perturbations(data: bytes) -> PerturbationSet:
    if len(data) < _HEADER.size:
        raise PoisonFormatError("poison data shorter than the fixed header")
    magic, version, mode_code, epsilon, _class_count, count, c, h, w, fingerprint = (
        _HEADER.unpack_from(data)
    )
    if magic != _MAGIC:
        raise PoisonFormatError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    if version != _VERSION:
        raise PoisonFormatError(f"unsupported poison file version {version}")
    if mode_code not in _MODE_NAMES:
        raise PoisonFormatError(f"unknown mode code {mode_code}")
    if not np.isfinite(epsilon) or epsilon < 0:
        raise PoisonFormatError(f"stored epsilon {epsilon!r} is not a valid radius")
    expected = _HEADER.size + count * c * h * w * 4
    if len(data) != expected:
        raise PoisonFormatError(
            f"poison data has {len(data)} bytes, expected {expected} (truncated or padded)"
        )
    deltas = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(count, c, h, w)
    eps32 = float(np.float32(epsilon))
    if deltas.size and not bool((np.abs(deltas) <= eps32).all()):
        raise PoisonIntegrityError("stored deltas exceed the stored epsilon bound")
    return PerturbationSet(
        mode=_MODE_NAMES[mode_code],
        epsilon=eps32,
        deltas=deltas.copy(),
        dataset_fingerprint=fingerprint,
    )


def write_poison_file(ps: PerturbationSet, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(save_perturbations(ps))
    return path


def read_poison_file(path: str | Path) -> PerturbationSet:
    return load_perturbations(Path(path).read_bytes())


def load_cifar10_binary(root: str | Path, files: list[str] | None = None) -> LabeledImageDataset:
    """Reader for CIFAR-10-style binary batches (1 label byte + 3072 pixel bytes)."""
    root = Path(root)
    if files is None:
        files = sorted(p.name for p in root.glob("data_batch_*.bin"))
        if not files:
            raise FileNotFoundError(f"no data_batch_*.bin files under {root}")
    images, labels = [], []
    record = 1 + 3 * 32 * 32
    for name in files:
        raw = np.frombuffer((root / name).read_bytes(), dtype=np.uint8)
        if raw.size % record != 0:
            raise ValueError(f"{name}: size {raw.size} is not a multiple of {record}")
        raw = raw.reshape(-1, record)
        labels.append(raw[:, 0].astype(np.int64))
        images.append(raw[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0)
    return LabeledImageDataset(np.concatenate(images), np.concatenate(labels), 10)


DATASET_BUILDERS = {
    "synthetic": make_synthetic,
    "cifar10-bin": load_cifar10_binary,
}


def build_dataset(kind: str, **params) -> LabeledImageDataset:
    """Pluggable dataset construction, keyed by kind."""
    try:
        builder = DATASET_BUILDERS[kind]
    except KeyError:
        raise ValueError(f"unknown dataset kind {kind!r}, have {sorted(DATASET_BUILDERS)}")
    return builder(**params)
