"""Synthetic brain-metastasis phantoms.

Each lesion is an axis-aligned ellipsoid with an enhancing rim (label 3)
around a nonenhancing core (label 1), wrapped in edema (label 2) grown by
binary dilation. Lesions never touch each other's edema. Intensities are drawn
per label and modality, then Gaussian noise is added.

Randomness comes only from ``numpy.random.default_rng(seed)`` (PCG64), so a
(spec, seed) pair fixes the output on every platform.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from ..core import EDEMA, ENHANCING, NONENHANCING

# Mean intensity per (modality, label). Modality 0 behaves like contrast
# enhanced T1 (bright rim, dark core), modality 1 like FLAIR (bright edema).
INTENSITY_TABLE = np.array(
    [
        [0.0, -0.8, 0.1, 1.2],
        [0.0, 0.5, 1.0, 0.5],
        [0.0, -0.4, -0.3, 0.3],
        [0.0, 0.8, 0.9, 0.2],
    ]
)


class PhantomError(RuntimeError):
    pass


@dataclass
class PhantomSpec:
    dims: tuple[int, int, int] = (16, 32, 32)
    modalities: int = 2
    lesion_count_range: tuple[int, int] = (1, 3)
    lesion_radius_range: tuple[float, float] = (1.0, 4.5)
    rim_fraction: float = 0.4
    edema_dilation: int = 2
    noise_sigma: float = 0.1
    contrast_jitter: float = 0.1
    max_retries: int = 200

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.lesion_count_range = tuple(int(v) for v in self.lesion_count_range)
        self.lesion_radius_range = tuple(float(v) for v in self.lesion_radius_range)
        lo, hi = self.lesion_count_range
        rlo, rhi = self.lesion_radius_range
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"dims must be three positive ints, got {self.dims}")
        if self.modalities < 1:
            raise ValueError("need at least one modality")
        if not 0 <= lo <= hi:
            raise ValueError(f"empty lesion count range {self.lesion_count_range}")
        if not 1.0 <= rlo <= rhi:
            raise ValueError(f"radius range must satisfy 1 <= lo <= hi, got {self.lesion_radius_range}")
        if not 0.0 < self.rim_fraction <= 1.0:
            raise ValueError("rim_fraction must be in (0, 1]")
        if self.edema_dilation < 0 or self.noise_sigma < 0 or self.contrast_jitter < 0:
            raise ValueError("edema_dilation, noise_sigma and contrast_jitter must be >= 0")

    def spec_hash(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]

    def check_divisible(self, max_depth: int) -> None:
        div = 2**max_depth
        if any(d % div for d in self.dims):
            raise ValueError(f"phantom dims {self.dims} must be divisible by {div} for depth {max_depth}")


@dataclass
class VolumeRecord:
    sample_id: str
    volume: np.ndarray
    mask: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.volume.ndim != 4 or self.mask.shape != self.volume.shape[1:]:
            raise ValueError(f"volume {self.volume.shape} and mask {self.mask.shape} disagree")
        if self.mask.size and (self.mask.min() < 0 or self.mask.max() > 3):
            raise ValueError("mask labels must lie in {0, 1, 2, 3}")

    def __eq__(self, other):
        if not isinstance(other, VolumeRecord):
            return NotImplemented
        return (
            self.sample_id == other.sample_id
            and self.volume.dtype == other.volume.dtype
            and self.mask.dtype == other.mask.dtype
            and np.array_equal(self.volume, other.volume)
            and np.array_equal(self.mask, other.mask)
            and self.provenance == other.provenance
        )


def _ellipsoid_q(shape, center, radii) -> np.ndarray:
    grids = np.ogrid[tuple(slice(0, s) for s in shape)]
    return np.sqrt(sum(((g - c) / r) ** 2 for g, c, r in zip(grids, center, radii)))


def _place_lesions(spec: PhantomSpec, rng: np.random.Generator, count: int) -> np.ndarray:
    shape = spec.dims
    labels = np.zeros(shape, dtype=np.uint8)
    occupied = np.zeros(shape, dtype=bool)
    struct = ndimage.generate_binary_structure(3, 1)
    for n in range(count):
        for _ in range(spec.max_retries):
            radii = rng.uniform(*spec.lesion_radius_range, size=3)
            reach = np.floor(radii).astype(int) + spec.edema_dilation
            if np.any(2 * reach + 1 > np.array(shape)):
                continue
            center = [int(rng.integers(r, s - r)) for r, s in zip(reach, shape)]
            q = _ellipsoid_q(shape, center, radii)
            lesion = q <= 1.0
            halo = ndimage.binary_dilation(lesion, struct, iterations=spec.edema_dilation) if spec.edema_dilation else lesion
            if np.any(halo & occupied):
                continue
            core = q <= 1.0 - spec.rim_fraction
            labels[halo & ~lesion] = EDEMA
            labels[lesion & ~core] = ENHANCING
            labels[core] = NONENHANCING
            occupied |= ndimage.binary_dilation(halo, struct)
            break
        else:
            raise PhantomError(
                f"could not place lesion {n + 1}/{count} within dims {shape} after {spec.max_retries} retries "
                f"(radius range {spec.lesion_radius_range}, edema dilation {spec.edema_dilation}, no-overlap constraint)"
            )
    return labels


def generate_phantom(spec: PhantomSpec, seed: int, sample_id: str | None = None) -> VolumeRecord:
    rng = np.random.default_rng(seed)
    lo, hi = spec.lesion_count_range
    count = int(rng.integers(lo, hi + 1))
    labels = _place_lesions(spec, rng, count)
    table = INTENSITY_TABLE[np.arange(spec.modalities) % len(INTENSITY_TABLE)]
    gain = 1.0 + spec.contrast_jitter * rng.uniform(-1.0, 1.0, size=(spec.modalities, 1))
    means = table * gain
    volume = means[:, labels]
    volume = volume + rng.normal(0.0, spec.noise_sigma, size=volume.shape)
    return VolumeRecord(
        sample_id=sample_id or f"phantom_{seed:06d}",
        volume=volume.astype(np.float32),
        mask=labels,
        provenance={"seed": int(seed), "spec_hash": spec.spec_hash(), "lesions": count},
    )


def generate_dataset(spec: PhantomSpec, n: int, seed: int) -> list[VolumeRecord]:
    """``n`` phantoms with independent per-sample seeds derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(n)
    return [generate_phantom(spec, int(s), sample_id=f"case_{i:03d}") for i, s in enumerate(seeds)]


def save_dataset(records: Sequence[VolumeRecord], directory, spec: PhantomSpec | None = None) -> Path:
    from .io import SUFFIX, content_hash, write_volume

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in records:
        fname = f"{rec.sample_id}{SUFFIX}"
        write_volume(rec, directory / fname)
        entries.append({"sample_id": rec.sample_id, "file": fname,
                        "volume_hash": content_hash(rec.volume), "mask_hash": content_hash(rec.mask)})
    manifest = {"samples": entries, "spec": asdict(spec) if spec else None}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory


def load_dataset(directory) -> list[VolumeRecord]:
    from .io import SUFFIX, read_volume

    directory = Path(directory)
    manifest = directory / "manifest.json"
    if manifest.exists():
        files = [directory / e["file"] for e in json.loads(manifest.read_text())["samples"]]
    else:
        files = sorted(directory.glob(f"*{SUFFIX}"))
    if not files:
        raise FileNotFoundError(f"no {SUFFIX} volumes in {directory}")
    return [read_volume(f) for f in files]
