"""Deterministic synthetic PET phantoms with full ground truth.

Each case is background noise plus one ellipsoidal tumor (whose placement
band depends on the class label) plus a configurable number of confounding
hot spots whose intensity overlaps the tumor range.  The confounders make
naive activation-map localization fail in the same way physiological uptake
does in real scans, so the distance loss has real work to do.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, DatasetWriteError, GenerationError, ValidationError
from .nifti import save_annotation, save_mask, save_volume
from .volumes import PetVolume, Point3D

_PLACEMENT_RETRIES = 50


@dataclass(frozen=True)
class ClassSpec:
    """Placement and appearance of one tumor class.

    ``region`` bounds the *entire* tumor extent (half-open per axis), not just
    its centre, so every ground-truth mask voxel lies inside the region.
    """

    region: tuple[tuple[int, int], tuple[int, int], tuple[int, int]]
    radius_range: tuple[float, float]
    intensity_range: tuple[float, float]
    name: str = ""

    def to_dict(self) -> dict:
        return {
            "region": [list(b) for b in self.region],
            "radius_range": list(self.radius_range),
            "intensity_range": list(self.intensity_range),
            "name": self.name,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassSpec":
        return cls(
            region=tuple(tuple(int(v) for v in b) for b in d["region"]),
            radius_range=tuple(float(v) for v in d["radius_range"]),
            intensity_range=tuple(float(v) for v in d["intensity_range"]),
            name=str(d.get("name", "")),
        )


@dataclass(frozen=True)
class PhantomConfig:
    shape: tuple[int, int, int] = (64, 64, 96)
    spacing: tuple[float, float, float] = (2.0, 2.0, 2.0)
    class_specs: tuple[ClassSpec, ClassSpec] = ()
    n_confounders: int = 4
    confounder_radius_range: tuple[float, float] = (2.0, 3.5)
    confounder_intensity_range: tuple[float, float] = (10.0, 20.0)
    noise_level: float = 2.0
    blur_sigma: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if len(self.class_specs) != 2:
            raise ConfigError("exactly two class specs are required (binary task)")
        if any(n <= 0 for n in self.shape):
            raise ConfigError(f"shape must be positive, got {self.shape}")
        if self.n_confounders < 0:
            raise ConfigError("n_confounders must be >= 0")
        if self.noise_level < 0 or self.blur_sigma < 0:
            raise ConfigError("noise_level and blur_sigma must be >= 0")
        for rng_pair in (self.confounder_radius_range, self.confounder_intensity_range):
            if rng_pair[0] > rng_pair[1]:
                raise ConfigError(f"range {rng_pair} is inverted")
        for spec in self.class_specs:
            lo, hi = spec.radius_range
            if lo < 1.0 or lo > hi:
                raise ConfigError(f"radius range {spec.radius_range} must satisfy 1 <= lo <= hi")
            if spec.intensity_range[0] > spec.intensity_range[1]:
                raise ConfigError(f"intensity range {spec.intensity_range} is inverted")
            if spec.intensity_range[0] <= self.noise_level:
                raise ConfigError("tumor intensity must be strictly above the noise ceiling")
            for axis, (a, b) in enumerate(spec.region):
                if not (0 <= a < b <= self.shape[axis]):
                    raise ConfigError(f"region {spec.region} exceeds shape {self.shape}")
                if b - a < 2 * hi + 1:
                    raise ConfigError(
                        f"region axis {axis} of extent {b - a} cannot hold a tumor of radius {hi}"
                    )
        if self.n_confounders and self.confounder_intensity_range[0] <= self.noise_level:
            raise ConfigError("confounder intensity must be strictly above the noise ceiling")

    def to_dict(self) -> dict:
        return {
            "shape": list(self.shape),
            "spacing": list(self.spacing),
            "class_specs": [s.to_dict() for s in self.class_specs],
            "n_confounders": self.n_confounders,
            "confounder_radius_range": list(self.confounder_radius_range),
            "confounder_intensity_range": list(self.confounder_intensity_range),
            "noise_level": self.noise_level,
            "blur_sigma": self.blur_sigma,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomConfig":
        kwargs = dict(d)
        if "shape" in kwargs:
            kwargs["shape"] = tuple(int(v) for v in kwargs["shape"])
        if "spacing" in kwargs:
            kwargs["spacing"] = tuple(float(v) for v in kwargs["spacing"])
        if "class_specs" in kwargs:
            kwargs["class_specs"] = tuple(ClassSpec.from_dict(s) for s in kwargs["class_specs"])
        for key in ("confounder_radius_range", "confounder_intensity_range"):
            if key in kwargs:
                kwargs[key] = tuple(float(v) for v in kwargs[key])
        unknown = set(kwargs) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown phantom config keys: {sorted(unknown)}")
        return cls(**kwargs)


def default_class_specs(shape: tuple[int, int, int]) -> tuple[ClassSpec, ClassSpec]:
    """Two disjoint placement bands along z: an upper band and a central band.

    The bands are separable from either MIP view, which is what makes the
    class label learnable; the mild radius difference adds a shape cue.
    """
    nx, ny, nz = shape
    x0, x1 = round(0.15 * nx), round(0.85 * nx)
    y0, y1 = round(0.15 * ny), round(0.85 * ny)
    upper = (round(0.62 * nz), round(0.96 * nz))
    central = (round(0.05 * nz), round(0.39 * nz))
    # Tumor radii sit strictly above the confounder range so the class rule
    # ("which band holds the large lesion") stays well-posed; intensities
    # overlap the confounders so activation maps still produce false peaks.
    return (
        ClassSpec(region=((x0, x1), (y0, y1), upper), radius_range=(5.0, 7.0),
                  intensity_range=(8.0, 15.0), name="upper"),
        ClassSpec(region=((x0, x1), (y0, y1), central), radius_range=(4.5, 6.5),
                  intensity_range=(8.0, 15.0), name="central"),
    )


def benchmark_config(rng_seed: int = 0) -> PhantomConfig:
    """The standard 64x64x96 benchmark phantom with confounders enabled."""
    shape = (64, 64, 96)
    return PhantomConfig(shape=shape, class_specs=default_class_specs(shape), rng_seed=rng_seed)


@dataclass(frozen=True)
class GroundTruth:
    """Full supervision for one phantom case: tumor mask, centre voxel, label."""

    mask: np.ndarray
    center: Point3D
    label: int

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 3 or not mask.any():
            raise ValidationError("ground-truth mask must be a non-empty 3D array")
        if not mask[tuple(self.center)]:
            raise ValidationError(f"center {tuple(self.center)} does not lie inside the mask")
        if self.label not in (0, 1):
            raise ValidationError(f"label must be 0 or 1, got {self.label}")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "center", Point3D(*(int(c) for c in self.center)))


@dataclass(frozen=True)
class PhantomCase:
    case_id: str
    volume: PetVolume
    truth: GroundTruth


def _ellipsoid_mask(shape, center, radii) -> np.ndarray:
    grids = np.ogrid[: shape[0], : shape[1], : shape[2]]
    acc = np.zeros(shape, dtype=np.float64)
    for g, c, r in zip(grids, center, radii):
        acc = acc + ((g - c) / r) ** 2
    return acc <= 1.0


def generate_case(cfg: PhantomConfig, label: int, case_seed: int) -> tuple[PetVolume, GroundTruth]:
    """Generate one phantom case; identical (cfg, label, case_seed) is bit-reproducible."""
    if label not in (0, 1):
        raise ValidationError(f"label must be 0 or 1, got {label}")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, label, int(case_seed)]))
    shape = cfg.shape
    vol = rng.uniform(0.0, cfg.noise_level, size=shape) if cfg.noise_level > 0 else np.zeros(shape)

    spec = cfg.class_specs[label]
    radii = rng.uniform(spec.radius_range[0], spec.radius_range[1], size=3)
    center = np.array([
        rng.uniform(lo + r, hi - 1 - r) for (lo, hi), r in zip(spec.region, radii)
    ])
    tumor = _ellipsoid_mask(shape, center, radii)
    if not tumor.any():
        raise GenerationError(f"tumor ellipsoid at {center} with radii {radii} is empty")
    intensity = rng.uniform(*spec.intensity_range)
    vol = np.where(tumor, np.maximum(vol, intensity), vol)

    # Keep confounders clear of the tumor (with a blur-aware margin) so the
    # refined components stay separable; everything else about their placement
    # is unconstrained, including sitting inside the other class's band.
    margin = 2.0 + cfg.blur_sigma
    for _ in range(cfg.n_confounders):
        placed = False
        for _attempt in range(_PLACEMENT_RETRIES):
            c_radii = rng.uniform(*cfg.confounder_radius_range, size=3)
            c_center = np.array([
                rng.uniform(r, n - 1 - r) for n, r in zip(shape, c_radii)
            ])
            if (_ellipsoid_mask(shape, c_center, c_radii + margin) & tumor).any():
                continue
            spot = _ellipsoid_mask(shape, c_center, c_radii)
            c_intensity = rng.uniform(*cfg.confounder_intensity_range)
            vol = np.where(spot, np.maximum(vol, c_intensity), vol)
            placed = True
            break
        if not placed:
            raise GenerationError(
                f"could not place confounder after {_PLACEMENT_RETRIES} attempts "
                f"(case_seed={case_seed}, label={label})"
            )

    if cfg.blur_sigma > 0:
        vol = gaussian_filter(vol, sigma=cfg.blur_sigma)

    center_voxel = Point3D(*(int(v) for v in np.rint(center)))
    if not tumor[tuple(center_voxel)]:
        raise GenerationError(f"rounded centre {center_voxel} fell outside the tumor mask")
    volume = PetVolume(data=vol.astype(np.float32), spacing=cfg.spacing)
    return volume, GroundTruth(mask=tumor, center=center_voxel, label=label)


def generate_dataset(cfg: PhantomConfig, n_per_class: int,
                     out_dir: str | Path | None = None) -> list[PhantomCase]:
    """Generate a class-balanced dataset of 2 * n_per_class cases.

    Case seeds derive from (cfg.rng_seed, case index); labels alternate 0,1.
    When ``out_dir`` is given, volumes, masks, annotations and a manifest are
    written there in the standard on-disk formats.
    """
    if n_per_class < 1:
        raise ValidationError(f"n_per_class must be >= 1, got {n_per_class}")
    cases = []
    for index in range(2 * n_per_class):
        label = index % 2
        volume, truth = generate_case(cfg, label, case_seed=index)
        cases.append(PhantomCase(case_id=f"case_{index:04d}", volume=volume, truth=truth))
    if out_dir is not None:
        write_dataset(cases, cfg, out_dir)
    return cases


def write_dataset(cases: list[PhantomCase], cfg: PhantomConfig, out_dir: str | Path) -> Path:
    """Write cases plus a manifest index; returns the manifest path."""
    out_dir = Path(out_dir)
    entries = []
    try:
        for case in cases:
            rel_vol = f"cases/{case.case_id}.nii.gz"
            rel_mask = f"cases/{case.case_id}_mask.nii.gz"
            rel_ann = f"cases/{case.case_id}.json"
            save_volume(out_dir / rel_vol, case.volume)
            save_mask(out_dir / rel_mask, case.truth.mask, case.volume.spacing)
            save_annotation(out_dir / rel_ann, case.case_id, case.truth.label, case.truth.center)
            entries.append({
                "case_id": case.case_id,
                "label": case.truth.label,
                "volume": rel_vol,
                "annotation": rel_ann,
                "mask": rel_mask,
            })
        manifest = {
            "format": "mipcam-dataset/1",
            "config": cfg.to_dict(),
            "cases": entries,
        }
        manifest_path = out_dir / "manifest.json"
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise DatasetWriteError(f"failed to write dataset to {out_dir}: {exc}") from exc
    return manifest_path
