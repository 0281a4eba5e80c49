"""Synthetic complete/partial body pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body import TemplateResolution, synthetic_textured_body
from .mesh import HoleSpec, TexturedMesh, cut_holes, face_areas


@dataclass(frozen=True)
class HoleConfig:
    count: int = 6
    radius_range: tuple = (0.1, 0.25)
    min_missing: float = 0.0
    max_tries: int = 50


@dataclass(frozen=True, eq=False)
class PartialCase:
    complete: TexturedMesh
    partial: TexturedMesh
    missing_fraction: float
    hole_spec: HoleSpec


def missing_area_fraction(complete: TexturedMesh, partial: TexturedMesh) -> float:
    return 1.0 - face_areas(partial.mesh).sum() / face_areas(complete.mesh).sum()


def make_partial(complete: TexturedMesh, seed: int, holes: HoleConfig = HoleConfig()) -> PartialCase:
    """Cut holes until at least ``min_missing`` of the area is gone (seeds seed*1000 + try)."""
    best = None
    for k in range(holes.max_tries):
        spec = HoleSpec(seed * 1000 + k, holes.count, tuple(holes.radius_range))
        try:
            partial = cut_holes(complete, spec)
        except ValueError:
            continue
        frac = missing_area_fraction(complete, partial)
        if frac >= holes.min_missing:
            return PartialCase(complete, partial, frac, spec)
        if best is None or frac > best.missing_fraction:
            best = PartialCase(complete, partial, frac, spec)
    if best is None:
        raise ValueError("no hole pattern left any surface")
    raise ValueError(f"could not remove {holes.min_missing:.0%} of the area "
                     f"(best {best.missing_fraction:.0%} after {holes.max_tries} tries)")


def synthetic_case(seed: int, holes: HoleConfig = HoleConfig(), atlas_size: int = 512,
                   resolution: TemplateResolution = TemplateResolution()) -> PartialCase:
    rng = np.random.default_rng(seed)
    complete = synthetic_textured_body(rng, atlas_size, resolution)
    return make_partial(complete, seed, holes)
