"""Seeded parametric sound-speed phantoms.

Three families: a breast-like organ (perturbed-disk boundary, soft-tissue
background, a handful of denser blobs), a brain-like organ (nested wobbled
ellipses with distinct tissue speeds), and an inclusion-test disk carrying
1-3 disjoint flat-topped circular inclusions of a stated contrast, for
inversion experiments.  The exterior is exactly c0 everywhere.

The tissue speed defaults are artifact conventions chosen from common
soft-tissue literature ranges, not measured values; override them through
``tissue_ranges`` when a different contrast regime is wanted.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import Grid2D
from .solver import SoundSpeedMap

__all__ = ["PhantomSpec", "ContrastStats", "gen_phantom", "contrast_stats"]

KINDS = ("breast-like", "brain-like", "inclusion-test")

DEFAULT_TISSUE_RANGES = {
    "fat": (1420.0, 1470.0),
    "fibroglandular": (1510.0, 1580.0),
    "brain": (1480.0, 1580.0),
}

# Fourier boundary perturbation budget: sum of |a_m| stays below this
# fraction of the organ radius, so the edge-clearance check is exact.
_BOUNDARY_WOBBLE = 0.12

# Inclusion-test profile: radius range as a fraction of the organ radius,
# and the rim fraction of each inclusion given to the cosine taper.  The
# rim must span at least half a wavelength at the intended imaging
# frequency or band-limited reconstructions cannot represent the edge.
_INCLUSION_SIZE = (0.30, 0.45)
_RIM_TAPER = 0.35


@dataclass(frozen=True)
class PhantomSpec:
    """Recipe for one phantom; identical spec + seed gives a bitwise-identical map."""

    kind: str
    grid: Grid2D
    c0: float = 1500.0
    tissue_ranges: dict = field(default_factory=lambda: dict(DEFAULT_TISSUE_RANGES))
    organ_radius_fraction: float = 0.6
    seed: int = 0
    inclusion_contrast: float = 0.03
    inclusion_count: tuple[int, int] = (1, 3)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown phantom kind {self.kind!r}; choose from {KINDS}")
        if not self.c0 > 0:
            raise ValueError("c0 must be positive")
        for name, (lo, hi) in self.tissue_ranges.items():
            if not (0 < lo <= hi):
                raise ValueError(f"tissue range {name} must satisfy 0 < lo <= hi")
        lo, hi = self.inclusion_count
        if not (0 <= lo <= hi):
            raise ValueError("inclusion_count must be an increasing pair of counts")
        # the absorbing layer sits just beyond the grid edge; the organ plus
        # its boundary wobble must stay clear of it
        if not 0 < self.organ_radius_fraction * (1 + _BOUNDARY_WOBBLE) <= 0.98:
            raise ValueError(
                f"organ_radius_fraction {self.organ_radius_fraction} would reach "
                f"the grid edge (limit {0.98 / (1 + _BOUNDARY_WOBBLE):.2f})")


@dataclass(frozen=True)
class ContrastStats:
    c_min: float
    c_max: float
    rel_contrast: float


def _organ_frame(spec: PhantomSpec, rng: np.random.Generator):
    g = spec.grid
    X, Y = g.meshgrid()
    half = 0.5 * min(g.extent)
    r_organ = spec.organ_radius_fraction * half
    # small random offset keeps phantoms off-center without risking the edge
    off = rng.uniform(-0.02, 0.02, size=2) * half
    return X - off[0], Y - off[1], r_organ


def _fourier_boundary(rng: np.random.Generator, theta: np.ndarray, r0: float) -> np.ndarray:
    """R(theta) = r0 * (1 + sum_m a_m cos(m theta + phi_m)), low order, bounded."""
    r = np.ones_like(theta)
    budget = _BOUNDARY_WOBBLE
    for m in range(2, 6):
        a = rng.uniform(0, budget / 4.0)
        phi = rng.uniform(0, 2 * np.pi)
        r += a * np.cos(m * theta + phi)
    return r0 * r


def _smooth_blob(X, Y, cx, cy, radius):
    """Compactly supported C1 bump, 1 at the center, 0 beyond radius."""
    d2 = ((X - cx) ** 2 + (Y - cy) ** 2) / radius ** 2
    return np.where(d2 < 1.0, np.cos(0.5 * np.pi * np.minimum(d2, 1.0)) ** 2, 0.0)


def _breast(spec: PhantomSpec, rng: np.random.Generator):
    X, Y, r_organ = _organ_frame(spec, rng)
    fat_lo, fat_hi = spec.tissue_ranges["fat"]
    fib_lo, fib_hi = spec.tissue_ranges["fibroglandular"]
    theta = np.arctan2(Y, X)
    boundary = _fourier_boundary(rng, theta, r_organ)
    organ = np.hypot(X, Y) <= boundary

    c = np.full(spec.grid.shape, spec.c0)
    c[organ] = rng.uniform(fat_lo, fat_hi)
    n_blobs = rng.integers(2, 9)
    for _ in range(n_blobs):
        ang = rng.uniform(0, 2 * np.pi)
        rad = rng.uniform(0, 0.6) * r_organ
        cx, cy = rad * np.cos(ang), rad * np.sin(ang)
        size = rng.uniform(0.15, 0.35) * r_organ
        target = rng.uniform(fib_lo, fib_hi)
        bump = _smooth_blob(X, Y, cx, cy, size)
        c = np.where(organ, c + bump * (target - c), c)
    c[organ] = np.clip(c[organ], fat_lo, fib_hi)
    return np.where(organ, c, spec.c0), organ


def _brain(spec: PhantomSpec, rng: np.random.Generator):
    X, Y, r_organ = _organ_frame(spec, rng)
    lo, hi = spec.tissue_ranges["brain"]
    tilt = rng.uniform(0, np.pi)
    ct, st = np.cos(tilt), np.sin(tilt)
    Xr, Yr = ct * X + st * Y, -st * X + ct * Y
    aspect = rng.uniform(0.7, 0.95)

    n_regions = int(rng.integers(3, 7))
    speeds = lo + (hi - lo) * rng.permutation(np.linspace(0.1, 0.9, n_regions))
    scales = np.linspace(1.0, 0.35, n_regions)

    c = np.full(spec.grid.shape, spec.c0)
    theta = np.arctan2(Yr / aspect, Xr)
    radial = np.hypot(Xr, Yr / aspect)
    enclosing = np.ones(spec.grid.shape, dtype=bool)
    organ = None
    for k in range(n_regions):
        boundary = _fourier_boundary(rng, theta, scales[k] * r_organ)
        # intersect with the enclosing region so the wobble never breaks nesting
        region = (radial <= boundary) & enclosing
        if organ is None:
            organ = region
        c[region] = speeds[k]
        enclosing = region
    return np.where(organ, c, spec.c0), organ


def _flat_top(X, Y, cx, cy, radius, taper):
    """Plateau at 1 with a C1 cosine rim over the outer ``taper`` fraction."""
    d = np.hypot(X - cx, Y - cy)
    inner = (1.0 - taper) * radius
    ramp = 0.5 * (1.0 + np.cos(np.pi * (d - inner) / (radius - inner)))
    return np.where(d <= inner, 1.0, np.where(d < radius, ramp, 0.0))


def _inclusions(spec: PhantomSpec, rng: np.random.Generator):
    X, Y, r_organ = _organ_frame(spec, rng)
    lo, hi = spec.inclusion_count
    n = int(rng.integers(lo, hi + 1))
    organ = np.hypot(X, Y) <= r_organ
    c = np.full(spec.grid.shape, spec.c0)
    placed: list[tuple[float, float, float]] = []
    attempts = 0
    while len(placed) < n and attempts < 500:
        attempts += 1
        size = rng.uniform(*_INCLUSION_SIZE) * r_organ
        ang = rng.uniform(0, 2 * np.pi)
        # inclusions must lie wholly inside the organ disk
        rad = rng.uniform(0, 0.95) * (r_organ - size)
        cx, cy = rad * np.cos(ang), rad * np.sin(ang)
        # keep inclusions disjoint so the stated contrast is the actual contrast
        if any(np.hypot(cx - px, cy - py) < size + ps for px, py, ps in placed):
            continue
        sign = 1.0 if rng.uniform() < 0.5 else -1.0
        bump = _flat_top(X, Y, cx, cy, size, _RIM_TAPER)
        c += organ * bump * (sign * spec.inclusion_contrast * spec.c0)
        placed.append((cx, cy, size))
    return c, organ


def gen_phantom(spec: PhantomSpec) -> SoundSpeedMap:
    """Deterministic phantom from spec + seed; exterior exactly c0."""
    rng = np.random.default_rng(spec.seed)
    builder = {"breast-like": _breast, "brain-like": _brain,
               "inclusion-test": _inclusions}[spec.kind]
    c, organ = builder(spec, rng)
    return SoundSpeedMap.from_2d(spec.grid, c, spec.c0, doi_mask=organ)


def contrast_stats(c: SoundSpeedMap) -> ContrastStats:
    lo = float(np.min(c.field.values))
    hi = float(np.max(c.field.values))
    rel = max(abs(hi - c.c0), abs(lo - c.c0)) / c.c0
    return ContrastStats(c_min=lo, c_max=hi, rel_contrast=rel)
