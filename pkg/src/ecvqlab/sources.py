"""Seeded samplers for the toy distributions.

Each family is a parametric construction with its defaults in
:mod:`ecvqlab.config`; sampling is a pure function of (spec, n), so the
same spec always reproduces the same matrix bit for bit.
"""

from dataclasses import dataclass, field

import numpy as np

from .config import GAUSSIAN_DIMS, SOURCE_DEFAULTS

SOURCE_MAGIC = b"ECVQSRC1"

FAMILIES = tuple(SOURCE_DEFAULTS)

_TWO_D_ONLY = ("banana", "boomerang", "gaussian_mixture", "sphere")


@dataclass(frozen=True)
class SourceSpec:
    """Sampling contract: family, dimension, construction params, seed."""

    family: str
    dim: int = 2
    params: dict = field(default_factory=dict)
    seed: int = 0
    label: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.family in _TWO_D_ONLY and self.dim != 2:
            raise ValueError(f"{self.family} requires dim=2, got {self.dim}")
        if self.family in ("isotropic_gaussian", "laplace") and self.dim not in GAUSSIAN_DIMS:
            raise ValueError(f"{self.family} supports dims {GAUSSIAN_DIMS}, got {self.dim}")
        unknown = set(self.params) - set(SOURCE_DEFAULTS[self.family])
        if unknown:
            raise ValueError(f"unknown params for {self.family}: {sorted(unknown)}")
        if self.family == "sphere":
            frac = self.resolved_params()["inner_fraction"]
            if not 0.0 <= frac < 1.0:
                raise ValueError(f"sphere inner_fraction must be in [0, 1), got {frac}")
        if not self.label:
            object.__setattr__(self, "label", f"{self.family}-{self.dim}d")

    def resolved_params(self):
        merged = dict(SOURCE_DEFAULTS[self.family])
        merged.update(self.params)
        return merged

    def with_seed(self, seed):
        return SourceSpec(self.family, self.dim, dict(self.params), int(seed), self.label)


def sample(spec, n):
    """Draw n i.i.d. rows from the family; deterministic in (spec, n)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(np.random.PCG64(spec.seed))
    p = spec.resolved_params()

    if spec.family == "isotropic_gaussian":
        return rng.standard_normal((n, spec.dim))

    if spec.family in ("banana", "boomerang"):
        kappa, sigma = p["curvature"], p["noise_sigma"]
        x1 = rng.standard_normal(n)
        # kappa*(x1^2 - 1) is the analytically centered bend
        x2 = kappa * (x1 * x1 - 1.0) + sigma * rng.standard_normal(n)
        return np.column_stack([x1, x2])

    if spec.family == "laplace":
        return rng.laplace(0.0, 1.0, size=(n, spec.dim))

    if spec.family == "gaussian_mixture":
        m, radius, sigma = p["n_components"], p["ring_radius"], p["sigma"]
        angles = 2.0 * np.pi * np.arange(m) / m
        means = radius * np.column_stack([np.cos(angles), np.sin(angles)])
        comp = rng.integers(0, m, size=n)
        return means[comp] + sigma * rng.standard_normal((n, 2))

    if spec.family == "sphere":
        q = p["inner_fraction"]
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
        # area-uniform radius on the annulus [q, 1]
        r = np.sqrt(q * q + rng.uniform(0.0, 1.0, size=n) * (1.0 - q * q))
        return np.column_stack([r * np.cos(theta), r * np.sin(theta)])

    raise AssertionError(f"unhandled family {spec.family}")


def describe(spec):
    """Human-readable construction description."""
    p = spec.resolved_params()
    if spec.family == "isotropic_gaussian":
        body = f"standard normal per coordinate in {spec.dim}-d"
    elif spec.family in ("banana", "boomerang"):
        body = (f"x1 ~ N(0,1); x2 = {p['curvature']}*(x1^2 - 1) "
                f"+ N(0, {p['noise_sigma']}^2)")
    elif spec.family == "laplace":
        body = f"i.i.d. Laplace(0, 1) per coordinate in {spec.dim}-d"
    elif spec.family == "gaussian_mixture":
        body = (f"{p['n_components']} equal-weight isotropic Gaussians, "
                f"means on a radius-{p['ring_radius']} ring, sigma {p['sigma']}")
    else:
        body = (f"uniform on the 2-d annulus with outer radius 1 and inner "
                f"radius {p['inner_fraction']}")
    return f"{spec.label}: {body} (seed {spec.seed})"


# ---------------------------------------------------------------------------
# file output for the gen-source CLI


def write_csv(X, path):
    np.savetxt(path, X, delimiter=",", fmt="%.17g")


def write_binary(X, path):
    """16-byte header (magic, dim, count) then row-major little-endian f64."""
    X = np.ascontiguousarray(X, dtype="<f8")
    with open(path, "wb") as f:
        f.write(SOURCE_MAGIC)
        f.write(np.array([X.shape[1], X.shape[0]], dtype="<u4").tobytes())
        f.write(X.tobytes())


def read_binary(path):
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != SOURCE_MAGIC:
            raise ValueError(f"bad magic {magic!r} in {path}")
        dim = int(np.frombuffer(f.read(4), dtype="<u4")[0])
        count = int(np.frombuffer(f.read(4), dtype="<u4")[0])
        data = np.frombuffer(f.read(count * dim * 8), dtype="<f8")
        if data.size != count * dim:
            raise ValueError(f"truncated sample file {path}")
        return data.reshape(count, dim).copy()


def read_samples(path):
    """Load samples from a .csv or raw binary file by extension sniffing."""
    path = str(path)
    if path.endswith(".csv"):
        X = np.loadtxt(path, delimiter=",", dtype=np.float64)
        return np.atleast_2d(X)
    return read_binary(path)
