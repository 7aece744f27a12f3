"""Geometry primitives and the synthetic open-set semantic embedding space.

Class names map to fixed random unit vectors; per-observation noise is a
random unit direction scaled by noise_sigma, added and renormalized.
Vector generation is keyed by (seed, name) through a stable hash, so the
vector a class gets never depends on when it was first requested.
"""

import hashlib
import math
import threading
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

# class emitted for occupied cells that belong to no semantic object
BACKGROUND_CLASS = "background"


class Vec3(NamedTuple):
    x: float
    y: float
    z: float

    def __add__(self, other):
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other):
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def scale(self, a: float) -> "Vec3":
        return Vec3(self.x * a, self.y * a, self.z * a)

    def dot(self, other) -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def unit(self) -> "Vec3":
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize zero vector")
        return Vec3(self.x / n, self.y / n, self.z / n)

    def dist(self, other) -> float:
        return (self - other).norm()


GridIndex = tuple  # (i, j, k) integer voxel coordinates


@dataclass(frozen=True)
class Pose:
    position: Vec3
    heading: Vec3  # unit, yaw-dominant

    def __post_init__(self):
        n = self.heading.norm()
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"heading must be unit length, got norm {n}")

    @property
    def yaw(self) -> float:
        """Heading azimuth in radians; 0 when the planar component vanishes."""
        if self.heading.x == 0.0 and self.heading.y == 0.0:
            return 0.0
        return math.atan2(self.heading.y, self.heading.x)


def cell_of(p: Vec3) -> GridIndex:
    """Voxel containing a point; cell (i,j,k) spans [i,i+1)x[j,j+1)x[k,k+1)."""
    return (int(math.floor(p.x)), int(math.floor(p.y)), int(math.floor(p.z)))


def cell_center(c: GridIndex) -> Vec3:
    return Vec3(c[0] + 0.5, c[1] + 0.5, c[2] + 0.5)


def normalize(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("cannot normalize zero vector")
    return v / n


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """a.b / (|a||b|), clamped into [-1, 1]. Raises on zero-norm input."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm vector")
    return float(np.clip(float(np.dot(a, b)) / (na * nb), -1.0, 1.0))


class CrossSimilarityError(RuntimeError):
    """Rejection sampling could not stay under max_cross_sim."""


@dataclass
class SemanticSpace:
    """Deterministic stand-in for a vision-language encoder.

    Every class name gets a canonical unit vector in R^dimension drawn
    from a generator seeded by sha256(seed|name|attempt); candidates are
    rejected until the cosine to every cached vector is <= max_cross_sim.
    """

    dimension: int = 64
    noise_sigma: float = 0.05
    max_cross_sim: float = 0.6
    seed: int = 0
    retry_cap: int = 64
    class_vectors: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def _candidate(self, name: str, attempt: int) -> np.ndarray:
        digest = hashlib.sha256(
            f"{self.seed}|{name}|{attempt}".encode("utf-8")
        ).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return normalize(rng.standard_normal(self.dimension))

    def encode_class(self, name: str) -> np.ndarray:
        if not name:
            raise ValueError("class name must be nonempty")
        with self._lock:
            cached = self.class_vectors.get(name)
            if cached is not None:
                return cached
            for attempt in range(self.retry_cap):
                v = self._candidate(name, attempt)
                if all(
                    abs(float(np.dot(v, u))) <= self.max_cross_sim
                    for u in self.class_vectors.values()
                ):
                    self.class_vectors[name] = v
                    return v
            raise CrossSimilarityError(
                f"max_cross_sim={self.max_cross_sim} infeasible for "
                f"dimension {self.dimension} after {self.retry_cap} tries"
            )

    def observe_embedding(self, name: str, rng: np.random.Generator) -> np.ndarray:
        """Canonical vector plus unit-direction noise of scale noise_sigma."""
        v = self.encode_class(name)
        if self.noise_sigma == 0.0:
            return v.copy()
        n = normalize(rng.standard_normal(self.dimension))
        return normalize(v + self.noise_sigma * n)

    def observe_batch(self, names, rng: np.random.Generator) -> np.ndarray:
        """Noisy observations for a sequence of class names, one row each.

        Consumes one noise vector per row in order, so results depend only
        on the order of names and the state of rng.
        """
        vs = np.stack([self.encode_class(n) for n in names]) if names else np.zeros(
            (0, self.dimension)
        )
        if not len(names):
            return vs
        if self.noise_sigma == 0.0:
            return vs.copy()
        noise = rng.standard_normal((len(names), self.dimension))
        noise /= np.linalg.norm(noise, axis=1, keepdims=True)
        out = vs + self.noise_sigma * noise
        out /= np.linalg.norm(out, axis=1, keepdims=True)
        return out
