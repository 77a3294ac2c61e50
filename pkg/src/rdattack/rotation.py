"""Implicit partial rotations of a direction vector.

A :class:`RotationPlan` rotates ``l/2`` disjoint coordinate pairs of an
``m``-vector by one integer angle.  The equivalent ``m x m`` matrix is the
identity with a 2x2 block ``[[cos, sin], [-sin, cos]]`` at every selected pair
``(a, b)``.  It is never materialised; applying a plan costs ``2 l``
multiplications.

Trigonometry is float64, results are stored back as float32.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

_EXACT_TRIG = {0: (1.0, 0.0), 90: (0.0, 1.0), 180: (-1.0, 0.0), 270: (0.0, -1.0)}


def cos_sin_deg(beta):
    """cos/sin of an integer angle in degrees; quarter turns are exact."""
    exact = _EXACT_TRIG.get(int(beta) % 360)
    if exact is not None:
        return exact
    rad = math.radians(beta)
    return math.cos(rad), math.sin(rad)


@dataclass(frozen=True, eq=False)
class RotationPlan:
    beta_deg: int
    indices: np.ndarray  # (l,) int64, paired as (indices[0], indices[1]), (indices[2], indices[3]), ...
    cos_beta: float
    sin_beta: float

    @classmethod
    def from_pairs(cls, beta_deg, pairs):
        """Build a plan from an angle and a list of ``(a, b)`` index pairs."""
        beta_deg = int(beta_deg)
        if beta_deg == 0:
            raise ValueError("rotation angle must be nonzero")
        idx = np.asarray(pairs, dtype=np.int64).reshape(-1)
        if idx.size == 0 or idx.size % 2:
            raise ValueError("need at least one complete index pair")
        if np.unique(idx).size != idx.size:
            raise ValueError("pair indices must be distinct")
        if idx.min() < 0:
            raise ValueError("pair indices must be non-negative")
        c, s = cos_sin_deg(beta_deg)
        idx.setflags(write=False)
        return cls(beta_deg, idx, c, s)

    @property
    def l(self):
        return self.indices.shape[0]

    @property
    def pairs(self):
        return self.indices.reshape(-1, 2)

    def __repr__(self):
        return f"RotationPlan(beta={self.beta_deg}, pairs={self.pairs.tolist()})"


@dataclass(frozen=True, eq=False)
class RotationSet:
    """An ordered collection of plans stored column-wise."""

    betas: np.ndarray  # (k,) int64
    indices: np.ndarray  # (k, l) int64
    cos: np.ndarray  # (k,) float64
    sin: np.ndarray  # (k,) float64

    def __len__(self):
        return self.betas.shape[0]

    def __getitem__(self, j):
        return RotationPlan(int(self.betas[j]), self.indices[j], float(self.cos[j]), float(self.sin[j]))

    def __iter__(self):
        return (self[j] for j in range(len(self)))

    def take(self, order):
        order = np.asarray(order, dtype=np.int64)
        return RotationSet(self.betas[order], self.indices[order], self.cos[order], self.sin[order])


def angle_grid(theta):
    """Integer angles -theta..-1, 1..theta."""
    return np.concatenate([np.arange(-theta, 0), np.arange(1, theta + 1)]).astype(np.int64)


def generate_rotation_set(m, l, theta, rng):
    """One plan per nonzero integer angle in [-theta, theta].

    Each plan draws its own ``l`` distinct coordinates uniformly from ``m``;
    consecutive draws form the pairs.
    """
    m, l, theta = int(m), int(l), int(theta)
    if l < 2 or l % 2:
        raise ValueError(f"l must be an even number >= 2, got {l}")
    if l > m:
        raise ValueError(f"l={l} exceeds the dimension m={m}")
    if not 1 <= theta <= 180:
        raise ValueError(f"theta must lie in [1, 180], got {theta}")
    betas = angle_grid(theta)
    draws = rng.integers(0, m - np.arange(l), size=(betas.size, l))
    indices = kernels.sample_indices(draws, m)
    trig = np.array([cos_sin_deg(b) for b in betas], dtype=np.float64)
    return RotationSet(betas, indices, trig[:, 0].copy(), trig[:, 1].copy())


def shuffle_set(rset, rng):
    """A random reordering of the same plans."""
    return rset.take(rng.permutation(len(rset)))


def apply_rotation(plan, v):
    """Rotate the plan's coordinate pairs of ``v``; other entries are copied verbatim."""
    v = np.ascontiguousarray(v, dtype=np.float32)
    if plan.indices.max() >= v.shape[0]:
        raise IndexError(f"plan index {int(plan.indices.max())} out of range for length {v.shape[0]}")
    return kernels.rotate_pairs(v, plan.indices, plan.cos_beta, plan.sin_beta)


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch {a.shape[0]} vs {b.shape[0]}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def included_angle_deg(a, b):
    """Angle between two directions, in degrees."""
    return math.degrees(math.acos(cosine_similarity(a, b)))
