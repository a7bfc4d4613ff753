"""Spectral anomaly-magnitude metrics over the unnormalized Laplacian L = D - A.

All quadratic forms are evaluated edge-wise, ``yᵀLy = Σ_{(u,v)∈E} (y_u - y_v)²``,
so no dense Laplacian is ever built on the main path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph

MAX_DENSE_NODES = 4096


class DegenerateSignalError(ValueError):
    """The signal has zero norm, so the Rayleigh quotient is undefined."""


@dataclass(frozen=True)
class AnomalyMagnitudes:
    attribute_magnitude: float
    structural_magnitude: float

    @property
    def graph_magnitude(self) -> float:
        return self.attribute_magnitude + self.structural_magnitude

    def as_dict(self) -> dict:
        return {
            "A_ano": self.attribute_magnitude,
            "S_ano": self.structural_magnitude,
            "G_ano": self.graph_magnitude,
        }


@dataclass(frozen=True, eq=False)
class SpectralEnergy:
    eigenvalues: np.ndarray
    energies: np.ndarray

    def weighted_frequency(self) -> float:
        return float(np.dot(self.eigenvalues, self.energies))


def _edge_quadratic(g: Graph, y: np.ndarray) -> float:
    if g.m == 0:
        return 0.0
    diff = y[g.edges[:, 0]] - y[g.edges[:, 1]]
    return float(np.sum(diff * diff))


def _rayleigh(g: Graph, y: np.ndarray, what: str) -> float:
    denom = float(np.sum(y * y))
    if denom == 0.0:
        raise DegenerateSignalError(f"{what} is identically zero")
    return _edge_quadratic(g, y) / denom


def high_frequency_area(g: Graph, y) -> float:
    """Rayleigh quotient yᵀLy / yᵀy of a length-n signal."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (g.n,):
        raise ValueError(f"signal must have length {g.n}, got shape {y.shape}")
    return _rayleigh(g, y, "signal")


def attribute_anomaly_magnitude(g: Graph) -> float:
    """trace(XᵀLX) / trace(XᵀX); equals the per-signal quotient when d = 1."""
    return _rayleigh(g, g.attributes, "attribute matrix")


def structural_anomaly_magnitude(g: Graph) -> float:
    """Rayleigh quotient of L at the degree vector."""
    if g.m == 0:
        raise DegenerateSignalError("graph has no edges, degree vector is zero")
    return _rayleigh(g, g.degrees().astype(np.float64), "degree vector")


def graph_anomaly_magnitude(g: Graph) -> AnomalyMagnitudes:
    return AnomalyMagnitudes(attribute_anomaly_magnitude(g), structural_anomaly_magnitude(g))


def dense_laplacian(g: Graph) -> np.ndarray:
    a = g.dense_adjacency()
    return np.diag(a.sum(axis=1)) - a


def spectral_energy(g: Graph, y) -> SpectralEnergy:
    """Normalized squared graph-Fourier coefficients of ``y`` (diagnostic only)."""
    if g.n > MAX_DENSE_NODES:
        raise ValueError(f"dense eigendecomposition limited to n <= {MAX_DENSE_NODES}, got {g.n}")
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (g.n,):
        raise ValueError(f"signal must have length {g.n}, got shape {y.shape}")
    if not np.any(y):
        raise DegenerateSignalError("signal is identically zero")
    lam, u = np.linalg.eigh(dense_laplacian(g))
    coeff = u.T @ y
    power = coeff * coeff
    return SpectralEnergy(lam, power / power.sum())
