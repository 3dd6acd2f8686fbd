"""Phase coherence across sensors, and circular-statistics helpers.

The phase coherence index between sensors i and j is the modulus of the
mean unit phasor of their phase difference across frequency bins:

    A_ij = (1/F) * | sum_f exp(j * (phi_i(f) - phi_j(f))) |

A stable relative phase (any constant offset) gives A_ij = 1; phase
differences spread around the circle cancel and push A_ij toward 0.
Collected over all pairs this yields a symmetric matrix with unit
diagonal that downstream attention uses as a soft adjacency.

Two evaluation paths exist: a plain numpy one for graph construction,
and a differentiable re-estimate built from autodiff primitives so the
coherence of reconstructed phases can be penalized during training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

# Keeps the modulus differentiable at the origin; |.| has no gradient at 0.
PCI_EPS = 1e-12


class CoherenceError(ValueError):
    pass


@dataclass
class PciMatrix:
    """C x C phase coherence adjacency; entries in [0, 1], symmetric, unit diagonal."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise CoherenceError(f"PCI matrix must be square, got {v.shape}")

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    def check(self, range_slack: float = 1e-9, sym_tol: float = 1e-12) -> None:
        """Raise if the coherence-matrix invariants are violated."""
        v = self.values
        if not np.all(np.isfinite(v)):
            raise CoherenceError("PCI matrix contains non-finite entries")
        if v.min() < -range_slack or v.max() > 1.0 + range_slack:
            raise CoherenceError(
                f"PCI entries outside [0, 1]: min {v.min()}, max {v.max()}")
        if np.abs(v - v.T).max() > sym_tol:
            raise CoherenceError("PCI matrix is not symmetric")
        if np.abs(np.diag(v) - 1.0).max() > sym_tol:
            raise CoherenceError("PCI diagonal deviates from 1")


def pci(phase: np.ndarray) -> PciMatrix:
    """Phase coherence index matrix of a C x F phase array.

    Computed from the upper triangle and mirrored, so symmetry is exact
    rather than a floating-point accident; the diagonal is set to 1.
    """
    phase = np.asarray(phase, dtype=np.float64)
    if phase.ndim != 2:
        raise CoherenceError(f"expected a C x F phase array, got {phase.shape}")
    if not np.all(np.isfinite(phase)):
        raise CoherenceError("phase array contains non-finite entries")
    n_ch, n_bins = phase.shape
    phasors = np.exp(1j * phase)  # (C, F)
    gram = phasors @ phasors.conj().T
    raw = np.abs(gram) / n_bins
    out = np.triu(raw, 1)
    out = out + out.T
    np.fill_diagonal(out, 1.0)
    return PciMatrix(out)


def pci_differentiable(phase_hat: ad.DiffTensor) -> ad.DiffTensor:
    """Coherence matrix of a C x F phase tensor, built from autodiff primitives.

    Values agree with :func:`pci` up to the epsilon inside the modulus,
    sqrt(x^2 + y^2 + eps), which keeps the gradient finite when the
    resultant vanishes.
    """
    if phase_hat.values.ndim != 2:
        raise CoherenceError(
            f"expected a C x F phase tensor, got {phase_hat.shape}")
    n_ch, n_bins = phase_hat.shape
    c = ad.cos(phase_hat)
    s = ad.sin(phase_hat)
    # sum_f cos(phi_i - phi_j) and sum_f sin(phi_i - phi_j) via angle-difference
    # identities, so only matmuls of the per-bin cos/sin enter the graph.
    sum_cos = ad.add(ad.matmul(c, ad.transpose(c)), ad.matmul(s, ad.transpose(s)))
    sum_sin = ad.sub(ad.matmul(s, ad.transpose(c)), ad.matmul(c, ad.transpose(s)))
    sq = ad.add(ad.mul(sum_cos, sum_cos), ad.mul(sum_sin, sum_sin))
    sq = ad.add(sq, ad.constant(np.full((n_ch, n_ch), PCI_EPS)))
    return ad.scale(ad.sqrt(sq), 1.0 / n_bins)


def circular_distance(a, b):
    """1 - cos(a - b): the circular discrepancy of two angles, in [0, 2].

    Periodic in 2*pi, so wrap-around at +-pi costs nothing, unlike a
    Euclidean difference of raw angles.
    """
    return 1.0 - np.cos(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))
