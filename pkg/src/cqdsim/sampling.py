"""Monte Carlo sampling of moment orientations.

Every atom owns an independent counter-based stream (Philox) keyed by the
run seed, a substream label and the atom index, so the draws an atom sees do
not depend on scheduling or on how many workers share the ensemble.
"""
from __future__ import annotations

import struct

import numpy as np

TWO_PI = 2.0 * np.pi


def substream_key(label: float) -> int:
    """Map a float label (e.g. a wire current) to a stable 64-bit key.

    Keying by the value rather than its position in a list keeps each
    current's draws unchanged when other currents are added or removed.
    """
    return struct.unpack("<Q", struct.pack("<d", float(label)))[0]


class RandomStream:
    """Deterministic uniform substream for one atom.

    Parameters
    ----------
    seed : int
        Run seed (any non-negative integer below 2**64).
    atom_index : int
        Index of the atom within its ensemble.
    substream : int, optional
        Extra key separating ensembles that share a seed, e.g.
        ``substream_key(current)``.
    """

    def __init__(self, seed: int, atom_index: int, substream: int = 0):
        if seed < 0 or atom_index < 0 or substream < 0:
            raise ValueError("seed, atom_index and substream must be non-negative")
        self.seed = int(seed)
        self.atom_index = int(atom_index)
        self.substream = int(substream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.substream, self.atom_index))
        self._gen = np.random.Generator(np.random.Philox(ss))

    def uniform(self, size=None):
        """Draw uniform value(s) in [0, 1)."""
        return self._gen.random(size)

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, atom_index={self.atom_index}, substream={self.substream})"


def isotropic_angles(zeta1, zeta2):
    """Polar and azimuthal angles uniform on the sphere from two uniforms."""
    zeta1 = np.asarray(zeta1, dtype=float)
    return 2.0 * np.arcsin(np.sqrt(zeta1)), TWO_PI * np.asarray(zeta2, dtype=float)


def post_sg1_angles(zeta1, zeta2):
    """Nuclear angles distributed as ``(1 - cos theta) / 4 pi``.

    The polar map ``2 arcsin(zeta**(1/4))`` inverts the CDF ``sin^4(theta/2)``.
    """
    zeta1 = np.asarray(zeta1, dtype=float)
    return 2.0 * np.arcsin(zeta1**0.25), TWO_PI * np.asarray(zeta2, dtype=float)


def post_sg1_cdf(polar):
    """``P(theta_n <= polar)`` for the selected (electron-up) branch."""
    return np.sin(np.asarray(polar, dtype=float) / 2.0) ** 4


def post_sg1_pdf(polar, branch_up: bool = True):
    """Nuclear orientation density (1/sr) after the first Stern-Gerlach stage.

    ``branch_up`` selects the electron-up branch, ``(1 - cos theta)/4 pi``;
    otherwise ``(1 + cos theta)/4 pi``.
    """
    polar = np.asarray(polar, dtype=float)
    if np.any((polar < 0.0) | (polar > np.pi)) or np.any(np.isnan(polar)):
        raise ValueError("polar angle must lie in [0, pi]")
    sign = -1.0 if branch_up else 1.0
    out = (1.0 + sign * np.cos(polar)) / (4.0 * np.pi)
    return out if out.ndim else float(out)


def sample_isotropic(stream: RandomStream) -> tuple[float, float]:
    polar, azimuth = isotropic_angles(stream.uniform(), stream.uniform())
    return float(polar), float(azimuth)


def sample_post_sg1(stream: RandomStream) -> tuple[float, float]:
    polar, azimuth = post_sg1_angles(stream.uniform(), stream.uniform())
    return float(polar), float(azimuth)


def sample_chamber_entry(stream: RandomStream) -> tuple[float, float, float, float]:
    """Initial ``(theta_e, phi_e, theta_n, phi_n)`` for one atom.

    Draw order is fixed: nuclear polar, nuclear azimuth, electron azimuth.
    The electron enters antiparallel to +z (already flipped adiabatically),
    so its azimuth is recorded but does not change the Cartesian state.
    """
    theta_n, phi_n = sample_post_sg1(stream)
    phi_e = float(TWO_PI * stream.uniform())
    return np.pi, phi_e, theta_n, phi_n
