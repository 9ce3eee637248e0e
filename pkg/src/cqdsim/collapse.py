"""Branching at the second Stern-Gerlach stage and flip-fraction statistics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

NO_FLIP = 0  # electron realigned to theta = 0
FLIP = 1  # electron realigned to theta = pi


def branch(theta_e_final: float, theta_n0: float) -> int:
    """Outcome of the co-quantum branching rule.

    The electron lands at theta = 0 when its final polar angle is below the
    nuclear polar angle and at theta = pi otherwise.  Equality (a
    measure-zero event) counts as a flip.
    """
    for name, val in (("theta_e_final", theta_e_final), ("theta_n0", theta_n0)):
        if not 0.0 <= val <= np.pi:
            raise ValueError(f"{name} must lie in [0, pi], got {val!r}")
    return NO_FLIP if theta_e_final < theta_n0 else FLIP


@dataclass(frozen=True)
class AtomOutcome:
    theta_e_final: float
    theta_n0: float
    branch: int

    @classmethod
    def from_angles(cls, theta_e_final: float, theta_n0: float) -> "AtomOutcome":
        return cls(theta_e_final, theta_n0, branch(theta_e_final, theta_n0))


def flip_fraction(outcomes: Iterable[AtomOutcome | int]) -> tuple[float, float]:
    """Fraction of flipped atoms and its binomial standard error.

    Accepts outcomes or bare branch values.
    """
    branches = [o.branch if isinstance(o, AtomOutcome) else int(o) for o in outcomes]
    if not branches:
        raise ValueError("cannot compute a flip fraction from no atoms")
    n = len(branches)
    w = sum(1 for b in branches if b == FLIP) / n
    return w, float(np.sqrt(w * (1.0 - w) / n))
