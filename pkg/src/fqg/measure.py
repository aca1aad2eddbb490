"""Weakly self-similar probability measure on Hanoi-type graphs."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidParameter
from .geometry import JOINING, HanoiParams, joining_count

REGIME_TOL = 1e-12
MU = "mu"
LENGTH = "length"
MEASURES = (MU, LENGTH)


@dataclass(frozen=True)
class MeasureParams:
    beta: float
    n0: int = 3

    def __post_init__(self):
        if self.n0 < 3:
            raise InvalidParameter(f"n0 must be >= 3, got {self.n0}")
        if not (0.0 < self.beta < self.beta_max):
            raise InvalidParameter(
                f"beta must lie in (0, {self.beta_max:.6g}) for n0={self.n0}, got {self.beta}")

    @property
    def beta_max(self) -> float:
        return 2.0 / (self.n0 * (self.n0 - 1))

    @property
    def s(self) -> float:
        """Mass of a first-level copy."""
        if self.n0 == 3:
            return (1.0 - 3.0 * self.beta) / 3.0
        return (2.0 - self.n0 * (self.n0 - 1) * self.beta) / (2.0 * self.n0)


def edge_mass(mp: MeasureParams, edge) -> float:
    if edge.kind != JOINING:
        raise InvalidParameter("cell edges carry no mass under mu")
    return mp.s ** (edge.level - 1) * mp.beta


def edge_density(mp: MeasureParams, edge) -> float:
    return edge_mass(mp, edge) / edge.length


def length_mass(edge) -> float:
    """Mass of an edge under the length measure (density 1, every edge kind)."""
    return edge.length


def edge_weight(edge, measure: str = MU, mp: MeasureParams | None = None) -> float:
    """Edge mass under ``measure``; ``mp`` is required for ``mu`` only."""
    if measure == LENGTH:
        return length_mass(edge)
    if measure != MU:
        raise InvalidParameter(f"unknown measure {measure!r}, expected one of {MEASURES}")
    if mp is None:
        raise InvalidParameter("the mu measure needs beta")
    return edge_mass(mp, edge)


def cell_mass(mp: MeasureParams, word) -> float:
    return mp.s ** len(word)


def truncation_total(mp: MeasureParams, n: int) -> float:
    """Total mass of level-n cells plus joining edges up to level n."""
    s, b, n0 = mp.s, mp.beta, mp.n0
    parts = [n0**n * s**n]
    parts += [joining_count(n0, k) * s ** (k - 1) * b for k in range(1, n + 1)]
    return math.fsum(parts)


@dataclass(frozen=True)
class RegimeInfo:
    rs: float
    regime: str  # "i", "ii" or "iii"
    spectral_dimension: float
    counting_exponent: float


def rs_product(hp: HanoiParams, mp: MeasureParams) -> RegimeInfo:
    if hp.n0 != mp.n0:
        raise InvalidParameter("geometry and measure n0 differ")
    n0 = hp.n0
    rs = hp.r * mp.s
    if rs >= 1.0 / (2 * n0):
        raise InvalidParameter(f"rs={rs} is not below 1/(2 n0)")
    crit = 1.0 / n0**2
    if abs(rs - crit) <= REGIME_TOL:
        return RegimeInfo(rs, "ii", 1.0, 0.5)
    if rs < crit:
        return RegimeInfo(rs, "i", 1.0, 0.5)
    ds = math.log(n0**2) / -math.log(rs)
    return RegimeInfo(rs, "iii", ds, ds / 2.0)


def beta_for_rs(alpha: float, rs: float, n0: int = 3) -> float:
    """The beta giving a target rs product."""
    r = (1.0 - alpha) / 2.0
    s = rs / r
    return (2.0 - 2.0 * n0 * s) / (n0 * (n0 - 1))
