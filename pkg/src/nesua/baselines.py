"""Comparison association policies: signal-strength rules and an
exhaustive minimum-power search for small instances.

The signal-strength rules are capacity-blind on purpose: a UE joins its
best cell even if that overloads it, and overload shows up in reported
power through the clipped utilization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceededError, ConfigError
from .power import PowerParams, network_power_hard, radio_coefficients
from .scenario import Scenario

ORACLE_BUDGET = 10_000_000
_CHUNK = 1 << 16


@dataclass(frozen=True)
class HardAssociation:
    """One cell index per UE."""

    assignment: np.ndarray  # (K,) int
    n_cells: int

    def as_matrix(self) -> np.ndarray:
        s = np.zeros((self.assignment.shape[0], self.n_cells))
        s[np.arange(self.assignment.shape[0]), self.assignment] = 1.0
        return s


def associate_rsrp(s: Scenario) -> HardAssociation:
    """Each UE on its strongest wideband received power; ties to the
    lowest cell index."""
    return HardAssociation(
        assignment=np.argmax(s.rsrp_dbm, axis=1), n_cells=s.n_cells
    )


def associate_ga_subsinr(s: Scenario, agg: str = "max") -> HardAssociation:
    """Each UE on the cell with the best per-PRB SINR profile.

    agg picks the profile summary: the single best PRB, or the linear
    mean of the best eight.
    """
    lin = 10.0 ** (s.sinr_per_prb_db / 10.0)
    if agg == "max":
        score = lin.max(axis=2)
    elif agg == "mean_top8":
        m = min(8, lin.shape[2])
        top = np.sort(lin, axis=2)[:, :, -m:]
        score = top.mean(axis=2)
    else:
        raise ConfigError(f"unknown sub-band aggregation {agg!r}")
    return HardAssociation(assignment=np.argmax(score, axis=1), n_cells=s.n_cells)


@dataclass(frozen=True)
class OracleResult:
    """Outcome of the exhaustive search."""

    association: HardAssociation
    power_w: float
    feasible: bool  # False when every assignment overloads some cell


def oracle_assignment(
    prb: np.ndarray,
    n_prb_total: int,
    p: PowerParams,
    budget: int = ORACLE_BUDGET,
) -> OracleResult:
    """Enumerate every assignment and keep the cheapest feasible one.

    Feasible means no cell holds more PRBs than the carrier. If nothing
    is feasible the cheapest overloaded assignment is returned, flagged.
    Ties go to the lexicographically smallest assignment tuple.
    """
    prb = np.asarray(prb, dtype=np.float64)
    k, n = prb.shape
    total = n**k
    if total > budget:
        raise BudgetExceededError(
            f"{n}^{k} = {total} assignments exceed the budget of {budget}"
        )
    c0, c1 = radio_coefficients(p)
    place = n ** np.arange(k - 1, -1, -1)  # UE 0 is the most significant digit

    best_any = (np.inf, -1)
    best_feasible = (np.inf, -1)
    for start in range(0, total, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, total))
        digits = (idx[:, None] // place[None, :]) % n  # (C, K)
        one_hot = digits[:, :, None] == np.arange(n)[None, None, :]
        loads = np.einsum("ckn,kn->cn", one_hot, prb)
        eta = np.minimum(1.0, loads / n_prb_total)
        # same term order as network_power_hard so ties resolve identically
        on_w = p.p_fixed_w + p.p_bb0_w + p.p_bb_slope_w * eta + c0 + c1 * eta
        cell_w = np.where(loads > 0, on_w, p.p_sleep_w)
        power = cell_w.sum(axis=1)
        feasible = (loads <= n_prb_total).all(axis=1)

        j = int(np.argmin(power))
        if power[j] < best_any[0]:
            best_any = (float(power[j]), int(idx[j]))
        if feasible.any():
            pw = np.where(feasible, power, np.inf)
            j = int(np.argmin(pw))
            if pw[j] < best_feasible[0]:
                best_feasible = (float(pw[j]), int(idx[j]))

    found = best_feasible[1] >= 0
    chosen = best_feasible[1] if found else best_any[1]
    assignment = ((chosen // place) % n).astype(np.int64)
    assoc = HardAssociation(assignment=assignment, n_cells=n)
    power_w = network_power_hard(assoc.as_matrix(), prb, p, n_prb_total).total_w
    return OracleResult(association=assoc, power_w=power_w, feasible=found)


def associate_oracle(
    s: Scenario, p: PowerParams, budget: int = ORACLE_BUDGET
) -> OracleResult:
    return oracle_assignment(s.prb_demand, s.n_prb_total, p, budget)
