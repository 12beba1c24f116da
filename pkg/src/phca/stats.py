"""Violation statistics over a finished batch.

Everything here reads a BatchResult and reports in original (unscaled)
units: slack distributions per analysis-grid group, per-bus voltage
quantiles, which soft constraints would be violated without the slack
and by how much, and the tap ratios implied for remote regulators.
Slack below 1e-8 is treated as exactly zero; an instance whose slack
exceeds 1e-6 is counted as needing relaxation, meaning its unrelaxed
problem is infeasible for practical purposes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .builder import REMOTE_REG, MpqpProblem
from .engine import BatchResult
from .errors import EmptyGroupError, ModelError
from .feeder import REMOTE, FeederModel
from .scenarios import ThetaSet

SLACK_ZERO_TOL = 1e-8
RELAX_THRESHOLD = 1e-6
VIOLATION_TOL = 1e-6
DEFAULT_QUANTILES = (0.0, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0)


def slack_values(result: BatchResult) -> np.ndarray:
    """Zero-clamped slack per instance; NaN where no solution exists."""
    prob = result.problem
    if prob.slack_index is None:
        raise ModelError("problem has no slack variable")
    s = result.x[:, prob.slack_index].copy()
    tiny = np.abs(s) < SLACK_ZERO_TOL
    s[tiny & np.isfinite(s)] = 0.0
    return s


def slack_cdf(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Empirical distribution of the finite slack values.

    Returns the sorted values and P(slack <= value) at each of them.
    """
    vals = np.sort(values[np.isfinite(values)])
    if vals.size == 0:
        raise EmptyGroupError("no finite slack values to summarize")
    return vals, np.arange(1, vals.size + 1) / vals.size


def voltage_matrix(result: BatchResult) -> np.ndarray:
    """Non-substation voltages per instance (rows follow the batch)."""
    prob = result.problem
    if prob.W is None:
        raise ModelError("problem carries no voltage map")
    return result.x @ prob.W.T + result.thetas @ prob.U.T


def soft_violations(result: BatchResult) -> tuple[np.ndarray, np.ndarray]:
    """Residuals of the soft rows with the slack coupling removed.

    Returns (rows, resid) where rows indexes into the problem's row list
    and resid[i, j] > 0 means instance i violates soft row rows[j] by that
    much in original units when no slack relief is applied.
    """
    prob = result.problem
    soft = prob.soft_rows
    if soft.size == 0:
        raise ModelError("problem has no soft rows")
    A0 = prob.A[soft].copy()
    if prob.slack_index is not None:
        A0[:, prob.slack_index] = 0.0
    resid = result.x @ A0.T - result.thetas @ prob.E[soft].T - prob.b[soft]
    return soft, resid * result.scaling.ineq_scale


def violation_bound_gap(result: BatchResult) -> np.ndarray:
    """Worst soft-row residual minus the slack, per instance.

    Feasibility of the relaxed problem caps every soft-row violation by
    the slack itself, so this gap stays at solver noise for any sound
    batch.  NaN rows pass through.
    """
    prob = result.problem
    _, resid = soft_violations(result)
    s = result.x[:, prob.slack_index]
    return np.max(resid, axis=1) - s


def recover_ratios(result: BatchResult, feeder: FeederModel) -> dict[str, np.ndarray]:
    """Implied tap ratio v_out / v_in per remote regulator, per instance."""
    prob = result.problem
    volts = voltage_matrix(result)
    out = {}
    for k, rg in enumerate(feeder.regulators):
        if rg.kind != REMOTE:
            continue
        ref = f"{feeder.ext_ids[rg.m]}-{feeder.ext_ids[rg.n]}"
        v_out = result.x[:, prob.vreg_indices[k]]
        v_in = result.x[:, prob.v0_index] if rg.m == 0 else volts[:, rg.m - 1]
        with np.errstate(invalid="ignore", divide="ignore"):
            out[ref] = v_out / v_in
    return out


@dataclass(frozen=True)
class GroupStats:
    """Summary for one (kappa, oversize, alpha) cell of the grid."""

    key: tuple[float, float, float]
    n_instances: int
    n_solved: int
    n_relaxed: int
    slack_quantiles: tuple[float, ...]
    max_slack: float
    voltage_quantiles: np.ndarray  # len(quantiles) x n_inj
    worst_rows: tuple[tuple[str, int, float], ...]  # label, violated count, max amount

    @property
    def relaxed_share(self) -> float:
        return self.n_relaxed / self.n_solved if self.n_solved else float("nan")


def group_stats(
    result: BatchResult,
    theta_set: ThetaSet,
    quantiles: tuple[float, ...] = DEFAULT_QUANTILES,
    top_rows: int = 5,
) -> list[GroupStats]:
    """Per-group distributions over the solved instances.

    Quantiles use the linear interpolation rule.  Raises EmptyGroupError
    when a grid cell produced no solved instance at all.
    """
    prob = result.problem
    s_all = slack_values(result)
    volts = voltage_matrix(result)
    soft, resid = soft_violations(result)
    labels = [str(prob.row_labels[i]) for i in soft]
    qs = np.asarray(quantiles)

    out = []
    for key in theta_set.group_keys():
        rows = theta_set.rows_for(key)
        solved = rows[np.isfinite(s_all[rows])]
        if solved.size == 0:
            raise EmptyGroupError(f"grid cell {key} has no solved instances")
        s = s_all[solved]
        vq = np.quantile(volts[solved], qs, axis=0, method="linear")
        counts = (resid[solved] > VIOLATION_TOL).sum(axis=0)
        worst = []
        for j in np.argsort(-counts):
            if counts[j] == 0:
                break
            worst.append((labels[j], int(counts[j]), float(resid[solved, j].max())))
            if len(worst) == top_rows:
                break
        out.append(
            GroupStats(
                key=key,
                n_instances=int(rows.size),
                n_solved=int(solved.size),
                n_relaxed=int((s > RELAX_THRESHOLD).sum()),
                slack_quantiles=tuple(
                    float(v) for v in np.quantile(s, qs, method="linear")
                ),
                max_slack=float(s.max()),
                voltage_quantiles=vq,
                worst_rows=tuple(worst),
            )
        )
    return out


def _bus_names(prob: MpqpProblem) -> list[str]:
    # theta names open with one pc slot per non-substation bus
    return [name[3:-1] for name in prob.theta_names[: prob.n_inj]]


def render_report(
    result: BatchResult,
    theta_set: ThetaSet,
    feeder: FeederModel | None = None,
    quantiles: tuple[float, ...] = DEFAULT_QUANTILES,
) -> str:
    """Human-readable batch report."""
    prob = result.problem
    c = result.counters
    lines = []
    lines.append("batch summary")
    lines.append(
        f"  instances {c.n_instances}  qp-solves {c.qp_solves} "
        f"({100.0 * c.qp_solves / max(c.n_instances, 1):.2f}%)  regions {c.regions_built}"
    )
    lines.append(
        f"  reuse {c.reuse}  seeds {c.seeds}  degenerate {c.degenerate} "
        f"stragglers {c.stragglers}  infeasible {c.infeasible}  failed {c.failed}"
    )
    qs_label = " ".join(f"q{int(round(100 * q)):02d}" for q in quantiles)
    buses = _bus_names(prob)
    for gs in group_stats(result, theta_set, quantiles):
        kappa, oversize, alpha = gs.key
        lines.append("")
        lines.append(
            f"group kappa={kappa:g} oversize={oversize:g} alpha={alpha:g} "
            f"({gs.n_solved}/{gs.n_instances} solved)"
        )
        lines.append(
            f"  relaxed {gs.n_relaxed} ({100.0 * gs.relaxed_share:.2f}%)  "
            f"max slack {gs.max_slack:.3e}"
        )
        lines.append(
            "  slack    " + qs_label + "  =  "
            + " ".join(f"{v:.3e}" for v in gs.slack_quantiles)
        )
        lines.append("  voltage quantiles per bus [" + qs_label + "]")
        for j, bus in enumerate(buses):
            vals = " ".join(f"{gs.voltage_quantiles[qi, j]:.5f}" for qi in range(len(quantiles)))
            lines.append(f"    bus {bus:>4s}  {vals}")
        if gs.worst_rows:
            lines.append("  most violated soft rows (count, worst amount):")
            for label, cnt, amt in gs.worst_rows:
                lines.append(f"    {label}  {cnt}  {amt:.3e}")
        else:
            lines.append("  no soft-row violations")
    if feeder is not None and any(rg.kind == REMOTE for rg in feeder.regulators):
        lines.append("")
        lines.append("remote regulator tap ratios (min, max over solved instances)")
        for ref, ratios in recover_ratios(result, feeder).items():
            finite = ratios[np.isfinite(ratios)]
            lines.append(f"  {ref}  {finite.min():.5f}  {finite.max():.5f}")
    return "\n".join(lines) + "\n"


def json_report(
    result: BatchResult,
    theta_set: ThetaSet,
    feeder: FeederModel | None = None,
    quantiles: tuple[float, ...] = DEFAULT_QUANTILES,
) -> str:
    """Machine-readable counterpart of render_report; deterministic."""
    prob = result.problem
    buses = _bus_names(prob)
    groups = []
    for gs in group_stats(result, theta_set, quantiles):
        groups.append(
            {
                "kappa": gs.key[0],
                "oversize": gs.key[1],
                "alpha": gs.key[2],
                "instances": gs.n_instances,
                "solved": gs.n_solved,
                "relaxed": gs.n_relaxed,
                "max_slack": gs.max_slack,
                "slack_quantiles": list(gs.slack_quantiles),
                "voltage_quantiles": {
                    bus: [float(v) for v in gs.voltage_quantiles[:, j]]
                    for j, bus in enumerate(buses)
                },
                "worst_rows": [
                    {"row": label, "count": cnt, "max_violation": amt}
                    for label, cnt, amt in gs.worst_rows
                ],
            }
        )
    payload = {
        "counters": result.summary()["counters"],
        "quantiles": list(quantiles),
        "groups": groups,
    }
    if feeder is not None:
        ratios = {}
        for ref, arr in recover_ratios(result, feeder).items():
            finite = arr[np.isfinite(arr)]
            ratios[ref] = {"min": float(finite.min()), "max": float(finite.max())}
        if ratios:
            payload["remote_ratios"] = ratios
    return json.dumps(payload, sort_keys=True, indent=1)
