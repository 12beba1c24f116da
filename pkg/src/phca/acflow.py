"""Exact AC power flow on the radial feeder, used to validate the linear model.

A backward/forward sweep with complex phasors: backward pass accumulates
branch currents from constant-power bus injections, forward pass updates
voltages.  Regulators are treated as ideal transformers with caller-supplied
fixed ratios (lossless, the branch impedance under a regulator is not
modeled), which matches the assumption behind the subgraph voltage law.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NonConvergenceError
from .feeder import FeederModel, partition_by_regulators, sensitivity_matrices

SWEEP_TOL = 1e-12
SWEEP_MAX_ITER = 200


@dataclass(frozen=True)
class PowerFlowSolution:
    """Converged sweep result.

    volts holds complex bus voltages (substation first), line_current the
    downstream-side branch current per line, line_loss the ohmic loss per
    line (zero on regulator lines), and iterations the sweep count.
    """

    volts: np.ndarray
    line_current: np.ndarray
    line_loss: np.ndarray
    iterations: int

    @property
    def vmag(self) -> np.ndarray:
        return np.abs(self.volts)

    @property
    def total_loss(self) -> float:
        return float(self.line_loss.sum())


def _ratio_array(feeder: FeederModel, ratios) -> np.ndarray:
    k = len(feeder.regulators)
    if ratios is None:
        return np.ones(k)
    arr = np.asarray(ratios, dtype=float)
    if arr.shape != (k,):
        raise DimensionError(f"expected {k} regulator ratios, got shape {arr.shape}")
    if np.any(arr <= 0):
        raise DimensionError("regulator ratios must be positive")
    return arr


def solve_powerflow(
    feeder: FeederModel,
    p: np.ndarray,
    q: np.ndarray,
    v0: float = 1.0,
    ratios=None,
    tol: float = SWEEP_TOL,
    max_iter: int = SWEEP_MAX_ITER,
) -> PowerFlowSolution:
    """Backward/forward sweep for net injections p + jq (non-substation buses).

    Injections are generation minus consumption, ordered by internal bus
    index 1..N.  Raises NonConvergenceError when the voltage update fails
    to fall below ``tol`` within ``max_iter`` sweeps.
    """
    n = feeder.n_bus
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != (n - 1,) or q.shape != (n - 1,):
        raise DimensionError(f"expected {n - 1} injections, got {p.shape} and {q.shape}")
    s_inj = np.zeros(n, dtype=complex)
    s_inj[1:] = p + 1j * q

    ratio = _ratio_array(feeder, ratios)
    reg_of_line = {}
    for j, rg in enumerate(feeder.regulators):
        reg_of_line[feeder.line_between(rg.m, rg.n)] = j

    z = np.array([ln.r + 1j * ln.x for ln in feeder.lines])
    v = np.full(n, complex(v0), dtype=complex)
    # seed downstream pieces at their ratio-implied level to help convergence
    for l, j in reg_of_line.items():
        v[feeder.subtree[l]] *= ratio[j]

    branch = np.zeros(len(feeder.lines), dtype=complex)
    for it in range(1, max_iter + 1):
        # backward: consumption currents, accumulated children-first
        cons = np.conj(-s_inj / v)
        cons[0] = 0.0
        acc = cons.copy()
        for bus in range(n - 1, 0, -1):
            l = feeder.parent_line[bus]
            branch[l] = acc[bus]
            if l in reg_of_line:
                # ideal transformer: upstream current is ratio * downstream
                acc[feeder.parent[bus]] += ratio[reg_of_line[l]] * acc[bus]
            else:
                acc[feeder.parent[bus]] += acc[bus]
        # forward: voltage updates root-to-leaves
        delta = 0.0
        for bus in range(1, n):
            l = feeder.parent_line[bus]
            if l in reg_of_line:
                new = ratio[reg_of_line[l]] * v[feeder.parent[bus]]
            else:
                new = v[feeder.parent[bus]] - z[l] * branch[l]
            delta = max(delta, abs(new - v[bus]))
            v[bus] = new
        if delta < tol:
            loss = np.array(
                [
                    0.0 if l in reg_of_line else feeder.lines[l].r * abs(branch[l]) ** 2
                    for l in range(len(feeder.lines))
                ]
            )
            if not np.all(np.isfinite(v)):
                raise NonConvergenceError("sweep produced non-finite voltages")
            return PowerFlowSolution(v.copy(), branch.copy(), loss, it)
        if not np.all(np.isfinite(v)) or np.max(np.abs(v)) > 1e3:
            raise NonConvergenceError(f"sweep diverged after {it} iterations")
    raise NonConvergenceError(f"no convergence to {tol:g} within {max_iter} sweeps")


def power_balance_residual(
    feeder: FeederModel,
    sol: PowerFlowSolution,
    p: np.ndarray,
    q: np.ndarray,
    ratios=None,
) -> float:
    """Worst-case complex power mismatch over all buses; small at convergence."""
    n = feeder.n_bus
    s_inj = np.zeros(n, dtype=complex)
    s_inj[1:] = np.asarray(p, float) + 1j * np.asarray(q, float)
    ratio = _ratio_array(feeder, ratios)
    reg_of_line = {feeder.line_between(rg.m, rg.n): j for j, rg in enumerate(feeder.regulators)}

    worst = 0.0
    for bus in range(1, n):
        into = sol.line_current[feeder.parent_line[bus]]
        out = 0.0 + 0.0j
        for l, ln in enumerate(feeder.lines):
            if ln.from_bus != bus:
                continue
            cur = sol.line_current[l]
            if l in reg_of_line:
                # upstream side of an ideal transformer carries ratio * current
                cur = cur * ratio[reg_of_line[l]]
            out += cur
        mismatch = sol.volts[bus] * np.conj(into - out) + s_inj[bus]
        worst = max(worst, abs(mismatch))
    return worst


def angle_form_losses(feeder: FeederModel, sol: PowerFlowSolution) -> float:
    """Total loss recomputed from voltage magnitudes and angle differences.

    Per line, with conductance g = r / (r^2 + x^2) and psi the angle
    difference across the line, the ohmic loss is
    g * (vm^2 + vn^2 - 2 vm vn cos psi); summing over non-regulator lines
    must agree with the current-based total.
    """
    reg_lines = feeder.regulator_line_indices()
    total = 0.0
    for l, ln in enumerate(feeder.lines):
        if l in reg_lines:
            continue
        vm = sol.volts[ln.from_bus]
        vn = sol.volts[ln.to_bus]
        g = ln.r / (ln.r**2 + ln.x**2)
        psi = np.angle(vm) - np.angle(vn)
        total += g * (abs(vm) ** 2 + abs(vn) ** 2 - 2 * abs(vm) * abs(vn) * np.cos(psi))
    return float(total)


def linear_model_prediction(
    feeder: FeederModel,
    p: np.ndarray,
    q: np.ndarray,
    v0: float = 1.0,
    ratios=None,
) -> tuple[np.ndarray, float]:
    """First-order voltages and second-order losses for the same setup.

    Evaluates the subgraph voltage law with the regulator output pinned at
    ratio * (predicted input voltage), walking subgraphs from the substation
    outward, and sums the quadratic loss form over subgraphs.  Returns
    (vmag over all buses, total loss).
    """
    ratio = _ratio_array(feeder, ratios)
    subs = partition_by_regulators(feeder)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    n = feeder.n_bus
    if p.shape != (n - 1,) or q.shape != (n - 1,):
        raise DimensionError(f"expected {n - 1} injections, got {p.shape} and {q.shape}")
    p_full = np.concatenate(([0.0], p))
    q_full = np.concatenate(([0.0], q))

    v = np.empty(n)
    v[0] = v0
    loss = 0.0
    for sub in subs:
        if sub.root != 0:
            rg = feeder.regulators[sub.index - 1]
            v[sub.root] = ratio[sub.index - 1] * v[rg.m]
        sens = sensitivity_matrices(sub, feeder)
        if not sub.members:
            continue
        # effective member injections: own plus everything hanging below
        # through downstream regulators
        p_eff = np.empty(len(sub.members))
        q_eff = np.empty(len(sub.members))
        for j, bus in enumerate(sub.members):
            p_eff[j] = p_full[bus]
            q_eff[j] = q_full[bus]
            for rg in feeder.regulators:
                if rg.m == bus:
                    l = feeder.line_between(rg.m, rg.n)
                    p_eff[j] += p_full[feeder.subtree[l]].sum()
                    q_eff[j] += q_full[feeder.subtree[l]].sum()
        mem = list(sub.members)
        v[mem] = sens.R @ p_eff + sens.X @ q_eff + v[sub.root]
        loss += p_eff @ sens.R @ p_eff + q_eff @ sens.R @ q_eff
    return v, float(loss)


def approximation_error_sweep(
    feeder: FeederModel,
    p_base: np.ndarray,
    q_base: np.ndarray,
    scales=(1.0, 0.5, 0.25),
    v0: float = 1.0,
    ratios=None,
) -> dict:
    """Model-error study under uniform injection scaling.

    For each scale eps the base injections are multiplied by eps, the exact
    sweep and the linear/quadratic predictions are evaluated, and the
    worst-case voltage error plus the total-loss error are recorded.  The
    order estimates are least-squares slopes of log error against log
    scale: ~2 for voltages (first-order model), ~3 for losses
    (second-order model), with the per-pair ratios also reported.  The
    error scales this cleanly only around the flat profile, so leave the
    ratios at unity; a fixed off-nominal tap adds a first-order cross
    term.
    """
    scales = tuple(float(s) for s in scales)
    if len(scales) < 2:
        raise DimensionError("need at least two scales to estimate an order")
    v_err, l_err = [], []
    for eps in scales:
        sol = solve_powerflow(feeder, eps * np.asarray(p_base, float), eps * np.asarray(q_base, float), v0=v0, ratios=ratios)
        v_lin, loss_quad = linear_model_prediction(
            feeder, eps * np.asarray(p_base, float), eps * np.asarray(q_base, float), v0=v0, ratios=ratios
        )
        v_err.append(float(np.max(np.abs(sol.vmag - v_lin))))
        l_err.append(abs(sol.total_loss - loss_quad))
    v_order, l_order = [], []
    for a, b in zip(range(len(scales) - 1), range(1, len(scales))):
        ra = scales[a] / scales[b]
        v_order.append(float(np.log(v_err[a] / v_err[b]) / np.log(ra)))
        l_order.append(float(np.log(l_err[a] / l_err[b]) / np.log(ra)))
    log_s = np.log(scales)
    return {
        "scales": scales,
        "voltage_error": tuple(v_err),
        "loss_error": tuple(l_err),
        "voltage_order": float(np.polyfit(log_s, np.log(v_err), 1)[0]),
        "loss_order": float(np.polyfit(log_s, np.log(l_err), 1)[0]),
        "voltage_order_pairs": tuple(v_order),
        "loss_order_pairs": tuple(l_order),
    }
