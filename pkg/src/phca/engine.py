"""Batch driver: solve many parameter instances by region reuse.

The loop picks an unsolved parameter vector, solves its QP directly,
identifies the active set, and turns it into a critical region; every
other unsolved parameter inside the region polyhedron then gets its
optimizer from the region's affine map at no further QP cost.  Regions
are discarded as soon as they have been swept, so at most one is alive
at a time.

A direct solve whose constraint residuals fall inside an uncertainty
band (too small to trust as inactive, too large to trust as active), a
rank-deficient active set, or a region that fails its own seed's
membership check all degrade gracefully: the instance keeps its direct
solution and no region is built from it.  An optional budget caps the
number of region-building attempts; leftovers are then solved directly.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .builder import MpqpProblem, ScalingRecord, scale_problem
from .errors import AbortError, DimensionError, RankDeficientKError
from .qp import INFEASIBLE as QP_INFEASIBLE
from .qp import OPTIMAL as QP_OPTIMAL
from .qp import identify_active, solve_qp
from .regions import CriticalRegion, RegionContext

REUSE = "reuse"
DIRECT = "direct"
DEGENERATE = "degenerate-direct"
INFEASIBLE = "infeasible"
FAILED = "failed"

REASON_SEED = "seed"
REASON_BUDGET = "budget-exhausted"
REASON_BAND = "uncertain-active-set"
REASON_RANK = "rank-deficient"
REASON_SANITY = "region-sanity"
REASON_MISMATCH = "solution-mismatch"


@dataclass(frozen=True)
class EngineOptions:
    """Tolerances and policy knobs for one batch run.

    seed orders the parameter picks (None keeps input order), eps_active
    classifies constraint rows at the seed solution, eps_membership is
    the region polyhedron tolerance, and the band (band_low, band_high)
    is the residual range treated as too ambiguous to build a region
    from.  screen_primal and screen_dual certify each reused solution
    (worst inequality residual, most negative multiplier) so membership
    noise near region facets never serves a wrong answer.  solve_budget
    caps region-building attempts; the remainder of the batch is then
    solved instance by instance.
    """

    seed: int | None = 0
    eps_active: float = 1e-5
    eps_membership: float = 1e-4
    band_low: float = 1e-6
    band_high: float = 1e-4
    solve_budget: int | None = None
    qp_tol: float = 1e-10
    solution_check_tol: float = 1e-7
    screen_primal: float = 1e-8
    screen_dual: float = 1e-8
    max_failures: int = 50

    def validate(self) -> None:
        if not 0 < self.band_low < self.band_high:
            raise ValueError("need 0 < band_low < band_high")
        if not self.band_low < self.eps_active < self.band_high:
            raise ValueError("eps_active must lie inside the uncertainty band")
        if self.eps_membership <= 0 or self.qp_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.screen_primal <= 0 or self.screen_dual <= 0:
            raise ValueError("screen tolerances must be positive")
        if self.solve_budget is not None and self.solve_budget < 1:
            raise ValueError("solve_budget must be at least 1")


@dataclass(frozen=True)
class InstanceRecord:
    """How one parameter vector was dispatched."""

    index: int
    status: str
    reason: str | None
    region_id: int | None
    signature: tuple[int, ...] | None


@dataclass(frozen=True)
class RegionRecord:
    """Census row for one region that was built and swept."""

    region_id: int
    signature: tuple[int, ...]
    seed_index: int
    served: int


@dataclass
class BatchCounters:
    n_instances: int = 0
    qp_solves: int = 0
    regions_built: int = 0
    reuse: int = 0
    seeds: int = 0
    screened_out: int = 0
    degenerate: int = 0
    stragglers: int = 0
    infeasible: int = 0
    failed: int = 0


@dataclass
class BatchResult:
    """Everything a batch run produced.

    problem is the scaled problem the engine actually ran; x rows and the
    objectives are in original units (scaling leaves the minimizer alone
    and multiplies the cost by a known constant).  wall_time_s is for
    humans and is deliberately left out of the serialized form.
    """

    problem: MpqpProblem
    scaling: ScalingRecord
    options: EngineOptions
    thetas: np.ndarray
    x: np.ndarray
    objectives: np.ndarray
    records: tuple[InstanceRecord, ...]
    regions: tuple[RegionRecord, ...]
    counters: BatchCounters
    wall_time_s: float = field(default=0.0, compare=False)

    def record_for(self, index: int) -> InstanceRecord:
        return self.records[index]

    def solved_mask(self) -> np.ndarray:
        return np.array(
            [rec.status in (REUSE, DIRECT, DEGENERATE) for rec in self.records], dtype=bool
        )

    def summary(self) -> dict:
        return {
            "counters": asdict(self.counters),
            "options": {
                "seed": self.options.seed,
                "eps_active": self.options.eps_active,
                "eps_membership": self.options.eps_membership,
                "band_low": self.options.band_low,
                "band_high": self.options.band_high,
                "solve_budget": self.options.solve_budget,
                "qp_tol": self.options.qp_tol,
                "screen_primal": self.options.screen_primal,
                "screen_dual": self.options.screen_dual,
            },
            "scaling": asdict(self.scaling),
            "regions": [
                {
                    "region_id": rg.region_id,
                    "signature": list(rg.signature),
                    "seed_index": rg.seed_index,
                    "served": rg.served,
                }
                for rg in self.regions
            ],
        }

    def to_json(self, include_solutions: bool = True) -> str:
        """Deterministic serialization; excludes wall-clock time."""
        payload = self.summary()
        records = []
        for rec in self.records:
            row = {
                "index": rec.index,
                "status": rec.status,
                "reason": rec.reason,
                "region_id": rec.region_id,
                "signature": None if rec.signature is None else list(rec.signature),
                "objective": None
                if not np.isfinite(self.objectives[rec.index])
                else float(self.objectives[rec.index]),
            }
            if include_solutions:
                row["x"] = [float(v) for v in self.x[rec.index]]
            records.append(row)
        payload["records"] = records
        return json.dumps(payload, sort_keys=True, indent=1)


def _direct_record(index, status, reason, signature):
    return InstanceRecord(
        index=int(index),
        status=status,
        reason=reason,
        region_id=None,
        signature=signature,
    )


def run_batch(
    prob: MpqpProblem,
    thetas: np.ndarray,
    options: EngineOptions | None = None,
) -> BatchResult:
    """Dispatch a whole parameter batch.

    Accepts the problem scaled or unscaled; an unscaled problem is scaled
    here and the record kept for reporting.  Raises AbortError only when
    direct solves keep failing numerically, which points at a broken
    problem rather than hard instances.
    """
    options = options or EngineOptions()
    options.validate()
    thetas = np.asarray(thetas, dtype=float)
    if thetas.ndim != 2 or thetas.shape[1] != prob.n_theta:
        raise DimensionError(
            f"thetas must have shape (n, {prob.n_theta}), got {thetas.shape}"
        )
    if prob.scaling is None:
        scaled, scaling = scale_problem(prob)
    else:
        scaled, scaling = prob, prob.scaling

    n = thetas.shape[0]
    t0 = time.perf_counter()
    ctx = RegionContext(scaled)
    counters = BatchCounters(n_instances=n)

    if options.seed is None:
        order = np.arange(n)
    else:
        order = np.random.default_rng(options.seed).permutation(n)

    solved = np.zeros(n, dtype=bool)
    x = np.full((n, scaled.H.shape[0]), np.nan)
    records: list[InstanceRecord | None] = [None] * n
    census: list[RegionRecord] = []
    pos = 0
    budget_left = options.solve_budget

    def direct_solve(i):
        counters.qp_solves += 1
        return solve_qp(scaled.instance(thetas[i]), tol=options.qp_tol)

    def classify_failure(i, sol):
        if sol.status == QP_INFEASIBLE:
            counters.infeasible += 1
            records[i] = _direct_record(i, INFEASIBLE, None, None)
        else:
            counters.failed += 1
            records[i] = _direct_record(i, FAILED, None, None)
            if counters.failed > options.max_failures:
                raise AbortError(
                    f"{counters.failed} direct solves failed numerically; "
                    "aborting the batch"
                )
        solved[i] = True

    while pos < n:
        if solved[order[pos]]:
            pos += 1
            continue
        i = int(order[pos])

        if budget_left is not None and budget_left == 0:
            # budget spent: solve everything left one by one
            for j in order[pos:]:
                j = int(j)
                if solved[j]:
                    continue
                sol = direct_solve(j)
                if sol.status != QP_OPTIMAL:
                    classify_failure(j, sol)
                    continue
                x[j] = sol.x
                sig = tuple(int(v) for v in identify_active(
                    scaled.instance(thetas[j]), sol, options.eps_active
                ))
                records[j] = _direct_record(j, DIRECT, REASON_BUDGET, sig)
                counters.stragglers += 1
                solved[j] = True
            break

        sol = direct_solve(i)
        if budget_left is not None:
            budget_left -= 1
        if sol.status != QP_OPTIMAL:
            classify_failure(i, sol)
            continue

        inst = scaled.instance(thetas[i])
        resid = np.abs(inst.b - inst.A @ sol.x)
        active = identify_active(inst, sol, options.eps_active)
        signature = tuple(int(v) for v in active)

        in_band = np.any((resid > options.band_low) & (resid < options.band_high))
        if in_band:
            x[i] = sol.x
            records[i] = _direct_record(i, DEGENERATE, REASON_BAND, signature)
            counters.degenerate += 1
            solved[i] = True
            continue

        try:
            region = ctx.build_region(active)
        except RankDeficientKError:
            x[i] = sol.x
            records[i] = _direct_record(i, DEGENERATE, REASON_RANK, signature)
            counters.degenerate += 1
            solved[i] = True
            continue

        if not region.contains(thetas[i], options.eps_membership):
            x[i] = sol.x
            records[i] = _direct_record(i, DEGENERATE, REASON_SANITY, signature)
            counters.degenerate += 1
            solved[i] = True
            continue

        x_region = region.solution_at(thetas[i])
        if np.max(np.abs(x_region - sol.x)) > options.solution_check_tol:
            x[i] = sol.x
            records[i] = _direct_record(i, DEGENERATE, REASON_MISMATCH, signature)
            counters.degenerate += 1
            solved[i] = True
            continue

        # Region accepted; sweep every unsolved parameter it covers.
        # Membership alone is not enough to serve a point: the polyhedron
        # test is deliberately loose, and a parameter a hair outside the
        # true region would inherit a wrong-active-set solution.  Each
        # candidate is therefore certified against the full optimality
        # system first.  Stationarity and complementarity hold by
        # construction of the affine maps, so primal feasibility plus
        # nonnegative multipliers make the served point exactly optimal;
        # anything that fails falls through to its own solve later.
        region_id = len(census)
        rem = np.flatnonzero(~solved)
        hits = rem[region.batch_membership(thetas[rem], options.eps_membership)]
        cand_x = region.batch_solutions(thetas[hits])
        resid = cand_x @ scaled.A.T - thetas[hits] @ scaled.E.T - scaled.b
        certified = resid.max(axis=1) <= options.screen_primal
        if region.G1.shape[0]:
            lam = thetas[hits] @ region.G1.T + region.w1
            certified &= lam.min(axis=1) >= -options.screen_dual
        keep = hits[certified]
        counters.screened_out += int(len(hits) - len(keep))
        x[keep] = cand_x[certified]
        x[i] = sol.x
        for j in keep:
            j = int(j)
            if j == i:
                continue
            records[j] = InstanceRecord(
                index=j, status=REUSE, reason=None, region_id=region_id,
                signature=region.signature,
            )
        records[i] = InstanceRecord(
            index=i, status=DIRECT, reason=REASON_SEED, region_id=region_id,
            signature=region.signature,
        )
        solved[keep] = True
        solved[i] = True
        served = int(len(keep) - np.count_nonzero(keep == i))
        counters.seeds += 1
        counters.reuse += served
        counters.regions_built += 1
        census.append(
            RegionRecord(
                region_id=region_id,
                signature=region.signature,
                seed_index=i,
                served=served,
            )
        )

    # objectives in original units
    ok = ~np.isnan(x[:, 0])
    objectives = np.full(n, np.nan)
    if np.any(ok):
        Xok = x[ok]
        Tok = thetas[ok]
        lin = Tok @ scaled.C.T + scaled.d
        obj_scaled = 0.5 * np.einsum("ij,jk,ik->i", Xok, scaled.H, Xok) + np.einsum(
            "ij,ij->i", lin, Xok
        )
        objectives[ok] = obj_scaled * scaling.cost_scale

    return BatchResult(
        problem=scaled,
        scaling=scaling,
        options=options,
        thetas=thetas,
        x=x,
        objectives=objectives,
        records=tuple(records),
        regions=tuple(census),
        counters=counters,
        wall_time_s=time.perf_counter() - t0,
    )


def load_result_json(text: str, prob: MpqpProblem, thetas: np.ndarray) -> BatchResult:
    """Rebuild a BatchResult from serialized records.

    The problem and parameter set are reconstructed by the caller from the
    original input files; this checks they line up with the stored run
    (instance count, variable count, scaling) before rehydrating.
    """
    from .errors import SchemaError

    if prob.scaling is None:
        raise SchemaError("expected the scaled problem when loading results")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"results file is not valid JSON: {exc}") from None
    records_raw = payload.get("records")
    if not isinstance(records_raw, list):
        raise SchemaError("results file has no record list")
    thetas = np.asarray(thetas, dtype=float)
    n = thetas.shape[0]
    if len(records_raw) != n:
        raise SchemaError(
            f"results hold {len(records_raw)} records but the inputs expand "
            f"to {n} instances"
        )
    stored = payload.get("scaling", {})
    if abs(stored.get("cost_scale", np.nan) - prob.scaling.cost_scale) > 1e-9 * max(
        1.0, prob.scaling.cost_scale
    ):
        raise SchemaError("results were produced from a different problem (scaling differs)")

    n_var = prob.H.shape[0]
    x = np.full((n, n_var), np.nan)
    objectives = np.full(n, np.nan)
    records = []
    for row in sorted(records_raw, key=lambda r: r["index"]):
        i = int(row["index"])
        if not 0 <= i < n:
            raise SchemaError(f"record index {i} out of range")
        if "x" not in row:
            raise SchemaError("results were saved without solutions; rerun with them")
        vec = np.asarray(row["x"], dtype=float)
        if vec.shape != (n_var,):
            raise SchemaError(f"record {i} has {vec.size} solution entries, need {n_var}")
        x[i] = vec
        if row.get("objective") is not None:
            objectives[i] = float(row["objective"])
        sig = row.get("signature")
        records.append(
            InstanceRecord(
                index=i,
                status=str(row["status"]),
                reason=row.get("reason"),
                region_id=row.get("region_id"),
                signature=None if sig is None else tuple(int(v) for v in sig),
            )
        )
    regions = tuple(
        RegionRecord(
            region_id=int(rg["region_id"]),
            signature=tuple(int(v) for v in rg["signature"]),
            seed_index=int(rg["seed_index"]),
            served=int(rg["served"]),
        )
        for rg in payload.get("regions", [])
    )
    counters = BatchCounters(**payload.get("counters", {"n_instances": n}))
    opts_raw = payload.get("options", {})
    options = EngineOptions(
        seed=opts_raw.get("seed", 0),
        eps_active=opts_raw.get("eps_active", 1e-5),
        eps_membership=opts_raw.get("eps_membership", 1e-4),
        band_low=opts_raw.get("band_low", 1e-6),
        band_high=opts_raw.get("band_high", 1e-4),
        solve_budget=opts_raw.get("solve_budget"),
        qp_tol=opts_raw.get("qp_tol", 1e-10),
        screen_primal=opts_raw.get("screen_primal", 1e-8),
        screen_dual=opts_raw.get("screen_dual", 1e-8),
    )
    return BatchResult(
        problem=prob,
        scaling=prob.scaling,
        options=options,
        thetas=thetas,
        x=x,
        objectives=objectives,
        records=tuple(records),
        regions=regions,
        counters=counters,
        wall_time_s=0.0,
    )


@dataclass(frozen=True)
class ValidationReport:
    checked: int
    max_dx: float
    max_rel_objective_gap: float
    mismatches: tuple[int, ...]

    @property
    def ok(self) -> bool:
        return not self.mismatches


def validate_batch(
    result: BatchResult,
    indices: np.ndarray | None = None,
    dx_tol: float = 1e-6,
    obj_tol: float = 1e-8,
) -> ValidationReport:
    """Re-solve instances independently and compare against the batch.

    Checks the solution in the sup norm and the objective relative to its
    magnitude.  indices defaults to every instance that produced a
    solution.
    """
    if indices is None:
        indices = np.flatnonzero(result.solved_mask())
    prob = result.problem
    h = result.scaling.cost_scale
    max_dx = 0.0
    max_gap = 0.0
    bad = []
    for i in indices:
        i = int(i)
        sol = solve_qp(prob.instance(result.thetas[i]), tol=result.options.qp_tol)
        if sol.status != QP_OPTIMAL:
            bad.append(i)
            continue
        dx = float(np.max(np.abs(sol.x - result.x[i])))
        obj_ref = sol.objective * h
        gap = abs(result.objectives[i] - obj_ref) / max(1.0, abs(obj_ref))
        max_dx = max(max_dx, dx)
        max_gap = max(max_gap, gap)
        if dx > dx_tol or gap > obj_tol:
            bad.append(i)
    return ValidationReport(
        checked=len(indices),
        max_dx=max_dx,
        max_rel_objective_gap=max_gap,
        mismatches=tuple(bad),
    )
