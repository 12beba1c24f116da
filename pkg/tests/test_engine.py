"""Batch driver: reuse correctness, dispatch bookkeeping, serialization."""

import numpy as np
import pytest

import phca.engine as engine_mod
from phca import (
    EngineOptions,
    build_problem,
    load_result_json,
    run_batch,
    scale_problem,
    solve_qp,
    validate_batch,
)
from phca.builder import BuilderConfig
from phca.errors import AbortError, DimensionError, SchemaError
from phca.qp import OPTIMAL
from phca.regions import RegionContext


@pytest.fixture(scope="module")
def batch(scaled_demo_problem, small_theta_set):
    return run_batch(scaled_demo_problem, small_theta_set.thetas)


def test_every_instance_solved(batch, small_theta_set):
    n = len(small_theta_set)
    assert batch.counters.n_instances == n
    assert batch.solved_mask().all()
    assert not np.any(np.isnan(batch.x))
    assert len(batch.records) == n
    assert all(batch.records[i].index == i for i in range(n))


def test_reuse_matches_direct_solves(batch, scaled_demo_problem):
    # every row, reused or not, must equal its own independent solve
    prob = scaled_demo_problem
    worst = 0.0
    for i, theta in enumerate(batch.thetas):
        sol = solve_qp(prob.instance(theta), tol=1e-10)
        assert sol.status == OPTIMAL
        worst = max(worst, float(np.max(np.abs(sol.x - batch.x[i]))))
    assert worst < 1e-8


def test_reuse_dominates_direct(batch):
    c = batch.counters
    assert c.qp_solves < 0.1 * c.n_instances
    assert c.reuse > 0.9 * c.n_instances
    assert c.qp_solves == c.seeds + c.degenerate + c.stragglers + c.infeasible + c.failed
    assert c.regions_built == len(batch.regions)
    served = sum(rg.served for rg in batch.regions)
    assert served == c.reuse


def test_region_census_consistent(batch):
    for rg in batch.regions:
        seed_rec = batch.records[rg.seed_index]
        assert seed_rec.status == "direct"
        assert seed_rec.reason == "seed"
        assert seed_rec.signature == rg.signature
        members = [
            r for r in batch.records if r.status == "reuse" and r.region_id == rg.region_id
        ]
        assert len(members) == rg.served
        for rec in members:
            assert rec.signature == rg.signature


def test_served_rows_satisfy_optimality(batch, scaled_demo_problem):
    # rebuild each region from its stored signature and re-certify the rows
    prob = scaled_demo_problem
    ctx = RegionContext(prob)
    opts = batch.options
    for rg in batch.regions:
        region = ctx.build_region(rg.signature)
        rows = [
            r.index
            for r in batch.records
            if r.region_id == rg.region_id and r.status == "reuse"
        ]
        if not rows:
            continue
        th = batch.thetas[rows]
        xs = batch.x[rows]
        resid = xs @ prob.A.T - th @ prob.E.T - prob.b
        assert resid.max() <= opts.screen_primal + 1e-15
        if region.G1.shape[0]:
            lam = th @ region.G1.T + region.w1
            assert lam.min() >= -opts.screen_dual - 1e-15


def test_objectives_in_original_units(batch, demo_problem):
    orig = demo_problem.with_eta(1e-2)
    i = int(np.flatnonzero(batch.solved_mask())[0])
    assert batch.objectives[i] == pytest.approx(
        orig.objective(batch.x[i], batch.thetas[i]), rel=1e-9, abs=1e-12
    )


def test_unscaled_problem_is_scaled_on_entry(demo_problem, small_theta_set):
    res = run_batch(demo_problem.with_eta(1e-2), small_theta_set.thetas[:20])
    assert res.problem.scaling is not None
    assert res.scaling.cost_scale == pytest.approx(5.608139205308629, rel=1e-12)


def test_infeasible_rows_classified(scaled_demo_problem, small_theta_set):
    thetas = small_theta_set.thetas[:10].copy()
    hs = scaled_demo_problem.headroom_slice()
    bad = [2, 7]
    for i in bad:
        thetas[i, hs] = -0.5  # cap rows close: q <= -0.5 and -q <= -0.5
    res = run_batch(scaled_demo_problem, thetas)
    for i in range(10):
        expect = "infeasible" if i in bad else None
        if expect:
            rec = res.record_for(i)
            assert rec.status == "infeasible"
            assert np.all(np.isnan(res.x[i]))
            assert np.isnan(res.objectives[i])
        else:
            assert res.record_for(i).status in ("direct", "reuse", "degenerate-direct")
    assert res.counters.infeasible == 2
    assert not res.solved_mask()[bad].any()


def test_determinism_and_order_invariance(scaled_demo_problem, small_theta_set):
    thetas = small_theta_set.thetas
    a = run_batch(scaled_demo_problem, thetas, EngineOptions(seed=0))
    b = run_batch(scaled_demo_problem, thetas, EngineOptions(seed=0))
    assert a.to_json() == b.to_json()
    # a different pick order changes the census but not the answers
    seq = run_batch(scaled_demo_problem, thetas, EngineOptions(seed=None))
    assert np.max(np.abs(a.x - seq.x)) < 1e-8


def test_budget_falls_back_to_direct(scaled_demo_problem, small_theta_set):
    thetas = small_theta_set.thetas[:40]
    res = run_batch(scaled_demo_problem, thetas, EngineOptions(solve_budget=1))
    assert res.solved_mask().all()
    assert res.counters.regions_built <= 1
    straggler_recs = [r for r in res.records if r.reason == "budget-exhausted"]
    assert len(straggler_recs) == res.counters.stragglers
    if res.counters.regions_built == 1:
        assert res.counters.stragglers == 40 - 1 - res.counters.reuse
    # budgeted runs still agree with the unbudgeted ones
    free = run_batch(scaled_demo_problem, thetas)
    assert np.max(np.abs(res.x - free.x)) < 1e-8


def test_json_roundtrip(batch, scaled_demo_problem):
    text = batch.to_json()
    back = load_result_json(text, scaled_demo_problem, batch.thetas)
    assert back.records == batch.records
    assert np.max(np.abs(back.x - batch.x)) == 0.0
    assert back.regions == batch.regions
    assert np.allclose(back.objectives, batch.objectives, equal_nan=True)


def test_json_roundtrip_rejects_mismatches(batch, scaled_demo_problem, demo_feeder):
    text = batch.to_json()
    with pytest.raises(SchemaError):
        load_result_json(text, scaled_demo_problem, batch.thetas[:-1])
    with pytest.raises(SchemaError):
        load_result_json("not json", scaled_demo_problem, batch.thetas)
    with pytest.raises(SchemaError):
        load_result_json("{}", scaled_demo_problem, batch.thetas)
    # a differently built problem scales differently and must be refused
    other = scale_problem(build_problem(demo_feeder, BuilderConfig(beta=0.8)))[0]
    with pytest.raises(SchemaError):
        load_result_json(text, other, batch.thetas)
    # solutions are required to rehydrate
    with pytest.raises(SchemaError):
        load_result_json(batch.to_json(include_solutions=False),
                         scaled_demo_problem, batch.thetas)
    # and so is the scaled problem
    unscaled = build_problem(demo_feeder, BuilderConfig())
    with pytest.raises(SchemaError):
        load_result_json(text, unscaled, batch.thetas)


def test_validate_batch(batch):
    report = validate_batch(batch, indices=np.arange(30))
    assert report.ok
    assert report.checked == 30
    assert report.max_dx < 1e-8
    assert report.max_rel_objective_gap < 1e-10


def test_validate_batch_catches_corruption(scaled_demo_problem, small_theta_set):
    res = run_batch(scaled_demo_problem, small_theta_set.thetas[:20])
    res.x[5] = res.x[5] + 1e-3
    report = validate_batch(res, indices=np.arange(10))
    assert not report.ok
    assert 5 in report.mismatches
    assert report.max_dx >= 1e-3


def test_abort_after_repeated_failures(scaled_demo_problem, small_theta_set, monkeypatch):
    class Broken:
        status = "numerical-failure"

    monkeypatch.setattr(engine_mod, "solve_qp", lambda inst, tol=None: Broken())
    with pytest.raises(AbortError):
        run_batch(
            scaled_demo_problem,
            small_theta_set.thetas[:10],
            EngineOptions(max_failures=3),
        )


def test_theta_shape_rejected(scaled_demo_problem):
    with pytest.raises(DimensionError):
        run_batch(scaled_demo_problem, np.zeros((5, 3)))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"band_low": 0.0},
        {"band_low": 1e-4, "band_high": 1e-6},
        {"eps_active": 1e-7},
        {"eps_membership": 0.0},
        {"qp_tol": 0.0},
        {"screen_primal": 0.0},
        {"screen_dual": -1.0},
        {"solve_budget": 0},
    ],
)
def test_options_validation(kwargs):
    with pytest.raises(ValueError):
        EngineOptions(**kwargs).validate()
