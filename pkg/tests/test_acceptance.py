"""End-to-end acceptance runs at full scale.

Each test prints one PASS line with its headline numbers; a failed assert
makes the criterion FAIL visibly. Heavy artifacts are shared through
module fixtures so reruns (criterion 9) stay honest full recomputations.
"""

import itertools
import math
import time

import numpy as np
import pytest

from semimarkov import bayes, hypotest, kernel, metrics, simulate

Q0 = kernel.geometric_smk(0.2, 24)
Q1 = kernel.geometric_smk(0.6, 24)
STUDY_NS = [200, 500, 1000, 2000, 5000]
STUDY_SEED = 101
CURVE_NS = [100, 1000, 10_000, 100_000]
CURVE_SEED = 33


def _report(num: int, detail: str) -> None:
    print(f"criterion {num}: PASS ({detail})")


@pytest.fixture(scope="module")
def error_study_run():
    t0 = time.time()
    study = hypotest.error_study(Q0, Q1, STUDY_NS, replications=2000,
                                 probes=20, lam=0.1, xi=0.06, seed=STUDY_SEED)
    return study, time.time() - t0


@pytest.fixture(scope="module")
def curve_run():
    q0 = kernel.geometric_smk(0.35, 6)
    prior = bayes.DirichletSmkPrior.uniform(q0.states, 6)
    t0 = time.time()
    curve = bayes.concentration_curve(q0, prior, CURVE_NS, [10.0],
                                      replications=20, mc_samples=500,
                                      seed=CURVE_SEED)
    return curve, time.time() - t0


def test_criterion_1_mixture_identities():
    t0 = time.time()
    rep = metrics.verify_identities(seed=7, draws=1000, tol=1e-10)
    elapsed = time.time() - t0
    assert rep.violations == ()
    assert rep.draws == 1000
    assert elapsed < 10.0
    _report(1, f"1000 draws, max deviation {rep.max_deviation:.2e}, {elapsed:.2f}s")


def test_criterion_2_stationary_pair_fixed_point():
    rng = np.random.default_rng(404)
    t0 = time.time()
    worst = 0.0
    for i in range(1000):
        s = 2 + i % 3
        km = 1 + i % 6
        q = kernel.random_smk(s, km, rng)
        sp = kernel.stationary_pair(q)
        worst = max(worst, sp.contraction_residual,
                    abs(sp.table.sum() - 1.0), sp.residual)
        assert sp.contraction_residual <= 1e-10
        assert abs(sp.table.sum() - 1.0) <= 1e-10
    elapsed = time.time() - t0
    assert elapsed < 10.0
    _report(2, f"1000 kernels, worst residual {worst:.2e}, {elapsed:.2f}s")


def test_criterion_3_type1_exponential_bound(error_study_run):
    study, elapsed = error_study_run
    ok = 0
    for row in study.rows:
        assert row.skip_reason == ""
        if row.type1_rate <= row.type1_bound + row.type1_half_width:
            ok += 1
    assert ok >= 4
    assert elapsed < 300.0
    _report(3, f"type-I within bound in {ok}/5 cells, "
               f"2000 reps, {elapsed:.1f}s")


def test_criterion_4_type2_exponential_bound(error_study_run):
    study, elapsed = error_study_run
    ok = 0
    for row in study.rows:
        if row.type2_sup_rate <= row.type2_bound + row.type2_half_width:
            ok += 1
    assert ok >= 4
    assert elapsed < 600.0
    _report(4, f"sup acceptance over 20 probes within bound in {ok}/5 cells, "
               f"{elapsed:.1f}s")


def test_criterion_5_markov_vs_semimarkov_power():
    emc = np.array([[0.0, 1.0], [1.0, 0.0]])
    q1 = kernel.discrete_weibull_smk(emc, 0.5, 2.0, 48)
    mean = kernel.mean_sojourn(q1).rho_weighted
    stay = 1.0 - 1.0 / mean
    p = np.array([[stay, 1.0 - stay], [1.0 - stay, stay]])
    q0 = kernel.embed_markov_discrete(p, 48)
    plan = hypotest.plan_ball(q0, q1, lam=0.1, seed=29)
    n, reps = 5000, 500
    t0 = time.time()

    def batch_reject(source, cell):
        j0, x0, cells = simulate.batch_trajectories(source, n, reps, 29,
                                                    cell_index=cell)
        states = simulate.cells_to_states(j0, cells, 48)
        sojourns = cells % 48 + 1
        rejected = 0
        for r in range(reps):
            times = np.concatenate([[x0[r]], x0[r] + np.cumsum(sojourns[r])])
            traj = simulate.Trajectory(states[r], times, q1.states)
            out = hypotest.psi(traj, plan, rand_cell=cell, rand_rep=r)
            rejected += out.reject
        return rejected

    rejects_alt = batch_reject(q1, 0)
    rejects_null = batch_reject(q0, 1)
    elapsed = time.time() - t0
    power = rejects_alt / reps
    type1 = rejects_null / reps
    bound = plan.type1_bound(n) + hypotest.wilson_halfwidth(type1, reps)
    assert power >= 0.95
    assert type1 <= bound
    assert elapsed < 300.0
    # the public one-shot interface agrees with the batched loop
    traj = simulate.sample_trajectory(q1, n, 29)
    out, plan2 = hypotest.markov_vs_semimarkov(traj, p, q1, seed=29)
    assert out.reject
    assert plan2.epsilon == pytest.approx(plan.epsilon)
    _report(5, f"power {power:.3f} at n=5000, null rate {type1:.4f} "
               f"<= {bound:.4f}, {elapsed:.1f}s")


def _enum_kl_v0(q0, q, n):
    rho0 = kernel.stationary_emc(q0.emc())
    rhoq = kernel.stationary_emc(q.emc())
    t0 = np.einsum("x,xyk->yk", rho0, q0.table)
    tq = np.einsum("x,xyk->yk", rhoq, q.table)
    s, km = q0.n_states, q0.k_max
    m1 = m2 = 0.0
    for y0, k0 in itertools.product(range(s), range(km)):
        base_p = t0[y0, k0]
        base_r = math.log(t0[y0, k0]) - math.log(tq[y0, k0])
        for steps in itertools.product(itertools.product(range(s), range(km)),
                                       repeat=n):
            p, r, x = base_p, base_r, y0
            for y, k in steps:
                p *= q0.table[x, y, k]
                r += math.log(q0.table[x, y, k]) - math.log(q.table[x, y, k])
                x = y
            m1 += p * r
            m2 += p * r * r
    return m1, m2 - m1 * m1


def test_criterion_6_kl_monte_carlo_vs_enumeration():
    rng = np.random.default_rng(606)
    t0 = time.time()
    worst_z = 0.0
    for case in range(10):
        q0 = kernel.random_smk(2, 2, rng)
        q = kernel.random_smk(2, 2, rng)
        kl_ref, v0_ref = _enum_kl_v0(q0, q, 3)
        mc = simulate.kl_functionals(q0, q, 3, method="mc", mc_reps=4000,
                                     seed=1000 + case)
        z_kl = abs(mc.kl - kl_ref) / mc.kl_se
        z_v0 = abs(mc.v0 - v0_ref) / mc.v0_se
        worst_z = max(worst_z, z_kl, z_v0)
        assert z_kl <= 3.0
        assert z_v0 <= 3.0
    elapsed = time.time() - t0
    assert elapsed < 60.0
    _report(6, f"10 cases, worst |z| {worst_z:.2f} <= 3, {elapsed:.1f}s")


def test_criterion_7_posterior_concentration_trend(curve_run):
    curve, elapsed = curve_run
    rows = curve.for_m(10.0)
    assert [r.n for r in rows] == CURVE_NS
    assert curve.nonincreasing(10.0)
    final = curve.final_mass(10.0)
    assert final < 0.05
    assert elapsed < 600.0
    masses = ", ".join(f"{r.posterior_mass_outside:.4f}" for r in rows)
    _report(7, f"outside-mass [{masses}] nonincreasing, final {final:.4f} "
               f"< 0.05, {elapsed:.1f}s")


def test_criterion_8_conjugacy_exact():
    rng = np.random.default_rng(808)
    t0 = time.time()
    for _ in range(100):
        s = int(rng.integers(2, 4))
        km = int(rng.integers(1, 5))
        q = kernel.random_smk(s, km, rng)
        prior = bayes.DirichletSmkPrior.constant(
            q.states, km, float(rng.uniform(0.5, 3.0)))
        traj = simulate.sample_trajectory(q, int(rng.integers(10, 400)),
                                          int(rng.integers(1 << 30)))
        post = bayes.posterior_update(prior, traj)
        counts = simulate.transition_cell_counts(traj, km)
        assert np.array_equal(post.counts, counts)
        assert np.array_equal(post.concentration,
                              prior.concentration + counts)
        assert post.counts.sum() == traj.n
    elapsed = time.time() - t0
    assert elapsed < 5.0
    _report(8, f"100 trajectories, exact integer tallies, {elapsed:.2f}s")


def test_criterion_9_deterministic_csvs(error_study_run, curve_run, tmp_path):
    study, _ = error_study_run
    curve, _ = curve_run
    a1 = tmp_path / "study_a.csv"
    a2 = tmp_path / "study_b.csv"
    hypotest.write_error_study_csv(study, a1)
    again = hypotest.error_study(Q0, Q1, STUDY_NS, replications=2000,
                                 probes=20, lam=0.1, xi=0.06, seed=STUDY_SEED)
    hypotest.write_error_study_csv(again, a2)
    assert a1.read_bytes() == a2.read_bytes()

    q0 = kernel.geometric_smk(0.35, 6)
    prior = bayes.DirichletSmkPrior.uniform(q0.states, 6)
    b1 = tmp_path / "curve_a.csv"
    b2 = tmp_path / "curve_b.csv"
    bayes.write_curve_csv(curve, b1)
    curve2 = bayes.concentration_curve(q0, prior, CURVE_NS, [10.0],
                                       replications=20, mc_samples=500,
                                       seed=CURVE_SEED)
    bayes.write_curve_csv(curve2, b2)
    assert b1.read_bytes() == b2.read_bytes()
    _report(9, "error-study and concentration CSVs byte-identical on rerun")
