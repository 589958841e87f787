import numpy as np
import pytest

from semimarkov import kernel
from semimarkov.kernel import NumericError, ValidationError


def test_stationary_emc_two_state_exact():
    p = np.array([[0.3, 0.7], [0.4, 0.6]])
    rho = kernel.stationary_emc(p)
    # solve rho P = rho by hand: rho0 * 0.7 = rho1 * 0.4
    assert abs(rho[0] - 4.0 / 11.0) < 1e-12
    assert abs(rho[1] - 7.0 / 11.0) < 1e-12
    assert abs(rho.sum() - 1.0) < 1e-12


def test_stationary_emc_random_fixed_points():
    rng = np.random.default_rng(5150)
    for _ in range(50):
        s = int(rng.integers(2, 7))
        p = rng.dirichlet(np.ones(s), size=s)
        rho = kernel.stationary_emc(p)
        assert np.max(np.abs(rho @ p - rho)) < 1e-11
        assert np.all(rho > 0.0)


def test_minorization_one_step_oracle():
    p = np.array([[0.3, 0.7], [0.4, 0.6]])
    m = kernel.minorization(p, 1, 1)
    # k=1: nu*(y) = min_x P(x,y); l=1: eta*(y) = max_x P(x,y)
    assert np.allclose(m.nu_star, [0.3, 0.6], atol=1e-14)
    assert np.allclose(m.eta_star, [0.4, 0.7], atol=1e-14)
    assert not m.vacuous


def test_minorization_cesaro_average():
    p = np.array([[0.0, 1.0], [0.5, 0.5]])
    m = kernel.minorization(p, 2, 1)
    avg = (p + p @ p) / 2.0
    assert np.allclose(m.nu_star, avg.min(axis=0), atol=1e-14)
    assert np.allclose(m.eta_star, p.max(axis=0), atol=1e-14)


def test_minorization_vacuous_for_periodic_one_step():
    p = np.array([[0.0, 1.0], [1.0, 0.0]])
    m = kernel.minorization(p, 1, 1)
    assert m.vacuous
    assert kernel.smallest_k_with_mass(p) == 2
    m2 = kernel.minorization(p, 2, 1)
    assert not m2.vacuous
    assert np.allclose(m2.nu_star, [0.5, 0.5], atol=1e-14)


def test_smallest_k_positive_chain():
    p = np.array([[0.3, 0.7], [0.4, 0.6]])
    assert kernel.smallest_k_with_mass(p) == 1


def test_geometric_pmf_tail_fold():
    q = kernel.geometric_smk(0.3, 4)
    pmf = q.sojourn_pmf()[0]
    expect = [0.7, 0.7 * 0.3, 0.7 * 0.09, 0.3 ** 3]
    assert np.allclose(pmf, expect, atol=1e-15)
    assert abs(pmf.sum() - 1.0) < 1e-12


def test_mean_sojourn_matches_direct_sum():
    q = kernel.geometric_smk(0.2, 24)
    ms = kernel.mean_sojourn(q)
    pmf = q.sojourn_pmf()
    ks = np.arange(1, 25)
    direct = pmf @ ks
    assert np.allclose(ms.per_state, direct, atol=1e-12)
    rho = kernel.stationary_emc(q.emc())
    assert abs(ms.rho_weighted - rho @ direct) < 1e-12


def test_discrete_weibull_pmf_sums_to_one():
    pmf = kernel.discrete_weibull_pmf(0.5, 2.0, 48)
    assert pmf.shape == (48,)
    assert abs(pmf.sum() - 1.0) < 1e-12
    assert np.all(pmf >= 0.0)
    # survival-difference construction: cell k carries S(k-1) - S(k)
    surv = np.exp(-((np.arange(49) / 2.0) ** 0.5))
    direct = surv[:-1] - surv[1:]
    direct[-1] = surv[47]  # fold the tail
    assert np.allclose(pmf, direct, atol=1e-12)


def test_stationary_pair_contraction():
    rng = np.random.default_rng(909)
    for _ in range(20):
        q = kernel.random_smk(3, 5, rng)
        sp = kernel.stationary_pair(q)
        assert abs(sp.table.sum() - 1.0) < 1e-12
        assert sp.contraction_residual < 1e-12
        # marginal over sojourns is the EMC fixed point
        assert np.allclose(sp.table.sum(axis=1), sp.rho, atol=1e-12)


def test_product_smk_factorizes():
    emc = np.array([[0.2, 0.8], [0.6, 0.4]])
    pmf = np.array([[0.5, 0.5], [0.9, 0.1]])
    q = kernel.product_smk(emc, pmf)
    assert np.allclose(q.table, emc[:, :, None] * pmf[:, None, :], atol=1e-15)
    assert np.allclose(q.emc(), emc, atol=1e-14)


def test_n_step_transition_is_matrix_power():
    rng = np.random.default_rng(33)
    p = rng.dirichlet(np.ones(3), size=3)
    assert np.allclose(kernel.n_step_transition(p, 4),
                       np.linalg.matrix_power(p, 4), atol=1e-13)


def test_embed_markov_discrete_geometric_rows():
    p = np.array([[0.6, 0.4], [0.3, 0.7]])
    k_max = 12
    q = kernel.embed_markov_discrete(p, k_max)
    for x in range(2):
        y = 1 - x
        stay = p[x, x]
        for k in range(1, k_max):
            assert abs(q.table[x, y, k - 1] - p[x, y] * stay ** (k - 1)) < 1e-14
        # diagonal cells vanish: a jump is a state change
        assert np.all(q.table[x, x, :] == 0.0)
        assert abs(q.table[x].sum() - 1.0) < 1e-12
    # folded tail keeps the row stochastic
    assert q.table[0, 1, k_max - 1] > p[0, 1] * p[0, 0] ** (k_max - 1)


def test_assumption_report_flags():
    good = kernel.geometric_smk(0.3, 6)
    rep = kernel.validate_assumptions(good)
    assert rep.a1_irreducible and rep.a1_aperiodic and rep.period == 1
    assert rep.a2_finite_mean and rep.a3_nondegenerate

    alternating = kernel.product_smk(np.array([[0.0, 1.0], [1.0, 0.0]]),
                                     np.array([[0.5, 0.5], [0.5, 0.5]]))
    rep2 = kernel.validate_assumptions(alternating)
    assert rep2.a1_irreducible
    assert not rep2.a1_aperiodic
    assert rep2.period == 2
    assert any("period" in w for w in rep2.witnesses)

    absorbing = kernel.product_smk(np.array([[1.0, 0.0], [0.5, 0.5]]),
                                   np.array([[1.0, 0.0], [1.0, 0.0]]))
    rep3 = kernel.validate_assumptions(absorbing)
    assert not rep3.a1_irreducible
    assert rep3.witnesses


def test_reducible_stationary_raises():
    p = np.array([[1.0, 0.0], [0.5, 0.5]])
    with pytest.raises((ValidationError, NumericError)):
        kernel.stationary_emc(p)


def test_kernel_file_roundtrip(tmp_path):
    rng = np.random.default_rng(17)
    q = kernel.random_smk(3, 4, rng)
    path = tmp_path / "k.json"
    kernel.write_kernel(q, path)
    doc = kernel.read_kernel(path)
    assert np.array_equal(doc.kernel.table, q.table)
    assert doc.kernel.digest() == q.digest()
    assert doc.adjustments == ()
    first = path.read_bytes()
    kernel.write_kernel(doc.kernel, path)
    assert path.read_bytes() == first


def _bump_row(path, state_label, delta):
    lines = path.read_text().splitlines()
    for i, line in enumerate(lines):
        if line.startswith(f"q {state_label} ="):
            head, vals = line.split("=", 1)
            nums = [float(v) for v in vals.split()]
            nums[0] += delta
            lines[i] = head + "= " + " ".join(f"{v:.17g}" for v in nums)
            break
    path.write_text("\n".join(lines) + "\n")


def test_loader_renormalizes_small_row_error(tmp_path):
    q = kernel.geometric_smk(0.4, 3)
    path = tmp_path / "k.txt"
    kernel.write_kernel(q, path)
    _bump_row(path, "s0", 1e-10)
    loaded = kernel.read_kernel(path)
    assert len(loaded.adjustments) == 1
    assert loaded.adjustments[0].state == "s0"
    assert abs(loaded.adjustments[0].deviation - 1e-10) < 1e-12
    assert abs(loaded.kernel.table[0].sum() - 1.0) < 1e-14


def test_loader_rejects_large_row_error(tmp_path):
    q = kernel.geometric_smk(0.4, 3)
    path = tmp_path / "k.txt"
    kernel.write_kernel(q, path)
    _bump_row(path, "s1", 1e-6)
    with pytest.raises(ValidationError):
        kernel.read_kernel(path)


def test_table_validation_errors():
    states = kernel.default_states(2)
    bad = np.full((2, 2, 3), 1.0 / 6.0)
    bad[0, 0, 0] = -0.1
    bad[0, 0, 1] = 1.0 / 6.0 + 0.1
    with pytest.raises(ValidationError):
        kernel.DiscreteSmk(states, bad)
    with pytest.raises(ValidationError):
        kernel.DiscreteSmk(states, np.ones((2, 3, 2)) / 6.0)


def test_random_smk_rows_stochastic():
    rng = np.random.default_rng(2)
    for _ in range(25):
        q = kernel.random_smk(int(rng.integers(2, 5)), int(rng.integers(1, 7)), rng)
        assert np.max(np.abs(q.table.sum(axis=(1, 2)) - 1.0)) < 1e-12


def test_continuous_embed_exponential_density():
    gen = np.array([[-2.0, 2.0], [0.5, -0.5]])
    c = kernel.embed_markov_continuous(gen)
    assert np.allclose(c.emc(), [[0.0, 1.0], [1.0, 0.0]], atol=1e-14)
    # q_x(y, t) = P(x,y) * rate * exp(-rate t)
    assert abs(c.density(0, 1, 0.3) - 2.0 * np.exp(-0.6)) < 1e-12
    assert abs(c.density(1, 0, 2.0) - 0.5 * np.exp(-1.0)) < 1e-12
    assert c.density(0, 0, 1.0) == 0.0
