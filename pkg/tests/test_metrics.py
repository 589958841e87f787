import json
import math

import numpy as np
import pytest

from semimarkov import kernel, metrics
from semimarkov.kernel import ValidationError


def brute_h2(q1, q2):
    """Independent per-state loop, no vectorization."""
    out = np.zeros(q1.n_states)
    for x in range(q1.n_states):
        acc = 0.0
        for y in range(q1.n_states):
            for k in range(q1.k_max):
                a = q1.table[x, y, k]
                b = q2.table[x, y, k]
                acc += (math.sqrt(a) - math.sqrt(b)) ** 2
        out[x] = 0.5 * acc
    return out


def test_hellinger_matches_bruteforce():
    qa = kernel.geometric_smk(0.3, 8)
    qb = kernel.geometric_smk(0.5, 8)
    prof = metrics.hellinger_sq(qa, qb)
    assert np.allclose(prof.h2, brute_h2(qa, qb), atol=1e-14)
    assert np.all(prof.h2 >= 0.0)
    assert np.all(prof.h2 <= 1.0)


def test_hellinger_zero_on_self():
    q = kernel.geometric_smk(0.42, 5)
    assert np.allclose(metrics.hellinger_sq(q, q).h2, 0.0, atol=1e-15)


def test_hellinger_affinity_complement():
    rng = np.random.default_rng(61)
    qa = kernel.random_smk(3, 4, rng)
    qb = kernel.random_smk(3, 4, rng)
    h2 = metrics.hellinger_sq(qa, qb).h2
    aff = metrics.hellinger_affinity(qa, qb)
    assert np.allclose(h2, 1.0 - aff, atol=1e-13)


def test_sqrt_h2_triangle_inequality():
    rng = np.random.default_rng(88)
    for _ in range(50):
        s = int(rng.integers(2, 4))
        km = int(rng.integers(1, 5))
        qa = kernel.random_smk(s, km, rng)
        qb = kernel.random_smk(s, km, rng)
        qc = kernel.random_smk(s, km, rng)
        hab = np.sqrt(metrics.hellinger_sq(qa, qb).h2)
        hbc = np.sqrt(metrics.hellinger_sq(qb, qc).h2)
        hac = np.sqrt(metrics.hellinger_sq(qa, qc).h2)
        assert np.all(hac <= hab + hbc + 1e-12)


def test_semi_distance_weighting():
    qa = kernel.geometric_smk(0.2, 6)
    qb = kernel.geometric_smk(0.7, 6)
    mu = np.array([0.25, 0.75])
    d = metrics.semi_distance(qa, qb, mu)
    assert abs(d.d2 - float(mu @ d.per_state_h2)) < 1e-15
    assert abs(d.d - math.sqrt(d.d2)) < 1e-15
    # zero weight on a state removes its contribution
    d0 = metrics.semi_distance(qa, qb, np.array([0.0, 1.0]))
    assert abs(d0.d2 - d.per_state_h2[1]) < 1e-15


def test_continuous_exponential_closed_form():
    # rate-a vs rate-b exponential sojourns, same alternating jumps:
    # affinity per state is 2 sqrt(ab) / (a+b)
    ca = kernel.embed_markov_continuous(np.array([[-2.0, 2.0], [3.0, -3.0]]))
    cb = kernel.embed_markov_continuous(np.array([[-5.0, 5.0], [1.0, -1.0]]))
    prof = metrics.hellinger_sq(ca, cb)
    aff0 = 2.0 * math.sqrt(2.0 * 5.0) / 7.0
    aff1 = 2.0 * math.sqrt(3.0 * 1.0) / 4.0
    assert abs(prof.h2[0] - (1.0 - aff0)) < 1e-9
    assert abs(prof.h2[1] - (1.0 - aff1)) < 1e-9


def test_mixed_kind_rejected():
    q = kernel.geometric_smk(0.3, 4)
    c = kernel.embed_markov_continuous(np.array([[-1.0, 1.0], [2.0, -2.0]]))
    with pytest.raises(ValidationError):
        metrics.hellinger_sq(q, c)


def test_least_favorable_identities_fixed_pair():
    q0 = kernel.geometric_smk(0.2, 6)
    q1 = kernel.geometric_smk(0.6, 6)
    lam = 0.1
    pair = metrics.least_favorable(q0, q1, lam)
    h01 = metrics.hellinger_sq(q0, q1).h2
    h12 = metrics.hellinger_sq(q1, pair.q2).h2
    h02 = metrics.hellinger_sq(q0, pair.q2).h2
    assert np.allclose(h12, 1.0 - np.cos(lam * pair.alpha), atol=1e-11)
    assert np.allclose(h02, 1.0 - np.cos((1.0 - lam) * pair.alpha), atol=1e-11)
    assert np.all(lam * lam * h01 <= h12 + 1e-12)
    assert np.all(h12 <= h01 + 1e-12)
    assert np.all((1.0 - lam) ** 2 * h01 <= h02 + 1e-12)


def test_least_favorable_rows_stochastic():
    q0 = kernel.geometric_smk(0.25, 5)
    q1 = kernel.geometric_smk(0.55, 5)
    pair = metrics.least_favorable(q0, q1, 0.2)
    assert np.max(np.abs(pair.q2.table.sum(axis=(1, 2)) - 1.0)) < 1e-12
    assert not np.any(pair.degenerate)


def test_least_favorable_degenerate_on_equal_kernels():
    q = kernel.geometric_smk(0.3, 4)
    pair = metrics.least_favorable(q, q, 0.1)
    assert np.all(pair.degenerate)
    assert np.allclose(pair.q2.table, q.table, atol=1e-14)


def test_least_favorable_lambda_range():
    q0 = kernel.geometric_smk(0.2, 4)
    q1 = kernel.geometric_smk(0.6, 4)
    for bad in (0.0, 0.25, 0.3, -0.1):
        with pytest.raises(ValidationError):
            metrics.least_favorable(q0, q1, bad)


def test_phi_inverse_bound():
    q0 = kernel.geometric_smk(0.2, 6)
    q1 = kernel.geometric_smk(0.6, 6)
    lam = 0.1
    pair = metrics.least_favorable(q0, q1, lam)
    chk = metrics.phi_inverse_bound_check(pair)
    assert chk.ok
    assert chk.max_ratio < chk.limit
    assert abs(chk.limit - 1.0 / lam) < 1e-15
    assert np.all(chk.per_state <= chk.max_ratio + 1e-15)


def test_phi_inverse_bound_continuous():
    ca = kernel.embed_markov_continuous(np.array([[-2.0, 2.0], [3.0, -3.0]]))
    cb = kernel.embed_markov_continuous(np.array([[-4.0, 4.0], [1.5, -1.5]]))
    pair = metrics.least_favorable(ca, cb, 0.1)
    chk = metrics.phi_inverse_bound_check(pair)
    assert chk.ok
    # sup of sqrt(q0/q2) along the mixture is 1/c0
    assert np.allclose(chk.per_state, 1.0 / pair.c0, atol=1e-12)


def test_g_set_membership():
    q0 = kernel.geometric_smk(0.2, 6)
    q1 = kernel.geometric_smk(0.6, 6)
    lam = 0.1
    inside = metrics.g_set(q1, q0, q1, lam)
    assert np.all(inside.member)
    outside = metrics.g_set(q0, q0, q1, lam)
    assert not np.any(outside.member)
    assert np.all(outside.h_to_q1 > outside.threshold)
    assert np.all(outside.margins < 0.0)


def test_identity_suite_clean():
    rep = metrics.verify_identities(seed=7, draws=150)
    assert rep.violations == ()
    assert rep.max_deviation < 1e-10
    assert rep.draws == 150


def _brute_net(shell_kernels, d_eta, net_radius):
    """Greedy farthest-point reimplementation (independent of the library)."""
    if not shell_kernels:
        return []
    chosen = [0]
    while True:
        dists = d_eta[:, chosen].min(axis=1)
        far = int(np.argmax(dists))
        if dists[far] <= net_radius:
            return chosen
        chosen.append(far)


def test_covering_net_against_bruteforce():
    center = kernel.geometric_smk(0.3, 10)
    fam = metrics.geometric_family(np.linspace(0.05, 0.9, 60), 10)
    radius = 0.25
    net = metrics.covering_net(center, fam, radius, radius / 2.0)
    # shell: annulus (radius, 2 radius] around the center in d_nu*
    assert np.all(net.d_nu_to_center > radius)
    assert np.all(net.d_nu_to_center <= 2.0 * radius + 1e-12)
    # every shell point is net_radius-covered in d_eta*
    assert np.all(net.nearest_net_dist <= net.net_radius + 1e-12)
    assert net.log_cardinality == pytest.approx(math.log(len(net.net_indices)))

    # rebuild the greedy choice independently
    mu = net.eta_star
    m = len(net.shell_kernels)
    d_eta = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            d = metrics.semi_distance(net.shell_kernels[i], net.shell_kernels[j], mu).d
            d_eta[i, j] = d_eta[j, i] = d
    start = int(np.argmax(net.d_nu_to_center))
    chosen = [start]
    while True:
        dists = d_eta[:, chosen].min(axis=1)
        far = int(np.argmax(dists))
        if dists[far] <= net.net_radius:
            break
        chosen.append(far)
    assert list(net.net_indices) == chosen


def test_covering_net_empty_shell():
    center = kernel.geometric_smk(0.3, 10)
    fam = metrics.geometric_family([0.3], 10)  # only the center itself
    net = metrics.covering_net(center, fam, 0.2, 0.1)
    assert len(net.shell_kernels) == 0
    assert len(net.net_indices) == 0


def test_net_csv_layout(tmp_path):
    center = kernel.geometric_smk(0.3, 10)
    fam = metrics.geometric_family(np.linspace(0.05, 0.9, 40), 10)
    net = metrics.covering_net(center, fam, 0.25, 0.125)
    path = tmp_path / "net.csv"
    metrics.write_net_csv(net, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ("point_index,stay,d_nu_star_to_center,"
                        "d_eta_star_to_nearest_net_point")
    assert len(lines) == 1 + len(net.shell_kernels)
    first = path.read_bytes()
    metrics.write_net_csv(net, path)
    assert path.read_bytes() == first


def test_family_spec_roundtrip(tmp_path):
    spec = {"kind": "geometric", "values": [0.1, 0.2, 0.3], "k_max": 8}
    path = tmp_path / "fam.json"
    path.write_text(json.dumps(spec))
    fam = metrics.read_net_spec(path)
    assert fam.kind == "geometric"
    assert len(fam.params) == 3
    q = fam.build(fam.params[1])
    assert q.k_max == 8
    assert abs(q.sojourn_pmf()[0, 0] - 0.8) < 1e-12


def test_family_spec_errors():
    with pytest.raises(ValidationError):
        metrics.family_from_spec({"kind": "zeta", "values": [0.1]})
    with pytest.raises(ValidationError):
        metrics.family_from_spec({"kind": "geometric"})


def test_weibull_family_builds():
    emc = [[0.0, 1.0], [1.0, 0.0]]
    fam = metrics.weibull_family(emc, shapes=[0.5, 1.0], scales=[1.0, 2.0], k_max=16)
    assert fam.kind == "weibull"
    assert len(fam.params) == 4
    q = fam.build(fam.params[0])
    assert q.k_max == 16
    assert abs(q.table.sum(axis=(1, 2))[0] - 1.0) < 1e-12
