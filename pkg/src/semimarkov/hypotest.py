"""Randomized block tests between semi-Markov kernels.

The trajectory is cut into blocks of length ``kappa``; inside block i one
transition index ``tau_i`` is drawn uniformly from the admissible window and
the statistic adds ``log Phi`` evaluated at the sampled transition,

    T = sum_i log Phi(J_{tau_i - 1}, J_{tau_i}, X_{tau_i}),

rejecting when T > 0 (ties accept).  The ball variant scores against the
rotated mixture q2 of the two hypotheses (Phi = sqrt(q2/q0), kappa = k + l)
and controls both errors at rates driven by the separation epsilon in the
d_nu* semi-distance:

    type I  <= exp(-K n eps^2),        K = (1 - lam)^2 / kappa
    type II <= exp(-Ktilde n eps^2),   Ktilde = K(lam) / kappa

with K(lam) = ((1-3 lam)/(1-lam)) (1 - pi^2/16) - 8 ((1-lam)/lam) xi^2,
positive only for small enough xi.  The simple variant scores the bare
alternative (Phi = sqrt(q1/q0), kappa = k + 1) and both errors share the
exponent n eps^2 / kappa.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _rng
from .kernel import (
    DiscreteSmk,
    NumericError,
    ValidationError,
    embed_markov_discrete,
    minorization,
    random_smk,
    smallest_k_with_mass,
)
from .metrics import (
    CoveringNet,
    LeastFavorablePair,
    least_favorable,
    semi_distance,
)
from .simulate import Trajectory, batch_trajectories, transition_cell_counts

_IOTA = math.pi**2 / 16.0
_Z99 = 2.5758293035489004


def k_lambda(lam: float, xi: float) -> float:
    """Type-II exponent coefficient; the test needs this positive."""
    return ((1.0 - 3.0 * lam) / (1.0 - lam)) * (1.0 - _IOTA) \
        - 8.0 * ((1.0 - lam) / lam) * xi * xi


def default_xi(lam: float) -> float:
    """Largest xi on the 0.01 grid keeping k_lambda strictly positive."""
    best = None
    for j in range(1, 100):
        xi = 0.01 * j
        if k_lambda(lam, xi) > 0.0:
            best = xi
        else:
            break
    if best is None:
        raise ValidationError(f"no feasible xi at lam={lam}")
    return best


@dataclass(frozen=True)
class TestPlan:
    """Frozen test configuration; all error bounds derive from it."""

    variant: str
    q0: DiscreteSmk
    q1: DiscreteSmk
    k: int
    l: int
    epsilon: float
    nu_star: np.ndarray
    eta_star: np.ndarray
    seed: int
    lam: float | None = None
    xi: float | None = None
    pair: LeastFavorablePair | None = None

    @property
    def kappa(self) -> int:
        return self.k + self.l if self.variant == "ball" else self.k + 1

    @property
    def K(self) -> float:
        if self.variant == "ball":
            return (1.0 - self.lam) ** 2 / self.kappa
        return 1.0 / self.kappa

    @property
    def K_lambda(self) -> float:
        if self.variant != "ball":
            return 1.0
        return k_lambda(self.lam, self.xi)

    @property
    def K_tilde(self) -> float:
        if self.variant == "ball":
            return self.K_lambda / self.kappa
        return 1.0 / self.kappa

    def type1_bound(self, n: int) -> float:
        return min(1.0, math.exp(-self.K * n * self.epsilon**2))

    def type2_bound(self, n: int) -> float:
        return min(1.0, math.exp(-self.K_tilde * n * self.epsilon**2))

    def log_phi(self) -> np.ndarray:
        """(S, C) table of log sqrt(num/den); nan marks cells outside both
        supports."""
        num = self.pair.q2.flat() if self.variant == "ball" else self.q1.flat()
        den = self.q0.flat()
        with np.errstate(divide="ignore", invalid="ignore"):
            return 0.5 * (np.log(num) - np.log(den))

    def blocks(self, n: int) -> int:
        return n // self.kappa


def _shared_env(q0: DiscreteSmk, q1: DiscreteSmk, k: int | None, l: int
                ) -> tuple[int, np.ndarray, np.ndarray]:
    if k is None:
        k = smallest_k_with_mass(q0.emc())
    if k < 1 or l < 1:
        raise ValidationError("k and l must be at least 1")
    env0 = minorization(q0.emc(), k, l)
    env1 = minorization(q1.emc(), k, l)
    if env0.vacuous:
        raise ValidationError(
            f"minorization of the null is vacuous at k={k}; the blocks carry no mass")
    eta = np.maximum(env0.eta_star, env1.eta_star)
    return k, env0.nu_star, eta


def _resolve_epsilon(q0, q1, nu_star, epsilon: float | None) -> float:
    d = semi_distance(q0, q1, nu_star).d
    if epsilon is None:
        epsilon = d
    if epsilon <= 0.0:
        raise ValidationError("hypotheses coincide under nu*: separation is zero")
    if d < epsilon - 1e-15:
        raise ValidationError(
            f"hypotheses are not epsilon-separated: d_nu*={d:.6g} < epsilon={epsilon:.6g}")
    return float(epsilon)


def plan_ball(q0: DiscreteSmk, q1: DiscreteSmk, lam: float = 0.1,
              xi: float | None = None, k: int | None = None, l: int = 1,
              epsilon: float | None = None, seed: int = 0) -> TestPlan:
    """Configure the ball test of q0 against the alternative shell around q1."""
    if not isinstance(q0, DiscreteSmk) or not isinstance(q1, DiscreteSmk):
        raise ValidationError("block tests require discrete kernels")
    if not 0.0 < lam < 0.25:
        raise ValidationError(f"lam must be in (0, 1/4), got {lam}")
    if xi is None:
        xi = default_xi(lam)
    if xi <= 0 or k_lambda(lam, xi) <= 0.0:
        raise ValidationError(
            f"xi={xi} violates the exponent positivity condition at lam={lam}")
    k, nu_star, eta_star = _shared_env(q0, q1, k, l)
    epsilon = _resolve_epsilon(q0, q1, nu_star, epsilon)
    pair = least_favorable(q0, q1, lam)
    return TestPlan(variant="ball", q0=q0, q1=q1, k=k, l=l, epsilon=epsilon,
                    nu_star=nu_star, eta_star=eta_star, seed=seed,
                    lam=float(lam), xi=float(xi), pair=pair)


def plan_simple(q0: DiscreteSmk, q1: DiscreteSmk, k: int | None = None,
                epsilon: float | None = None, seed: int = 0) -> TestPlan:
    """Configure the simple two-point test of q0 against q1."""
    if not isinstance(q0, DiscreteSmk) or not isinstance(q1, DiscreteSmk):
        raise ValidationError("block tests require discrete kernels")
    k, nu_star, eta_star = _shared_env(q0, q1, k, 1)
    epsilon = _resolve_epsilon(q0, q1, nu_star, epsilon)
    return TestPlan(variant="simple", q0=q0, q1=q1, k=k, l=1, epsilon=epsilon,
                    nu_star=nu_star, eta_star=eta_star, seed=seed)


def draw_block_indices(n: int, plan: TestPlan, rng: np.random.Generator) -> np.ndarray:
    """1-indexed sampled transition numbers tau_1..tau_N."""
    kappa = plan.kappa
    N = n // kappa
    if N < 1:
        raise ValidationError(f"trajectory of {n} jumps is shorter than one block ({kappa})")
    offset = plan.l if plan.variant == "ball" else 1
    y = rng.integers(1, plan.k + 1, size=N)
    tau = kappa * np.arange(N, dtype=np.int64) + offset + y
    return tau


def _statistic_rows(log_phi: np.ndarray, cells: np.ndarray, tau: np.ndarray,
                    k_max: int) -> np.ndarray:
    """Row statistics for encoded paths; tau entries are >= 2 by construction."""
    rows = np.arange(cells.shape[0])[:, None]
    src = cells[rows, tau - 2] // k_max
    vals = log_phi[src, cells[rows, tau - 1]]
    if np.isnan(vals).any():
        raise NumericError("sampled transition lies outside both hypotheses' supports")
    with np.errstate(invalid="ignore"):
        t = vals.sum(axis=1)
    if np.isnan(t).any():
        raise NumericError("statistic mixes opposite infinite evidence")
    return t


@dataclass(frozen=True)
class TestOutcome:
    statistic: float
    reject: bool
    n: int
    blocks: int
    kappa: int
    variant: str
    epsilon: float
    tau: tuple[int, ...]
    alternative_digest: str
    type1_bound: float
    type2_bound: float


def _traj_cells(traj: Trajectory, k_max: int) -> np.ndarray:
    counts_guard = transition_cell_counts(traj, k_max)  # validates holding times
    del counts_guard
    xs = np.rint(traj.sojourns).astype(np.int64)
    return traj.states[1:] * k_max + xs - 1


def psi(traj: Trajectory, plan: TestPlan, rand_cell: int = 0, rand_rep: int = 0) -> TestOutcome:
    """Run the planned test on one trajectory.

    The block randomization consumes the substream
    (plan.seed, randomization tag, rand_cell, rand_rep).
    """
    if traj.state_space.labels != plan.q0.states.labels:
        raise ValidationError("trajectory and plan state spaces differ")
    n = traj.n
    rng = _rng.substream(plan.seed, _rng.TAG_TEST_RANDOMIZATION, rand_cell, rand_rep)
    tau = draw_block_indices(n, plan, rng)
    cells = _traj_cells(traj, plan.q0.k_max)
    t = float(_statistic_rows(plan.log_phi(), cells[None], tau[None], plan.q0.k_max)[0])
    alt = plan.pair.q2 if plan.variant == "ball" else plan.q1
    return TestOutcome(
        statistic=t, reject=bool(t > 0.0), n=n, blocks=tau.size, kappa=plan.kappa,
        variant=plan.variant, epsilon=plan.epsilon, tau=tuple(int(v) for v in tau),
        alternative_digest=alt.digest(), type1_bound=plan.type1_bound(n),
        type2_bound=plan.type2_bound(n),
    )


def psi_ball(traj: Trajectory, q0: DiscreteSmk, q1: DiscreteSmk, **kw) -> TestOutcome:
    return psi(traj, plan_ball(q0, q1, **kw))


def psi_simple(traj: Trajectory, q0: DiscreteSmk, q1: DiscreteSmk, **kw) -> TestOutcome:
    return psi(traj, plan_simple(q0, q1, **kw))


# ---------------------------------------------------------------------------
# aggregate test over a covering net


@dataclass(frozen=True)
class AggregateOutcome:
    reject: bool
    first_reject: int | None
    statistics: tuple[float, ...]
    net_size: int
    radius: float
    union_type1_bound: float
    outcomes: tuple[TestOutcome, ...]


def psi_aggregate(traj: Trajectory, q0: DiscreteSmk, net: CoveringNet,
                  lam: float = 0.1, xi: float | None = None,
                  k: int | None = None, l: int = 1, seed: int = 0) -> AggregateOutcome:
    """Max of ball tests against every net point: reject when any rejects.

    Each point test is planned at epsilon = net radius (shell membership
    guarantees that much separation); type-I obeys the union bound
    size * exp(-K n radius^2).
    """
    points = net.net_kernels()
    if not points:
        raise ValidationError("covering net is empty; nothing to test against")
    outcomes = []
    first = None
    bound = None
    for j, q1 in enumerate(points):
        plan = plan_ball(q0, q1, lam=lam, xi=xi, k=k, l=l,
                         epsilon=net.radius, seed=seed)
        out = psi(traj, plan, rand_cell=j, rand_rep=0)
        outcomes.append(out)
        if out.reject and first is None:
            first = j
        if bound is None:
            bound = min(1.0, len(points) * math.exp(-plan.K * traj.n * net.radius**2))
    return AggregateOutcome(
        reject=first is not None, first_reject=first,
        statistics=tuple(o.statistic for o in outcomes), net_size=len(points),
        radius=net.radius, union_type1_bound=float(bound),
        outcomes=tuple(outcomes),
    )


def aggregate_type1_bound_candidates(n: int, eps_n: float, m_sep: float, K: float) -> dict:
    """Both readings of the aggregated type-I exponent at separation M eps_n."""
    return {
        "linear_in_M": math.exp(-K * n * eps_n**2 * m_sep / 4.0),
        "quadratic_in_M": math.exp(-K * n * eps_n**2 * m_sep**2 / 4.0),
    }


def markov_vs_semimarkov(traj: Trajectory, p: np.ndarray, q1: DiscreteSmk,
                         lam: float = 0.1, xi: float | None = None,
                         k: int | None = None, l: int = 1,
                         epsilon: float | None = None, seed: int = 0
                         ) -> tuple[TestOutcome, TestPlan]:
    """Test a Markov null (one-step matrix p, geometric holding times) against
    a semi-Markov alternative on the same states."""
    q0 = embed_markov_discrete(p, q1.k_max, states=q1.states)
    plan = plan_ball(q0, q1, lam=lam, xi=xi, k=k, l=l, epsilon=epsilon, seed=seed)
    return psi(traj, plan), plan


# ---------------------------------------------------------------------------
# probes and the error study


def probe_kernels(q1: DiscreteSmk, count: int, radius: float,
                  eta_star: np.ndarray, seed: int,
                  bisect_rounds: int = 48) -> list[DiscreteSmk]:
    """Alternatives spread through the d_eta* ball of the given radius
    around q1.

    Each probe mixes q1 toward a random kernel; the mixing weight is
    bisected so the probe sits at a uniform fraction of the radius (or at
    the farthest reachable point when the ray never leaves the ball).
    """
    s, k_max = q1.n_states, q1.k_max
    probes: list[DiscreteSmk] = []
    for p_idx in range(count):
        rng = _rng.substream(seed, _rng.TAG_PROBE, p_idx)
        direction = random_smk(s, k_max, rng).table
        target = (0.3 + 0.7 * rng.random()) * radius

        def kernel_at(w: float) -> DiscreteSmk:
            return DiscreteSmk(q1.states, (1.0 - w) * q1.table + w * direction)

        def dist(w: float) -> float:
            return semi_distance(kernel_at(w), q1, eta_star).d

        if radius <= 0.0 or dist(1.0) <= target:
            w = 1.0 if radius > 0.0 else 0.0
        else:
            lo, hi = 0.0, 1.0
            for _ in range(bisect_rounds):
                mid = 0.5 * (lo + hi)
                if dist(mid) <= target:
                    lo = mid
                else:
                    hi = mid
            w = lo
        probes.append(kernel_at(w))
    return probes


def wilson_halfwidth(p_hat: float, n: int, z: float = _Z99) -> float:
    if n <= 0:
        return float("nan")
    denom = 1.0 + z * z / n
    return z * math.sqrt(p_hat * (1.0 - p_hat) / n + z * z / (4.0 * n * n)) / denom


@dataclass(frozen=True)
class ErrorStudyRow:
    n: int
    epsilon: float
    replications: int
    type1_rate: float
    type1_half_width: float
    type1_bound: float
    type2_sup_rate: float
    type2_half_width: float
    type2_bound: float
    type2_argmax_probe: int
    skip_reason: str = ""


@dataclass(frozen=True)
class ErrorStudy:
    variant: str
    lam: float | None
    xi: float | None
    k: int
    l: int
    kappa: int
    epsilon: float
    K: float
    K_tilde: float
    replications: int
    probes: int
    seed: int
    rows: tuple[ErrorStudyRow, ...]


def _rejection_rate(plan: TestPlan, sample_from: DiscreteSmk, n: int, reps: int,
                    seed: int, cell: int) -> float:
    _, _, cells = batch_trajectories(sample_from, n, reps, seed,
                                     tag=_rng.TAG_TRAJECTORY, cell_index=cell)
    N = plan.blocks(n)
    tau = np.empty((reps, N), dtype=np.int64)
    for r in range(reps):
        rng = _rng.substream(seed, _rng.TAG_TEST_RANDOMIZATION, cell, r)
        tau[r] = draw_block_indices(n, plan, rng)
    t = _statistic_rows(plan.log_phi(), cells, tau, plan.q0.k_max)
    return float(np.mean(t > 0.0))


def error_study(q0: DiscreteSmk, q1: DiscreteSmk, n_values: Sequence[int],
                replications: int, probes: int = 0, lam: float = 0.1,
                xi: float | None = None, k: int | None = None, l: int = 1,
                epsilon: float | None = None, seed: int = 0,
                variant: str = "ball") -> ErrorStudy:
    """Empirical error rates of the planned test against its bounds.

    Stream layout: sampling cell ``i_n * (probes + 1)`` feeds the null run at
    the i-th n, cells ``+1+p`` feed probe p; within a cell, replication r
    uses the (tag, cell, r) substreams for the path and the randomization.
    """
    if variant == "ball":
        plan = plan_ball(q0, q1, lam=lam, xi=xi, k=k, l=l, epsilon=epsilon, seed=seed)
    elif variant == "simple":
        plan = plan_simple(q0, q1, k=k, epsilon=epsilon, seed=seed)
    else:
        raise ValidationError(f"unknown test variant {variant!r}")
    probe_radius = (plan.xi or 0.0) * plan.epsilon
    probe_list = probe_kernels(q1, probes, probe_radius, plan.eta_star,
                               seed) if probes else []
    rows: list[ErrorStudyRow] = []
    for i_n, n in enumerate(n_values):
        n = int(n)
        base_cell = i_n * (probes + 1)
        if n // plan.kappa < 1:
            rows.append(ErrorStudyRow(
                n=n, epsilon=plan.epsilon, replications=0,
                type1_rate=float("nan"), type1_half_width=float("nan"),
                type1_bound=plan.type1_bound(n), type2_sup_rate=float("nan"),
                type2_half_width=float("nan"), type2_bound=plan.type2_bound(n),
                type2_argmax_probe=-1,
                skip_reason=f"fewer than one block of {plan.kappa}"))
            continue
        r1 = _rejection_rate(plan, q0, n, replications, seed, base_cell)
        t2_rates = []
        for p_idx, qp in enumerate(probe_list):
            rej = _rejection_rate(plan, qp, n, replications, seed, base_cell + 1 + p_idx)
            t2_rates.append(1.0 - rej)
        if t2_rates:
            sup = max(t2_rates)
            arg = int(np.argmax(t2_rates))
            hw2 = wilson_halfwidth(sup, replications)
        else:
            sup, arg, hw2 = float("nan"), -1, float("nan")
        rows.append(ErrorStudyRow(
            n=n, epsilon=plan.epsilon, replications=replications,
            type1_rate=r1, type1_half_width=wilson_halfwidth(r1, replications),
            type1_bound=plan.type1_bound(n), type2_sup_rate=sup,
            type2_half_width=hw2, type2_bound=plan.type2_bound(n),
            type2_argmax_probe=arg))
    return ErrorStudy(
        variant=plan.variant, lam=plan.lam, xi=plan.xi, k=plan.k, l=plan.l,
        kappa=plan.kappa, epsilon=plan.epsilon, K=plan.K, K_tilde=plan.K_tilde,
        replications=replications, probes=probes, seed=seed, rows=tuple(rows))


_STUDY_COLUMNS = (
    "n", "epsilon", "replications", "type1_rate", "type1_half_width", "type1_bound",
    "type2_sup_rate", "type2_half_width", "type2_bound", "type2_argmax_probe",
    "skip_reason",
)


def write_error_study_csv(study: ErrorStudy, path) -> None:
    lines = [",".join(_STUDY_COLUMNS)]
    for row in study.rows:
        vals = []
        for col in _STUDY_COLUMNS:
            v = getattr(row, col)
            if isinstance(v, float):
                vals.append(f"{v:.17g}")
            else:
                vals.append(str(v))
        lines.append(",".join(vals))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
