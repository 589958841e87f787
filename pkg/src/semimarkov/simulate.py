"""Trajectory sampling, path likelihoods and KL functionals.

A trajectory holds the visited states ``J_0..J_n`` and the jump times
``T_0..T_n`` with ``T_0`` equal to the initial holding time drawn jointly
with ``J_0``; sojourns are the first differences.  Batch sampling feeds one
uniform matrix through the backend stepping core so results never depend on
which backend is active.

The KL functionals compare the path law of a reference kernel, started from
its stationary pair, against a candidate kernel: ``K`` is the expected total
log-likelihood ratio and ``V0`` its exact variance, computed by a forward
pass over (state, accumulated first and second moments).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _rng, core
from .kernel import (
    ContinuousSmk,
    DiscreteSmk,
    NumericError,
    StateSpace,
    ValidationError,
    stationary_emc,
    stationary_pair,
)

_Z99 = 2.5758293035489004


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray      # J_0..J_n, int64 indices
    jump_times: np.ndarray  # T_0..T_n, T_0 = initial holding time
    state_space: StateSpace

    def __post_init__(self) -> None:
        st = np.asarray(self.states, dtype=np.int64)
        jt = np.asarray(self.jump_times, dtype=np.float64)
        object.__setattr__(self, "states", st)
        object.__setattr__(self, "jump_times", jt)
        if st.ndim != 1 or jt.shape != st.shape or st.size < 1:
            raise ValidationError("trajectory arrays must be 1-d and equally long")
        if st.min() < 0 or st.max() >= self.state_space.size:
            raise ValidationError("trajectory state index out of range")
        if jt[0] <= 0 or np.any(np.diff(jt) <= 0):
            raise ValidationError("jump times must be positive and strictly increasing")

    @property
    def n(self) -> int:
        return self.states.size - 1

    @property
    def sojourns(self) -> np.ndarray:
        return np.diff(self.jump_times)

    @property
    def x0(self) -> float:
        return float(self.jump_times[0])

    def labels(self) -> list[str]:
        return [self.state_space.labels[i] for i in self.states]


def _initial_cell_cdf(smk: DiscreteSmk) -> tuple[np.ndarray, np.ndarray]:
    pair = stationary_pair(smk)
    flat = pair.table.reshape(-1)
    cdf = np.cumsum(flat)
    cdf[-1] = 1.0
    return cdf, pair.rho


def batch_trajectories(smk: DiscreteSmk, n: int, reps: int, master_seed: int,
                       tag: int = _rng.TAG_TRAJECTORY, cell_index: int = 0,
                       ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample ``reps`` stationary-start paths of ``n`` jumps.

    Returns ``(j0, x0, cells)`` where ``cells[r, i]`` encodes the pair
    (J_{i+1}, X_{i+1}) as ``J * k_max + (X - 1)``.  Replication r consumes
    the substream ``(master_seed, tag, cell_index, r)``: one uniform for the
    initial pair then one per jump.
    """
    if n < 1 or reps < 1:
        raise ValidationError("n and reps must be at least 1")
    init_cdf, _ = _initial_cell_cdf(smk)
    k_max = smk.k_max
    u = np.empty((reps, n), dtype=np.float64)
    j0 = np.empty(reps, dtype=np.int64)
    x0 = np.empty(reps, dtype=np.float64)
    for r in range(reps):
        g = _rng.substream(master_seed, tag, cell_index, r)
        draws = g.random(n + 1)
        idx = int(np.searchsorted(init_cdf, draws[0], side="right"))
        idx = min(idx, init_cdf.size - 1)
        j0[r] = idx // k_max
        x0[r] = idx % k_max + 1
        u[r] = draws[1:]
    cells = core.simulate_cells(smk.cell_cdf(), u, j0, k_max)
    return j0, x0, cells


def cells_to_states(j0: np.ndarray, cells: np.ndarray, k_max: int) -> np.ndarray:
    """(R, n+1) state index paths from encoded cells."""
    return np.concatenate([j0[:, None], cells // k_max], axis=1)


def _sample_discrete(smk: DiscreteSmk, n: int, seed: int, init: str) -> Trajectory:
    g = _rng.substream(seed, _rng.TAG_TRAJECTORY, 0, 0)
    draws = g.random(n + 1)
    k_max = smk.k_max
    if init == "stationary":
        cdf, _ = _initial_cell_cdf(smk)
        idx = min(int(np.searchsorted(cdf, draws[0], side="right")), cdf.size - 1)
        j0 = idx // k_max
        x0 = idx % k_max + 1
    else:
        j0 = smk.states.index(init)
        pair = stationary_pair(smk)
        row = pair.table[j0]
        mass = row.sum()
        if mass <= 0:
            raise NumericError(f"state {init!r} has no stationary mass")
        cdf = np.cumsum(row / mass)
        cdf[-1] = 1.0
        x0 = min(int(np.searchsorted(cdf, draws[0], side="right")), k_max - 1) + 1
    cells = core.simulate_cells(smk.cell_cdf(), draws[None, 1:], np.array([j0]), k_max)[0]
    states = np.concatenate([[j0], cells // k_max])
    sojourns = cells % k_max + 1
    times = float(x0) + np.concatenate([[0.0], np.cumsum(sojourns, dtype=np.float64)])
    return Trajectory(states=states, jump_times=times, state_space=smk.states)


def _draw_index(cdf: np.ndarray, u: float) -> int:
    return min(int(np.searchsorted(cdf, u, side="right")), cdf.size - 1)


def _sample_continuous(smk: ContinuousSmk, n: int, seed: int, init: str) -> Trajectory:
    g = _rng.substream(seed, _rng.TAG_TRAJECTORY, 0, 0)
    rho = stationary_emc(smk.p)
    s = smk.n_states
    if init == "stationary":
        j0 = _draw_index(np.cumsum(rho), g.random())
    else:
        j0 = smk.states.index(init)
    # initial holding time: mixture over the incoming state under rho
    w = rho * smk.p[:, j0]
    total = w.sum()
    if total <= 0:
        raise NumericError(f"state index {j0} is unreachable under the stationary law")
    src = _draw_index(np.cumsum(w / total), g.random())
    x0 = smk.sojourns[(src, j0)].ppf(g.random())

    states = np.empty(n + 1, dtype=np.int64)
    sojourns = np.empty(n, dtype=np.float64)
    states[0] = j0
    row_cdfs = np.cumsum(smk.p, axis=1)
    row_cdfs[:, -1] = 1.0
    cur = j0
    for i in range(n):
        nxt = _draw_index(row_cdfs[cur], g.random())
        sojourns[i] = smk.sojourns[(cur, nxt)].ppf(g.random())
        states[i + 1] = nxt
        cur = nxt
    times = float(x0) + np.concatenate([[0.0], np.cumsum(sojourns)])
    return Trajectory(states=states, jump_times=times, state_space=smk.states)


def sample_trajectory(smk, n: int, seed: int, init: str = "stationary") -> Trajectory:
    """Sample one path of ``n`` jumps; ``init`` is "stationary" or a state label."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    if isinstance(smk, DiscreteSmk):
        return _sample_discrete(smk, n, seed, init)
    if isinstance(smk, ContinuousSmk):
        return _sample_continuous(smk, n, seed, init)
    raise ValidationError(f"cannot sample from {type(smk).__name__}")


# ---------------------------------------------------------------------------
# likelihood


@dataclass(frozen=True)
class LogLik:
    value: float
    n_terms: int
    violation: str | None = None


def log_likelihood(smk, traj: Trajectory, include_initial: bool = True) -> LogLik:
    """Path log-likelihood; impossible transitions give -inf plus a locator
    instead of raising."""
    if traj.state_space.labels != smk.states.labels:
        raise ValidationError("trajectory and kernel state spaces differ")
    js = traj.states
    xs = traj.sojourns
    n = traj.n
    total = 0.0
    terms = 0
    if isinstance(smk, DiscreteSmk):
        k_max = smk.k_max
        if include_initial:
            pair = stationary_pair(smk)
            k0 = int(round(traj.x0))
            if not 1 <= k0 <= k_max:
                return LogLik(float("-inf"), 0,
                              f"initial holding time {traj.x0:g} outside 1..{k_max}")
            p0 = pair.table[js[0], k0 - 1]
            if p0 <= 0:
                return LogLik(float("-inf"), 0,
                              f"initial pair (state {js[0]}, k={k0}) has zero mass")
            total += math.log(p0)
            terms += 1
        for i in range(1, n + 1):
            k = int(round(xs[i - 1]))
            if not 1 <= k <= k_max:
                return LogLik(float("-inf"), terms,
                              f"step {i}: holding time {xs[i - 1]:g} outside 1..{k_max}")
            p = smk.table[js[i - 1], js[i], k - 1]
            if p <= 0:
                lab = smk.states.labels
                return LogLik(float("-inf"), terms,
                              f"step {i}: zero mass for {lab[js[i - 1]]}->{lab[js[i]]}, k={k}")
            total += math.log(p)
            terms += 1
        return LogLik(total, terms)
    if isinstance(smk, ContinuousSmk):
        if include_initial:
            rho = stationary_emc(smk.p)
            y = js[0]
            dens = sum(rho[x] * smk.p[x, y] * smk.sojourns[(x, y)].pdf(traj.x0)
                       for x in range(smk.n_states) if smk.p[x, y] > 0)
            if dens <= 0:
                return LogLik(float("-inf"), 0, "initial pair has zero density")
            total += math.log(dens)
            terms += 1
        for i in range(1, n + 1):
            d = smk.density(int(js[i - 1]), int(js[i]), float(xs[i - 1]))
            if d <= 0:
                lab = smk.states.labels
                return LogLik(float("-inf"), terms,
                              f"step {i}: zero density for {lab[js[i-1]]}->{lab[js[i]]}")
            total += math.log(float(d))
            terms += 1
        return LogLik(total, terms)
    raise ValidationError(f"cannot evaluate likelihood under {type(smk).__name__}")


# ---------------------------------------------------------------------------
# KL functionals


@dataclass(frozen=True)
class KlFunctionals:
    kl: float
    v0: float
    per_step_kl: float
    method: str
    n: int
    kl_se: float | None = None
    v0_se: float | None = None


def _log_ratio_tables(q0: DiscreteSmk, tables: np.ndarray
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Init and step log-ratio tables for a batch of candidate kernels.

    Returns (finite mask (D,), g_init (D,S,C), g_step (D,S,C), init_kl (D,)).
    Cells outside the reference support contribute zero.
    """
    pair0 = stationary_pair(q0)
    rt0 = pair0.table.reshape(-1)
    a0 = q0.flat()
    d, s = tables.shape[:2]
    flat = tables.reshape(d, s, -1)

    emc = flat.reshape(d, s, s, q0.k_max).sum(axis=3)
    a = np.swapaxes(emc, 1, 2) - np.eye(s)[None]
    a[:, -1, :] = 1.0
    b = np.zeros((d, s, 1))
    b[:, -1, 0] = 1.0
    try:
        rho_q = np.linalg.solve(a, b)[:, :, 0]
    except np.linalg.LinAlgError:
        raise NumericError("stationary solve failed for a candidate kernel batch")
    rt_q = np.einsum("dx,dxyk->dyk", rho_q, flat.reshape(d, s, s, q0.k_max)).reshape(d, -1)

    sup0 = a0 > 0.0
    finite = np.all(np.where(sup0[None], flat > 0.0, True), axis=(1, 2))
    sup_rt = rt0 > 0.0
    finite &= np.all(np.where(sup_rt[None], rt_q > 0.0, True), axis=1)

    g_step = np.zeros_like(flat)
    g_init = np.zeros((d, rt0.size))
    with np.errstate(divide="ignore", invalid="ignore"):
        np.log(np.where(flat > 0, a0[None] / flat, 1.0), out=g_step, where=sup0[None])
        np.log(np.where(rt_q > 0, rt0[None] / rt_q, 1.0), out=g_init, where=sup_rt[None])
    init_kl = g_init @ rt0
    return finite, g_init.reshape(d, s, q0.k_max), g_step, init_kl


def kl_v0_exact_batch(q0: DiscreteSmk, tables: np.ndarray, n: int
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Exact (KL, V0) of the n-jump path law of q0 against each candidate.

    ``tables`` has shape (D, S, S, k_max) with stochastic rows.  The forward
    pass tracks, per current state, the first and second moments of the
    accumulated log-ratio; cost is O(n S^2 k_max) per candidate batch.
    """
    tables = np.asarray(tables, dtype=np.float64)
    if tables.ndim == 3:
        tables = tables[None]
    d, s, s2, k_max = tables.shape
    if (s, s2, k_max) != q0.table.shape:
        raise ValidationError("candidate tables do not match the reference shape")
    finite, g_init, g_step, init_kl = _log_ratio_tables(q0, tables)
    pair0 = stationary_pair(q0)
    rho0 = pair0.rho
    rt0 = pair0.table  # (S, k_max), joint over (state, holding time)
    a0 = q0.flat()     # (S, C)
    emc0 = q0.emc()

    kl = np.full(d, np.inf)
    v0 = np.full(d, np.inf)
    if not finite.any():
        return kl, v0
    idx = np.nonzero(finite)[0]
    gi = g_init[idx]            # (B, S, k_max)
    gs = g_step[idx]            # (B, S, C)
    b = idx.size

    kl[idx] = init_kl[idx] + n * np.einsum("x,xc,bxc->b", rho0, a0, gs)
    # m0 is rho0 throughout; m1/m2 carry sum-of-log-ratio moments by state
    m1 = np.einsum("yk,byk->by", rt0, gi)
    m2 = np.einsum("yk,byk->by", rt0, gi * gi)
    # per-(x, dest) aggregates of the step table
    w1 = np.einsum("xc,bxc->bxc", a0, gs).reshape(b, s, s, k_max).sum(axis=3)
    w2 = np.einsum("xc,bxc->bxc", a0, gs * gs).reshape(b, s, s, k_max).sum(axis=3)
    c1 = np.einsum("x,bxy->by", rho0, w1)
    c2 = np.einsum("x,bxy->by", rho0, w2)
    for _ in range(n):
        new_m1 = m1 @ emc0 + c1
        new_m2 = m2 @ emc0 + 2.0 * np.einsum("bx,bxy->by", m1, w1) + c2
        m1, m2 = new_m1, new_m2
    tot1 = m1.sum(axis=1)
    tot2 = m2.sum(axis=1)
    v0[idx] = tot2 - tot1 * tot1
    return kl, v0


def kl_functionals(q0: DiscreteSmk, q: DiscreteSmk, n: int, method: str = "analytic",
                   mc_reps: int = 400, seed: int = 0) -> KlFunctionals:
    """KL and log-ratio variance between stationary n-jump path laws."""
    if q0.states.labels != q.states.labels or q0.k_max != q.k_max:
        raise ValidationError("kernels must share states and k_max")
    if n < 1:
        raise ValidationError("n must be at least 1")
    if method == "analytic":
        kl, v0 = kl_v0_exact_batch(q0, q.table[None], n)
        per_step = float("inf")
        if math.isfinite(kl[0]):
            a0, a = q0.flat(), q.flat()
            with np.errstate(divide="ignore", invalid="ignore"):
                lr = np.where(a0 > 0, np.log(np.where(a > 0, a0 / np.maximum(a, 1e-300), 1.0)), 0.0)
            pair0 = stationary_pair(q0)
            per_step = float(np.einsum("x,xc,xc->", pair0.rho, a0, lr))
        return KlFunctionals(kl=float(kl[0]), v0=float(v0[0]), per_step_kl=per_step,
                             method="analytic", n=n)
    if method != "mc":
        raise ValidationError(f"unknown KL method {method!r}")
    j0, x0, cells = batch_trajectories(q0, n, mc_reps, seed, tag=_rng.TAG_KL)
    k_max = q0.k_max
    pair0 = stationary_pair(q0)
    pair_q = stationary_pair(q)
    with np.errstate(divide="ignore"):
        linit = np.log(pair0.table) - np.log(pair_q.table)
        lstep = np.log(q0.flat()) - np.log(q.flat())
    g = linit[j0, (x0 - 1).astype(np.int64)]
    src = cells_to_states(j0, cells, k_max)[:, :-1]
    g = g + lstep[src, cells].sum(axis=1)
    if not np.all(np.isfinite(g)):
        return KlFunctionals(kl=float("inf"), v0=float("inf"), per_step_kl=float("inf"),
                             method="mc", n=n, kl_se=float("nan"), v0_se=float("nan"))
    mean = float(g.mean())
    centered = g - mean
    m2 = float((centered**2).mean())
    m4 = float((centered**4).mean())
    var = m2 * mc_reps / (mc_reps - 1)
    kl_se = math.sqrt(m2 / mc_reps)
    v0_se = math.sqrt(max(m4 - m2 * m2, 0.0) / mc_reps)
    return KlFunctionals(kl=mean, v0=var, per_step_kl=mean / n, method="mc", n=n,
                         kl_se=kl_se, v0_se=v0_se)


@dataclass(frozen=True)
class KlNeighborhood:
    inside: bool
    kl: float
    v0: float
    limit: float
    method: str


def in_kl_neighborhood(q: DiscreteSmk, q0: DiscreteSmk, eps: float, n: int,
                       method: str = "analytic", mc_reps: int = 400,
                       seed: int = 0) -> KlNeighborhood:
    """Membership in {q : KL <= n eps^2 and V0 <= n eps^2}.

    In MC mode the upper 99% confidence edge must clear the limit, so the
    answer errs toward exclusion.
    """
    if eps <= 0:
        raise ValidationError("eps must be positive")
    f = kl_functionals(q0, q, n, method=method, mc_reps=mc_reps, seed=seed)
    limit = n * eps * eps
    if method == "mc":
        kl_hi = f.kl + _Z99 * (f.kl_se or 0.0)
        v0_hi = f.v0 + _Z99 * (f.v0_se or 0.0)
        inside = kl_hi <= limit and v0_hi <= limit
    else:
        inside = f.kl <= limit and f.v0 <= limit
    return KlNeighborhood(inside=bool(inside), kl=f.kl, v0=f.v0, limit=limit, method=f.method)


# ---------------------------------------------------------------------------
# trajectory files


def write_trajectory_csv(traj: Trajectory, path) -> None:
    lines = ["index,state,jump_time"]
    labels = traj.state_space.labels
    for i, (j, t) in enumerate(zip(traj.states, traj.jump_times)):
        lines.append(f"{i},{labels[j]},{t:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trajectory_csv(path, states: StateSpace) -> Trajectory:
    with open(path) as fh:
        rows = [ln.strip() for ln in fh if ln.strip()]
    if not rows or rows[0] != "index,state,jump_time":
        raise ValidationError(f"{path}: expected header 'index,state,jump_time'")
    idx_list: list[int] = []
    st_list: list[int] = []
    t_list: list[float] = []
    for ln in rows[1:]:
        parts = ln.split(",")
        if len(parts) != 3:
            raise ValidationError(f"{path}: malformed row {ln!r}")
        try:
            idx_list.append(int(parts[0]))
            st_list.append(states.index(parts[1]))
            t_list.append(float(parts[2]))
        except (ValueError, KeyError) as exc:
            raise ValidationError(f"{path}: bad row {ln!r}: {exc}") from None
    if idx_list != list(range(len(idx_list))):
        raise ValidationError(f"{path}: row indices must run 0..n")
    return Trajectory(states=np.array(st_list, dtype=np.int64),
                      jump_times=np.array(t_list), state_space=states)


def transition_cell_counts(traj: Trajectory, k_max: int) -> np.ndarray:
    """(S, S*k_max) tally of observed (source, dest, holding-time) cells."""
    s = traj.state_space.size
    counts = np.zeros((s, s * k_max), dtype=np.int64)
    xs = np.rint(traj.sojourns).astype(np.int64)
    if traj.n and (xs.min() < 1 or xs.max() > k_max):
        bad = int(np.argmax((xs < 1) | (xs > k_max)))
        raise ValidationError(
            f"step {bad + 1}: holding time {traj.sojourns[bad]:g} outside 1..{k_max}")
    for i in range(traj.n):
        counts[traj.states[i], traj.states[i + 1] * k_max + xs[i] - 1] += 1
    return counts
