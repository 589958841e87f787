"""Finite-state semi-Markov kernels and their structural analysis.

A discrete kernel is an array ``q[x, y, k]`` giving the probability that the
process jumps from state ``x`` to state ``y`` with a sojourn of ``k`` ticks,
``k`` running over ``1..k_max``; each row ``q[x]`` sums to one.  A continuous
kernel factors as ``p(x, y) * f_xy(t)`` with ``p`` a stochastic matrix and
``f_xy`` a parametric sojourn density (exponential, Weibull or gamma).

The module provides the embedded-chain analysis used by the rest of the
package: stationary distributions of the jump chain and of the (state,
sojourn) pair, minorization/majorization envelopes of the chain built from
``k``-step averages and ``l``-step rows, Markov embeddings in both time
scales, structural assumption checks, and a plain-text kernel file format.

Cell layout
-----------
Destination/sojourn cells are flattened as ``cell = y * k_max + (k - 1)``;
``flat()`` exposes the ``(n_states, n_states * k_max)`` view used by the
samplers and the metric code.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.special import gammaln

ROW_SUM_TOL = 1e-12
LOADER_ROW_TOL = 1e-9
STATIONARY_TOL = 1e-10
DIRECT_SOLVE_MAX_STATES = 64


class ValidationError(ValueError):
    """Rejected configuration or malformed input (CLI exit code 2)."""


class NumericError(RuntimeError):
    """Numerical failure: non-convergence, overflow, NaN (CLI exit code 3)."""


@dataclass(frozen=True)
class StateSpace:
    """Ordered, uniquely labelled finite state space."""

    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.labels) < 2:
            raise ValidationError("state space needs at least 2 states")
        if len(set(self.labels)) != len(self.labels):
            raise ValidationError("state labels must be unique")
        for lab in self.labels:
            if not lab or any(c.isspace() for c in lab) or "=" in lab:
                raise ValidationError(f"bad state label {lab!r}")

    @property
    def size(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValidationError(f"unknown state label {label!r}") from None


def default_states(n: int) -> StateSpace:
    return StateSpace(tuple(f"s{i}" for i in range(n)))


def _as_matrix(p, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValidationError(f"{name} must be a square matrix")
    if not np.all(np.isfinite(p)):
        raise ValidationError(f"{name} has non-finite entries")
    return p


def _check_stochastic(p: np.ndarray, name: str, tol: float = ROW_SUM_TOL) -> None:
    if np.any(p < 0):
        raise ValidationError(f"{name} has negative entries")
    dev = np.abs(p.sum(axis=1) - 1.0)
    if np.any(dev > tol):
        x = int(np.argmax(dev))
        raise ValidationError(f"{name} row {x} sums to 1{dev[x]:+.3e}, beyond {tol:g}")


class DiscreteSmk:
    """Discrete-time semi-Markov kernel on a finite state space.

    Parameters
    ----------
    states : StateSpace
    table : ndarray, shape (S, S, k_max)
        ``table[x, y, k-1]`` is the mass of the jump ``x -> (y, k)``.  Rows
        ``table[x]`` must sum to one within ``1e-12`` and be nonnegative.
    """

    def __init__(self, states: StateSpace, table) -> None:
        table = np.ascontiguousarray(table, dtype=np.float64)
        if table.ndim != 3 or table.shape[0] != states.size or table.shape[1] != states.size:
            raise ValidationError(
                f"kernel table shape {table.shape} does not match {states.size} states"
            )
        if table.shape[2] < 1:
            raise ValidationError("k_max must be >= 1")
        if not np.all(np.isfinite(table)):
            raise ValidationError("kernel table has non-finite entries")
        if np.any(table < 0):
            raise ValidationError("kernel table has negative entries")
        dev = np.abs(table.reshape(states.size, -1).sum(axis=1) - 1.0)
        if np.any(dev > ROW_SUM_TOL):
            x = int(np.argmax(dev))
            raise ValidationError(
                f"kernel row {states.labels[x]!r} sums to 1{dev[x]:+.3e}, beyond {ROW_SUM_TOL:g}"
            )
        self.states = states
        self.table = table
        self._cdf: np.ndarray | None = None

    @property
    def n_states(self) -> int:
        return self.states.size

    @property
    def k_max(self) -> int:
        return int(self.table.shape[2])

    @property
    def n_cells(self) -> int:
        return self.n_states * self.k_max

    def flat(self) -> np.ndarray:
        """(S, S*k_max) view, cell = y*k_max + (k-1)."""
        return self.table.reshape(self.n_states, -1)

    def emc(self) -> np.ndarray:
        """Transition matrix of the embedded jump chain."""
        return self.table.sum(axis=2)

    def sojourn_pmf(self) -> np.ndarray:
        """(S, k_max) per-state sojourn marginals."""
        return self.table.sum(axis=1)

    def cell_cdf(self) -> np.ndarray:
        """Per-state cumulative cell masses with the last column pinned to 1."""
        if self._cdf is None:
            cdf = np.cumsum(self.flat(), axis=1)
            cdf[:, -1] = 1.0
            self._cdf = np.ascontiguousarray(cdf)
        return self._cdf

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.table.shape).encode())
        h.update(self.table.tobytes())
        return h.hexdigest()[:12]

    def __repr__(self) -> str:
        return f"DiscreteSmk(states={self.states.labels}, k_max={self.k_max})"


_SOJOURN_KINDS = {"exponential": 1, "weibull": 2, "gamma": 2}


@dataclass(frozen=True)
class Sojourn:
    """Parametric sojourn density on (0, inf).

    kinds: ``exponential(rate)``, ``weibull(shape, scale)``,
    ``gamma(shape, rate)``.
    """

    kind: str
    params: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.kind not in _SOJOURN_KINDS:
            raise ValidationError(f"unknown sojourn family {self.kind!r}")
        if len(self.params) != _SOJOURN_KINDS[self.kind]:
            raise ValidationError(f"{self.kind} takes {_SOJOURN_KINDS[self.kind]} parameters")
        if any(not math.isfinite(p) or p <= 0 for p in self.params):
            raise ValidationError(f"{self.kind} parameters must be positive, got {self.params}")

    @staticmethod
    def exponential(rate: float) -> "Sojourn":
        return Sojourn("exponential", (float(rate),))

    @staticmethod
    def weibull(shape: float, scale: float) -> "Sojourn":
        return Sojourn("weibull", (float(shape), float(scale)))

    @staticmethod
    def gamma(shape: float, rate: float) -> "Sojourn":
        return Sojourn("gamma", (float(shape), float(rate)))

    def pdf(self, t):
        t = np.asarray(t, dtype=np.float64)
        out = np.zeros_like(t)
        pos = t > 0
        tp = t[pos]
        if self.kind == "exponential":
            (rate,) = self.params
            out[pos] = rate * np.exp(-rate * tp)
        elif self.kind == "weibull":
            shape, scale = self.params
            z = tp / scale
            out[pos] = (shape / scale) * z ** (shape - 1.0) * np.exp(-(z**shape))
        else:
            shape, rate = self.params
            out[pos] = np.exp(
                shape * np.log(rate) + (shape - 1.0) * np.log(tp) - rate * tp - gammaln(shape)
            )
        return out

    def logpdf(self, t):
        t = np.asarray(t, dtype=np.float64)
        out = np.full_like(t, -np.inf)
        pos = t > 0
        tp = t[pos]
        if self.kind == "exponential":
            (rate,) = self.params
            out[pos] = np.log(rate) - rate * tp
        elif self.kind == "weibull":
            shape, scale = self.params
            z = tp / scale
            out[pos] = np.log(shape / scale) + (shape - 1.0) * np.log(z) - z**shape
        else:
            shape, rate = self.params
            out[pos] = (
                shape * np.log(rate) + (shape - 1.0) * np.log(tp) - rate * tp - gammaln(shape)
            )
        return out

    def ppf(self, u):
        """Inverse CDF; rejection-free sampling path."""
        u = np.asarray(u, dtype=np.float64)
        if self.kind == "exponential":
            (rate,) = self.params
            return -np.log1p(-u) / rate
        if self.kind == "weibull":
            shape, scale = self.params
            return scale * (-np.log1p(-u)) ** (1.0 / shape)
        from scipy.stats import gamma as _gamma

        shape, rate = self.params
        return _gamma.ppf(u, shape) / rate

    def mean(self) -> float:
        if self.kind == "exponential":
            return 1.0 / self.params[0]
        if self.kind == "weibull":
            shape, scale = self.params
            return scale * math.gamma(1.0 + 1.0 / shape)
        shape, rate = self.params
        return shape / rate

    def tail_cut(self, eps: float = 1e-13) -> float:
        """t with survival below eps; quadrature upper limit."""
        if self.kind == "exponential":
            return -math.log(eps) / self.params[0]
        if self.kind == "weibull":
            shape, scale = self.params
            return scale * (-math.log(eps)) ** (1.0 / shape)
        from scipy.stats import gamma as _gamma

        shape, rate = self.params
        return float(_gamma.isf(eps, shape) / rate)


class ContinuousSmk:
    """Continuous-time semi-Markov kernel ``p(x, y) * f_xy(t)``."""

    def __init__(self, states: StateSpace, p, sojourns: dict[tuple[int, int], Sojourn]) -> None:
        p = _as_matrix(p, "EMC matrix")
        if p.shape[0] != states.size:
            raise ValidationError("EMC matrix does not match state space")
        _check_stochastic(p, "EMC matrix")
        for x in range(states.size):
            for y in range(states.size):
                if p[x, y] > 0 and (x, y) not in sojourns:
                    raise ValidationError(
                        f"missing sojourn family for transition "
                        f"{states.labels[x]!r} -> {states.labels[y]!r}"
                    )
        self.states = states
        self.p = p
        self.sojourns = dict(sojourns)

    @property
    def n_states(self) -> int:
        return self.states.size

    def emc(self) -> np.ndarray:
        return self.p.copy()

    def density(self, x: int, y: int, t) -> np.ndarray:
        w = self.p[x, y]
        if w == 0:
            return np.zeros_like(np.asarray(t, dtype=np.float64))
        return w * self.sojourns[(x, y)].pdf(t)

    def sqrt_density(self, x: int, y: int, t) -> np.ndarray:
        w = self.p[x, y]
        if w == 0:
            return np.zeros_like(np.asarray(t, dtype=np.float64))
        return math.sqrt(w) * np.sqrt(self.sojourns[(x, y)].pdf(t))

    def tail_cut(self, eps: float = 1e-13) -> float:
        return max(s.tail_cut(eps) for s in self.sojourns.values())

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.p.tobytes())
        for (x, y), s in sorted(self.sojourns.items()):
            h.update(f"{x},{y},{s.kind},{s.params}".encode())
        return h.hexdigest()[:12]

    def __repr__(self) -> str:
        return f"ContinuousSmk(states={self.states.labels})"


@dataclass(frozen=True)
class MinorizationConstants:
    """Envelopes of the jump chain: ``avg_{u<=k} P^(u) >= nu_star`` and
    ``P^(l) <= eta_star`` componentwise over columns."""

    k: int
    l: int
    nu_star: np.ndarray
    eta_star: np.ndarray
    vacuous: bool

    @property
    def kappa(self) -> int:
        return self.k + self.l

    @property
    def nu_mass(self) -> float:
        return float(self.nu_star.sum())

    @property
    def eta_mass(self) -> float:
        return float(self.eta_star.sum())


@dataclass(frozen=True)
class StationaryPair:
    """Stationary law ``rho`` of the jump chain and, for discrete kernels,
    the stationary (state, sojourn) table ``rho_tilde[y, k-1]``."""

    rho: np.ndarray
    table: np.ndarray | None
    residual: float
    contraction_residual: float

    @property
    def mass(self) -> float:
        return float(self.rho.sum() if self.table is None else self.table.sum())


@dataclass(frozen=True)
class MeanSojourn:
    per_state: np.ndarray
    rho_weighted: float


@dataclass(frozen=True)
class AssumptionReport:
    """Structural diagnostics; informative, never raising."""

    a1_irreducible: bool
    a1_aperiodic: bool
    period: int
    a2_finite_mean: bool
    a3_nondegenerate: bool
    mean_sojourn: float
    witnesses: dict[str, str] = field(default_factory=dict)

    @property
    def a1(self) -> bool:
        return self.a1_irreducible and self.a1_aperiodic

    @property
    def ok(self) -> bool:
        return self.a1 and self.a2_finite_mean and self.a3_nondegenerate

    def lines(self) -> list[str]:
        out = [
            f"A1 irreducible: {'ok' if self.a1_irreducible else 'VIOLATED'}",
            f"A1 aperiodic:   {'ok' if self.a1_aperiodic else 'VIOLATED'} (period {self.period})",
            f"A2 finite mean: {'ok' if self.a2_finite_mean else 'VIOLATED'}"
            f" (rho-weighted mean sojourn {self.mean_sojourn:.6g})",
            f"A3 sojourns:    {'ok' if self.a3_nondegenerate else 'VIOLATED'}",
        ]
        for key, msg in sorted(self.witnesses.items()):
            out.append(f"  witness[{key}]: {msg}")
        return out


# ---------------------------------------------------------------------------
# embedded-chain analysis


def n_step_transition(p, n: int) -> np.ndarray:
    """n-step transition matrix; n = 0 gives the identity."""
    p = _as_matrix(p, "transition matrix")
    if n < 0:
        raise ValidationError("step count must be >= 0")
    return np.linalg.matrix_power(p, n)


def _support_graph(p: np.ndarray) -> np.ndarray:
    return (p > 0).astype(np.int8)


def _is_strongly_connected(p: np.ndarray) -> bool:
    n, _ = connected_components(_support_graph(p), directed=True, connection="strong")
    return n == 1


def _period(p: np.ndarray) -> int:
    """Period of a strongly connected transition digraph (gcd of cycle lengths)."""
    adj = [np.flatnonzero(p[x] > 0) for x in range(p.shape[0])]
    level = np.full(p.shape[0], -1, dtype=np.int64)
    level[0] = 0
    queue = [0]
    while queue:
        u = queue.pop()
        for v in adj[u]:
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(int(v))
    g = 0
    for u in range(p.shape[0]):
        for v in adj[u]:
            g = math.gcd(g, abs(int(level[u]) + 1 - int(level[v])))
    return g if g > 0 else 1


def stationary_emc(p) -> np.ndarray:
    """Stationary law of a transition matrix.

    Direct linear solve up to 64 states, power iteration above.  Raises
    ``ValidationError`` for a reducible chain, ``NumericError`` when the
    solver fails to meet the 1e-10 residual.
    """
    p = _as_matrix(p, "transition matrix")
    _check_stochastic(p, "transition matrix")
    if not _is_strongly_connected(p):
        n_comp, labels = connected_components(
            _support_graph(p), directed=True, connection="strong"
        )
        raise ValidationError(
            f"reducible EMC: {n_comp} strongly connected components {labels.tolist()}"
        )
    s = p.shape[0]
    if s <= DIRECT_SOLVE_MAX_STATES:
        a = p.T - np.eye(s)
        a[-1, :] = 1.0
        b = np.zeros(s)
        b[-1] = 1.0
        try:
            rho = np.linalg.solve(a, b)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"stationary solve failed: {exc}") from exc
    else:
        rho = np.full(s, 1.0 / s)
        for _ in range(200_000):
            nxt = rho @ p
            nxt /= nxt.sum()
            if np.max(np.abs(nxt - rho)) < 1e-15:
                rho = nxt
                break
            rho = nxt
        else:
            raise NumericError("stationary power iteration did not converge")
    rho = np.clip(rho, 0.0, None)
    rho /= rho.sum()
    residual = float(np.max(np.abs(rho @ p - rho)))
    if residual > STATIONARY_TOL:
        raise NumericError(f"stationary residual {residual:.3e} above {STATIONARY_TOL:g}")
    return rho


def stationary_pair(smk) -> StationaryPair:
    """Stationary law of the (state, sojourn) pair.

    Discrete: builds the table ``rho_tilde[y, k-1] = sum_x rho[x] q[x, y, k]``
    and verifies the contraction ``rho_tilde Q = rho_tilde`` to 1e-10.
    Continuous: the sojourn factor cancels in the contraction, so only the
    jump-chain fixed point is checked.
    """
    p = smk.emc()
    rho = stationary_emc(p)
    residual = float(np.max(np.abs(rho @ p - rho)))
    if isinstance(smk, DiscreteSmk):
        table = np.einsum("x,xyk->yk", rho, smk.table)
        marg = table.sum(axis=1)  # equals rho @ P = rho
        back = np.einsum("y,yzk->zk", marg, smk.table)
        contraction = float(np.max(np.abs(back - table)))
        if contraction > STATIONARY_TOL:
            raise NumericError(
                f"stationary pair contraction residual {contraction:.3e}"
            )
        return StationaryPair(rho=rho, table=table, residual=residual,
                              contraction_residual=contraction)
    return StationaryPair(rho=rho, table=None, residual=residual,
                          contraction_residual=residual)


def mean_sojourn(smk) -> MeanSojourn:
    """Per-state mean sojourn and its stationary average."""
    if isinstance(smk, DiscreteSmk):
        ks = np.arange(1, smk.k_max + 1, dtype=np.float64)
        per_state = smk.sojourn_pmf() @ ks
    else:
        per_state = np.zeros(smk.n_states)
        for x in range(smk.n_states):
            acc = 0.0
            for y in range(smk.n_states):
                if smk.p[x, y] > 0:
                    acc += smk.p[x, y] * smk.sojourns[(x, y)].mean()
            per_state[x] = acc
    rho = stationary_emc(smk.emc())
    return MeanSojourn(per_state=per_state, rho_weighted=float(rho @ per_state))


def minorization(p, k: int, l: int) -> MinorizationConstants:
    """Column envelopes of the chain.

    ``nu_star[y] = min_x (1/k) sum_{u<=k} P^(u)[x, y]`` and
    ``eta_star[y] = max_x P^(l)[x, y]``.  A zero-mass ``nu_star`` is flagged
    vacuous rather than rejected.
    """
    p = _as_matrix(p, "transition matrix")
    _check_stochastic(p, "transition matrix")
    if k < 1 or l < 1:
        raise ValidationError("minorization needs k >= 1 and l >= 1")
    acc = np.zeros_like(p)
    pu = np.eye(p.shape[0])
    for _ in range(k):
        pu = pu @ p
        acc += pu
    acc /= k
    nu_star = acc.min(axis=0)
    eta_star = np.linalg.matrix_power(p, l).max(axis=0)
    return MinorizationConstants(
        k=k, l=l, nu_star=nu_star, eta_star=eta_star,
        vacuous=bool(nu_star.sum() <= 0.0),
    )


def smallest_k_with_mass(p, k_limit: int = 64) -> int:
    """Smallest k whose k-step average has a positive column envelope."""
    p = _as_matrix(p, "transition matrix")
    acc = np.zeros_like(p)
    pu = np.eye(p.shape[0])
    for k in range(1, k_limit + 1):
        pu = pu @ p
        acc += pu
        if (acc / k).min(axis=0).sum() > 0:
            return k
    raise ValidationError(f"no k <= {k_limit} yields a non-vacuous minorization")


def validate_assumptions(smk) -> AssumptionReport:
    """Check ergodicity of the jump chain, finite mean sojourn and
    non-degenerate sojourns; collects witnesses, never raises."""
    p = smk.emc()
    witnesses: dict[str, str] = {}
    irreducible = _is_strongly_connected(p)
    if irreducible:
        period = _period(p)
    else:
        period = 0
        n_comp, labels = connected_components(
            _support_graph(p), directed=True, connection="strong"
        )
        witnesses["a1_irreducible"] = (
            f"{n_comp} strongly connected components: {labels.tolist()}"
        )
    aperiodic = irreducible and period == 1
    if irreducible and not aperiodic:
        witnesses["a1_aperiodic"] = f"jump chain has period {period}"

    if irreducible:
        ms = mean_sojourn(smk)
        mean_val = ms.rho_weighted
        a2 = bool(np.all(np.isfinite(ms.per_state)))
    else:
        mean_val = float("nan")
        a2 = False
        witnesses["a2"] = "stationary law undefined on a reducible chain"

    a3 = True
    if isinstance(smk, DiscreteSmk):
        marg = smk.sojourn_pmf()
        for x in range(smk.n_states):
            positive = np.flatnonzero(marg[x] > 1e-15)
            if positive.size == 1:
                a3 = False
                witnesses["a3"] = (
                    f"state {smk.states.labels[x]!r} sojourn is a point mass at "
                    f"k={int(positive[0]) + 1}"
                )
                break
    return AssumptionReport(
        a1_irreducible=irreducible,
        a1_aperiodic=aperiodic,
        period=period,
        a2_finite_mean=a2,
        a3_nondegenerate=a3,
        mean_sojourn=mean_val,
        witnesses=witnesses,
    )


# ---------------------------------------------------------------------------
# Markov embeddings and named families


def embed_markov_discrete(p_tilde, k_max: int, states: StateSpace | None = None) -> DiscreteSmk:
    """Semi-Markov representation of a discrete Markov chain.

    Jumps are state changes: ``q[x, y, k] = p[x, y] * p[x, x]^(k-1)`` for
    ``y != x`` (geometric sojourns); the tail beyond ``k_max`` is folded into
    the last cell so rows stay stochastic.
    """
    p = _as_matrix(p_tilde, "Markov matrix")
    _check_stochastic(p, "Markov matrix")
    if states is None:
        states = default_states(p.shape[0])
    if states.size != p.shape[0]:
        raise ValidationError("state space does not match Markov matrix")
    if k_max < 1:
        raise ValidationError("k_max must be >= 1")
    diag = np.diag(p)
    if np.any(diag >= 1.0):
        x = int(np.argmax(diag))
        raise ValidationError(
            f"absorbing state {states.labels[x]!r}: p[x,x]=1 has no geometric sojourn"
        )
    s = p.shape[0]
    table = np.zeros((s, s, k_max))
    for x in range(s):
        a = diag[x]
        geo = a ** np.arange(k_max, dtype=np.float64)
        geo[-1] = a ** (k_max - 1) / (1.0 - a)  # folded tail
        off = p[x].copy()
        off[x] = 0.0
        table[x] = off[:, None] * geo[None, :]
    return DiscreteSmk(states, table)


def embed_markov_continuous(generator, states: StateSpace | None = None) -> ContinuousSmk:
    """Semi-Markov representation of a continuous Markov jump process.

    From a generator matrix ``A``: jump matrix ``p(x, y) = a_xy / a_x`` off
    the diagonal with ``a_x = -a_xx``, exponential(a_x) sojourns.
    """
    a = _as_matrix(generator, "generator matrix")
    if states is None:
        states = default_states(a.shape[0])
    if states.size != a.shape[0]:
        raise ValidationError("state space does not match generator")
    s = a.shape[0]
    off = a.copy()
    np.fill_diagonal(off, 0.0)
    if np.any(off < 0):
        raise ValidationError("generator off-diagonal entries must be >= 0")
    if np.any(np.abs(a.sum(axis=1)) > ROW_SUM_TOL):
        raise ValidationError("generator rows must sum to 0")
    rates = -np.diag(a)
    if np.any(rates <= 0):
        x = int(np.argmin(rates))
        raise ValidationError(f"absorbing state {states.labels[x]!r}: zero exit rate")
    p = off / rates[:, None]
    sojourns = {
        (x, y): Sojourn.exponential(rates[x])
        for x in range(s)
        for y in range(s)
        if p[x, y] > 0
    }
    return ContinuousSmk(states, p, sojourns)


def geometric_sojourn_pmf(stay: float, k_max: int) -> np.ndarray:
    """Geometric(1-stay) pmf on 1..k_max with folded tail."""
    if not 0.0 <= stay < 1.0:
        raise ValidationError("stay probability must be in [0, 1)")
    if k_max < 1:
        raise ValidationError("k_max must be >= 1")
    g = (1.0 - stay) * stay ** np.arange(k_max, dtype=np.float64)
    g[-1] = stay ** (k_max - 1)
    return g


def discrete_weibull_pmf(shape: float, scale: float, k_max: int) -> np.ndarray:
    """Survival-difference discretization of Weibull(shape, scale) on
    1..k_max with folded tail."""
    if shape <= 0 or scale <= 0:
        raise ValidationError("Weibull parameters must be positive")
    ks = np.arange(0, k_max + 1, dtype=np.float64)
    surv = np.exp(-((ks / scale) ** shape))
    pmf = surv[:-1] - surv[1:]
    pmf[-1] = surv[-2]
    return pmf


def product_smk(emc, sojourn_pmf, states: StateSpace | None = None) -> DiscreteSmk:
    """Kernel with independent destination and sojourn, ``q = p(x,y) g_x(k)``."""
    p = _as_matrix(emc, "EMC matrix")
    _check_stochastic(p, "EMC matrix")
    g = np.asarray(sojourn_pmf, dtype=np.float64)
    if g.ndim == 1:
        g = np.broadcast_to(g, (p.shape[0], g.shape[0])).copy()
    if g.shape[0] != p.shape[0]:
        raise ValidationError("sojourn pmf does not match state count")
    if states is None:
        states = default_states(p.shape[0])
    table = p[:, :, None] * g[:, None, :]
    return DiscreteSmk(states, table)


def geometric_smk(stay: float, k_max: int, n_states: int = 2) -> DiscreteSmk:
    """Symmetric geometric-sojourn kernel with parameter ``stay``.

    The jump matrix keeps mass ``stay`` on the diagonal and spreads the rest
    uniformly; the common sojourn law is geometric(1 - stay) folded at
    ``k_max``.
    """
    if n_states < 2:
        raise ValidationError("need at least 2 states")
    if not 0.0 < stay < 1.0:
        raise ValidationError("stay probability must be in (0, 1)")
    p = np.full((n_states, n_states), (1.0 - stay) / (n_states - 1))
    np.fill_diagonal(p, stay)
    return product_smk(p, geometric_sojourn_pmf(stay, k_max))


def discrete_weibull_smk(emc, shape: float, scale: float, k_max: int,
                         states: StateSpace | None = None) -> DiscreteSmk:
    """Kernel with discretized Weibull sojourns shared across states."""
    return product_smk(emc, discrete_weibull_pmf(shape, scale, k_max), states)


def random_smk(n_states: int, k_max: int, rng: np.random.Generator) -> DiscreteSmk:
    """Full-support kernel with Dirichlet(1) rows; irreducible a.s."""
    g = rng.gamma(1.0, size=(n_states, n_states * k_max))
    g /= g.sum(axis=1, keepdims=True)
    return DiscreteSmk(default_states(n_states), g.reshape(n_states, n_states, k_max))


def random_continuous_smk(n_states: int, rng: np.random.Generator) -> ContinuousSmk:
    """Full-support continuous kernel with random parametric sojourns."""
    g = rng.gamma(1.0, size=(n_states, n_states))
    p = g / g.sum(axis=1, keepdims=True)
    kinds = ("exponential", "weibull", "gamma")
    sojourns = {}
    for x in range(n_states):
        for y in range(n_states):
            kind = kinds[int(rng.integers(0, 3))]
            if kind == "exponential":
                sojourns[(x, y)] = Sojourn.exponential(rng.uniform(0.3, 3.0))
            elif kind == "weibull":
                sojourns[(x, y)] = Sojourn.weibull(rng.uniform(0.6, 2.5), rng.uniform(0.3, 3.0))
            else:
                sojourns[(x, y)] = Sojourn.gamma(rng.uniform(0.6, 3.0), rng.uniform(0.3, 3.0))
    return ContinuousSmk(default_states(n_states), p, sojourns)


# ---------------------------------------------------------------------------
# kernel file format


@dataclass(frozen=True)
class RowAdjustment:
    """Renormalization applied by the loader to a nearly-stochastic row."""

    state: str
    deviation: float


@dataclass(frozen=True)
class KernelDocument:
    kernel: "DiscreteSmk | ContinuousSmk"
    adjustments: tuple[RowAdjustment, ...]


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_kernel(smk, path) -> None:
    """Serialize a kernel; floats carry 17 significant digits."""
    lines = ["# semimarkov kernel v1", f"states = {' '.join(smk.states.labels)}"]
    if isinstance(smk, DiscreteSmk):
        lines.append("kind = discrete")
        lines.append(f"k_max = {smk.k_max}")
        flat = smk.flat()
        for x, lab in enumerate(smk.states.labels):
            lines.append(f"q {lab} = " + " ".join(_fmt(v) for v in flat[x]))
    else:
        lines.append("kind = continuous")
        for x, lab in enumerate(smk.states.labels):
            lines.append(f"p {lab} = " + " ".join(_fmt(v) for v in smk.p[x]))
        for (x, y), s in sorted(smk.sojourns.items()):
            lines.append(
                f"family {smk.states.labels[x]} {smk.states.labels[y]} = "
                f"{s.kind} " + " ".join(_fmt(v) for v in s.params)
            )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_kernel(path) -> KernelDocument:
    """Parse a kernel file.

    Rows off stochastic by more than 1e-9 are rejected; smaller deviations
    are renormalized and recorded in the returned document.
    """
    fields: dict[str, str] = {}
    q_rows: dict[str, list[float]] = {}
    p_rows: dict[str, list[float]] = {}
    families: list[tuple[str, str, str, list[float]]] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key_parts = key.split()
            value = value.strip()
            try:
                if key_parts[0] == "q" and len(key_parts) == 2:
                    q_rows[key_parts[1]] = [float(v) for v in value.split()]
                elif key_parts[0] == "p" and len(key_parts) == 2:
                    p_rows[key_parts[1]] = [float(v) for v in value.split()]
                elif key_parts[0] == "family" and len(key_parts) == 3:
                    kind, *params = value.split()
                    families.append((key_parts[1], key_parts[2], kind,
                                     [float(v) for v in params]))
                elif len(key_parts) == 1:
                    fields[key_parts[0]] = value
                else:
                    raise ValidationError(f"{path}:{lineno}: unknown key {key.strip()!r}")
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
    for need in ("states", "kind"):
        if need not in fields:
            raise ValidationError(f"{path}: missing field {need!r}")
    states = StateSpace(tuple(fields["states"].split()))
    kind = fields["kind"]
    adjustments: list[RowAdjustment] = []

    def _normalize(row: np.ndarray, label: str) -> np.ndarray:
        total = row.sum()
        if not np.isfinite(total) or np.any(row < 0):
            raise ValidationError(f"{path}: row {label!r} has invalid entries")
        dev = abs(total - 1.0)
        if dev > LOADER_ROW_TOL:
            raise ValidationError(
                f"{path}: row {label!r} sums to 1{total - 1.0:+.3e}, beyond {LOADER_ROW_TOL:g}"
            )
        if dev > ROW_SUM_TOL:
            adjustments.append(RowAdjustment(state=label, deviation=float(total - 1.0)))
            row = row / total
        return row

    if kind == "discrete":
        if "k_max" not in fields:
            raise ValidationError(f"{path}: discrete kernel needs k_max")
        k_max = int(fields["k_max"])
        n_cells = states.size * k_max
        table = np.zeros((states.size, states.size, k_max))
        for lab in states.labels:
            if lab not in q_rows:
                raise ValidationError(f"{path}: missing row 'q {lab}'")
            row = np.asarray(q_rows[lab], dtype=np.float64)
            if row.shape[0] != n_cells:
                raise ValidationError(
                    f"{path}: row 'q {lab}' has {row.shape[0]} entries, expected {n_cells}"
                )
            table[states.index(lab)] = _normalize(row, lab).reshape(states.size, k_max)
        return KernelDocument(DiscreteSmk(states, table), tuple(adjustments))
    if kind == "continuous":
        p = np.zeros((states.size, states.size))
        for lab in states.labels:
            if lab not in p_rows:
                raise ValidationError(f"{path}: missing row 'p {lab}'")
            row = np.asarray(p_rows[lab], dtype=np.float64)
            if row.shape[0] != states.size:
                raise ValidationError(f"{path}: row 'p {lab}' has wrong length")
            p[states.index(lab)] = _normalize(row, lab)
        sojourns = {}
        for from_lab, to_lab, fam_kind, params in families:
            sojourns[(states.index(from_lab), states.index(to_lab))] = Sojourn(
                fam_kind, tuple(params)
            )
        return KernelDocument(ContinuousSmk(states, p, sojourns), tuple(adjustments))
    raise ValidationError(f"{path}: kind must be discrete or continuous, got {kind!r}")
