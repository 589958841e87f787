"""Conjugate Dirichlet inference over discrete semi-Markov kernels.

Each state carries an independent Dirichlet over its |E|*k_max transition
cells, so the posterior after a trajectory is the prior plus the integer
cell tallies and posterior draws are exact (no MCMC).  On top of that sit
the three empirical checks of the concentration machinery: prior mass of
KL neighborhoods, complement mass of a floor sieve, and the posterior mass
outside shrinking d_nu* balls around the data-generating kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _rng
from .kernel import DiscreteSmk, StateSpace, ValidationError, minorization
from .simulate import Trajectory, batch_trajectories, kl_v0_exact_batch, transition_cell_counts

_Z99 = 2.5758293035489004


def eps_default(n: int) -> float:
    """sqrt(log n / n), the default shrinking-radius rule."""
    if n < 2:
        raise ValidationError("the radius rule needs n >= 2")
    return math.sqrt(math.log(n) / n)


@dataclass(frozen=True)
class DirichletSmkPrior:
    states: StateSpace
    k_max: int
    concentration: np.ndarray  # (S, S*k_max), strictly positive

    def __post_init__(self) -> None:
        conc = np.asarray(self.concentration, dtype=np.float64)
        object.__setattr__(self, "concentration", conc)
        s = self.states.size
        if self.k_max < 1:
            raise ValidationError("k_max must be at least 1")
        if conc.shape != (s, s * self.k_max):
            raise ValidationError(
                f"concentration must have shape ({s}, {s * self.k_max}), got {conc.shape}")
        if not np.all(conc > 0.0) or not np.all(np.isfinite(conc)):
            raise ValidationError("concentration entries must be finite and positive")

    @classmethod
    def constant(cls, states: StateSpace, k_max: int, value: float = 1.0) -> "DirichletSmkPrior":
        s = states.size
        return cls(states, k_max, np.full((s, s * k_max), float(value)))

    @classmethod
    def uniform(cls, states: StateSpace, k_max: int) -> "DirichletSmkPrior":
        return cls.constant(states, k_max, 1.0)

    @property
    def n_cells(self) -> int:
        return self.states.size * self.k_max

    def sample_tables(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return _dirichlet_tables(self.concentration, count, rng)

    def sample(self, count: int, seed: int) -> list[DiscreteSmk]:
        rng = _rng.substream(seed, _rng.TAG_PRIOR, 0)
        return [_table_kernel(self.states, self.k_max, t)
                for t in self.sample_tables(count, rng)]


@dataclass(frozen=True)
class DirichletSmkPosterior:
    states: StateSpace
    k_max: int
    prior_concentration: np.ndarray
    counts: np.ndarray  # (S, S*k_max) int64 transition tallies

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts)
        if counts.shape != self.prior_concentration.shape:
            raise ValidationError("counts and prior concentration shapes differ")
        if counts.dtype.kind not in "iu" or counts.min(initial=0) < 0:
            raise ValidationError("counts must be nonnegative integers")
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @property
    def concentration(self) -> np.ndarray:
        return self.prior_concentration + self.counts

    @property
    def visits(self) -> np.ndarray:
        """Number of departures tallied from each state."""
        return self.counts.sum(axis=1)

    def sample_tables(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return _dirichlet_tables(self.concentration, count, rng)

    def sample(self, count: int, seed: int) -> list[DiscreteSmk]:
        rng = _rng.substream(seed, _rng.TAG_POSTERIOR, 0)
        return [_table_kernel(self.states, self.k_max, t)
                for t in self.sample_tables(count, rng)]

    def mean_kernel(self) -> DiscreteSmk:
        conc = self.concentration
        return _table_kernel(self.states, self.k_max, conc / conc.sum(axis=1, keepdims=True))


def _dirichlet_tables(conc: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    if count < 1:
        raise ValidationError("count must be at least 1")
    g = rng.gamma(shape=conc[None, :, :], size=(count, *conc.shape))
    return g / g.sum(axis=2, keepdims=True)


def _table_kernel(states: StateSpace, k_max: int, flat: np.ndarray) -> DiscreteSmk:
    s = states.size
    table = np.asarray(flat, dtype=np.float64).reshape(s, s, k_max)
    table = table / table.sum(axis=(1, 2), keepdims=True)
    return DiscreteSmk(states, table)


def posterior_update(prior: DirichletSmkPrior, traj: Trajectory) -> DirichletSmkPosterior:
    """Add the trajectory's transition tallies to the prior concentration."""
    if traj.state_space.labels != prior.states.labels:
        raise ValidationError("trajectory and prior state spaces differ")
    try:
        counts = transition_cell_counts(traj, prior.k_max)
    except ValidationError as exc:
        raise ValidationError(f"trajectory exceeds prior support: {exc}") from None
    return DirichletSmkPosterior(states=prior.states, k_max=prior.k_max,
                                 prior_concentration=prior.concentration, counts=counts)


def posterior_sample(posterior: DirichletSmkPosterior, seed: int, count: int
                     ) -> list[DiscreteSmk]:
    return posterior.sample(count, seed)


# ---------------------------------------------------------------------------
# mass estimates


@dataclass(frozen=True)
class MassEstimate:
    mass: float
    se: float
    ci_half_width: float
    mc_samples: int
    method: str


def _binomial_estimate(hits: int, draws: int, method: str) -> MassEstimate:
    p = hits / draws
    se = math.sqrt(p * (1.0 - p) / draws)
    return MassEstimate(mass=p, se=se, ci_half_width=_Z99 * se,
                        mc_samples=draws, method=method)


def prior_mass_kl(prior: DirichletSmkPrior, q0: DiscreteSmk, eps: float, n: int,
                  mc_samples: int = 2000, seed: int = 0) -> MassEstimate:
    """MC estimate of the prior mass of {q : KL <= n eps^2, V0 <= n eps^2}.

    Membership is evaluated exactly per draw (no inner simulation), so the
    only noise is the Dirichlet sampling itself.
    """
    if q0.states.labels != prior.states.labels or q0.k_max != prior.k_max:
        raise ValidationError("q0 does not live on the prior's support grid")
    if eps <= 0:
        raise ValidationError("eps must be positive")
    rng = _rng.substream(seed, _rng.TAG_PRIOR, 1)
    flat = prior.sample_tables(mc_samples, rng)
    s = prior.states.size
    tables = flat.reshape(mc_samples, s, s, prior.k_max)
    kl, v0 = kl_v0_exact_batch(q0, tables, n)
    limit = n * eps * eps
    hits = int(np.sum((kl <= limit) & (v0 <= limit)))
    return _binomial_estimate(hits, mc_samples, "mc")


def h3_threshold(c: float, n: int, eps_n: float) -> float:
    return math.exp(-c * n * eps_n * eps_n)


def h4_bound(c: float, n: int, eps_n: float) -> float:
    return math.exp(-2.0 * (c + 1.0) * n * eps_n * eps_n)


def default_floor(c: float, n: int, eps_n: float, n_states: int, n_cells: int) -> float:
    """Cell floor delta_n making the sieve complement clear the target bound:
    the union bound gives complement ~ S * C * (C-1) * delta."""
    return h4_bound(c, n, eps_n) / (n_states * n_cells * n_cells)


def sieve_mass(prior: DirichletSmkPrior, floor: float | None = None,
               predicate: Callable[[np.ndarray], np.ndarray] | None = None,
               mc_samples: int = 2000, seed: int = 0,
               method: str = "auto") -> MassEstimate:
    """Prior mass OUTSIDE the sieve.

    The default sieve keeps kernels with every cell >= floor.  For that
    sieve under an all-ones concentration the mass is exact:
    per state, P(min cell >= delta) = (1 - C delta)_+^(C-1).
    """
    if (floor is None) == (predicate is None):
        raise ValidationError("give exactly one of floor or predicate")
    if floor is not None and not 0.0 <= floor < 1.0:
        raise ValidationError("floor must lie in [0, 1)")
    exact_ok = (floor is not None
                and np.all(prior.concentration == 1.0))
    if method == "exact" and not exact_ok:
        raise ValidationError("exact sieve mass needs a floor sieve and an all-ones prior")
    if method not in ("auto", "exact", "mc"):
        raise ValidationError(f"unknown sieve method {method!r}")
    if method in ("auto", "exact") and exact_ok:
        c = prior.n_cells
        inside_one = max(0.0, 1.0 - c * floor) ** (c - 1)
        inside = inside_one ** prior.states.size
        return MassEstimate(mass=1.0 - inside, se=0.0, ci_half_width=0.0,
                            mc_samples=0, method="exact")
    rng = _rng.substream(seed, _rng.TAG_SIEVE, 0)
    flat = prior.sample_tables(mc_samples, rng)
    if floor is not None:
        inside_mask = np.all(flat >= floor, axis=(1, 2))
    else:
        inside_mask = np.asarray(predicate(flat), dtype=bool)
        if inside_mask.shape != (mc_samples,):
            raise ValidationError("sieve predicate must return one flag per sample")
    return _binomial_estimate(int(np.sum(~inside_mask)), mc_samples, "mc")


# ---------------------------------------------------------------------------
# feasibility of the mass conditions


@dataclass(frozen=True)
class FeasibilityRow:
    n: int
    eps_n: float
    c: float
    kl_mass: float
    kl_mass_ci: float
    h3_threshold: float
    h3_ok: bool
    floor: float
    sieve_complement: float
    h4_bound: float
    h4_ok: bool


@dataclass(frozen=True)
class FeasibilityReport:
    rows: tuple[FeasibilityRow, ...]
    feasible_c: tuple[float, ...]
    mc_samples: int


def feasibility_report(prior: DirichletSmkPrior, q0: DiscreteSmk,
                       n_values: Sequence[int], c_grid: Sequence[float],
                       mc_samples: int = 2000, seed: int = 0,
                       eps_rule: Callable[[int], float] = eps_default
                       ) -> FeasibilityReport:
    """Search the shared constant c: the prior must put at least e^{-c n eps^2}
    mass on the KL neighborhood while the floor sieve built from the same c
    leaves at most e^{-2(c+1) n eps^2} outside.  The feasible set may be
    empty and is reported as found."""
    rows: list[FeasibilityRow] = []
    ok_by_c = {float(c): True for c in c_grid}
    for i_n, n in enumerate(n_values):
        n = int(n)
        eps_n = eps_rule(n)
        est = prior_mass_kl(prior, q0, eps_n, n, mc_samples, seed + i_n)
        for c in c_grid:
            c = float(c)
            thr = h3_threshold(c, n, eps_n)
            h3_ok = est.mass > thr
            delta = default_floor(c, n, eps_n, prior.states.size, prior.n_cells)
            comp = sieve_mass(prior, floor=delta, mc_samples=mc_samples, seed=seed)
            bound = h4_bound(c, n, eps_n)
            h4_ok = comp.mass <= bound
            ok_by_c[c] = ok_by_c[c] and h3_ok and h4_ok
            rows.append(FeasibilityRow(
                n=n, eps_n=eps_n, c=c, kl_mass=est.mass, kl_mass_ci=est.ci_half_width,
                h3_threshold=thr, h3_ok=h3_ok, floor=delta,
                sieve_complement=comp.mass, h4_bound=bound, h4_ok=h4_ok))
    feasible = tuple(c for c, ok in ok_by_c.items() if ok)
    return FeasibilityReport(rows=tuple(rows), feasible_c=feasible, mc_samples=mc_samples)


# ---------------------------------------------------------------------------
# posterior concentration curve


@dataclass(frozen=True)
class CurveRow:
    n: int
    eps_n: float
    m: float
    posterior_mass_outside: float
    mc_samples: int
    ci_half_width: float
    replications: int


@dataclass(frozen=True)
class ConcentrationCurve:
    rows: tuple[CurveRow, ...]
    nu_star: np.ndarray
    seed: int

    def for_m(self, m: float) -> list[CurveRow]:
        return [r for r in self.rows if r.m == m]

    def final_mass(self, m: float) -> float:
        rows = self.for_m(m)
        return rows[-1].posterior_mass_outside if rows else float("nan")

    def nonincreasing(self, m: float, slack: float = 0.0) -> bool:
        """Trend check: each row may exceed its predecessor by at most the
        combined CI half-widths plus slack."""
        rows = self.for_m(m)
        for a, b in zip(rows, rows[1:]):
            if b.posterior_mass_outside > a.posterior_mass_outside \
                    + a.ci_half_width + b.ci_half_width + slack:
                return False
        return True


def _counts_from_cells(j0: int, cells: np.ndarray, s: int, k_max: int) -> np.ndarray:
    src = np.concatenate([[j0], cells[:-1] // k_max])
    counts = np.zeros((s, s * k_max), dtype=np.int64)
    np.add.at(counts, (src, cells), 1)
    return counts


def concentration_curve(q0: DiscreteSmk, prior: DirichletSmkPrior,
                        n_values: Sequence[int], m_values: Sequence[float],
                        replications: int = 20, mc_samples: int = 500,
                        seed: int = 0,
                        eps_rule: Callable[[int], float] = eps_default,
                        nu_star: np.ndarray | None = None) -> ConcentrationCurve:
    """Posterior mass outside d_nu* balls of radius M eps_n around q0.

    For each n, ``replications`` trajectories are drawn under q0; each yields
    an exact posterior, ``mc_samples`` posterior draws and the fraction at
    distance > M eps_n.  Rows average over replications with a normal CI on
    that outer average.
    """
    if q0.states.labels != prior.states.labels or q0.k_max != prior.k_max:
        raise ValidationError("q0 does not live on the prior's support grid")
    if replications < 2:
        raise ValidationError("need at least 2 replications for a CI")
    if any(m < 0 for m in m_values):
        raise ValidationError("M values must be nonnegative")
    if nu_star is None:
        nu_star = minorization(q0.emc(), 1, 1).nu_star
    nu_star = np.asarray(nu_star, dtype=np.float64)
    s, k_max = q0.n_states, q0.k_max
    root0 = np.sqrt(q0.flat())

    rows: list[CurveRow] = []
    for i_n, n in enumerate(n_values):
        n = int(n)
        eps_n = eps_rule(n)
        j0b, _, cellsb = batch_trajectories(q0, n, replications, seed,
                                            tag=_rng.TAG_TRAJECTORY, cell_index=i_n)
        fracs = {float(m): np.empty(replications) for m in m_values}
        for rep in range(replications):
            counts = _counts_from_cells(int(j0b[rep]), cellsb[rep], s, k_max)
            post = DirichletSmkPosterior(states=prior.states, k_max=k_max,
                                         prior_concentration=prior.concentration,
                                         counts=counts)
            rng = _rng.substream(seed, _rng.TAG_POSTERIOR, i_n, rep)
            flat = post.sample_tables(mc_samples, rng)
            diff = np.sqrt(flat) - root0[None]
            d = np.sqrt(np.einsum("dxc,dxc,x->d", diff, diff, 0.5 * nu_star))
            for m in m_values:
                fracs[float(m)][rep] = float(np.mean(d > m * eps_n))
        for m in m_values:
            m = float(m)
            vals = fracs[m]
            ci = _Z99 * float(np.std(vals, ddof=1)) / math.sqrt(replications)
            rows.append(CurveRow(n=n, eps_n=eps_n, m=m,
                                 posterior_mass_outside=float(np.mean(vals)),
                                 mc_samples=mc_samples, ci_half_width=ci,
                                 replications=replications))
    return ConcentrationCurve(rows=tuple(rows), nu_star=nu_star, seed=seed)


# ---------------------------------------------------------------------------
# CSV output


_CURVE_COLUMNS = ("n", "eps_n", "m", "posterior_mass_outside", "mc_samples",
                  "ci_half_width", "replications")
_FEAS_COLUMNS = ("n", "eps_n", "c", "kl_mass", "kl_mass_ci", "h3_threshold", "h3_ok",
                 "floor", "sieve_complement", "h4_bound", "h4_ok")


def _rows_to_csv(rows, columns, path) -> None:
    lines = [",".join(columns)]
    for row in rows:
        vals = []
        for col in columns:
            v = getattr(row, col)
            if isinstance(v, bool):
                vals.append("true" if v else "false")
            elif isinstance(v, float):
                vals.append(f"{v:.17g}")
            else:
                vals.append(str(v))
        lines.append(",".join(vals))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_curve_csv(curve: ConcentrationCurve, path) -> None:
    _rows_to_csv(curve.rows, _CURVE_COLUMNS, path)


def write_feasibility_csv(report: FeasibilityReport, path) -> None:
    _rows_to_csv(report.rows, _FEAS_COLUMNS, path)
