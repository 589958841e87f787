"""Hellinger geometry between semi-Markov kernels.

Squared Hellinger distance between two kernel rows at state x is
``h2(x) = 0.5 * sum (sqrt(q1) - sqrt(q2))^2`` (cells for discrete kernels,
a quadrature over sojourn time for continuous ones).  Weighting the profile
by a nonnegative measure ``mu`` over states gives the semi-distance
``d_mu^2 = sum_x mu(x) h2(x)`` used throughout the testing and posterior
code, with ``mu`` usually one of the minorization envelopes.

``least_favorable`` builds the rotated square-root mixture between a null
and an alternative: with ``alpha_x = arccos(1 - h2(q0_x, q1_x))`` and
``lam`` in (0, 1/4),

    sqrt(q2_x) = sin((1-lam) alpha_x)/sin(alpha_x) * sqrt(q1_x)
               + sin(lam alpha_x)/sin(alpha_x)     * sqrt(q0_x)

whose Hellinger affinities to both parents are exact cosines; the identity
suite checks those together with the sandwich inequalities and the bound
``sup sqrt(q0/q2) < 1/lam``.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad

from . import _rng
from .kernel import (
    ContinuousSmk,
    DiscreteSmk,
    NumericError,
    StateSpace,
    ValidationError,
    discrete_weibull_smk,
    geometric_smk,
    minorization,
    random_smk,
    smallest_k_with_mass,
)

ALPHA_FLOOR = 1e-8
_QUAD_OPTS = dict(epsabs=1e-13, epsrel=1e-11, limit=200)


def _is_continuous_like(k) -> bool:
    return hasattr(k, "sqrt_density")


def _check_comparable(k1, k2) -> None:
    if k1.states.labels != k2.states.labels:
        raise ValidationError("kernels live on different state spaces")
    d1, d2 = isinstance(k1, DiscreteSmk), isinstance(k2, DiscreteSmk)
    if d1 != d2:
        raise ValidationError("cannot mix discrete and continuous kernels in one metric")
    if d1 and k1.k_max != k2.k_max:
        raise ValidationError(f"kernels have different k_max ({k1.k_max} vs {k2.k_max})")


@dataclass(frozen=True)
class HellingerProfile:
    """Per-state squared Hellinger distances between two kernels."""

    h2: np.ndarray

    @property
    def affinity(self) -> np.ndarray:
        return 1.0 - self.h2


@dataclass(frozen=True)
class KernelSemiDistance:
    d: float
    d2: float
    per_state_h2: np.ndarray
    mu: np.ndarray


class SqrtCombinationSmk:
    """Continuous kernel defined through a pointwise square-root combination
    of two parents; densities are never refit."""

    def __init__(self, q0: ContinuousSmk, q1: ContinuousSmk,
                 c0: np.ndarray, c1: np.ndarray) -> None:
        self.states = q0.states
        self.q0 = q0
        self.q1 = q1
        self.c0 = np.asarray(c0, dtype=np.float64)
        self.c1 = np.asarray(c1, dtype=np.float64)

    @property
    def n_states(self) -> int:
        return self.states.size

    def sqrt_density(self, x: int, y: int, t) -> np.ndarray:
        return self.c1[x] * self.q1.sqrt_density(x, y, t) + self.c0[x] * self.q0.sqrt_density(
            x, y, t
        )

    def density(self, x: int, y: int, t) -> np.ndarray:
        s = self.sqrt_density(x, y, t)
        return s * s

    def tail_cut(self, eps: float = 1e-13) -> float:
        return max(self.q0.tail_cut(eps), self.q1.tail_cut(eps))

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(self.q0.digest().encode())
        h.update(self.q1.digest().encode())
        h.update(self.c0.tobytes())
        h.update(self.c1.tobytes())
        return h.hexdigest()[:12]


def _bc_continuous(k1, k2) -> np.ndarray:
    """Per-state Hellinger affinity of two continuous-like kernels."""
    s = k1.n_states
    upper = max(k1.tail_cut(), k2.tail_cut())
    bc = np.zeros(s)
    for x in range(s):
        acc = 0.0
        for y in range(s):

            def f(t, _x=x, _y=y):
                return float(k1.sqrt_density(_x, _y, t) * k2.sqrt_density(_x, _y, t))

            probe = max(f(0.5), f(1.0), f(2.0))
            if probe == 0.0 and f(0.1) == 0.0 and f(upper * 0.5) == 0.0:
                continue
            val, _ = quad(f, 0.0, upper, **_QUAD_OPTS)
            acc += val
        bc[x] = acc
    return bc


def hellinger_sq(k1, k2) -> HellingerProfile:
    """Per-state squared Hellinger distance (values clipped to [0, 1])."""
    if isinstance(k1, DiscreteSmk) and isinstance(k2, DiscreteSmk):
        _check_comparable(k1, k2)
        diff = np.sqrt(k1.flat()) - np.sqrt(k2.flat())
        h2 = 0.5 * np.einsum("xc,xc->x", diff, diff)
    elif _is_continuous_like(k1) and _is_continuous_like(k2):
        if k1.states.labels != k2.states.labels:
            raise ValidationError("kernels live on different state spaces")
        h2 = 1.0 - _bc_continuous(k1, k2)
    else:
        raise ValidationError("cannot mix discrete and continuous kernels in one metric")
    return HellingerProfile(h2=np.clip(h2, 0.0, 1.0))


def hellinger_affinity(k1, k2) -> np.ndarray:
    return hellinger_sq(k1, k2).affinity


def semi_distance(k1, k2, mu) -> KernelSemiDistance:
    """mu-weighted Hellinger semi-distance between kernels."""
    mu = np.asarray(mu, dtype=np.float64)
    if np.any(mu < 0) or not np.all(np.isfinite(mu)):
        raise ValidationError("weight measure must be finite and nonnegative")
    prof = hellinger_sq(k1, k2)
    if mu.shape != prof.h2.shape:
        raise ValidationError("weight measure does not match the state count")
    d2 = float(mu @ prof.h2)
    return KernelSemiDistance(d=math.sqrt(d2), d2=d2, per_state_h2=prof.h2, mu=mu.copy())


@dataclass(frozen=True)
class LeastFavorablePair:
    """Rotated square-root mixture between a null and an alternative."""

    lam: float
    alpha: np.ndarray
    h2_parents: np.ndarray
    q2: "DiscreteSmk | SqrtCombinationSmk"
    degenerate: np.ndarray
    q0: "DiscreteSmk | ContinuousSmk"
    q1: "DiscreteSmk | ContinuousSmk"

    @property
    def c1(self) -> np.ndarray:
        return _mixture_coeffs(self.alpha, self.lam)[1]

    @property
    def c0(self) -> np.ndarray:
        return _mixture_coeffs(self.alpha, self.lam)[0]


def _mixture_coeffs(alpha: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray]:
    c0 = np.zeros_like(alpha)
    c1 = np.ones_like(alpha)
    live = alpha >= ALPHA_FLOOR
    a = alpha[live]
    c1[live] = np.sin((1.0 - lam) * a) / np.sin(a)
    c0[live] = np.sin(lam * a) / np.sin(a)
    return c0, c1


def least_favorable(q0, q1, lam: float) -> LeastFavorablePair:
    """Build the mixture kernel q2 between q0 and q1 at mixing angle lam.

    ``lam`` must lie in the open interval (0, 1/4).  States where the
    parents coincide (alpha below 1e-8) degenerate to q2 = q1 and are
    flagged.
    """
    if not 0.0 < lam < 0.25:
        raise ValidationError(f"lam must be in (0, 1/4), got {lam}")
    _check_comparable(q0, q1)
    h2 = hellinger_sq(q0, q1).h2
    alpha = np.arccos(np.clip(1.0 - h2, -1.0, 1.0))
    degenerate = alpha < ALPHA_FLOOR
    c0, c1 = _mixture_coeffs(alpha, lam)
    if isinstance(q0, DiscreteSmk):
        root = c1[:, None] * np.sqrt(q1.flat()) + c0[:, None] * np.sqrt(q0.flat())
        table = (root * root).reshape(q0.table.shape)
        q2: DiscreteSmk | SqrtCombinationSmk = DiscreteSmk(q0.states, table)
    else:
        q2 = SqrtCombinationSmk(q0, q1, c0, c1)
    return LeastFavorablePair(
        lam=float(lam), alpha=alpha, h2_parents=h2, q2=q2,
        degenerate=degenerate, q0=q0, q1=q1,
    )


@dataclass(frozen=True)
class PhiBoundCheck:
    """Check of ``sup sqrt(q0/q2) < 1/lam`` over support cells."""

    max_ratio: float
    per_state: np.ndarray
    limit: float
    ok: bool


def phi_inverse_bound_check(pair: LeastFavorablePair) -> PhiBoundCheck:
    lam = pair.lam
    if isinstance(pair.q2, DiscreteSmk):
        a0 = pair.q0.flat()
        a2 = pair.q2.flat()
        support = a0 > 0.0
        ratio = np.zeros_like(a0)
        with np.errstate(divide="ignore"):
            ratio[support] = np.sqrt(a0[support] / a2[support])
        per_state = ratio.max(axis=1)
    else:
        # ratio r/(c1 + c0 r) in r = sqrt(q0/q1) increases to 1/c0; report
        # the per-state supremum of the functional
        c0, _ = _mixture_coeffs(pair.alpha, lam)
        per_state = np.where(pair.degenerate, 1.0, 1.0 / np.maximum(c0, 1e-300))
    max_ratio = float(per_state.max())
    return PhiBoundCheck(
        max_ratio=max_ratio, per_state=per_state, limit=1.0 / lam, ok=bool(max_ratio < 1.0 / lam)
    )


@dataclass(frozen=True)
class GSetResult:
    """Per-state membership in {x : h(q_x, q1_x) <= lam * h(q0_x, q1_x)}."""

    member: np.ndarray
    h_to_q1: np.ndarray
    threshold: np.ndarray

    @property
    def margins(self) -> np.ndarray:
        return self.threshold - self.h_to_q1


def g_set(q, q0, q1, lam: float) -> GSetResult:
    if not 0.0 < lam < 1.0:
        raise ValidationError(f"lam must be in (0, 1), got {lam}")
    h_q_q1 = np.sqrt(hellinger_sq(q, q1).h2)
    h_01 = np.sqrt(hellinger_sq(q0, q1).h2)
    thr = lam * h_01
    return GSetResult(member=h_q_q1 <= thr, h_to_q1=h_q_q1, threshold=thr)


# ---------------------------------------------------------------------------
# identity suite


@dataclass(frozen=True)
class IdentityReport:
    draws: int
    violations: tuple[str, ...]
    max_deviation: float
    elapsed_s: float

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_identities(seed: int = 7, draws: int = 1000, tol: float = 1e-10) -> IdentityReport:
    """Exercise the mixture identities on random kernel pairs.

    Each draw builds two Dirichlet(1)-row kernels (2-4 states, k_max 2-6),
    forms the mixture at lam cycling over {0.05, 0.1, 0.2} and checks, per
    state, the exact-cosine affinities, the sandwich inequalities, row
    stochasticity of q2 and the 1/lam ratio bound.
    """
    t0 = time.perf_counter()
    lams = (0.05, 0.1, 0.2)
    violations: list[str] = []
    worst = 0.0

    def record(idx: int, name: str, dev: float) -> None:
        nonlocal worst
        worst = max(worst, dev)
        if dev > tol:
            violations.append(f"draw {idx}: {name} deviates by {dev:.3e}")

    for i in range(draws):
        rng = _rng.substream(seed, _rng.TAG_IDENTITY, i)
        n_states = 2 + i % 3
        k_max = 2 + i % 5
        lam = lams[i % 3]
        q0 = random_smk(n_states, k_max, rng)
        q1 = random_smk(n_states, k_max, rng)
        pair = least_favorable(q0, q1, lam)
        alpha = pair.alpha

        row_dev = float(np.max(np.abs(pair.q2.flat().sum(axis=1) - 1.0)))
        record(i, "q2 row sum", row_dev)

        h2_12 = hellinger_sq(pair.q1, pair.q2).h2
        h2_02 = hellinger_sq(pair.q0, pair.q2).h2
        h2_01 = pair.h2_parents
        record(i, "affinity(q1,q2)=cos(lam a)",
               float(np.max(np.abs(h2_12 - (1.0 - np.cos(lam * alpha))))))
        record(i, "affinity(q0,q2)=cos((1-lam) a)",
               float(np.max(np.abs(h2_02 - (1.0 - np.cos((1.0 - lam) * alpha))))))
        record(i, "lam^2 h2(q0,q1) <= h2(q1,q2)",
               float(np.max(lam**2 * h2_01 - h2_12)))
        record(i, "h2(q1,q2) <= h2(q0,q1)", float(np.max(h2_12 - h2_01)))
        record(i, "(1-lam)^2 h2(q0,q1) <= h2(q0,q2)",
               float(np.max((1.0 - lam) ** 2 * h2_01 - h2_02)))

        check = phi_inverse_bound_check(pair)
        if not check.ok:
            violations.append(
                f"draw {i}: ratio bound {check.max_ratio:.6f} >= 1/lam {check.limit:.6f}"
            )
    return IdentityReport(
        draws=draws,
        violations=tuple(violations),
        max_deviation=worst,
        elapsed_s=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# covering nets


@dataclass(frozen=True)
class NetFamily:
    """Finite parametric grid of kernels used to populate nets."""

    kind: str
    param_names: tuple[str, ...]
    params: tuple[tuple[float, ...], ...]
    build: Callable[[tuple[float, ...]], DiscreteSmk]

    def kernels(self) -> list[DiscreteSmk]:
        return [self.build(p) for p in self.params]


def geometric_family(values: Sequence[float], k_max: int, n_states: int = 2) -> NetFamily:
    return NetFamily(
        kind="geometric",
        param_names=("stay",),
        params=tuple((float(v),) for v in values),
        build=lambda p: geometric_smk(p[0], k_max, n_states),
    )


def weibull_family(emc, shapes: Sequence[float], scales: Sequence[float], k_max: int) -> NetFamily:
    emc = np.asarray(emc, dtype=np.float64)
    grid = tuple((float(a), float(b)) for a in shapes for b in scales)
    return NetFamily(
        kind="weibull",
        param_names=("shape", "scale"),
        params=grid,
        build=lambda p: discrete_weibull_smk(emc, p[0], p[1], k_max),
    )


def family_from_spec(spec: dict) -> NetFamily:
    kind = spec.get("kind")
    try:
        if kind == "geometric":
            return geometric_family(spec["values"], int(spec["k_max"]),
                                    int(spec.get("n_states", 2)))
        if kind == "weibull":
            return weibull_family(spec["emc"], spec["shapes"], spec["scales"],
                                  int(spec["k_max"]))
    except KeyError as exc:
        raise ValidationError(f"net spec is missing {exc}") from None
    raise ValidationError(f"unknown net family kind {kind!r}")


def read_net_spec(path) -> NetFamily:
    with open(path) as fh:
        try:
            spec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: bad net spec: {exc}") from None
    return family_from_spec(spec)


@dataclass(frozen=True)
class CoveringNet:
    """Shell of family kernels around a center with a greedy d_eta* net.

    Shell membership is ``radius < d_nu*(center, q) <= 2 radius``; the net is
    the farthest-point prefix that brings every shell point within
    ``net_radius`` in d_eta*.
    """

    center_digest: str
    radius: float
    net_radius: float
    family_kind: str
    param_names: tuple[str, ...]
    shell_params: tuple[tuple[float, ...], ...]
    shell_kernels: tuple[DiscreteSmk, ...]
    d_nu_to_center: np.ndarray
    net_indices: tuple[int, ...]
    nearest_net_index: np.ndarray
    nearest_net_dist: np.ndarray
    nu_star: np.ndarray
    eta_star: np.ndarray

    @property
    def size(self) -> int:
        return len(self.net_indices)

    @property
    def log_cardinality(self) -> float:
        return math.log(self.size) if self.size else float("-inf")

    def net_kernels(self) -> list[DiscreteSmk]:
        return [self.shell_kernels[i] for i in self.net_indices]


def covering_net(center: DiscreteSmk, family: NetFamily, radius: float,
                 net_radius: float, nu_star=None, eta_star=None) -> CoveringNet:
    """Select the (radius, 2 radius] shell of the family around the center
    and thin it greedily to a d_eta* net."""
    if radius <= 0 or net_radius <= 0:
        raise ValidationError("radius and net_radius must be positive")
    if nu_star is None or eta_star is None:
        k = smallest_k_with_mass(center.emc())
        env = minorization(center.emc(), k, 1)
        nu_star = env.nu_star if nu_star is None else nu_star
        eta_star = env.eta_star if eta_star is None else eta_star
    nu_star = np.asarray(nu_star, dtype=np.float64)
    eta_star = np.asarray(eta_star, dtype=np.float64)

    kernels = family.kernels()
    d_nu_all = np.array([semi_distance(center, q, nu_star).d for q in kernels])
    shell_idx = [i for i, d in enumerate(d_nu_all) if radius < d <= 2.0 * radius]
    shell_kernels = tuple(kernels[i] for i in shell_idx)
    shell_params = tuple(family.params[i] for i in shell_idx)
    d_nu = d_nu_all[shell_idx]

    m = len(shell_kernels)
    if m == 0:
        return CoveringNet(
            center_digest=center.digest(), radius=float(radius),
            net_radius=float(net_radius), family_kind=family.kind,
            param_names=family.param_names, shell_params=(),
            shell_kernels=(), d_nu_to_center=np.zeros(0),
            net_indices=(), nearest_net_index=np.zeros(0, dtype=np.int64),
            nearest_net_dist=np.zeros(0), nu_star=nu_star, eta_star=eta_star,
        )

    roots = np.stack([np.sqrt(q.flat()) for q in shell_kernels])  # (m, S, C)
    bc = np.einsum("isc,jsc->ijs", roots, roots)
    h2 = np.clip(1.0 - bc, 0.0, 1.0)
    d_eta = np.sqrt(np.einsum("ijs,s->ij", h2, eta_star))

    start = int(np.argmax(d_nu))  # farthest from center, ties -> lowest index
    chosen = [start]
    dist_to_net = d_eta[:, start].copy()
    while True:
        far = int(np.argmax(dist_to_net))
        if dist_to_net[far] <= net_radius:
            break
        chosen.append(far)
        np.minimum(dist_to_net, d_eta[:, far], out=dist_to_net)
    net_idx_arr = np.array(chosen, dtype=np.int64)
    nearest_pos = np.argmin(d_eta[:, net_idx_arr], axis=1)
    nearest_index = net_idx_arr[nearest_pos]
    nearest_dist = d_eta[np.arange(m), nearest_index]
    return CoveringNet(
        center_digest=center.digest(), radius=float(radius), net_radius=float(net_radius),
        family_kind=family.kind, param_names=family.param_names,
        shell_params=shell_params, shell_kernels=shell_kernels,
        d_nu_to_center=d_nu, net_indices=tuple(int(i) for i in chosen),
        nearest_net_index=nearest_index, nearest_net_dist=nearest_dist,
        nu_star=nu_star, eta_star=eta_star,
    )


def write_net_csv(net: CoveringNet, path) -> None:
    """One row per shell point; net members are the rows at distance 0."""
    header = ["point_index", *net.param_names, "d_nu_star_to_center",
              "d_eta_star_to_nearest_net_point"]
    lines = [",".join(header)]
    for i in range(len(net.shell_kernels)):
        row = [str(i)]
        row += [f"{v:.17g}" for v in net.shell_params[i]]
        row.append(f"{net.d_nu_to_center[i]:.17g}")
        row.append(f"{net.nearest_net_dist[i]:.17g}")
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
