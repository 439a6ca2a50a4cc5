"""Subcritical Markov branching semigroups on the non-negative integers.

Each semigroup exposes the p.g.f. F_s of the particle count Y_s started from a
single particle, its generator U, the A- and B-functions and the Yaglom
(limiting conditional) law. Time is normalised so that E[Y_s] = e^{-s}.
"""
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, sparse
from scipy.sparse.linalg import expm_multiply

import config
from stability.errors import ConfigError, ConvergenceError, NumericalToleranceError

logger = logging.getLogger(__name__)

PROB_TOL = 1e-12


def _unit_interval(z) -> np.ndarray:
    """
    Raises:
        ConfigError: If any z lies outside [0, 1] or is NaN
    """
    z_arr = np.asarray(z, dtype=float)
    if not np.all((z_arr >= 0.0) & (z_arr <= 1.0)):
        raise ConfigError("p.g.f. arguments must lie in [0, 1]", {"z": z_arr.reshape(-1)[:8].tolist()})
    return z_arr


def _finish(values: np.ndarray, like: Any):
    """Return a float for scalar input, an array otherwise."""
    if np.ndim(like) == 0:
        return float(np.asarray(values).reshape(-1)[0])
    return values


@dataclass(frozen=True)
class OffspringLaw:
    """Offspring distribution of one branching event plus the event rate."""

    probs: Tuple[Tuple[int, float], ...]
    branch_rate: float

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[float]], rate: Optional[float] = None) -> "OffspringLaw":
        """
        Build a validated law and rescale its rate so that rate * (1 - m) = 1.

        Args:
            pairs: Iterable of (k, p_k)
            rate: Raw event rate; only logged, the normalised rate replaces it
        """
        merged: Dict[int, float] = {}
        for k, p in pairs:
            k_int = int(k)
            if k_int != k or k_int < 0:
                raise ConfigError(f"Offspring count must be a non-negative integer, got {k}")
            if p < 0:
                raise ConfigError(f"Negative offspring probability p_{k_int}={p}")
            merged[k_int] = merged.get(k_int, 0.0) + float(p)

        total = sum(merged.values())
        if abs(total - 1.0) > PROB_TOL:
            raise ConfigError(f"Offspring probabilities sum to {total!r}, expected 1", {"sum": total})
        if merged.get(1, 0.0) > 0.0:
            raise ConfigError(
                "p_1 > 0 is not allowed: fold single-child events into the rate",
                {"p_1": merged[1]}
            )
        mean = sum(k * p for k, p in merged.items())
        if mean >= 1.0:
            raise ConfigError(
                f"Offspring law is not subcritical (mean {mean:.6g} >= 1)",
                {"mean": mean}
            )

        normalised = 1.0 / (1.0 - mean)
        if rate is not None and abs(rate - normalised) > PROB_TOL:
            logger.info(f"[SEMIGROUP] Rescaling branch rate {rate:g} -> {normalised:g} (mean {mean:g})")
        probs = tuple(sorted((k, p) for k, p in merged.items() if p > 0.0))
        return cls(probs=probs, branch_rate=normalised)

    @property
    def support(self) -> np.ndarray:
        return np.array([k for k, _ in self.probs], dtype=np.int64)

    @property
    def weights(self) -> np.ndarray:
        return np.array([p for _, p in self.probs], dtype=float)

    @property
    def mean(self) -> float:
        return float(np.dot(self.support, self.weights))

    def pgf(self, z):
        z_arr = np.asarray(z, dtype=float)
        return np.sum(self.weights * z_arr[..., None] ** self.support, axis=-1)

    def to_pairs(self) -> list:
        return [[k, p] for k, p in self.probs]


@dataclass(frozen=True, eq=False)
class YaglomLaw:
    """Limiting conditional law of Y_s given Y_s > 0, supported on {1, 2, ...}."""

    representation: str
    p: Optional[float] = None
    pmf: Optional[np.ndarray] = None
    tail_mass: float = 0.0
    diagnostic: Optional[float] = None

    CONSTANT = "constant"
    SHIFTED_GEOMETRIC = "shifted_geometric"
    EMPIRICAL = "empirical"

    @classmethod
    def constant(cls) -> "YaglomLaw":
        return cls(cls.CONSTANT)

    @classmethod
    def shifted_geometric(cls, p: float) -> "YaglomLaw":
        return cls(cls.SHIFTED_GEOMETRIC, p=float(p))

    def pmf_at(self, k):
        k_arr = np.asarray(k, dtype=np.int64)
        if self.representation == self.CONSTANT:
            out = (k_arr == 1).astype(float)
        elif self.representation == self.SHIFTED_GEOMETRIC:
            out = np.where(k_arr >= 1, self.p * (1.0 - self.p) ** np.maximum(k_arr - 1, 0), 0.0)
        else:
            table = np.concatenate([[0.0], self.pmf])
            inside = (k_arr >= 1) & (k_arr < len(table))
            out = np.where(inside, table[np.clip(k_arr, 0, len(table) - 1)], 0.0)
        return _finish(out, k)

    def pgf(self, z):
        z_arr = np.asarray(z, dtype=float)
        if self.representation == self.CONSTANT:
            out = z_arr.copy()
        elif self.representation == self.SHIFTED_GEOMETRIC:
            out = self.p * z_arr / (1.0 - (1.0 - self.p) * z_arr)
        else:
            ks = np.arange(1, len(self.pmf) + 1)
            out = np.sum(self.pmf * z_arr[..., None] ** ks, axis=-1)
        return _finish(out, z)

    def _normalised_table(self) -> np.ndarray:
        return self.pmf / self.pmf.sum()

    def sample(self, rng: np.random.Generator, size=None):
        """Independent Yaglom draws."""
        if self.representation == self.CONSTANT:
            return np.ones(size, dtype=np.int64) if size is not None else 1
        if self.representation == self.SHIFTED_GEOMETRIC:
            return rng.geometric(self.p, size=size)
        ks = np.arange(1, len(self.pmf) + 1)
        return rng.choice(ks, size=size, p=self._normalised_table())

    def sample_sum(self, n, rng: np.random.Generator) -> np.ndarray:
        """
        For each entry of ``n``, the sum of that many independent Yaglom draws.

        Runs in time independent of the magnitude of ``n``.
        """
        n_arr = np.asarray(n, dtype=np.int64)
        if self.representation == self.CONSTANT:
            return n_arr.copy()
        out = n_arr.copy()
        positive = n_arr > 0
        if not positive.any():
            return out
        if self.representation == self.SHIFTED_GEOMETRIC:
            # k geometrics on {1,2,...} = k + NegBin(k, p) failures
            out[positive] += rng.negative_binomial(n_arr[positive], self.p)
            return out
        ks = np.arange(1, len(self.pmf) + 1)
        counts = rng.multinomial(n_arr[positive], self._normalised_table())
        out[positive] = counts @ ks
        return out

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {"representation": self.representation, "tail_mass": self.tail_mass}
        if self.p is not None:
            payload["p"] = self.p
        if self.pmf is not None:
            payload["pmf"] = self.pmf.tolist()
        if self.diagnostic is not None:
            payload["diagnostic"] = self.diagnostic
        return payload


class BranchingSemigroup(ABC):
    """Composition semigroup (F_s) of a subcritical branching count."""

    kind: str = ""
    # One-sided finite-difference step for F'_s(1)
    fd_step: float = 1e-5

    def __init__(self, law: OffspringLaw):
        self.law = law
        self._yaglom_cache: Dict[Tuple[int, float], YaglomLaw] = {}

    @property
    def rate(self) -> float:
        return self.law.branch_rate

    @abstractmethod
    def evaluate_F(self, s: float, z):
        """F_s(z) for s >= 0 and z in [0, 1]."""

    def generator_U(self, z):
        """U(z) = rate * (g(z) - z)."""
        z_arr = np.asarray(z, dtype=float)
        return _finish(self.rate * (self.law.pgf(z_arr) - z_arr), z)

    @abstractmethod
    def a_function(self, z):
        """A(z) = exp{-int_0^z dx / U(x)}."""

    def b_function(self, z):
        """B(z) = 1 - A(z), the p.g.f. of the Yaglom law."""
        return _finish(1.0 - np.asarray(self.a_function(z), dtype=float), z)

    @abstractmethod
    def yaglom_law(self, cutoff: Optional[int] = None, horizon: Optional[float] = None) -> YaglomLaw:
        """Limiting conditional law of Y_s as s grows."""

    @abstractmethod
    def transition_pmf(self, s: float, cutoff: int) -> Tuple[np.ndarray, float]:
        """P(Y_s = k) for k = 0..cutoff and the mass above cutoff."""

    @abstractmethod
    def sample_sum(self, s: float, x, rng: np.random.Generator) -> np.ndarray:
        """For each entry of ``x``, the sum of that many independent copies of Y_s."""

    @abstractmethod
    def to_spec(self) -> Dict[str, Any]:
        """JSON spec accepted by :func:`semigroup_from_spec`."""

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.to_spec()})"


class PureDeath(BranchingSemigroup):
    """Each particle dies after an Exp(1) time: the thinning semigroup."""

    kind = "PureDeath"

    def __init__(self):
        super().__init__(OffspringLaw(probs=((0, 1.0),), branch_rate=1.0))

    def evaluate_F(self, s: float, z):
        z_arr = _unit_interval(z)
        if s == 0:
            return _finish(z_arr.copy(), z)
        return _finish(1.0 - math.exp(-s) * (1.0 - z_arr), z)

    def generator_U(self, z):
        return _finish(1.0 - np.asarray(z, dtype=float), z)

    def a_function(self, z):
        return _finish(1.0 - _unit_interval(z), z)

    def b_function(self, z):
        return _finish(_unit_interval(z).copy(), z)

    def yaglom_law(self, cutoff: Optional[int] = None, horizon: Optional[float] = None) -> YaglomLaw:
        return YaglomLaw.constant()

    def transition_pmf(self, s: float, cutoff: int) -> Tuple[np.ndarray, float]:
        pmf = np.zeros(cutoff + 1)
        survive = math.exp(-s)
        pmf[0] = 1.0 - survive
        if cutoff >= 1:
            pmf[1] = survive
            return pmf, 0.0
        return pmf, survive

    def sample_sum(self, s: float, x, rng: np.random.Generator) -> np.ndarray:
        return rng.binomial(np.asarray(x, dtype=np.int64), math.exp(-s))

    def to_spec(self) -> Dict[str, Any]:
        return {"kind": self.kind}


class LinearBirthDeath(BranchingSemigroup):
    """Linear birth (rate lambda) and death (rate lambda + 1) process."""

    kind = "LinearBirthDeath"

    def __init__(self, lam: float):
        if not lam > 0:
            raise ConfigError(f"LinearBirthDeath needs lambda > 0, got {lam}")
        self.lam = float(lam)
        mu = self.lam + 1.0
        total = self.lam + mu
        super().__init__(OffspringLaw(probs=((0, mu / total), (2, self.lam / total)), branch_rate=total))

    def _linear_fractional(self, s: float) -> Tuple[float, float]:
        a = math.exp(-s)
        return a, self.lam * (1.0 - a)

    def evaluate_F(self, s: float, z):
        z_arr = _unit_interval(z)
        if s == 0:
            return _finish(z_arr.copy(), z)
        a, b = self._linear_fractional(s)
        w = 1.0 - z_arr
        return _finish(1.0 - a * w / (1.0 + b * w), z)

    def generator_U(self, z):
        w = 1.0 - np.asarray(z, dtype=float)
        return _finish(w * (1.0 + self.lam * w), z)

    def a_function(self, z):
        w = 1.0 - _unit_interval(z)
        return _finish((self.lam + 1.0) * w / (1.0 + self.lam * w), z)

    def b_function(self, z):
        z_arr = _unit_interval(z)
        return _finish(z_arr / (1.0 + self.lam * (1.0 - z_arr)), z)

    def yaglom_law(self, cutoff: Optional[int] = None, horizon: Optional[float] = None) -> YaglomLaw:
        return YaglomLaw.shifted_geometric(1.0 / (1.0 + self.lam))

    def _zero_modified_geometric(self, s: float) -> Tuple[float, float]:
        """(P(Y_s = 0), success probability of Y_s given Y_s > 0)."""
        a, b = self._linear_fractional(s)
        return 1.0 - a / (1.0 + b), 1.0 / (1.0 + b)

    def transition_pmf(self, s: float, cutoff: int) -> Tuple[np.ndarray, float]:
        q0, p = self._zero_modified_geometric(s)
        ks = np.arange(cutoff + 1)
        pmf = np.where(ks >= 1, (1.0 - q0) * p * (1.0 - p) ** np.maximum(ks - 1, 0), q0)
        return pmf, float(max(0.0, 1.0 - pmf.sum()))

    def sample_sum(self, s: float, x, rng: np.random.Generator) -> np.ndarray:
        x_arr = np.asarray(x, dtype=np.int64)
        q0, p = self._zero_modified_geometric(s)
        alive = rng.binomial(x_arr, 1.0 - q0)
        out = np.asarray(alive, dtype=np.int64).copy()
        positive = out > 0
        if np.any(positive):
            out[positive] += rng.negative_binomial(out[positive], p)
        return out

    def to_spec(self) -> Dict[str, Any]:
        return {"kind": self.kind, "lambda": self.lam}


class GeneralSemigroup(BranchingSemigroup):
    """Finite-support offspring law; F_s by the backward equation dF/ds = U(F)."""

    kind = "General"
    fd_step = 1e-3

    def evaluate_F(self, s: float, z):
        z_arr = np.atleast_1d(_unit_interval(z))
        if s == 0:
            return _finish(z_arr.copy(), z)

        def rhs(_, y):
            return self.rate * (self.law.pgf(y) - y)

        sol = integrate.solve_ivp(
            rhs, (0.0, float(s)), z_arr,
            method="DOP853",
            rtol=config.settings.ode_rtol,
            atol=config.settings.ode_atol
        )
        if not sol.success:
            # the solver stopped short of s, so no error bound is available
            raise NumericalToleranceError(
                f"Backward equation failed at s={sol.t[-1]:.6g} of {s:.6g}: {sol.message}",
                achieved_error=float("inf"),
                data={"s_reached": float(sol.t[-1])}
            )
        return _finish(np.clip(sol.y[:, -1], 0.0, 1.0), z)

    def _integral_inverse_U(self, z: float) -> float:
        value, abserr = integrate.quad(
            lambda x: 1.0 / float(self.generator_U(x)),
            0.0, z,
            epsabs=config.settings.quad_epsabs,
            epsrel=1e-12,
            limit=200
        )
        if abserr > config.settings.quad_tol:
            raise NumericalToleranceError(
                f"A-function quadrature at z={z:.6g} missed tolerance",
                achieved_error=abserr
            )
        return value

    def a_function(self, z):
        z_arr = np.atleast_1d(_unit_interval(z))
        out = np.empty_like(z_arr)
        for i, zi in enumerate(z_arr):
            # A(1) is the limit 0, never integrated
            out[i] = 0.0 if zi >= 1.0 else math.exp(-self._integral_inverse_U(zi))
        return _finish(out, z)

    def _generator_matrix(self, n_max: int) -> sparse.csr_matrix:
        """CTMC generator on {0..n_max} plus an absorbing overflow state n_max+1."""
        size = n_max + 2
        overflow = n_max + 1
        rows, cols, vals = [], [], []
        for n in range(1, n_max + 1):
            out_rate = self.rate * n
            rows.append(n)
            cols.append(n)
            vals.append(-out_rate)
            for k, p in self.law.probs:
                rows.append(n)
                cols.append(min(n - 1 + k, overflow))
                vals.append(out_rate * p)
        return sparse.csr_matrix((vals, (rows, cols)), shape=(size, size))

    def _state_pmf(self, times: Sequence[float], n_max: int) -> np.ndarray:
        """Rows: pmf over {0..n_max, overflow} at each time, started from one particle."""
        q_t = self._generator_matrix(n_max).T.tocsc()
        start = np.zeros(n_max + 2)
        start[1] = 1.0
        rows = [expm_multiply(q_t * float(t), start) if t > 0 else start.copy() for t in times]
        return np.clip(np.vstack(rows), 0.0, 1.0)

    def transition_pmf(self, s: float, cutoff: int) -> Tuple[np.ndarray, float]:
        n_max = max(cutoff, config.settings.state_space_factor * cutoff)
        pmf = self._state_pmf([s], n_max)[0]
        head = pmf[:cutoff + 1]
        return head, float(max(0.0, 1.0 - head.sum()))

    def yaglom_law(self, cutoff: Optional[int] = None, horizon: Optional[float] = None) -> YaglomLaw:
        """
        Conditioned state law at ``horizon`` from the truncated forward equations.

        Raises:
            ConvergenceError: If the laws at horizon and horizon/2 differ by more than
                the configured total-variation threshold
        """
        cutoff = int(config.settings.yaglom_cutoff if cutoff is None else cutoff)
        horizon = float(config.settings.yaglom_horizon if horizon is None else horizon)
        if cutoff < 1 or horizon <= 0:
            raise ConfigError(f"Yaglom law needs cutoff >= 1 and horizon > 0, got {cutoff}, {horizon}")
        if (cutoff, horizon) in self._yaglom_cache:
            return self._yaglom_cache[(cutoff, horizon)]
        n_max = config.settings.state_space_factor * cutoff

        half, full = self._state_pmf([horizon / 2.0, horizon], n_max)
        conditioned = []
        for row in (half, full):
            survival = 1.0 - row[0]
            if survival <= 0.0:
                raise ConvergenceError(
                    f"Survival probability vanished by s={horizon:g}; lower the horizon",
                    achieved_error=1.0
                )
            conditioned.append(row[1:] / survival)
        diagnostic = 0.5 * float(np.abs(conditioned[1] - conditioned[0]).sum())
        logger.info(f"[YAGLOM] horizon={horizon:g} cutoff={cutoff} TV(s, s/2)={diagnostic:.3e}")
        if diagnostic > config.settings.yaglom_tv_threshold:
            raise ConvergenceError(
                f"Yaglom estimate not converged (TV {diagnostic:.3g}); increase the horizon",
                achieved_error=diagnostic,
                data={"horizon": horizon}
            )
        pmf = conditioned[1][:cutoff]
        law = YaglomLaw(
            YaglomLaw.EMPIRICAL,
            pmf=pmf,
            tail_mass=float(max(0.0, 1.0 - pmf.sum())),
            diagnostic=diagnostic
        )
        self._yaglom_cache[(cutoff, horizon)] = law
        return law

    def _gillespie(self, s: float, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Event-by-event simulation of independent populations up to time s."""
        n = x.astype(np.int64).copy()
        clock = np.zeros(len(n))
        active = n > 0
        support, weights = self.law.support, self.law.weights
        events = 0
        while active.any():
            idx = np.flatnonzero(active)
            clock[idx] += rng.exponential(1.0 / (self.rate * n[idx]))
            late = clock[idx] > s
            active[idx[late]] = False
            fired = idx[~late]
            if fired.size:
                n[fired] += rng.choice(support, size=fired.size, p=weights) - 1
                active[fired[n[fired] == 0]] = False
                events += fired.size
        logger.debug(f"[GILLESPIE] s={s:.4g} populations={len(n)} events={events}")
        return n

    def sample_sum(self, s: float, x, rng: np.random.Generator) -> np.ndarray:
        x_arr = np.atleast_1d(np.asarray(x, dtype=np.int64))
        if s == 0:
            return x_arr.copy()
        out = np.zeros_like(x_arr)
        small = x_arr <= config.settings.gillespie_max_population
        if small.any():
            out[small] = self._gillespie(s, x_arr[small], rng)
        if (~small).any():
            cutoff = config.settings.yaglom_cutoff
            pmf, tail = self.transition_pmf(s, cutoff)
            if tail > 1e-9:
                logger.warning(f"[GILLESPIE] Transition pmf tail {tail:.2e} dropped for large populations")
            counts = rng.multinomial(x_arr[~small], pmf / pmf.sum())
            out[~small] = counts @ np.arange(cutoff + 1)
        return out

    def to_spec(self) -> Dict[str, Any]:
        return {"kind": self.kind, "offspring": self.law.to_pairs(), "rate": self.rate}


def make_semigroup(
    kind: str,
    lam: Optional[float] = None,
    offspring: Optional[Iterable[Sequence[float]]] = None,
    rate: Optional[float] = None,
    check: bool = True
) -> BranchingSemigroup:
    """
    Construct a branching semigroup.

    Args:
        kind: "PureDeath", "LinearBirthDeath" or "General"
        lam: Birth rate for LinearBirthDeath
        offspring: (k, p_k) pairs for General
        rate: Raw event rate for General (rescaled to enforce E[Y_s] = e^{-s})
        check: Run a small semigroup validation before returning

    Raises:
        ConfigError: Unknown kind, supercritical or critical law, or p_1 > 0
    """
    normalised = kind.replace("_", "").replace("-", "").lower()
    if normalised == "puredeath":
        sg: BranchingSemigroup = PureDeath()
    elif normalised == "linearbirthdeath":
        if lam is None:
            raise ConfigError("LinearBirthDeath requires lambda")
        sg = LinearBirthDeath(lam)
    elif normalised == "general":
        if offspring is None:
            raise ConfigError("General semigroup requires an offspring pmf")
        sg = GeneralSemigroup(OffspringLaw.from_pairs(offspring, rate))
    else:
        raise ConfigError(f"Unknown semigroup kind: {kind}. Expected PureDeath, LinearBirthDeath or General.")

    if check:
        tol = 1e-6 if isinstance(sg, GeneralSemigroup) else 1e-9
        report = validate_conditions(sg, [(0.3, 0.5, 0.2), (1.0, 0.25, 0.7)], tol)
        if report.verdict != "pass":
            raise NumericalToleranceError(
                f"{sg.kind} semigroup failed its construction check",
                achieved_error=report.statistic,
                data=report.details
            )
    logger.debug(f"[SEMIGROUP] Created {sg!r}")
    return sg


def semigroup_from_spec(spec: Dict[str, Any]) -> BranchingSemigroup:
    """Build a semigroup from its JSON spec (kind tag plus parameters)."""
    return make_semigroup(
        spec.get("kind", ""),
        lam=spec.get("lambda", spec.get("lam")),
        offspring=spec.get("offspring"),
        rate=spec.get("rate")
    )


def evaluate_F(sg: BranchingSemigroup, s: float, z):
    if s < 0:
        raise ConfigError(f"s must be non-negative, got {s}")
    return sg.evaluate_F(s, z)


def generator_U(sg: BranchingSemigroup, z):
    return sg.generator_U(z)


def a_function(sg: BranchingSemigroup, z):
    return sg.a_function(z)


def b_function(sg: BranchingSemigroup, z):
    return sg.b_function(z)


def yaglom_law(sg: BranchingSemigroup, cutoff: Optional[int] = None, horizon: Optional[float] = None) -> YaglomLaw:
    return sg.yaglom_law(cutoff, horizon)


def transition_pmf(sg: BranchingSemigroup, s: float, cutoff: int) -> Tuple[np.ndarray, float]:
    return sg.transition_pmf(s, cutoff)


def _mean_derivative(sg: BranchingSemigroup, s: float) -> float:
    """Second-order one-sided difference for F'_s(1)."""
    h = sg.fd_step
    f0, f1, f2 = sg.evaluate_F(s, np.array([1.0, 1.0 - h, 1.0 - 2.0 * h]))
    return (3.0 * f0 - 4.0 * f1 + f2) / (2.0 * h)


def validate_conditions(
    sg: BranchingSemigroup,
    grid: Iterable[Tuple[float, float, float]],
    tol: float,
    small_s: float = 1e-12,
    large_s: float = 60.0
):
    """
    Check the composition law, the mean law and both continuity limits on a grid.

    Args:
        sg: Semigroup under test
        grid: (s, t, z) triples
        tol: Largest admissible violation
        small_s: Time used for lim_{s->0} F_s(z) = z
        large_s: Time used for lim_{s->inf} F_s(z) = 1

    Returns:
        TestReport whose statistic is the worst violation; failures are reported, not raised
    """
    from stability.stattest import TestReport

    triples = [tuple(map(float, g)) for g in grid]
    if not triples:
        raise ConfigError("validate_conditions needs a non-empty grid")

    worst: Dict[str, Dict[str, Any]] = {}

    def record(check: str, value: float, where: Tuple[float, ...]):
        if check not in worst or value > worst[check]["violation"]:
            worst[check] = {"violation": float(value), "at": list(where)}

    for s, t, z in triples:
        record("composition", abs(sg.evaluate_F(s + t, z) - sg.evaluate_F(s, sg.evaluate_F(t, z))), (s, t, z))
        record("continuity_at_zero", abs(sg.evaluate_F(small_s, z) - z), (small_s, z))
        record("extinction_limit", abs(1.0 - sg.evaluate_F(large_s, z)), (large_s, z))
    for s in sorted({s for s, _, _ in triples} | {t for _, t, _ in triples}):
        record("mean", abs(_mean_derivative(sg, s) - math.exp(-s)), (s,))

    statistic = max(entry["violation"] for entry in worst.values())
    worst_check = max(worst, key=lambda key: worst[key]["violation"])
    logger.info(f"[SEMIGROUP] {sg.kind}: worst violation {statistic:.3e} ({worst_check})")
    return TestReport.deterministic(
        name=f"semigroup-conditions[{sg.kind}]",
        statistic=statistic,
        passed=statistic <= tol,
        n=len(triples),
        details={"tolerance": tol, "worst_check": worst_check, "checks": worst}
    )


def validate_cocycles(sg: BranchingSemigroup, grid: Iterable[Tuple[float, float]], tol: float):
    """
    Check A(F_s(z)) = e^{-s} A(z), B(F_s(z)) = 1 - e^{-s} + e^{-s} B(z) and monotonicity.

    Args:
        grid: (s, z) pairs with z < 1
    """
    from stability.stattest import TestReport

    pairs = [tuple(map(float, g)) for g in grid]
    if not pairs:
        raise ConfigError("validate_cocycles needs a non-empty grid")
    worst: Dict[str, Dict[str, Any]] = {}

    def record(check: str, value: float, where):
        if check not in worst or value > worst[check]["violation"]:
            worst[check] = {"violation": float(value), "at": list(where)}

    for s, z in pairs:
        fz = sg.evaluate_F(s, z)
        decay = math.exp(-s)
        record("a_cocycle", abs(sg.a_function(fz) - decay * sg.a_function(z)), (s, z))
        record("b_cocycle", abs(sg.b_function(fz) - (1.0 - decay + decay * sg.b_function(z))), (s, z))

    zs = np.unique(np.clip([z for _, z in pairs] + [0.0, 0.5, 0.99], 0.0, 0.999))
    a_vals = np.asarray(sg.a_function(zs))
    monotone = bool(np.all(np.diff(a_vals) < 0))
    record("a_at_zero", abs(sg.a_function(0.0) - 1.0), (0.0,))
    record("a_monotone", 0.0 if monotone else 1.0, tuple(zs.tolist()))

    statistic = max(entry["violation"] for entry in worst.values())
    return TestReport.deterministic(
        name=f"semigroup-cocycles[{sg.kind}]",
        statistic=statistic,
        passed=statistic <= tol,
        n=len(pairs),
        details={"tolerance": tol, "checks": worst}
    )
