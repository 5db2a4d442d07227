"""Excess demand, worst-case CVaR under mean/variance ambiguity, utility and
penalty.

A demand ``d`` in a cell with ``z`` operational MUs leaves residual
``r + g*z - (phi*d + varphi)`` of every resource type. The excess demand is
the demand that must be shed to make every residual nonnegative. Resource
types with a zero demand coefficient never depend on ``d``; they are settled
deterministically and kept out of the semidefinite program.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

# Upper bound on the suboptimality introduced by capping M11 when sigma -> 0.
_M11_CAP_GAP = 1e-10
_M11_FLOOR = 1e-12


class StructuralInfeasibility(ValueError):
    """A demand-independent resource can never be covered."""


@dataclass(frozen=True)
class ResourceModel:
    r: tuple[float, ...]
    phi: tuple[float, ...]
    varphi: tuple[float, ...]
    g: tuple[float, ...]
    u: tuple[float, ...] | None = None
    U_base: float = -100.0

    def __post_init__(self) -> None:
        k = len(self.r)
        if self.u is None:
            object.__setattr__(self, "u", (1.0,) * k)
        fields = {"phi": self.phi, "varphi": self.varphi, "g": self.g, "u": self.u}
        for name, vec in fields.items():
            if len(vec) != k:
                raise ValueError(f"{name} has length {len(vec)}, expected K={k}")
        for name, vec in fields.items():
            if any(x < 0 for x in vec):
                raise ValueError(f"{name} must be elementwise >= 0")
        if any(rk < vk for rk, vk in zip(self.r, self.varphi)):
            raise ValueError("fixed resources must cover the constant requirement (r >= varphi)")
        if not self.U_base < 0:
            raise ValueError("U_base must be negative")
        for name in ("r", "phi", "varphi", "g", "u"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        object.__setattr__(self, "U_base", float(self.U_base))

    @property
    def K(self) -> int:
        return len(self.r)

    @classmethod
    def reference_default(cls) -> "ResourceModel":
        """CPU/GPU/memory setting with a day-hotspot memory coefficient."""
        return cls(r=(16, 2, 24), phi=(0, 0, 10), varphi=(8, 1, 8), g=(16, 2, 32))

    def to_dict(self) -> dict:
        return {
            "r": list(self.r),
            "phi": list(self.phi),
            "varphi": list(self.varphi),
            "g": list(self.g),
            "u": list(self.u),
            "U_base": self.U_base,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResourceModel":
        return cls(
            r=tuple(d["r"]),
            phi=tuple(d["phi"]),
            varphi=tuple(d["varphi"]),
            g=tuple(d["g"]),
            u=tuple(d.get("u", (1.0,) * len(d["r"]))),
            U_base=d.get("U_base", -100.0),
        )


@dataclass(frozen=True)
class AmbiguityMoments:
    mu: float
    sigma: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise ValueError("moments must be finite")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    @property
    def omega(self) -> np.ndarray:
        mu, s = self.mu, self.sigma
        return np.array([[mu * mu + s * s, mu], [mu, 1.0]])


@dataclass(frozen=True)
class WcCvarResult:
    zeta_star: float
    nu: float | None = None
    M: np.ndarray | None = None
    xi_k: tuple[float, ...] = ()
    binding_k: int | None = None


def offsets(rm: ResourceModel, z: int) -> np.ndarray:
    """Per-type shift ``(varphi - r - g*z)/phi`` for types with ``phi > 0``."""
    out = []
    for k in range(rm.K):
        if rm.phi[k] > 0:
            out.append((rm.varphi[k] - rm.r[k] - rm.g[k] * z) / rm.phi[k])
    return np.array(out)


def _structurally_infeasible(rm: ResourceModel, z: int) -> bool:
    return any(
        rm.phi[k] == 0 and rm.varphi[k] - rm.r[k] - rm.g[k] * z > 0 for k in range(rm.K)
    )


def max_offset(rm: ResourceModel, z: int) -> float:
    """Largest shift; ``+inf`` if infeasible, ``-inf`` if demand never binds."""
    if _structurally_infeasible(rm, z):
        return math.inf
    c = offsets(rm, z)
    return float(c.max()) if c.size else -math.inf


def excess_demand(rm: ResourceModel, d: float | np.ndarray, z: int) -> float | np.ndarray:
    """Excess demand at realized demand ``d`` (scalar or array).

    Positive means at least one resource type is short. ``+inf`` marks a
    demand-independent shortfall, ``-inf`` a cell no demand can overload.
    """
    if z < 0:
        raise ValueError("z must be >= 0")
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr < 0):
        raise ValueError("demand must be >= 0")
    c = max_offset(rm, z)
    out = d_arr + c if math.isfinite(c) else np.full(d_arr.shape, c)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Worst-case CVaR
# ---------------------------------------------------------------------------


def _check_eps(epsilon: float) -> None:
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")


def sdp_value(a: float, beta: float, m: AmbiguityMoments, c: float, epsilon: float) -> float:
    """Objective reached by the certificate with ``M = a*[1, -beta]^T[1, -beta]``.

    ``nu`` is pushed to its bound ``-(1/eps)<Omega, M>`` and ``xi`` to the
    smallest value the LMI of the binding type admits. Any ``a > 0`` and real
    ``beta`` give a feasible point, so this upper-bounds the SDP optimum.
    """
    spread = m.sigma**2 + (m.mu - beta) ** 2
    return c + beta + a * spread / epsilon + 0.25 / a


def certificate(a: float, beta: float, m: AmbiguityMoments, cs: np.ndarray, epsilon: float) -> WcCvarResult:
    b = -a * beta
    M = np.array([[a, b], [b, a * beta * beta]])
    nu = -float(np.sum(m.omega * M)) / epsilon
    k_star = int(np.argmax(cs))
    xi = sdp_value(a, beta, m, float(cs[k_star]), epsilon)
    return WcCvarResult(xi, nu, M, tuple(xi for _ in cs), k_star)


def wc_cvar_sdp(
    rm: ResourceModel, m: AmbiguityMoments, z: int, epsilon: float, xatol: float = 1e-10
) -> WcCvarResult:
    """Worst-case CVaR of the excess demand over all laws with moments ``m``.

    The 2x2 program is reduced by hand: ``nu`` sits on its bound, the PSD
    constraint on ``M`` is tight (``M22 = M12^2 / M11``) and only the type
    with the largest shift binds. For fixed ``a = M11`` the remaining
    objective is a convex quadratic in ``beta = -M12/M11`` with minimizer
    ``mu - eps/(2a)``; the outer problem in ``log a`` is solved by bounded
    Brent search.
    """
    _check_eps(epsilon)
    if z < 0:
        raise ValueError("z must be >= 0")
    c_max = max_offset(rm, z)
    if not math.isfinite(c_max):
        return WcCvarResult(c_max)
    cs = offsets(rm, z)

    a_cap = (1 - epsilon) / (4 * _M11_CAP_GAP)

    def reduced(u: float) -> float:
        a = math.exp(u)
        return sdp_value(a, m.mu - epsilon / (2 * a), m, c_max, epsilon)

    res = minimize_scalar(
        reduced,
        bounds=(math.log(_M11_FLOOR), math.log(a_cap)),
        method="bounded",
        options={"xatol": xatol, "maxiter": 500},
    )
    a = math.exp(res.x)
    return certificate(a, m.mu - epsilon / (2 * a), m, cs, epsilon)


def certificate_residuals(
    result: WcCvarResult, rm: ResourceModel, m: AmbiguityMoments, z: int, epsilon: float
) -> dict[str, float]:
    """Constraint residuals of a certificate, scaled to its magnitude.

    Each value is <= 0 iff the constraint holds; PSD terms report the
    negated smallest eigenvalue divided by ``max(1, max|entry|)``.
    """
    M = result.M
    scale = max(1.0, float(np.abs(M).max()))
    out = {
        "moment": (result.nu + float(np.sum(m.omega * M)) / epsilon) / max(1.0, abs(result.nu)),
        "M_psd": -float(np.linalg.eigvalsh(M).min()) / scale,
    }
    for j, (ck, xik) in enumerate(zip(offsets(rm, z), result.xi_k)):
        gamma = ck - result.nu - xik
        lmi = M - np.array([[0.0, 0.5], [0.5, gamma]])
        lscale = max(1.0, float(np.abs(lmi).max()))
        out[f"lmi_{j}"] = -float(np.linalg.eigvalsh(lmi).min()) / lscale
        out[f"xi_{j}"] = xik - result.zeta_star
    return out


def cvar_factor(epsilon: float) -> float:
    _check_eps(epsilon)
    return math.sqrt((1 - epsilon) / epsilon)


def wc_cvar_closed_form(rm: ResourceModel, m: AmbiguityMoments, z: int, epsilon: float) -> float:
    """``mu + sigma*sqrt((1-eps)/eps) + c_max``; every shifted term has unit slope."""
    _check_eps(epsilon)
    c_max = max_offset(rm, z)
    if not math.isfinite(c_max):
        return c_max
    return m.mu + m.sigma * cvar_factor(epsilon) + c_max


def worst_case_two_point(mu: float, sigma: float, epsilon: float) -> tuple[np.ndarray, np.ndarray]:
    """Two-point law with moments ``(mu, sigma)`` whose upper-tail CVaR is extremal."""
    k = cvar_factor(epsilon)
    values = np.array([mu - sigma / k, mu + sigma * k])
    return values, np.array([1 - epsilon, epsilon])


def cvar_discrete(values: Sequence[float], probs: Sequence[float], epsilon: float) -> float:
    """Upper-tail CVaR at level ``1 - epsilon`` of a discrete law.

    Uses the Rockafellar-Uryasev minimum ``beta + E[(X - beta)^+]/eps``,
    attained at one of the support points.
    """
    _check_eps(epsilon)
    x = np.asarray(values, dtype=float)
    p = np.asarray(probs, dtype=float)
    betas = x[:, None]
    obj = betas[:, 0] + (p[None, :] * np.maximum(x[None, :] - betas, 0.0)).sum(axis=1) / epsilon
    return float(obj.min())


def var_discrete(values: Sequence[float], probs: Sequence[float], epsilon: float) -> float:
    """Lower ``(1 - epsilon)``-quantile of a discrete law."""
    order = np.argsort(values, kind="stable")
    x = np.asarray(values, dtype=float)[order]
    cdf = np.cumsum(np.asarray(probs, dtype=float)[order])
    return float(x[np.searchsorted(cdf, 1 - epsilon - 1e-12)])


# ---------------------------------------------------------------------------
# Utility and penalty
# ---------------------------------------------------------------------------


def utility(rm: ResourceModel, d: np.ndarray | float, z: int) -> np.ndarray | float:
    """Latency utility for each demand value, in ``[U_base, 0)``."""
    d_arr = np.asarray(d, dtype=float)
    r = np.asarray(rm.r)
    g = np.asarray(rm.g)
    rho = r + g * z - (np.asarray(rm.phi) * d_arr[..., None] + np.asarray(rm.varphi))
    feasible = np.all(rho > 0, axis=-1)
    with np.errstate(divide="ignore"):
        worst = np.max(np.asarray(rm.u) / np.where(rho > 0, rho, 1.0), axis=-1)
    out = np.where(feasible, -np.minimum(worst, -rm.U_base), rm.U_base)
    return float(out) if out.ndim == 0 else out


def expected_utility(rm: ResourceModel, samples: Sequence[float] | np.ndarray, z: int) -> float:
    s = np.asarray(samples, dtype=float)
    if s.size == 0:
        raise ValueError("samples must be nonempty")
    if z < 0:
        raise ValueError("z must be >= 0")
    return float(np.mean(utility(rm, s.ravel(), z)))


def expected_penalty(zeta_star: float, P: float) -> float:
    if P < 0:
        raise ValueError("penalty constant must be >= 0")
    if zeta_star == math.inf:
        raise StructuralInfeasibility("excess demand is unbounded for this configuration")
    return P * max(zeta_star, 0.0)
