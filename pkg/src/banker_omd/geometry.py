"""Legendre regularizers, Bregman divergences and mirror maps.

Points are plain float64 numpy arrays.  Simplex regularizers (Tsallis-1/2,
log-barrier, negative entropy) live on the nonnegative orthant and are
restricted to the probability simplex by :func:`mirror_simplex`; barrier
regularizers (hypercube, Euclidean ball) live on a bounded convex body and
use the unconstrained mirror map only.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from .errors import ConvergenceError, DomainError

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-12
SIMPLEX_MAX_ITER = 200
BALL_TOL = 1e-12
BALL_MAX_ITER = 100
UNDERFLOW_FLOOR = 1e-300


class Regularizer:
    """A Legendre function together with its conjugate and mirror maps."""

    name = "abstract"
    on_simplex = True

    def __init__(self, dim: int):
        if int(dim) < 1:
            raise ValueError(f"dimension must be positive, got {dim}")
        self.dim = int(dim)

    def __repr__(self):
        return f"{type(self).__name__}({self.dim})"

    def __eq__(self, other):
        return type(self) is type(other) and self.dim == other.dim

    def __hash__(self):
        return hash((type(self).__name__, self.dim))

    def _as_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DomainError(f"{self!r} expects shape ({self.dim},), got {x.shape}")
        return x

    def default_point(self) -> np.ndarray:
        """The default investment point x0."""
        if self.on_simplex:
            return np.full(self.dim, 1.0 / self.dim)
        return self.conj_grad(np.zeros(self.dim))


class _OrthantRegularizer(Regularizer):
    """Separable regularizer on the nonnegative orthant with power-law inverse map.

    ``conj_grad`` has the form ``(-theta) ** -power``; the simplex mirror map is
    ``x_i = (lam - theta_i) ** -power`` with ``lam`` the normalizing root.
    """

    power = 1.0
    closure_ok = False

    def check_primal(self, x, closure=False):
        x = self._as_point(x)
        if not np.all(np.isfinite(x)):
            raise DomainError(f"{self!r}: non-finite coordinate")
        if closure and self.closure_ok:
            bad = x < 0
        else:
            bad = x <= 0
        if np.any(bad):
            raise DomainError(f"{self!r}: point outside domain, min coordinate {x.min():.3g}")
        return x

    def check_dual(self, theta):
        theta = self._as_point(theta)
        if not np.all(theta < 0):
            raise DomainError(f"{self!r}: dual point must be strictly negative, max {theta.max():.3g}")
        return theta

    def conj_grad(self, theta):
        theta = self.check_dual(theta)
        return (-theta) ** -self.power


class TsallisHalf(_OrthantRegularizer):
    """Psi(x) = -2 sum sqrt(x_i)."""

    name = "tsallis"
    power = 2.0
    closure_ok = True

    def value(self, x):
        x = self.check_primal(x, closure=True)
        return -2.0 * float(np.sum(np.sqrt(x)))

    def grad(self, x):
        x = self.check_primal(x)
        return -1.0 / np.sqrt(x)

    def hess_diag(self, x):
        x = self.check_primal(x)
        return 0.5 * x ** -1.5

    def bregman(self, y, x):
        y = self.check_primal(y, closure=True)
        x = self.check_primal(x)
        sx = np.sqrt(x)
        return float(np.sum((np.sqrt(y) - sx) ** 2 / sx))

    def conj_value(self, theta):
        theta = self.check_dual(theta)
        return float(np.sum(-1.0 / theta))


class LogBarrierSimplex(_OrthantRegularizer):
    """Psi(x) = -sum ln x_i."""

    name = "log_barrier"
    power = 1.0

    def value(self, x):
        x = self.check_primal(x)
        return -float(np.sum(np.log(x)))

    def grad(self, x):
        x = self.check_primal(x)
        return -1.0 / x

    def hess_diag(self, x):
        x = self.check_primal(x)
        return x ** -2.0

    def bregman(self, y, x):
        y = self.check_primal(y)
        x = self.check_primal(x)
        r = y / x
        return float(np.sum(r - 1.0 - np.log(r)))

    def conj_value(self, theta):
        theta = self.check_dual(theta)
        return float(np.sum(-1.0 - np.log(-theta)))


class NegEntropy(Regularizer):
    """Psi(x) = sum x_i ln x_i; only used for the EXP3 reference policy."""

    name = "neg_entropy"

    def check_primal(self, x, closure=False):
        x = self._as_point(x)
        bad = (x < 0) if closure else (x <= 0)
        if np.any(bad) or not np.all(np.isfinite(x)):
            raise DomainError(f"{self!r}: point outside domain")
        return x

    def check_dual(self, theta):
        theta = self._as_point(theta)
        if not np.all(np.isfinite(theta)):
            raise DomainError(f"{self!r}: non-finite dual point")
        return theta

    def value(self, x):
        x = self.check_primal(x, closure=True)
        pos = x > 0
        return float(np.sum(x[pos] * np.log(x[pos])))

    def grad(self, x):
        x = self.check_primal(x)
        return np.log(x) + 1.0

    def hess_diag(self, x):
        x = self.check_primal(x)
        return 1.0 / x

    def bregman(self, y, x):
        y = self.check_primal(y, closure=True)
        x = self.check_primal(x)
        pos = y > 0
        return float(np.sum(y[pos] * np.log(y[pos] / x[pos])) - y.sum() + x.sum())

    def conj_value(self, theta):
        theta = self.check_dual(theta)
        return float(np.sum(np.exp(theta - 1.0)))

    def conj_grad(self, theta):
        theta = self.check_dual(theta)
        return np.exp(theta - 1.0)


class HypercubeBarrier(Regularizer):
    """Psi(x) = -sum [ln(1 - x_i) + ln(1 + x_i)] on the open cube (-1, 1)^n."""

    name = "hypercube"
    on_simplex = False

    @property
    def self_concordance(self):
        return 2.0 * self.dim

    def check_primal(self, x, closure=False):
        x = self._as_point(x)
        if not np.all(np.abs(x) < 1.0):
            raise DomainError(f"{self!r}: point not strictly inside the cube")
        return x

    def check_dual(self, theta):
        theta = self._as_point(theta)
        if not np.all(np.isfinite(theta)):
            raise DomainError(f"{self!r}: non-finite dual point")
        return theta

    def value(self, x):
        x = self.check_primal(x)
        return -float(np.sum(np.log1p(-x) + np.log1p(x)))

    def grad(self, x):
        x = self.check_primal(x)
        return 2.0 * x / ((1.0 - x) * (1.0 + x))

    def hess_diag(self, x):
        x = self.check_primal(x)
        q = (1.0 - x) * (1.0 + x)
        return (2.0 + 2.0 * x * x) / (q * q)

    def hessian(self, x):
        return np.diag(self.hess_diag(x))

    def bregman(self, y, x):
        y = self.check_primal(y)
        return self.value(y) - self.value(x) - float(self.grad(x) @ (y - x))

    def conj_grad(self, theta):
        theta = self.check_dual(theta)
        # stable form of (-1 + sqrt(1 + t^2)) / t, exact 0 at t = 0
        return theta / (1.0 + np.sqrt(1.0 + theta * theta))

    def conj_value(self, theta):
        x = self.conj_grad(theta)
        return float(theta @ x) - self.value(x)

    def eigensystem(self, x):
        return self.hess_diag(x), np.eye(self.dim)


class BallBarrier(Regularizer):
    """Psi(x) = -ln(1 - |x|^2) on the open unit ball."""

    name = "ball"
    on_simplex = False
    self_concordance = 1.0

    def _slack(self, x):
        return 1.0 - float(x @ x)

    def check_primal(self, x, closure=False):
        x = self._as_point(x)
        if not np.all(np.isfinite(x)) or self._slack(x) <= 0:
            raise DomainError(f"{self!r}: point not strictly inside the ball")
        return x

    def check_dual(self, theta):
        theta = self._as_point(theta)
        if not np.all(np.isfinite(theta)):
            raise DomainError(f"{self!r}: non-finite dual point")
        return theta

    def value(self, x):
        x = self.check_primal(x)
        return -math.log(self._slack(x))

    def grad(self, x):
        x = self.check_primal(x)
        return 2.0 * x / self._slack(x)

    def hessian(self, x):
        x = self.check_primal(x)
        s = self._slack(x)
        return 2.0 * np.eye(self.dim) / s + 4.0 * np.outer(x, x) / (s * s)

    def bregman(self, y, x):
        y = self.check_primal(y)
        return self.value(y) - self.value(x) - float(self.grad(x) @ (y - x))

    def conj_grad(self, theta):
        theta = self.check_dual(theta)
        rho = float(np.linalg.norm(theta))
        if rho == 0.0:
            return np.zeros(self.dim)
        return ball_radius(rho) * theta / rho

    def conj_value(self, theta):
        x = self.conj_grad(theta)
        return float(theta @ x) - self.value(x)

    def eigensystem(self, x):
        """Radial direction first, then an orthonormal complement."""
        x = self.check_primal(x)
        s = self._slack(x)
        r2 = 1.0 - s
        vals = np.full(self.dim, 2.0 / s)
        vals[0] = (2.0 + 2.0 * r2) / (s * s)
        r = math.sqrt(r2)
        if r == 0.0:
            return vals, np.eye(self.dim)
        u = x / r
        v = u.copy()
        v[0] -= 1.0
        vv = float(v @ v)
        if vv < 1e-30:
            return vals, np.eye(self.dim)
        # Householder reflection taking e_1 to u
        vecs = np.eye(self.dim) - 2.0 * np.outer(v, v) / vv
        return vals, vecs


def ball_radius(rho: float) -> float:
    """Solve rho (1 - r^2) = 2 r for r in [0, 1) by Newton from r = 1.

    The residual is concave and decreasing, so iterates descend monotonically
    onto the root.
    """
    r = 1.0
    for _ in range(BALL_MAX_ITER):
        g = rho * (1.0 - r * r) - 2.0 * r
        dg = -2.0 * rho * r - 2.0
        step = g / dg
        r -= step
        if abs(step) <= BALL_TOL:
            return r
    raise ConvergenceError(f"ball radius Newton did not converge for rho={rho}")


REGULARIZERS = {
    cls.name: cls
    for cls in (TsallisHalf, LogBarrierSimplex, NegEntropy, HypercubeBarrier, BallBarrier)
}


def make_regularizer(name: str, dim: int) -> Regularizer:
    try:
        return REGULARIZERS[name](dim)
    except KeyError:
        raise ValueError(f"unknown regularizer {name!r}; choose from {sorted(REGULARIZERS)}") from None


def psi_value(reg: Regularizer, x) -> float:
    return reg.value(x)


def psi_grad(reg: Regularizer, x) -> np.ndarray:
    return reg.grad(x)


def bregman(reg: Regularizer, y, x) -> float:
    """D(y, x) = Psi(y) - Psi(x) - <grad Psi(x), y - x>."""
    return reg.bregman(y, x)


def bregman_conjugate(reg: Regularizer, a, b) -> float:
    """Bregman divergence of the Fenchel conjugate, D*(a, b)."""
    return reg.conj_value(a) - reg.conj_value(b) - float(reg.conj_grad(b) @ (np.asarray(a) - np.asarray(b)))


def mirror_unconstrained(reg: Regularizer, theta) -> np.ndarray:
    """grad Psi*(theta), the inverse of grad Psi."""
    return reg.conj_grad(theta)


def _simplex_root(theta: np.ndarray, power: float) -> np.ndarray:
    # Work relative to max(theta) so the largest coordinate's gap stays O(1)
    # and lam is resolved to full precision regardless of theta's magnitude.
    k = theta.size
    shifted = theta - theta.max()
    lo, hi = 1.0, float(k) ** (1.0 / power)  # residual >= 0 at lo, <= 0 at hi
    lam = hi
    for _ in range(SIMPLEX_MAX_ITER):
        gaps = lam - shifted
        x = gaps ** -power
        f = math.fsum(x) - 1.0
        if abs(f) <= SIMPLEX_TOL:
            return x
        if f > 0:
            lo = lam
        else:
            hi = lam
        if hi - lo <= 4.0 * np.spacing(hi):
            return x
        slope = -power * float(np.sum(x / gaps))
        nxt = lam - f / slope
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        lam = nxt
    raise ConvergenceError("simplex normalization did not converge; malformed dual point?")


def mirror_simplex(reg: Regularizer, theta) -> np.ndarray:
    """Restricted mirror map: argmin over the simplex of <-theta, x> + Psi(x)."""
    if not reg.on_simplex:
        raise TypeError(f"{reg!r} is not a simplex regularizer")
    theta = reg._as_point(theta)
    if not np.all(np.isfinite(theta)):
        raise ConvergenceError("non-finite dual point")
    if isinstance(reg, NegEntropy):
        w = np.exp(theta - theta.max())
        x = w / w.sum()
    else:
        x = _simplex_root(theta, reg.power)
    if np.any(x < UNDERFLOW_FLOOR):
        logger.warning("mirror_simplex: %d coordinates underflowed, clamping", int(np.sum(x < UNDERFLOW_FLOOR)))
        x = np.maximum(x, UNDERFLOW_FLOOR)
    return x / x.sum()


def omd_step(reg: Regularizer, x, lhat, sigma: float):
    """One mirror-descent step from x against the estimator lhat at scale sigma.

    Returns ``(z, ztilde)``: the simplex-constrained and the unconstrained
    images of ``grad Psi(x) - lhat / sigma``.  For barrier regularizers both
    coincide.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    lhat = np.asarray(lhat, dtype=float)
    theta = reg.grad(x) - lhat / sigma
    if not np.any(lhat):
        x = np.array(x, dtype=float)
        return x, x.copy()
    ztilde = reg.conj_grad(theta)
    if not reg.on_simplex:
        return ztilde, ztilde.copy()
    return mirror_simplex(reg, theta), ztilde


def barrier_hessian_eigensystem(reg: Regularizer, x):
    """Eigenvalues and eigenvectors (as columns) of the barrier Hessian at x."""
    if reg.on_simplex:
        raise TypeError(f"{reg!r} is not a barrier regularizer")
    return reg.eigensystem(x)
