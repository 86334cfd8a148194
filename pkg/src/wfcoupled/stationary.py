"""Stationary density ``pi(x) exp(2 V(x)) / Z`` and its normalizing constant.

``pi`` is a product over loci of unnormalized Dirichlet densities with
parameters ``2u``.  ``Z`` is available in closed form for two coupled
biallelic loci (a Kummer-function series), by tensor Gauss-Jacobi
quadrature for up to three biallelic loci, and by Monte Carlo for any
parent-independent model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, roots_jacobi

from ._random import derived_rng
from .errors import (
    DomainError,
    NoConvergence,
    NonIntegrableEvaluation,
    SingularAtBoundary,
    UnsupportedModelShape,
)
from .fitness import allele_mean_fitnesses, mean_fitness, mutation_drift, potential, potential_gradient
from .model import ValidatedModel, as_augmented

SERIES_RTOL = 1e-16
SERIES_CAP = 10_000
QUAD_NODES = 200
MC_BLOCK = 100_000


def log_gamma(z: float) -> float:
    if not z > 0:
        raise DomainError(f"log_gamma needs z > 0, got {z}")
    return math.lgamma(z)


def dirichlet_log_normalizer(alpha) -> float:
    """``log( prod Gamma(alpha_k) / Gamma(sum alpha) )``."""
    alpha = np.asarray(alpha, dtype=float)
    return float(gammaln(alpha).sum() - gammaln(alpha.sum()))


def log_pi(model: ValidatedModel, x):
    """``sum (2u - 1) log x`` over every locus and allele."""
    xbar = as_augmented(model, x)
    expo = 2.0 * model.mutation - 1.0
    zero = xbar <= 0
    if np.any(zero & (expo < 0)):
        raise NonIntegrableEvaluation("density is infinite at this boundary point")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expo == 0, 0.0, expo * np.log(xbar))
    return terms.sum(axis=-1)


def log_density_unnormalized(model: ValidatedModel, x):
    return log_pi(model, x) + 2.0 * potential(model, x)


def kummer_M(a: float, b: float, z: float) -> float:
    """Confluent hypergeometric ``M(a, b, z)`` by its power series.

    For ``z < 0`` the series of ``exp(z) M(b - a, b, -z)`` is summed instead,
    which has no cancellation for the parameters used here.
    """
    if b <= 0:
        raise DomainError("kummer_M needs b > 0")
    if z < 0:
        return math.exp(z) * _kummer_series(b - a, b, -z)
    return _kummer_series(a, b, z)


def _kummer_series(a, b, z):
    term = 1.0
    total = 1.0
    for n in range(SERIES_CAP):
        term *= (a + n) * z / ((b + n) * (n + 1))
        total += term
        if term == 0.0 or (abs(term) < SERIES_RTOL * abs(total) and n + 1 > abs(z)):
            return total
    raise NoConvergence(f"M({a}, {b}, {z}) series did not converge in {SERIES_CAP} terms")


def _two_locus_coupling(model: ValidatedModel) -> float:
    """The scalar ``h = J_12(1,1)`` of the two-locus biallelic family, else raise."""
    if model.sizes != (2, 2):
        raise UnsupportedModelShape("closed form needs two biallelic loci")
    if not model.parent_independent:
        raise UnsupportedModelShape("closed form needs parent-independent mutation")
    if np.any(model.fields != 0):
        raise UnsupportedModelShape("closed form needs zero single-locus fields")
    J = model.coupling(0, 1)
    if np.any(J.ravel()[1:] != 0):
        raise UnsupportedModelShape("closed form allows only J_12(1,1) to be nonzero")
    return float(J[0, 0])


def log_normalizer_closed_2x2(model: ValidatedModel) -> float:
    """``log Z`` for ``V = h x y`` on two biallelic loci.

    Integrating out the second locus gives a Beta function times
    ``M(a2, a2 + b2, 2 h x)``; expanding that in powers of ``x`` and
    integrating term by term leaves a series of Beta functions.  Terms are
    formed in log space and summed with their signs.
    """
    h = _two_locus_coupling(model)
    a1, b1 = 2 * model.mutation[0], 2 * model.mutation[1]
    a2, b2 = 2 * model.mutation[2], 2 * model.mutation[3]
    pref = gammaln(a2) + gammaln(b2) - gammaln(a2 + b2)
    if h == 0:
        return float(pref + gammaln(a1) + gammaln(b1) - gammaln(a1 + b1))
    log2h = math.log(2 * abs(h))
    logs, signs = [], []
    for n in range(SERIES_CAP):
        logs.append(gammaln(a2 + n) - gammaln(a2) - gammaln(a2 + b2 + n) + gammaln(a2 + b2)
                    + n * log2h - gammaln(n + 1.0)
                    + gammaln(a1 + n) + gammaln(b1) - gammaln(a1 + b1 + n))
        signs.append(-1.0 if (h < 0 and n % 2) else 1.0)
        if n > 2 * abs(h):
            top = max(logs)
            partial = abs(sum(sg * math.exp(lt - top) for sg, lt in zip(signs, logs)))
            if math.exp(logs[-1] - top) < SERIES_RTOL * partial:
                break
    else:
        raise NoConvergence("closed-form normalizer series did not converge")
    top = max(logs)
    total = math.fsum(sg * math.exp(lt - top) for sg, lt in zip(signs, logs))
    return float(pref + top + math.log(total))


def normalizer_closed_2x2(model: ValidatedModel) -> float:
    return math.exp(log_normalizer_closed_2x2(model))


def _require_parent_independent(model):
    if not model.parent_independent:
        raise UnsupportedModelShape("stationary density needs parent-independent mutation")


def normalizer_mc(model: ValidatedModel, samples: int = 10**6, seed: int = 0,
                  block: int = MC_BLOCK):
    """Monte Carlo ``Z`` with its standard error.

    Samples ``x`` from the product of Dirichlet(2u) laws, so ``Z`` is the
    product of Dirichlet normalizers times the mean of ``exp(2V)``.  Blocks
    use derived streams ``(seed, b)`` and are merged with a log-shifted
    mean/variance combination.
    """
    _require_parent_independent(model)
    log_norm = sum(dirichlet_log_normalizer(2 * model.locus_slice(model.mutation, i))
                   for i in range(model.num_loci))
    alpha = 2.0 * model.mutation
    n_tot, shift, mean, m2 = 0, -math.inf, 0.0, 0.0
    for b, start in enumerate(range(0, samples, block)):
        n = min(block, samples - start)
        rng = derived_rng(seed, b)
        g = rng.standard_gamma(alpha, size=(n, model.dim))
        parts = []
        for i in range(model.num_loci):
            seg = model.locus_slice(g, i)
            parts.append(seg / seg.sum(axis=1, keepdims=True))
        x = np.concatenate(parts, axis=1)
        lw = 2.0 * potential(model, x)
        c = float(lw.max())
        w = np.exp(lw - c)
        bm = float(w.mean())
        bm2 = float(((w - bm) ** 2).sum())
        new_shift = max(shift, c)
        mean *= math.exp(shift - new_shift) if n_tot else 0.0
        m2 *= math.exp(2 * (shift - new_shift)) if n_tot else 0.0
        bm *= math.exp(c - new_shift)
        bm2 *= math.exp(2 * (c - new_shift))
        delta = bm - mean
        tot = n_tot + n
        mean += delta * n / tot
        m2 += bm2 + delta * delta * n_tot * n / tot
        n_tot, shift = tot, new_shift
    scale = math.exp(log_norm + shift)
    se = math.sqrt(m2 / (n_tot - 1) / n_tot) if n_tot > 1 else math.inf
    return scale * mean, scale * se


def _biallelic_checks(model: ValidatedModel, max_loci=3):
    if any(m != 2 for m in model.sizes) or model.num_loci > max_loci:
        raise UnsupportedModelShape(f"quadrature needs at most {max_loci} biallelic loci")
    _require_parent_independent(model)


def jacobi_rule(a: float, b: float, n: int):
    """Nodes/weights on [0, 1] for the weight ``s^(a-1) (1-s)^(b-1)``."""
    t, w = roots_jacobi(n, b - 1.0, a - 1.0)
    return 0.5 * (1.0 + t), w * 2.0 ** (-(a + b - 1.0))


def _quad_once(model: ValidatedModel, n: int) -> float:
    rules = [jacobi_rule(2 * model.mutation[2 * i], 2 * model.mutation[2 * i + 1], n)
             for i in range(model.num_loci)]
    # loop over the first axis, vectorize over the rest
    rest = rules[1:]
    s_rest = [g.ravel() for g in np.meshgrid(*[r[0] for r in rest], indexing="ij")]
    w_rest = np.ones(1)
    for r in rest:
        w_rest = np.multiply.outer(w_rest, r[1]).ravel() if w_rest.size > 1 else r[1].copy()
    total = 0.0
    for s, ws in zip(*rules[0]):
        cols = [np.full(w_rest.shape, s), np.full(w_rest.shape, 1.0 - s)]
        for r in s_rest:
            cols += [r, 1.0 - r]
        x = np.column_stack(cols)
        total += ws * float(np.sum(w_rest * np.exp(2.0 * potential(model, x))))
    return total


def normalizer_quadrature(model: ValidatedModel, nodes: int = QUAD_NODES):
    """Tensor Gauss-Jacobi ``Z`` and the change from doubling the node count.

    The Dirichlet factor of each biallelic locus is the Jacobi weight, so the
    rule integrates only the smooth factor ``exp(2V)``.
    """
    _biallelic_checks(model)
    if np.any(model.mutation < 0.5):
        raise NonIntegrableEvaluation("quadrature needs every mutation rate >= 0.5")
    z = _quad_once(model, nodes)
    z2 = _quad_once(model, 2 * nodes)
    return z, abs(z2 - z)


def flow_residual(model: ValidatedModel, x, grad_log_density=None) -> np.ndarray:
    """Probability flow per unit unnormalized density, reduced coordinates.

    ``J_k / P = p_k - (1/2) sum_l [d(d_kl)/dx_l + d_kl d(log P)/dx_l]``,
    with the drift ``p`` taken from the mean-fitness form and every
    derivative analytic.  ``grad_log_density(model, x)`` may replace the
    gradient of ``log P`` to test a different density.
    """
    _require_parent_independent(model)
    xbar = np.asarray(as_augmented(model, x), dtype=float)
    if np.any(xbar <= 0):
        raise SingularAtBoundary("flow residual is evaluated at interior points only")
    sel = xbar * (allele_mean_fitnesses(model, xbar) - mean_fitness(model, xbar))
    drift_aug = mutation_drift(model, xbar, full=True) + sel
    if grad_log_density is None:
        grad = log_density_gradient(model, xbar)
    else:
        grad = np.asarray(grad_log_density(model, xbar), dtype=float)
    out = []
    pos = 0
    for i, m in enumerate(model.sizes):
        xi = model.locus_slice(xbar, i)
        xr = xi[:-1]
        d = np.diag(xr) - np.outer(xr, xr)
        div_d = 1.0 - m * xr
        gi = grad[pos:pos + m - 1]
        out.append(model.locus_slice(drift_aug, i)[:-1] - 0.5 * (div_d + d @ gi))
        pos += m - 1
    return np.concatenate(out)


def log_pi_gradient(model: ValidatedModel, x) -> np.ndarray:
    """Reduced gradient of ``log pi``: ``(2u_l - 1)/x_l - (2u_M - 1)/x_M``."""
    xbar = as_augmented(model, x)
    g = (2.0 * model.mutation - 1.0) / xbar
    red = model.reduced_index()
    last = np.repeat(model.last_index(), np.asarray(model.sizes) - 1)
    return g[red] - g[last]


def log_density_gradient(model: ValidatedModel, x) -> np.ndarray:
    return log_pi_gradient(model, x) + 2.0 * potential_gradient(model, x)


@dataclass
class StationaryDensity:
    """Normalized stationary density with a lazily computed ``log Z``.

    ``method`` is ``"closed"``, ``"quadrature"``, ``"mc"`` or ``"auto"``
    (closed form if the model allows it, else quadrature, else Monte Carlo).
    """

    model: ValidatedModel
    method: str = "auto"
    mc_samples: int = 10**6
    seed: int = 0
    _log_z: float | None = field(default=None, repr=False)
    used_method: str | None = None
    standard_error: float | None = None

    @property
    def log_z(self) -> float:
        if self._log_z is None:
            self._compute()
        return self._log_z

    def _compute(self):
        method = self.method
        if method == "auto":
            method = _auto_method(self.model)
        if method == "closed":
            self._log_z = log_normalizer_closed_2x2(self.model)
        elif method == "quadrature":
            z, err = normalizer_quadrature(self.model)
            self._log_z = math.log(z)
            self.standard_error = err
        elif method == "mc":
            z, se = normalizer_mc(self.model, self.mc_samples, self.seed)
            self._log_z = math.log(z)
            self.standard_error = se
        else:
            raise ValueError(f"unknown normalizer method {method!r}")
        self.used_method = method

    def log_density(self, x):
        return log_density_unnormalized(self.model, x) - self.log_z

    def density(self, x):
        return np.exp(self.log_density(x))


def _auto_method(model: ValidatedModel) -> str:
    try:
        _two_locus_coupling(model)
        return "closed"
    except UnsupportedModelShape:
        pass
    if all(m == 2 for m in model.sizes) and model.num_loci <= 3 and np.all(model.mutation >= 0.5):
        return "quadrature"
    return "mc"
