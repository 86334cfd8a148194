"""Verification harness.

Two kinds of checks live here:

* exact one-generation moments of the chain (no sampling) and the rate at
  which they approach the diffusion coefficients as ``N`` grows;
* a binned comparison of simulated samples with the stationary density.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .chain import chain_params_from_diffusion
from .errors import EmptyInput, InvalidState, UnsupportedModelShape
from .fitness import allele_mean_fitnesses, full_drift, mean_fitness, potential
from .model import CouplingBlock, ModelSpec, ValidatedModel, as_augmented, validate_model
from .stationary import _require_parent_independent
from .trajectory import Trajectory

DEFAULT_N_GRID = (10**2, 10**3, 10**4, 10**5)


# -- exact moments ------------------------------------------------------------

def snap_to_lattice(model: ValidatedModel, x, N: int):
    """Nearest point of the ``1/N`` lattice (largest-remainder rounding per locus).

    Returns ``(snapped augmented state, max-norm distance)``.
    """
    xbar = as_augmented(model, x)
    counts = np.empty(model.dim, dtype=np.int64)
    for i in range(model.num_loci):
        o, m = model.offsets[i], model.sizes[i]
        target = xbar[o:o + m] * N
        base = np.floor(target).astype(np.int64)
        short = N - int(base.sum())
        order = np.argsort(-(target - base), kind="stable")
        base[order[:short]] += 1
        counts[o:o + m] = base
    snapped = counts / N
    return snapped, float(np.max(np.abs(snapped - xbar)))


def _scaled_increment(model: ValidatedModel, x: np.ndarray, N: int) -> np.ndarray:
    """``N (p - x)`` written without the cancellation of ``p - x``.

    ``N (p_k - x_k) = sum_{l != k} (u_lk q_l - u_kl q_k) + x_k (m̄_k - m̄) / vbar``.
    """
    chain_params_from_diffusion(model, N)  # raises if N is too small for the model
    mbar = float(mean_fitness(model, x))
    vbar = 1.0 + (mbar - 1.0) / N
    mk = allele_mean_fitnesses(model, x)
    sel = x * (mk - mbar) / vbar
    q = x + sel / N
    mut = []
    for i in range(model.num_loci):
        U = model.mutation_matrix(i)
        qi = model.locus_slice(q, i)
        mut.append(qi @ U - qi * U.sum(axis=1))
    return np.concatenate(mut) + sel


def exact_increment_mean(model: ValidatedModel, x, N: int) -> np.ndarray:
    """``mu^(N) = N E[X(n+1) - x | X(n) = x]`` at the snapped state (augmented)."""
    xs, _ = snap_to_lattice(model, x, N)
    return _scaled_increment(model, xs, N)


def exact_increment_cov(model: ValidatedModel, x, N: int) -> np.ndarray:
    """``N E[(X(n+1) - x)(X(n+1) - x)^T]`` at the snapped state, all coordinates.

    Within a locus the multinomial second moments give
    ``-p_k p_l + (p_k - x_k) mu_l`` off the diagonal and
    ``p_k (1 - p_k) + mu_k^2 / N`` on it; across loci the conditional
    independence leaves ``mu_k mu_l / N``.
    """
    xs, _ = snap_to_lattice(model, x, N)
    mu = _scaled_increment(model, xs, N)
    p = xs + mu / N
    cov = np.outer(mu, mu) / N
    for i in range(model.num_loci):
        o, m = model.offsets[i], model.sizes[i]
        sl = slice(o, o + m)
        pi, mi = p[sl], mu[sl]
        blk = -np.outer(pi, pi) + np.outer(mi / N, mi)
        blk[np.diag_indices(m)] = pi * (1 - pi) + mi ** 2 / N
        cov[sl, sl] = blk
    return cov


def exact_fourth_moment(model: ValidatedModel, x, N: int, i: int, k: int) -> float:
    """``N E[(X_k(n+1) - x_k)^4]`` from binomial central moments."""
    xs, _ = snap_to_lattice(model, x, N)
    mu = _scaled_increment(model, xs, N)
    idx = model.offsets[i] + k
    p = xs[idx] + mu[idx] / N
    q = 1.0 - p
    b = mu[idx]  # N p - j
    m2 = N * p * q
    m3 = N * p * q * (1 - 2 * p)
    m4 = N * p * q * (1 + 3 * (N - 2) * p * q)
    return float((m4 + 4 * b * m3 + 6 * b * b * m2 + b ** 4) / N ** 3)


def diffusion_limit_cov(model: ValidatedModel, x) -> np.ndarray:
    xbar = as_augmented(model, x)
    cov = np.zeros((model.dim, model.dim))
    for i in range(model.num_loci):
        o, m = model.offsets[i], model.sizes[i]
        xi = xbar[o:o + m]
        cov[o:o + m, o:o + m] = np.diag(xi) - np.outer(xi, xi)
    return cov


def loglog_slope(Ns, errors) -> float | None:
    errors = np.asarray(errors, dtype=float)
    if np.any(errors <= 0) or not np.all(np.isfinite(errors)):
        return None
    return float(np.polyfit(np.log(np.asarray(Ns, float)), np.log(errors), 1)[0])


@dataclass
class MomentReport:
    Ns: tuple
    rows: list = field(default_factory=list)  # (N, quantity, exact, limit, abs_error)
    slopes: dict = field(default_factory=dict)  # quantity -> slope or None
    snap_distance: float = 0.0

    def to_csv(self) -> str:
        lines = ["N,quantity,exact,limit,abs_error"]
        for N, name, ex, lim, err in self.rows:
            lines.append(f"{N},{name},{ex:.17g},{lim:.17g},{err:.17g}")
        return "\n".join(lines) + "\n"

    def worst_slope_deviation(self) -> float:
        vals = [abs(s + 1.0) for s in self.slopes.values() if s is not None]
        return max(vals) if vals else float("nan")


def moment_report(model: ValidatedModel, x, Ns=DEFAULT_N_GRID) -> MomentReport:
    """Exact scaled moments over a grid of ``N`` and their error-decay slopes.

    Quantities are named ``mu[i,k]``, ``d[i,k;j,l]`` and ``e[i,k]`` with
    1-based loci and alleles.
    """
    Ns = tuple(int(N) for N in Ns)
    rep = MomentReport(Ns)
    series: dict = {}
    labels = [(i, k) for i in range(model.num_loci) for k in range(model.sizes[i])]
    for N in Ns:
        xs, dist = snap_to_lattice(model, x, N)
        rep.snap_distance = max(rep.snap_distance, dist)
        mu = exact_increment_mean(model, xs, N)
        mu_lim = full_drift(model, xs, full=True)
        cov = exact_increment_cov(model, xs, N)
        cov_lim = diffusion_limit_cov(model, xs)
        for a, (i, k) in enumerate(labels):
            name = f"mu[{i + 1},{k + 1}]"
            rep.rows.append((N, name, mu[a], mu_lim[a], abs(mu[a] - mu_lim[a])))
            series.setdefault(name, []).append(abs(mu[a] - mu_lim[a]))
            e = exact_fourth_moment(model, xs, N, i, k)
            name = f"e[{i + 1},{k + 1}]"
            rep.rows.append((N, name, e, 0.0, e))
            series.setdefault(name, []).append(e)
            for b in range(a, len(labels)):
                j, l = labels[b]
                name = f"d[{i + 1},{k + 1};{j + 1},{l + 1}]"
                err = abs(cov[a, b] - cov_lim[a, b])
                rep.rows.append((N, name, cov[a, b], cov_lim[a, b], err))
                series.setdefault(name, []).append(err)
    rep.slopes = {name: loglog_slope(Ns, errs) for name, errs in series.items()}
    return rep


def uniform_decay_slopes(model: ValidatedModel, points, Ns=DEFAULT_N_GRID) -> dict:
    """Slopes of the worst error over ``points``, per quantity.

    At a single point the leading ``1/N`` coefficient of an entry can nearly
    cancel, and the smallest ``N`` is then still pre-asymptotic.  The sup
    over several points measures the uniform rate instead.
    """
    worst: dict = {}
    for x in points:
        for N, name, _, _, err in moment_report(model, x, Ns).rows:
            per_n = worst.setdefault(name, {})
            per_n[N] = max(per_n.get(N, 0.0), err)
    return {name: loglog_slope(Ns, [per_n[N] for N in Ns]) for name, per_n in worst.items()}


def random_lattice_point(model: ValidatedModel, rng, denom=100, min_count=10) -> np.ndarray:
    """Interior point on the ``1/denom`` lattice, every coordinate >= min_count/denom."""
    parts = []
    for m in model.sizes:
        free = denom - m * min_count
        if free < 0:
            raise InvalidState("min_count too large")
        extra = rng.multinomial(free, np.full(m, 1.0 / m))
        parts.append((min_count + extra) / denom)
    return np.concatenate(parts)


# -- stationarity -------------------------------------------------------------

def _cell_rule(a, b, lo, hi, n):
    """Nodes and weights for the integral of ``s^(a-1)(1-s)^(b-1) f(s)`` over a cell.

    Cells touching 0 or 1 put the singular power into a Gauss-Jacobi weight;
    other cells use Gauss-Legendre on the whole integrand.
    """
    w_len = hi - lo
    if lo == 0.0 and hi == 1.0:
        t, w = roots_jacobi(n, b - 1.0, a - 1.0)
        return 0.5 * (1 + t), w * 2.0 ** (-(a + b - 1.0))
    if lo == 0.0:
        # s = w_len * t, weight t^(a-1) on [0, 1]
        t, w = roots_jacobi(n, 0.0, a - 1.0)
        t = 0.5 * (1 + t)
        w = w * 2.0 ** (-a)
        s = w_len * t
        return s, w * w_len ** a * (1 - s) ** (b - 1.0)
    if hi == 1.0:
        t, w = roots_jacobi(n, b - 1.0, 0.0)
        t = 0.5 * (1 + t)
        w = w * 2.0 ** (-b)
        s = lo + w_len * t
        return s, w * w_len ** b * s ** (a - 1.0)
    t, w = roots_legendre(n)
    s = lo + w_len * 0.5 * (1 + t)
    return s, 0.5 * w_len * w * s ** (a - 1.0) * (1 - s) ** (b - 1.0)


def _axis_rule(a, b, edges, n):
    nodes, weights, cells = [], [], []
    for c in range(len(edges) - 1):
        s, w = _cell_rule(a, b, float(edges[c]), float(edges[c + 1]), n)
        nodes.append(s)
        weights.append(w)
        cells.append(np.full(len(s), c))
    return np.concatenate(nodes), np.concatenate(weights), np.concatenate(cells)


def _tensor_masses(model: ValidatedModel, axis_edges, nodes_per_cell, moments=False):
    """Integral of the unnormalized density over every cell of a product grid.

    With ``moments=True`` also returns the integrals of ``s_i`` and
    ``s_i s_j`` over the whole box.
    """
    L = model.num_loci
    rules = []
    for i in range(L):
        a, b = 2 * model.mutation[2 * i], 2 * model.mutation[2 * i + 1]
        rules.append(_axis_rule(a, b, axis_edges[i], nodes_per_cell[i]))
    shape = tuple(len(e) - 1 for e in axis_edges)
    masses = np.zeros(shape)
    rest = rules[1:]
    if rest:
        grids = np.meshgrid(*[r[0] for r in rest], indexing="ij")
        s_rest = [g.ravel() for g in grids]
        w_rest = np.prod([g.ravel() for g in np.meshgrid(*[r[1] for r in rest], indexing="ij")], axis=0)
        c_rest = np.ravel_multi_index([g.ravel() for g in np.meshgrid(*[r[2] for r in rest], indexing="ij")],
                                      shape[1:])
    else:
        s_rest, w_rest, c_rest = [], np.ones(1), np.zeros(1, dtype=np.int64)
    m1 = np.zeros(L)
    m2 = np.zeros((L, L))
    for s, ws, c in zip(*rules[0]):
        cols = [np.full(w_rest.shape, s), np.full(w_rest.shape, 1 - s)]
        for r in s_rest:
            cols += [r, 1 - r]
        x = np.column_stack(cols)
        vals = ws * w_rest * np.exp(2.0 * potential(model, x))
        masses[c] += np.bincount(c_rest, weights=vals, minlength=int(np.prod(shape[1:]))).reshape(shape[1:])
        if moments:
            firsts = np.column_stack([np.full(w_rest.shape, s)] + s_rest)
            m1 += vals @ firsts
            m2 += (firsts * vals[:, None]).T @ firsts
    if moments:
        return masses, m1, m2
    return masses


def analytic_cell_probabilities(model: ValidatedModel, bins: int, nodes_per_cell=None) -> np.ndarray:
    _check_biallelic(model)
    edges = np.linspace(0.0, 1.0, bins + 1)
    if nodes_per_cell is None:
        nodes_per_cell = 8 if model.num_loci <= 2 else 4
    masses = _tensor_masses(model, [edges] * model.num_loci, [nodes_per_cell] * model.num_loci)
    return masses / masses.sum()


def analytic_marginal_cdf(model: ValidatedModel, i: int, cells: int = 1000, nodes=8):
    """Edges and CDF values of the stationary marginal of ``x_1^(i)``."""
    _check_biallelic(model)
    L = model.num_loci
    order = [i] + [j for j in range(L) if j != i]
    edges_fine = np.linspace(0.0, 1.0, cells + 1)
    axis_edges = [edges_fine if j == i else np.array([0.0, 1.0]) for j in range(L)]
    n_nodes = [nodes if j == i else 40 for j in range(L)]
    # put locus i first so the loop runs over its nodes
    perm_model = _permute_loci(model, order)
    masses = _tensor_masses(perm_model, [axis_edges[j] for j in order], [n_nodes[j] for j in order])
    cell_mass = masses.reshape(cells, -1).sum(axis=1)
    cdf = np.concatenate([[0.0], np.cumsum(cell_mass)])
    return edges_fine, cdf / cdf[-1]


def analytic_moments(model: ValidatedModel, nodes: int = 60):
    """Means, covariance and correlation of the first coordinates under the stationary law."""
    _check_biallelic(model)
    L = model.num_loci
    masses, m1, m2 = _tensor_masses(model, [np.array([0.0, 1.0])] * L, [nodes] * L, moments=True)
    z = masses.sum()
    mean = m1 / z
    cov = m2 / z - np.outer(mean, mean)
    sd = np.sqrt(np.diag(cov))
    return mean, cov, cov / np.outer(sd, sd)


def _permute_loci(model: ValidatedModel, order):
    spec = model.spec
    pos = {old: new for new, old in enumerate(order)}
    loci = tuple(spec.loci[o] for o in order)
    blocks = tuple(CouplingBlock(pos[i], pos[r], J) for (i, r), J in model.blocks.items())
    return validate_model(ModelSpec(loci, blocks))


def _check_biallelic(model: ValidatedModel):
    if any(m != 2 for m in model.sizes):
        raise UnsupportedModelShape("binned stationarity checks need biallelic loci")
    if model.num_loci > 3:
        raise UnsupportedModelShape("binned stationarity checks support at most 3 loci")
    _require_parent_independent(model)


def integrated_autocorrelation_time(y, c: float = 5.0) -> float:
    """Integrated autocorrelation time with an automatic (self-consistent) window."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n < 2:
        return 1.0
    y = y - y.mean()
    f = np.fft.rfft(y, n=2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    if acf[0] == 0:
        return 1.0
    acf /= acf[0]
    taus = 2.0 * np.cumsum(acf) - 1.0
    window = np.arange(n) >= c * taus
    m = int(np.argmax(window)) if np.any(window) else n - 1
    return float(max(taus[m], 1.0))


def ks_statistic(samples, edges, cdf) -> float:
    s = np.sort(np.asarray(samples, dtype=float))
    n = len(s)
    F = np.interp(s, edges, cdf)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


@dataclass
class StationarityReport:
    n: int
    bins: int
    tv: float
    ks: list
    tau_int: float
    ess: float
    corr_empirical: list
    corr_analytic: list
    mean_empirical: list
    mean_analytic: list

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def stationarity_test(model: ValidatedModel, trajectory, bins: int = 30) -> StationarityReport:
    """Compare samples (a Trajectory or an ``(n, dim)`` array) with the stationary law."""
    states = trajectory.states if isinstance(trajectory, Trajectory) else np.asarray(trajectory, float)
    if states.ndim != 2 or states.shape[0] == 0:
        raise EmptyInput("no samples to test")
    _check_biallelic(model)
    L = model.num_loci
    firsts = states[:, [model.offsets[i] for i in range(L)]]
    n = len(firsts)
    edges = np.linspace(0.0, 1.0, bins + 1)
    hist, _ = np.histogramdd(firsts, bins=[edges] * L)
    emp = hist / n
    ana = analytic_cell_probabilities(model, bins)
    tv = 0.5 * float(np.abs(emp - ana).sum())
    ks = []
    for i in range(L):
        e, F = analytic_marginal_cdf(model, i)
        ks.append(ks_statistic(firsts[:, i], e, F))
    tau = integrated_autocorrelation_time(firsts[:, 0])
    mean_a, _, corr_a = analytic_moments(model)
    corr_e = np.corrcoef(firsts, rowvar=False) if L > 1 else np.ones((1, 1))
    return StationarityReport(
        n=n, bins=bins, tv=tv, ks=ks, tau_int=tau, ess=n / tau,
        corr_empirical=np.atleast_2d(corr_e).tolist(), corr_analytic=corr_a.tolist(),
        mean_empirical=firsts.mean(axis=0).tolist(), mean_analytic=mean_a.tolist())
