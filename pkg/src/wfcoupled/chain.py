"""Discrete-generation Wright-Fisher chain with selection and mutation.

Each generation, every locus independently resamples ``N`` alleles from
``Multinomial(N, p)`` with ``p_k = sum_l ups_lk q_l`` and
``q_k = x_k vbar_k / vbar``.  Rates are the diffusion-scale ones divided by
``N``; viabilities are ``v_sigma = 1 + (m_sigma - 1)/N`` so that the mean
viabilities are linear in the mean fitnesses.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._random import as_rng, derived_rng
from .errors import InvalidState, PopulationTooSmall
from .fitness import BRUTE_FORCE_LIMIT, allele_mean_fitnesses, fitness_tensor, mean_fitness
from .model import OccupancyState, ValidatedModel, as_augmented
from .trajectory import Trajectory


@dataclass(frozen=True, eq=False)
class ChainParams:
    model: ValidatedModel
    N: int
    upsilon: tuple  # per locus, row = source allele, rows sum to 1

    @property
    def sizes(self):
        return self.model.sizes


def min_haplotype_fitness(model: ValidatedModel) -> float:
    """Exact minimum over haplotypes when enumerable, otherwise a lower bound."""
    if model.num_haplotypes <= BRUTE_FORCE_LIMIT:
        return float(fitness_tensor(model).min())
    low = 1.0 + sum(model.locus_slice(model.fields, i).min() for i in range(model.num_loci))
    return low + sum(J.min() for J in model.blocks.values())


def chain_params_from_diffusion(model: ValidatedModel, N: int) -> ChainParams:
    N = int(N)
    if N < 1:
        raise PopulationTooSmall("N must be >= 1")
    ups = []
    for i in range(model.num_loci):
        U = model.mutation_matrix(i) / N
        out_mass = U.sum(axis=1)
        if np.any(out_mass > 1):
            raise PopulationTooSmall(
                f"locus {i + 1}: per-generation mutation mass {out_mass.max():.3g} > 1 at N={N}")
        U = U.copy()
        np.fill_diagonal(U, 1.0 - out_mass)
        U.setflags(write=False)
        ups.append(U)
    mmin = min_haplotype_fitness(model)
    if 1.0 + (mmin - 1.0) / N <= 0:
        raise PopulationTooSmall(
            f"viability 1 + (m - 1)/N <= 0 for minimal fitness {mmin:.3g} at N={N}")
    return ChainParams(model, N, tuple(ups))


def _freq(params: ChainParams, x):
    if isinstance(x, OccupancyState):
        return x.stacked / x.population_size
    return as_augmented(params.model, x)


def selection_probabilities(params: ChainParams, x) -> np.ndarray:
    """``q_k = x_k vbar_k / vbar`` stacked over loci (augmented layout)."""
    xbar = _freq(params, x)
    N = params.N
    vbar = 1.0 + (np.asarray(mean_fitness(params.model, xbar)) - 1.0) / N
    vk = 1.0 + (allele_mean_fitnesses(params.model, xbar) - 1.0) / N
    return xbar * vk / vbar[..., None]


def sampling_probabilities(params: ChainParams, x) -> np.ndarray:
    """``p_k = sum_l ups_lk q_l`` stacked over loci (augmented layout)."""
    q = selection_probabilities(params, x)
    model = params.model
    p = np.concatenate([model.locus_slice(q, i) @ params.upsilon[i]
                        for i in range(model.num_loci)], axis=-1)
    return np.clip(p, 0.0, 1.0)


def sample_counts(params: ChainParams, p: np.ndarray, rng) -> np.ndarray:
    """Multinomial counts per locus by sequential conditional binomials."""
    model = params.model
    N = params.N
    out = np.empty(p.shape, dtype=np.int64)
    for i in range(model.num_loci):
        o, m = model.offsets[i], model.sizes[i]
        left = np.full(p.shape[:-1], N, dtype=np.int64)
        mass = np.ones(p.shape[:-1])
        for k in range(m - 1):
            pk = p[..., o + k]
            with np.errstate(divide="ignore", invalid="ignore"):
                cond = np.where(mass > 0, pk / mass, 1.0)
            c = rng.binomial(left, np.clip(cond, 0.0, 1.0))
            out[..., o + k] = c
            left = left - c
            mass = mass - pk
        out[..., o + m - 1] = left
    return out


def step_chain(params: ChainParams, j, rng=None):
    """One generation.  Accepts an OccupancyState or an integer count array."""
    rng = as_rng(rng)
    if isinstance(j, OccupancyState):
        if j.population_size != params.N:
            raise InvalidState("occupancy N does not match chain N")
        counts = j.stacked
        new = sample_counts(params, sampling_probabilities(params, counts / params.N), rng)
        model = params.model
        return OccupancyState(tuple(model.split(new)), params.N)
    counts = np.asarray(j)
    return sample_counts(params, sampling_probabilities(params, counts / params.N), rng)


def _initial_counts(params: ChainParams, init) -> np.ndarray:
    if isinstance(init, OccupancyState):
        counts = init.stacked
    else:
        xbar = as_augmented(params.model, init)
        counts = np.rint(xbar * params.N).astype(np.int64)
        if not np.allclose(counts, xbar * params.N, atol=1e-9):
            raise InvalidState(f"initial state is not on the 1/{params.N} lattice")
    for i, part in enumerate(params.model.split(counts)):
        if part.sum() != params.N:
            raise InvalidState(f"locus {i + 1}: counts sum to {part.sum()}, not N")
    return counts


def simulate_chain(params: ChainParams, init, generations: int, thin: int = 1,
                   rng=None, seed=None) -> Trajectory:
    """Run ``generations`` steps; record every ``thin`` at times ``n/N``."""
    if generations < 0 or thin < 1:
        raise ValueError("need generations >= 0 and thin >= 1")
    rng = as_rng(rng, seed)
    counts = _initial_counts(params, init)
    nrec = generations // thin + 1
    out = np.empty((nrec, params.model.dim))
    out[0] = counts / params.N
    pos = 1
    for n in range(1, generations + 1):
        counts = step_chain(params, counts, rng)
        if n % thin == 0:
            out[pos] = counts / params.N
            pos += 1
    times = np.arange(nrec) * thin / params.N
    return Trajectory(times, out, params.model.sizes)


def chain_endpoints(params: ChainParams, init, generations: int, replicates: int,
                    seed: int = 0, block: int = 500) -> np.ndarray:
    """Frequencies after ``generations`` steps for many independent replicates.

    Replicates run vectorized in blocks; block ``b`` uses the stream derived
    from ``(seed, b)``.
    """
    counts0 = _initial_counts(params, init)
    ends = []
    for b, start in enumerate(range(0, replicates, block)):
        rng = derived_rng(seed, b)
        counts = np.tile(counts0, (min(block, replicates - start), 1))
        for _ in range(generations):
            counts = step_chain(params, counts, rng)
        ends.append(counts / params.N)
    return np.concatenate(ends, axis=0)
