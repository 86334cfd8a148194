"""Fitness, the potential V and the selection / mutation drift.

State arguments ``x`` may be a FrequencyState, an augmented vector (all
``M_i`` coordinates per locus) or a reduced vector (last coordinate of each
locus dropped).  Most functions also accept a stack of states with the
coordinates on the last axis.  Drift vectors are returned in reduced
coordinates unless ``full=True``.
"""
from __future__ import annotations

import itertools

import numpy as np

from .errors import InvalidState, ModelTooLarge
from .model import ValidatedModel, as_augmented

BRUTE_FORCE_LIMIT = 10**6


def _check_haplotype(model: ValidatedModel, sigma) -> tuple:
    sigma = tuple(int(s) for s in sigma)
    if len(sigma) != model.num_loci:
        raise InvalidState(f"haplotype has {len(sigma)} loci, model has {model.num_loci}")
    for i, (s, m) in enumerate(zip(sigma, model.sizes)):
        if not 0 <= s < m:
            raise InvalidState(f"allele index {s} out of range at locus {i}")
    return sigma


def haplotype_fitness(model: ValidatedModel, sigma) -> float:
    """``m_sigma = 1 + sum_r h_r(s_r) + sum_{r<s} J_rs(s_r, s_s)`` (0-based alleles)."""
    sigma = _check_haplotype(model, sigma)
    val = 1.0
    for i, s in enumerate(sigma):
        val += model.locus_slice(model.fields, i)[s]
    for (i, r), J in model.blocks.items():
        val += J[sigma[i], sigma[r]]
    return float(val)


def haplotype_frequency(model: ValidatedModel, x, sigma) -> float:
    sigma = _check_haplotype(model, sigma)
    parts = model.split(as_augmented(model, x))
    return float(np.prod([p[s] for p, s in zip(parts, sigma)]))


def conditional_haplotype_frequency(model: ValidatedModel, x, sigma, i: int, k: int) -> float:
    """Frequency of ``sigma`` among carriers of allele ``k`` at locus ``i``.

    Zero when ``sigma_i != k``, and by convention also when ``x_k^(i) = 0``.
    """
    sigma = _check_haplotype(model, sigma)
    parts = model.split(as_augmented(model, x))
    if sigma[i] != k or parts[i][k] == 0:
        return 0.0
    return float(np.prod([p[s] for j, (p, s) in enumerate(zip(parts, sigma)) if j != i]))


def fitness_tensor(model: ValidatedModel) -> np.ndarray:
    """All haplotype fitnesses as an array of shape ``model.sizes``."""
    if model.num_haplotypes > BRUTE_FORCE_LIMIT:
        raise ModelTooLarge(f"{model.num_haplotypes:.3g} haplotypes exceeds {BRUTE_FORCE_LIMIT}")
    L = model.num_loci
    m = np.ones(model.sizes)

    def along(arr, axes):
        shape = [1] * L
        for ax in axes:
            shape[ax] = model.sizes[ax]
        return arr.reshape(shape)

    for i in range(L):
        m = m + along(model.locus_slice(model.fields, i), [i])
    for (i, r), J in model.blocks.items():
        m = m + along(J, [i, r])
    return m


def mean_fitness(model: ValidatedModel, x) -> np.ndarray | float:
    """``1 + sum_r h_r . x^(r) + sum_{r<s} x^(r) J_rs x^(s)``."""
    xbar = as_augmented(model, x)
    val = 1.0 + xbar @ model.fields
    for (i, r), J in model.blocks.items():
        xi = model.locus_slice(xbar, i)
        xr = model.locus_slice(xbar, r)
        val = val + np.einsum("...k,km,...m->...", xi, J, xr)
    return val


def _enumeration_subscripts(L):
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    if L > len(letters):
        raise ModelTooLarge("too many loci for enumeration")
    return letters[:L]


def mean_fitness_bruteforce(model: ValidatedModel, x) -> float:
    """Sum of ``f(sigma) m_sigma`` over every haplotype."""
    m = fitness_tensor(model)
    parts = model.split(as_augmented(model, x))
    letters = _enumeration_subscripts(model.num_loci)
    expr = letters + "," + ",".join(letters) + "->"
    return float(np.einsum(expr, m, *parts))


def allele_mean_fitnesses(model: ValidatedModel, x) -> np.ndarray:
    """``m̄_k^(i)`` for every locus and allele, stacked like the augmented vector.

    Sums the five contributions of the pairwise model: the constant, the own
    field, the other loci's fields, couplings to locus ``i`` and couplings
    among the remaining loci.
    """
    xbar = as_augmented(model, x)
    L = model.num_loci
    parts = model.split(xbar)
    own = [model.locus_slice(model.fields, i) for i in range(L)]
    field_mean = [parts[r] @ own[r] for r in range(L)]
    pair_mean = {key: np.einsum("...k,km,...m->...", parts[key[0]], J, parts[key[1]])
                 for key, J in model.blocks.items()}
    out = []
    for i in range(L):
        other_fields = sum((field_mean[r] for r in range(L) if r != i), np.zeros(parts[i].shape[:-1]))
        val = 1.0 + own[i] + other_fields[..., None]
        for r in range(L):
            if r != i:
                val = val + parts[r] @ model.coupling(i, r).T
        rest = sum(v for (a, b), v in pair_mean.items() if i not in (a, b))
        out.append(val + np.asarray(rest)[..., None])
    return np.concatenate(out, axis=-1)


def allele_mean_fitness(model: ValidatedModel, x, i: int, k: int) -> float:
    return float(model.locus_slice(allele_mean_fitnesses(model, x), i)[..., k])


def allele_mean_fitness_bruteforce(model: ValidatedModel, x, i: int, k: int) -> float:
    """Sum of ``f_k^(i)(sigma) m_sigma`` over every haplotype with ``sigma_i = k``."""
    m = fitness_tensor(model)
    parts = model.split(as_augmented(model, x))
    m_k = np.take(m, k, axis=i)
    others = [p for j, p in enumerate(parts) if j != i]
    if not others:
        return float(m_k)
    letters = _enumeration_subscripts(len(others))
    expr = letters + "," + ",".join(letters) + "->"
    return float(np.einsum(expr, m_k, *others))


def potential(model: ValidatedModel, x):
    """``V = xbar.h + xbar.A.xbar / 2``."""
    xbar = as_augmented(model, x)
    return xbar @ model.fields + 0.5 * np.einsum("...k,kl,...l->...", xbar, model.A, xbar)


def full_gradient(model: ValidatedModel, x) -> np.ndarray:
    """Gradient ``h + A xbar`` of V with respect to the augmented coordinates."""
    xbar = as_augmented(model, x)
    return model.fields + xbar @ model.A


def potential_gradient(model: ValidatedModel, x) -> np.ndarray:
    """Gradient of V in reduced coordinates: ``g_l - g_{M_i}`` per locus."""
    g = full_gradient(model, x)
    red = model.reduced_index()
    last = np.repeat(model.last_index(), np.asarray(model.sizes) - 1)
    return g[..., red] - g[..., last]


def reduce(model: ValidatedModel, aug: np.ndarray) -> np.ndarray:
    return aug[..., model.reduced_index()]


def complete(model: ValidatedModel, red: np.ndarray) -> np.ndarray:
    """Append to each locus the component that makes it sum to zero."""
    parts = []
    pos = 0
    for m in model.sizes:
        seg = red[..., pos:pos + m - 1]
        parts += [seg, -seg.sum(axis=-1, keepdims=True)]
        pos += m - 1
    return np.concatenate(parts, axis=-1)


def selection_drift(model: ValidatedModel, x, method: str = "gradient", full=False):
    """Selection part of the drift.

    ``method="gradient"`` multiplies each locus block of the diffusion matrix
    with the reduced gradient of V.  ``method="fitness"`` uses
    ``x_k (m̄_k - m̄)``.  The two agree identically.
    """
    xbar = as_augmented(model, x)
    if method == "gradient":
        grad = potential_gradient(model, xbar)
        out = []
        pos = 0
        for i, m in enumerate(model.sizes):
            xr = model.locus_slice(xbar, i)[..., :-1]
            D = _diffusion_block(xr)
            out.append(np.einsum("...kl,...l->...k", D, grad[..., pos:pos + m - 1]))
            pos += m - 1
        red = np.concatenate(out, axis=-1)
        return complete(model, red) if full else red
    if method == "fitness":
        aug = xbar * (allele_mean_fitnesses(model, xbar) - np.asarray(mean_fitness(model, xbar))[..., None])
        return aug if full else reduce(model, aug)
    raise ValueError(f"unknown method {method!r}")


def _diffusion_block(xr):
    return np.einsum("...k,kl->...kl", xr, np.eye(xr.shape[-1])) - xr[..., :, None] * xr[..., None, :]


def mutation_drift(model: ValidatedModel, x, full=False):
    """Mutation part of the drift.

    Parent-independent rates give ``u_k - ubar x_k``; a general matrix gives
    ``sum_{l != k} (u_lk x_l - u_kl x_k)``.
    """
    xbar = as_augmented(model, x)
    if model.mutation_matrices is None:
        parts = []
        for i in range(model.num_loci):
            u = model.locus_slice(model.mutation, i)
            parts.append(u - u.sum() * model.locus_slice(xbar, i))
        aug = np.concatenate(parts, axis=-1)
    else:
        aug = mutation_drift_general(model, xbar)
    return aug if full else reduce(model, aug)


def mutation_drift_general(model: ValidatedModel, x) -> np.ndarray:
    """Augmented mutation drift from the full rate matrices (``u_lk``, row = source)."""
    xbar = as_augmented(model, x)
    parts = []
    for i in range(model.num_loci):
        U = model.mutation_matrix(i)
        xi = model.locus_slice(xbar, i)
        parts.append(xi @ U - xi * U.sum(axis=1))
    return np.concatenate(parts, axis=-1)


def full_drift(model: ValidatedModel, x, full=False):
    return mutation_drift(model, x, full) + selection_drift(model, x, "gradient", full)


def all_haplotypes(model: ValidatedModel):
    return itertools.product(*(range(m) for m in model.sizes))
