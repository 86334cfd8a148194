"""Genetic-drift matrix and Euler-Maruyama simulation of the limiting SDE.

The SDE in reduced coordinates is

    dX = (mutation drift + D grad V) dt + B dW,    B B^T = D,

with ``D`` block diagonal over loci.  After each step negative coordinates
are clamped to zero and each locus is renormalized; the number of steps that
needed this is reported.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from ._random import as_rng, derived_rng
from .errors import NonFiniteState, SingularAtBoundary
from .fitness import full_drift
from .model import FrequencyState, ValidatedModel, as_augmented
from .trajectory import Trajectory

DEFAULT_DT = 1e-3
NOISE_CHUNK = 1 << 15


def _locus_reduced(x, i=None, model=None) -> np.ndarray:
    if model is None:
        return np.atleast_1d(np.asarray(x, dtype=float))
    return model.locus_slice(as_augmented(model, x), i)[:-1]


def diffusion_matrix(x, i=None, model=None) -> np.ndarray:
    """``d_kk = x_k(1 - x_k)``, ``d_kl = -x_k x_l`` for one locus.

    With ``model`` given, ``x`` is a model state and ``i`` picks the locus;
    otherwise ``x`` holds the reduced coordinates of a single locus.
    """
    xr = _locus_reduced(x, i, model)
    return np.diag(xr) - np.outer(xr, xr)


def diffusion_matrix_inverse(x, i=None, model=None) -> np.ndarray:
    """``delta_kl / x_l + 1 / x_M``; undefined on the facets of the simplex."""
    xr = _locus_reduced(x, i, model)
    last = 1.0 - xr.sum()
    if np.any(xr <= 0) or last <= 0:
        raise SingularAtBoundary(f"inverse drift matrix undefined at {np.append(xr, last)}")
    return np.diag(1.0 / xr) + 1.0 / last


@njit(cache=True)
def _clamped_cholesky(D, B, n):
    """Lower-triangular ``B`` with ``B B^T = D`` on the leading ``n x n`` block.

    Non-positive pivots (rounding near the boundary) give zero columns.
    """
    for j in range(n):
        for r in range(n):
            B[r, j] = 0.0
    for j in range(n):
        s = D[j, j]
        for c in range(j):
            s -= B[j, c] * B[j, c]
        if s <= 0.0:
            continue
        piv = np.sqrt(s)
        B[j, j] = piv
        for r in range(j + 1, n):
            t = D[r, j]
            for c in range(j):
                t -= B[r, c] * B[j, c]
            B[r, j] = t / piv


def diffusion_matrix_factor(x, i=None, model=None) -> np.ndarray:
    D = diffusion_matrix(x, i, model)
    B = np.empty_like(D)
    _clamped_cholesky(D, B, D.shape[0])
    return B


def _project(model: ValidatedModel, xbar: np.ndarray):
    clamped = bool(np.any(xbar < 0))
    if clamped:
        xbar = np.maximum(xbar, 0.0)
        for i in range(model.num_loci):
            o, m = model.offsets[i], model.sizes[i]
            xbar[o:o + m] /= xbar[o:o + m].sum()
    return xbar, clamped


def em_step_array(model: ValidatedModel, x, dt: float, rng=None, noise=None):
    """One Euler-Maruyama step; returns ``(augmented state, clamped)``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    xbar = as_augmented(model, x)
    if noise is None:
        noise = as_rng(rng).standard_normal(model.reduced_dim)
    noise = np.asarray(noise, dtype=float)
    inc = full_drift(model, xbar) * dt
    pos = 0
    for i, m in enumerate(model.sizes):
        B = diffusion_matrix_factor(xbar, i, model)
        inc[pos:pos + m - 1] += np.sqrt(dt) * (B @ noise[pos:pos + m - 1])
        pos += m - 1
    if not np.all(np.isfinite(inc)):
        raise NonFiniteState("non-finite increment; reduce dt")
    new = np.empty(model.dim)
    pos = 0
    for i, m in enumerate(model.sizes):
        o = model.offsets[i]
        seg = xbar[o:o + m - 1] + inc[pos:pos + m - 1]
        new[o:o + m - 1] = seg
        new[o + m - 1] = 1.0 - seg.sum()
        pos += m - 1
    return _project(model, new)


def em_step(model: ValidatedModel, x, dt: float, rng=None, noise=None) -> FrequencyState:
    new, _ = em_step_array(model, x, dt, rng, noise)
    return FrequencyState.from_augmented(model, new)


def _kernel_arrays(model: ValidatedModel):
    sizes = np.asarray(model.sizes, dtype=np.int64)
    offsets = np.asarray(model.offsets, dtype=np.int64)
    Q = np.zeros((model.dim, model.dim))
    for i in range(model.num_loci):
        o, m = model.offsets[i], model.sizes[i]
        Q[o:o + m, o:o + m] = model.mutation_matrix(i)
    return (sizes, offsets, np.array(model.mutation), np.array(model.fields),
            np.array(model.A), Q, model.parent_independent)


@njit(cache=True)
def _em_kernel(x, sizes, offsets, u, h, A, Q, pindep, dt, noise, thin, step0, out, out_pos):
    """Advance ``x`` (augmented, in place) by ``noise.shape[0]`` steps.

    Records the state into ``out`` after every step whose global index is a
    multiple of ``thin``.  Returns ``(out_pos, clamps, status)`` where a
    nonzero status flags a non-finite state.
    """
    L = sizes.shape[0]
    dim = x.shape[0]
    mmax = 0
    for i in range(L):
        if sizes[i] > mmax:
            mmax = sizes[i]
    g = np.empty(dim)
    drift = np.empty(mmax)
    D = np.empty((mmax - 1, mmax - 1))
    B = np.empty((mmax - 1, mmax - 1))
    sqdt = np.sqrt(dt)
    clamps = 0
    nsteps = noise.shape[0]
    for n in range(nsteps):
        for a in range(dim):
            s = h[a]
            for b in range(dim):
                s += A[a, b] * x[b]
            g[a] = s
        col = 0
        for i in range(L):
            o = offsets[i]
            m = sizes[i]
            r = m - 1
            gl = g[o + m - 1]
            xr_sum = 0.0
            for l in range(r):
                xr_sum += x[o + l] * (g[o + l] - gl)
            ubar = 0.0
            for l in range(m):
                ubar += u[o + l]
            for k in range(r):
                xk = x[o + k]
                sel = xk * ((g[o + k] - gl) - xr_sum)
                if pindep:
                    mut = u[o + k] - ubar * xk
                else:
                    mut = 0.0
                    for l in range(m):
                        mut += Q[o + l, o + k] * x[o + l] - Q[o + k, o + l] * xk
                drift[k] = mut + sel
            for k in range(r):
                for l in range(r):
                    D[k, l] = -x[o + k] * x[o + l]
                D[k, k] += x[o + k]
            _clamped_cholesky(D, B, r)
            tot = 0.0
            for k in range(r):
                z = 0.0
                for l in range(k + 1):
                    z += B[k, l] * noise[n, col + l]
                drift[k] = x[o + k] + drift[k] * dt + sqdt * z
            for k in range(r):
                x[o + k] = drift[k]
                tot += drift[k]
            x[o + m - 1] = 1.0 - tot
            col += r
        bad = False
        neg = False
        for a in range(dim):
            if not np.isfinite(x[a]):
                bad = True
            elif x[a] < 0.0:
                neg = True
        if bad:
            return out_pos, clamps, 1
        if neg:
            clamps += 1
            for i in range(L):
                o = offsets[i]
                m = sizes[i]
                tot = 0.0
                for k in range(m):
                    if x[o + k] < 0.0:
                        x[o + k] = 0.0
                    tot += x[o + k]
                for k in range(m):
                    x[o + k] /= tot
        if (step0 + n + 1) % thin == 0:
            for a in range(dim):
                out[out_pos, a] = x[a]
            out_pos += 1
    return out_pos, clamps, 0


def simulate_sde(model: ValidatedModel, init, t_end: float, dt: float = DEFAULT_DT,
                 thin: int = 1, rng=None, seed=None) -> Trajectory:
    """Euler-Maruyama path from ``init``; records every ``thin`` steps at times ``k dt``."""
    if t_end < 0 or dt <= 0 or thin < 1:
        raise ValueError("need t_end >= 0, dt > 0, thin >= 1")
    x = np.array(as_augmented(model, init), dtype=float)
    FrequencyState.from_augmented(model, x)
    rng = as_rng(rng, seed)
    nsteps = int(round(t_end / dt))
    nrec = nsteps // thin + 1
    out = np.empty((nrec, model.dim))
    out[0] = x
    pos = 1
    clamps = 0
    args = _kernel_arrays(model)
    done = 0
    while done < nsteps:
        chunk = min(NOISE_CHUNK, nsteps - done)
        noise = rng.standard_normal((chunk, model.reduced_dim))
        pos, c, status = _em_kernel(x, *args, float(dt), noise, int(thin), done, out, pos)
        clamps += c
        if status:
            raise NonFiniteState(f"non-finite state near t={(done + chunk) * dt:g}; reduce dt")
        done += chunk
    times = np.arange(nrec) * (thin * dt)
    return Trajectory(times, out, model.sizes, clamps)


def sde_endpoints(model: ValidatedModel, init, t_end: float, replicates: int,
                  dt: float = DEFAULT_DT, seed: int = 0) -> np.ndarray:
    """States at ``t_end`` for independent replicates, one derived stream each."""
    ends = np.empty((replicates, model.dim))
    for r in range(replicates):
        traj = simulate_sde(model, init, t_end, dt, thin=max(1, int(round(t_end / dt))),
                            rng=derived_rng(seed, r))
        ends[r] = traj.states[-1]
    return ends

