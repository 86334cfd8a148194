"""Model parameterization, validation, coupling matrix and interaction graph.

Python-level indices (loci, alleles, haplotypes) are 0-based.  Model files,
DOT output and CSV headers use 1-based indices.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    AsymmetricCoupling,
    CountSumMismatch,
    DimensionMismatch,
    DuplicateEdge,
    InvalidModel,
    InvalidState,
    ModelValidationError,
    NonPositiveMutation,
)

STATE_TOL = 1e-12


@dataclass(frozen=True)
class LocusSpec:
    num_alleles: int
    mutation_rates: tuple
    fields: tuple

    @classmethod
    def neutral(cls, num_alleles: int, u: float = 0.5) -> "LocusSpec":
        return cls(num_alleles, (u,) * num_alleles, (0.0,) * num_alleles)


@dataclass(frozen=True, eq=False)
class CouplingBlock:
    """Block ``J_{ir}``: rows index alleles of locus ``i``, columns of ``r``."""

    i: int
    r: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2:
            raise DimensionMismatch(f"coupling block ({self.i},{self.r}) must be 2-d")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def transposed(self) -> "CouplingBlock":
        return CouplingBlock(self.r, self.i, self.values.T)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    loci: tuple
    couplings: tuple = ()
    mutation_matrices: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "loci", tuple(self.loci))
        object.__setattr__(self, "couplings", tuple(self.couplings))
        if self.mutation_matrices is not None:
            mats = tuple(None if m is None else np.array(m, dtype=float)
                         for m in self.mutation_matrices)
            object.__setattr__(self, "mutation_matrices", mats)


@dataclass(frozen=True, eq=False)
class ValidatedModel:
    """A model that passed ``validate_model``, with derived arrays.

    ``fields`` and ``mutation`` are stacked over the augmented coordinates
    (all ``M_i`` alleles of every locus).  ``blocks`` maps ``(i, r)`` with
    ``i < r`` to ``J_{ir}``.  ``A`` is the symmetric coupling matrix.
    """

    spec: ModelSpec
    sizes: tuple
    offsets: tuple
    mutation: np.ndarray
    fields: np.ndarray
    blocks: dict
    A: np.ndarray = field(repr=False)
    mutation_matrices: tuple | None = field(default=None, repr=False)

    @property
    def num_loci(self) -> int:
        return len(self.sizes)

    @property
    def dim(self) -> int:
        return int(sum(self.sizes))

    @property
    def reduced_dim(self) -> int:
        return self.dim - self.num_loci

    @property
    def num_haplotypes(self) -> int:
        return int(np.prod(self.sizes, dtype=float))

    @property
    def parent_independent(self) -> bool:
        if self.mutation_matrices is None:
            return True
        for i, mat in enumerate(self.mutation_matrices):
            u = self.locus_slice(self.mutation, i)
            off = ~np.eye(len(u), dtype=bool)
            if not np.array_equal(mat[off], np.broadcast_to(u, mat.shape)[off]):
                return False
        return True

    def locus_slice(self, arr, i):
        o = self.offsets[i]
        return arr[..., o:o + self.sizes[i]]

    def split(self, xbar) -> list:
        return [self.locus_slice(xbar, i) for i in range(self.num_loci)]

    def reduced_index(self) -> np.ndarray:
        """Positions in the augmented vector of the reduced coordinates."""
        return np.concatenate([np.arange(o, o + m - 1)
                               for o, m in zip(self.offsets, self.sizes)])

    def last_index(self) -> np.ndarray:
        return np.array([o + m - 1 for o, m in zip(self.offsets, self.sizes)])

    def coupling(self, i: int, r: int) -> np.ndarray:
        """``J_{ir}`` in either orientation (zeros if absent)."""
        if i == r:
            raise InvalidModel("no self-coupling block")
        if i < r:
            blk = self.blocks.get((i, r))
            return np.zeros((self.sizes[i], self.sizes[r])) if blk is None else blk
        return self.coupling(r, i).T

    def mutation_matrix(self, i: int) -> np.ndarray:
        """Rates ``u_{lk}`` (row = source allele ``l``); diagonal is zero."""
        if self.mutation_matrices is not None:
            return self.mutation_matrices[i]
        u = self.locus_slice(self.mutation, i)
        mat = np.tile(u, (len(u), 1))
        np.fill_diagonal(mat, 0.0)
        return mat


def validate_model(spec: ModelSpec) -> ValidatedModel:
    """Check positivity, symmetry and shapes; collect every violation."""
    problems = []
    if len(spec.loci) < 1:
        problems.append(InvalidModel("at least one locus is required"))
    sizes = []
    for idx, loc in enumerate(spec.loci):
        m = int(loc.num_alleles)
        sizes.append(m)
        if m < 2:
            problems.append(InvalidModel(f"locus {idx + 1}: num_alleles={m} < 2"))
        u = np.asarray(loc.mutation_rates, dtype=float)
        h = np.asarray(loc.fields, dtype=float)
        if u.shape != (m,):
            problems.append(DimensionMismatch(
                f"locus {idx + 1}: {u.size} mutation rates for {m} alleles"))
        elif not np.all(u > 0):
            bad = [int(k) + 1 for k in np.flatnonzero(~(u > 0))]
            problems.append(NonPositiveMutation(
                f"locus {idx + 1}: mutation rate(s) at allele(s) {bad} not > 0"))
        if h.shape != (m,):
            problems.append(DimensionMismatch(
                f"locus {idx + 1}: {h.size} fields for {m} alleles"))
        elif not np.all(np.isfinite(h)):
            problems.append(InvalidModel(f"locus {idx + 1}: non-finite field"))

    L = len(sizes)
    grouped: dict = {}
    for blk in spec.couplings:
        i, r = int(blk.i), int(blk.r)
        if not (0 <= i < L and 0 <= r < L):
            problems.append(InvalidModel(f"coupling ({i + 1},{r + 1}): locus out of range"))
            continue
        if i == r:
            problems.append(InvalidModel(f"coupling ({i + 1},{r + 1}): self-coupling"))
            continue
        if blk.values.shape != (sizes[i], sizes[r]):
            problems.append(DimensionMismatch(
                f"coupling ({i + 1},{r + 1}): shape {blk.values.shape}, "
                f"expected {(sizes[i], sizes[r])}"))
            continue
        canon = blk.values if i < r else blk.values.T
        grouped.setdefault((min(i, r), max(i, r)), []).append(canon)

    blocks = {}
    for key, mats in grouped.items():
        first = mats[0]
        if any(not np.array_equal(first, other) for other in mats[1:]):
            problems.append(AsymmetricCoupling(
                f"blocks for loci ({key[0] + 1},{key[1] + 1}) violate "
                f"J_ir(k,m) = J_ri(m,k)"))
            continue
        blocks[key] = first

    mut_mats = None
    if spec.mutation_matrices is not None:
        if len(spec.mutation_matrices) != L:
            problems.append(DimensionMismatch("mutation_matrices must have one entry per locus"))
        else:
            mut_mats = []
            for idx, (mat, m) in enumerate(zip(spec.mutation_matrices, sizes)):
                if mat is None:
                    loc_u = np.asarray(spec.loci[idx].mutation_rates, dtype=float)
                    mat = np.tile(loc_u, (m, 1))
                mat = np.array(mat, dtype=float)
                if mat.shape != (m, m):
                    problems.append(DimensionMismatch(
                        f"locus {idx + 1}: mutation matrix shape {mat.shape}"))
                    continue
                np.fill_diagonal(mat, 0.0)
                if np.any(mat < 0):
                    problems.append(NonPositiveMutation(
                        f"locus {idx + 1}: negative parent-dependent rate"))
                mat.setflags(write=False)
                mut_mats.append(mat)
            mut_mats = tuple(mut_mats)

    if problems:
        raise ModelValidationError.of(problems)

    offsets = tuple(int(o) for o in np.concatenate([[0], np.cumsum(sizes)[:-1]]))
    mutation = np.concatenate([np.asarray(l.mutation_rates, float) for l in spec.loci])
    fields = np.concatenate([np.asarray(l.fields, float) for l in spec.loci])
    for arr in (mutation, fields):
        arr.setflags(write=False)
    A = _assemble(tuple(sizes), offsets, blocks)
    return ValidatedModel(spec, tuple(sizes), offsets, mutation, fields, blocks, A, mut_mats)


def _assemble(sizes, offsets, blocks) -> np.ndarray:
    A = np.zeros((sum(sizes), sum(sizes)))
    for (i, r), J in blocks.items():
        oi, orr = offsets[i], offsets[r]
        A[oi:oi + sizes[i], orr:orr + sizes[r]] = J
        A[orr:orr + sizes[r], oi:oi + sizes[i]] = J.T
    A.setflags(write=False)
    return A


def build_coupling_matrix(model: ValidatedModel) -> np.ndarray:
    """The symmetric block matrix ``A`` with zero diagonal blocks."""
    return _assemble(model.sizes, model.offsets, model.blocks)


def interaction_graph(A: np.ndarray, sizes: Sequence[int]) -> list:
    """Edges ``(i, r)`` (``i < r``, 0-based) whose coupling block has a nonzero entry."""
    A = np.asarray(A)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    edges = []
    for i in range(len(sizes)):
        for r in range(i + 1, len(sizes)):
            blk = A[offsets[i]:offsets[i + 1], offsets[r]:offsets[r + 1]]
            if np.any(blk != 0):
                edges.append((i, r))
    return edges


def model_edges(model: ValidatedModel) -> list:
    return interaction_graph(model.A, model.sizes)


def graph_to_couplings(edges: Iterable, sizes: Sequence[int]) -> tuple:
    """Turn ``(i, r, block)`` triples into one coupling block per pair."""
    seen = set()
    out = []
    for i, r, block in edges:
        i, r = int(i), int(r)
        if i == r:
            raise InvalidModel(f"self-loop at locus {i + 1}")
        key = (min(i, r), max(i, r))
        if key in seen:
            raise DuplicateEdge(f"edge {key[0] + 1}-{key[1] + 1} given twice")
        seen.add(key)
        blk = CouplingBlock(i, r, block)
        if blk.values.shape != (sizes[i], sizes[r]):
            raise DimensionMismatch(
                f"edge {i + 1}-{r + 1}: block shape {blk.values.shape}, "
                f"expected {(sizes[i], sizes[r])}")
        out.append(blk)
    return tuple(out)


def to_dot(edges: Iterable, num_loci: int) -> str:
    lines = ["graph G {"]
    for i in range(num_loci):
        lines.append(f'  "{i + 1}";')
    for i, r in edges:
        lines.append(f'  "{i + 1}" -- "{r + 1}";')
    lines.append("}")
    return "\n".join(lines) + "\n"


# -- states -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FrequencyState:
    """Allele frequencies for every locus, stored with all ``M_i`` coordinates."""

    loci: tuple

    def __post_init__(self):
        loci = []
        for k, x in enumerate(self.loci):
            x = np.array(x, dtype=float)
            if x.ndim != 1 or x.size < 2:
                raise InvalidState(f"locus {k + 1}: need a vector of >= 2 frequencies")
            if np.any(x < 0) or np.any(x > 1) or abs(x.sum() - 1.0) > STATE_TOL:
                raise InvalidState(f"locus {k + 1}: {x} is not on the simplex")
            x.setflags(write=False)
            loci.append(x)
        object.__setattr__(self, "loci", tuple(loci))

    @classmethod
    def from_augmented(cls, model: ValidatedModel, xbar) -> "FrequencyState":
        return cls(tuple(model.split(np.asarray(xbar, float))))

    @classmethod
    def from_reduced(cls, model: ValidatedModel, xred) -> "FrequencyState":
        return cls.from_augmented(model, augment(model, xred))

    @classmethod
    def uniform(cls, model: ValidatedModel) -> "FrequencyState":
        return cls(tuple(np.full(m, 1.0 / m) for m in model.sizes))

    @property
    def augmented(self) -> np.ndarray:
        return np.concatenate(self.loci)

    @property
    def reduced(self) -> np.ndarray:
        return np.concatenate([x[:-1] for x in self.loci])


def augment(model: ValidatedModel, xred) -> np.ndarray:
    """Append the implied last coordinate ``1 - sum`` to every locus."""
    xred = np.asarray(xred, dtype=float)
    parts = []
    pos = 0
    for m in model.sizes:
        seg = xred[..., pos:pos + m - 1]
        parts.append(seg)
        parts.append(1.0 - seg.sum(axis=-1, keepdims=True))
        pos += m - 1
    return np.concatenate(parts, axis=-1)


def as_augmented(model: ValidatedModel, x) -> np.ndarray:
    """Accept a FrequencyState, an augmented vector or a reduced vector."""
    if isinstance(x, FrequencyState):
        return x.augmented
    x = np.asarray(x, dtype=float)
    if x.shape[-1] == model.dim:
        return x
    if x.shape[-1] == model.reduced_dim:
        return augment(model, x)
    raise DimensionMismatch(f"state of length {x.shape[-1]} does not fit the model")


@dataclass(frozen=True, eq=False)
class OccupancyState:
    counts: tuple
    population_size: int

    def __post_init__(self):
        counts = tuple(np.array(c, dtype=np.int64) for c in self.counts)
        for c in counts:
            if np.any(c < 0):
                raise InvalidState("negative allele count")
            c.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate(self.counts)


def occupancy_to_frequency(j: OccupancyState) -> FrequencyState:
    N = int(j.population_size)
    for k, c in enumerate(j.counts):
        if int(c.sum()) != N:
            raise CountSumMismatch(f"locus {k + 1}: counts sum to {int(c.sum())}, not N={N}")
    return FrequencyState(tuple(c / N for c in j.counts))


# -- model files --------------------------------------------------------------

def model_from_dict(doc: dict) -> ModelSpec:
    try:
        loci_doc = doc["loci"]
    except (KeyError, TypeError):
        raise InvalidModel("model document needs a 'loci' array") from None
    loci = []
    per_locus_mats = []
    for entry in loci_doc:
        m = int(entry["alleles"])
        loci.append(LocusSpec(m, tuple(float(v) for v in entry["mutation"]),
                              tuple(float(v) for v in entry.get("h", [0.0] * m))))
        per_locus_mats.append(entry.get("mutation_matrix"))
    couplings = []
    for c in doc.get("couplings", []):
        couplings.append(CouplingBlock(int(c["i"]) - 1, int(c["j"]) - 1, c["J"]))
    mats = doc.get("mutation_matrix")
    if mats is None and any(m is not None for m in per_locus_mats):
        mats = per_locus_mats
    return ModelSpec(tuple(loci), tuple(couplings), None if mats is None else tuple(mats))


def model_to_dict(spec: ModelSpec) -> dict:
    doc = {
        "loci": [{"alleles": l.num_alleles, "mutation": list(l.mutation_rates),
                  "h": list(l.fields)} for l in spec.loci],
        "couplings": [{"i": b.i + 1, "j": b.r + 1, "J": b.values.tolist()}
                      for b in spec.couplings],
    }
    if spec.mutation_matrices is not None:
        for entry, mat in zip(doc["loci"], spec.mutation_matrices):
            if mat is not None:
                entry["mutation_matrix"] = np.asarray(mat).tolist()
    return doc


def load_model(path) -> ValidatedModel:
    with open(path) as fh:
        doc = json.load(fh)
    return validate_model(model_from_dict(doc))


def save_model(spec: ModelSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(spec), fh, indent=2)


# -- convenience constructors -------------------------------------------------

def two_locus_model(h: float, u1=(1.0, 1.0), u2=(1.0, 1.0)) -> ValidatedModel:
    """Two biallelic loci coupled only through ``J_12(1,1) = h``."""
    loci = (LocusSpec(2, tuple(u1), (0.0, 0.0)), LocusSpec(2, tuple(u2), (0.0, 0.0)))
    couplings = (CouplingBlock(0, 1, [[h, 0.0], [0.0, 0.0]]),) if h != 0 else ()
    return validate_model(ModelSpec(loci, couplings))


def random_model(rng: np.random.Generator, max_loci=4, max_alleles=4,
                 min_loci=1, field_scale=1.0, coupling_scale=1.0,
                 u_range=(0.1, 2.0), edge_prob=0.8, max_haplotypes=None) -> ValidatedModel:
    """Draw a random parent-independent model (used by tests and the harness)."""
    while True:
        L = int(rng.integers(min_loci, max_loci + 1))
        sizes = rng.integers(2, max_alleles + 1, size=L)
        if max_haplotypes is None or np.prod(sizes, dtype=float) <= max_haplotypes:
            break
    loci = tuple(
        LocusSpec(int(m), tuple(rng.uniform(*u_range, size=m)),
                  tuple(field_scale * rng.uniform(-1, 1, size=m)))
        for m in sizes)
    couplings = []
    for i in range(L):
        for r in range(i + 1, L):
            if rng.random() < edge_prob:
                couplings.append(CouplingBlock(
                    i, r, coupling_scale * rng.uniform(-1, 1, size=(sizes[i], sizes[r]))))
    return validate_model(ModelSpec(loci, tuple(couplings)))


def random_interior_state(model: ValidatedModel, rng: np.random.Generator,
                          min_coord=0.0, concentration=1.0) -> np.ndarray:
    """Augmented interior point with every coordinate >= ``min_coord``."""
    parts = []
    for m in model.sizes:
        if min_coord * m >= 1:
            raise ValueError("min_coord too large for this locus")
        y = rng.dirichlet(np.full(m, concentration))
        parts.append(min_coord + (1 - m * min_coord) * y)
    return np.concatenate(parts)
