import numpy as np
import pytest

from wfcoupled.model import CouplingBlock, LocusSpec, ModelSpec, validate_model


def biallelic(u=(0.5, 0.5), h=(0.0, 0.0)):
    return LocusSpec(2, tuple(u), tuple(h))


def single_coupling(h, u=(1.0, 1.0), u2=None):
    """Two biallelic loci with V = h x^(1) x^(2)."""
    u2 = u if u2 is None else u2
    blocks = (CouplingBlock(0, 1, [[h, 0.0], [0.0, 0.0]]),)
    return validate_model(ModelSpec((biallelic(u), biallelic(u2)), blocks))


def four_locus(h2, h5, h7, h3, h6, h4, u=(0.5, 0.5)):
    """Four biallelic loci, each pair coupled through J(1,1) only."""
    pairs = {(0, 1): h2, (0, 2): h5, (0, 3): h7, (1, 2): h3, (1, 3): h6, (2, 3): h4}
    blocks = tuple(CouplingBlock(i, r, [[v, 0.0], [0.0, 0.0]]) for (i, r), v in pairs.items())
    return validate_model(ModelSpec(tuple(biallelic(u) for _ in range(4)), blocks))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
