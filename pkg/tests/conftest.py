import numpy as np
import pytest

from risfbl.beam_opt import BeamformingSet
from risfbl.channels import RisState, all_effective_channels, generate_channels
from risfbl.topology import NetworkTopology, PropagationParams, default_topology


def tiny_topology(K=2, n_bs=3, n_ris=4, power=10.0, seed=0):
    return default_topology(K=K, n_bs=n_bs, n_ris=n_ris, power=power, seed=seed)


def mrt_beams(channels, ris, topology):
    L, K = topology.L, topology.K
    x = np.zeros((L, K, topology.n_bs), dtype=complex)
    H = all_effective_channels(channels, ris)
    for l in range(L):
        for k in range(K):
            h = H[l, k, l]
            x[l, k] = np.sqrt(topology.power_budgets[l] / K) * h.conj() / np.linalg.norm(h)
    return BeamformingSet(x)


@pytest.fixture
def small_system():
    """Two cells, two users each, surfaces covering everyone, MRT start."""
    top = tiny_topology()
    ch = generate_channels(top, PropagationParams(), seed=11)
    sides = np.full((top.M, top.L, top.K), "r")
    ris = RisState.regular_init(top.M, top.n_ris, "TI", sides)
    beams = mrt_beams(ch, ris, top)
    return top, ch, ris, beams


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
