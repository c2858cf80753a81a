import math

import pytest

from second_species.chain_solver import CollisionChain, find_critical_chain, seed_from_restricted_limit
from second_species.collision_action import MassParams
from second_species.shadowing import trace_orbits, verify_shadowing

# restricted-limit seed used throughout: E = -1/2, (-2E)G = 0.95, seven
# revolutions of the heavier body and three collisions
SEED_ARGS = dict(E=-0.5, G=0.95, m=7, n=3, k1_pattern=[1, 1, 2], alpha1=1e-3, starts=20)
SWEEP_MUS = (1e-3, 1e-4, 1e-5)


@pytest.fixture(scope="session")
def seeded_chain():
    return seed_from_restricted_limit(**SEED_ARGS)


@pytest.fixture(scope="session")
def certified(seeded_chain):
    return find_critical_chain(seeded_chain, "fixed-EG", screen_samples=256)


@pytest.fixture(scope="session")
def certified_chain(certified):
    return certified[0]


@pytest.fixture(scope="session")
def sweep_orbits(certified_chain):
    """Shadowing orbits for the standard sweep, found by continuation in mu."""
    return trace_orbits(certified_chain, SWEEP_MUS)


@pytest.fixture(scope="session")
def sweep_rows(sweep_orbits, certified_chain):
    return [verify_shadowing(sweep_orbits[mu], certified_chain) for mu in SWEEP_MUS]


@pytest.fixture
def smooth_chain():
    """Two pieces of one circular orbit glued at a point where nothing happens."""
    return CollisionChain(
        k=[(0, 0), (0, 0)], s=[1.0, 1.0], x=[[1.0, 0.0], [math.cos(1.0), math.sin(1.0)]],
        phi=2.0, energy=-0.5, angular_momentum=1.0, masses=MassParams(0.0, 1e-3),
    )
