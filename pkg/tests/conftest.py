"""Shared fixtures and the acceptance-summary terminal hook."""

import numpy as np
import pytest

from evoworld.genome import ArchitectureConfig, Genome, count_params, init_genome
from evoworld.moea import Individual, Population
from evoworld.rng import RandomSource

# one line per acceptance criterion, echoed after the test summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def tiny_arch():
    """Smallest legal architecture; keeps genome ops near-instant."""
    return ArchitectureConfig(
        image_size=8, channels=(2,), kernel=4, stride=2,
        z_dim=2, hidden_dim=3, n_mixtures=2, action_dim=1,
    )


@pytest.fixture
def desk_arch():
    return ArchitectureConfig.desk_scale()


@pytest.fixture
def toy_genome(tiny_arch):
    return init_genome(tiny_arch, RandomSource(7, 1))


def make_genome(arch, seed=0, stream=0):
    return init_genome(arch, RandomSource(seed, stream))


def objective_pop(pairs, generation=0):
    """Population over pure (age, reward) points; genomes stay None."""
    members = [
        Individual(genome=None, id=i, age=int(a), reward=float(r))
        for i, (a, r) in enumerate(pairs)
    ]
    return Population(members=members, generation=generation, next_id=len(members))


def zero_genome(arch):
    return Genome(
        visual=np.zeros(count_params(arch, "visual")),
        memory=np.zeros(count_params(arch, "memory")),
        controller=np.zeros(count_params(arch, "controller")),
        arch=arch,
    )
