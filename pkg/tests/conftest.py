import random

import pytest

from bdpcsim.core import SimConfig
from bdpcsim.network import Network


def small_config(**kw) -> SimConfig:
    """A short run on the default topology, converged statistics from slotframe 200."""
    base = dict(num_slotframes=1000, converge_slotframe=200)
    base.update(kw)
    return SimConfig(**base).validate()


def hand_network(links, parents, **kw) -> Network:
    """Network that is never started: no DIOs, no traffic, parents set by hand.

    Node ids run 0..max id in ``links``, one node per group.
    """
    top = max(max(pair) for pair in links)
    cfg = SimConfig(links=links, groups=top, group_size=1, **kw).validate()
    net = Network(cfg)
    for child, parent in parents.items():
        rpl = net.nodes[child].rpl
        rpl.preferred_parent = parent
        rpl.my_rank = 256 * (1 + _depth(parents, child))
    return net


def _depth(parents, node):
    d = 0
    while node in parents:
        node = parents[node]
        d += 1
    return d


@pytest.fixture
def rng():
    return random.Random(1234)


# ------------------------------------------------------------ acceptance runs
ACCEPTANCE: list[str] = []
REFERENCE_SEEDS = range(10)


@pytest.fixture(scope="session")
def reference_runs():
    """Full-length runs of every preset over the reference seeds (summaries only)."""
    from bdpcsim.core import PRESETS, preset_config
    from bdpcsim.harness.runner import aggregate, cell_bins, run_one

    out = {}
    for preset in sorted(PRESETS):
        summaries = []
        for seed in REFERENCE_SEEDS:
            res, summary = run_one(preset_config(preset, seed=seed))
            summary["cell_bins"] = cell_bins(res)
            summaries.append(summary)
        out[preset] = {"summaries": summaries, "aggregate": aggregate(summaries)}
    return out


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
