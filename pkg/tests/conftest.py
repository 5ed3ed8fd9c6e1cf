import dataclasses
import time

import pytest

from segadapt import experiments
from segadapt.config import load_config

# reduced split sizes keep the empirical acceptance fixtures inside the
# CPU budget; everything else about the benchmark matches the defaults
ACCEPT_SIZES = {
    "n_source": "240",
    "n_target_train": "240",
    "n_target_val": "60",
    "n_target2_val": "60",
}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance: long-running empirical acceptance criteria"
    )


@pytest.fixture(scope="session")
def accept_cfg():
    return experiments.recipe_config(load_config(None, ACCEPT_SIZES))


@pytest.fixture(scope="session")
def accept_bench(accept_cfg):
    return experiments.make_benchmark(accept_cfg)


@pytest.fixture(scope="session")
def ladder(accept_bench, accept_cfg):
    """Full component ladder over three seeds; returns (report, pairs)."""
    t0 = time.monotonic()
    report, pairs = experiments.ablation_ladder(
        accept_bench, accept_cfg, seeds=(1, 2, 3), keep_models=True
    )
    report["duration_seconds"] = time.monotonic() - t0
    return report, pairs


@pytest.fixture(scope="session")
def strategy_report(accept_bench, accept_cfg, ladder):
    """Pseudo-labelling strategies from a shared warm-up model."""
    _, pairs = ladder
    cfg = dataclasses.replace(accept_cfg, seed=1, st_epochs=8)
    return experiments.strategy_comparison(accept_bench, cfg, warm_pair=pairs[("crdomix", 1)])
