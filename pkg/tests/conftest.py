import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

from sgpstab.data_io import Dataset, shard, synth_logistic


@pytest.fixture(scope="session")
def small_logistic():
    """20-dim synthetic logistic data, 8 nodes x 50 samples, with pool and test split."""
    samples = synth_logistic(20, 600, 4.0, seed=3)
    data = Dataset.from_samples(samples, 20)
    test = data.take(np.arange(500, 600))
    return shard(data.take(np.arange(500)), 8, 50, seed=1, test=test)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
