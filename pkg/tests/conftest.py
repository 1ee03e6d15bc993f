import numpy as np
import pytest
from hypothesis import settings

# property tests draw from a fixed example database-free sequence so runs repeat
settings.register_profile("repro", derandomize=True, deadline=None, max_examples=60)
settings.load_profile("repro")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_ds():
    from sbp.data import DatasetSpec, generate

    return generate(DatasetSpec(seed=1))


@pytest.fixture(scope="session")
def default_classic(default_ds):
    """Classic model trained on the default benchmark with the default config."""
    from sbp.classic import ClassicHyper, freeze, train_classic
    from sbp.config import ExperimentConfig

    c = ExperimentConfig().classic
    model, trace = train_classic(default_ds, ClassicHyper(lr=c.lr, batch=c.batch, iters=c.iters), seed=1)
    return freeze(model), trace


@pytest.fixture(scope="session")
def default_runs(tmp_path_factory):
    """Full default pipeline for seeds 1, 2 and 3: {seed: (out_dir, reports, log, seconds)}."""
    import time

    from sbp.cli import run_pipeline
    from sbp.config import ExperimentConfig

    root = tmp_path_factory.mktemp("default_runs")
    runs = {}
    for seed in (1, 2, 3):
        log = []
        start = time.perf_counter()
        reports = run_pipeline(ExperimentConfig().with_seed(seed), root / f"seed_{seed}", lambda *a, **k: log.append(" ".join(map(str, a))))
        runs[seed] = (root / f"seed_{seed}", reports, log, time.perf_counter() - start)
    return runs


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
