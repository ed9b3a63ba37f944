import numpy as np
import pytest

from perturbench.data import Dataset, ExpressionMatrix, Metadata
from perturbench.synth import SynthConfig, generate


def make_meta(perts, batches, **kw):
    return Metadata.from_labels(np.asarray(perts), np.asarray(batches), **kw)


@pytest.fixture
def tiny_dataset():
    rng = np.random.default_rng(0)
    perts = ["non-targeting", "A", "B", "C", "D"] * 2
    batches = ["b0"] * 5 + ["b1"] * 5
    meta = make_meta(perts, batches)
    expr = ExpressionMatrix(rng.integers(0, 50, (10, 5)).astype(np.float32),
                            [f"g{i}" for i in range(5)])
    return Dataset(meta, expr, {})


@pytest.fixture(scope="session")
def small_synth():
    return generate(SynthConfig(n_batches=4, cells_per_batch=100, n_perturbations=12,
                                n_silent_targets=6, n_genes=60, n_modules=3,
                                latent_dim=8, seed=3))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
