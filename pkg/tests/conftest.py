import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for helpers.py


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def make_encoded(n=600, seed=7):
    """Small encoded synthetic portfolio for pipeline tests."""
    from iclct import data as D

    table = D.synthetic_portfolio(n, seed=seed)
    vocab = D.VocabularyMap.fit(table)
    stats = D.TrainStats.fit(table)
    return D.encode(table, vocab, stats)


def small_config(**overrides):
    """Desk-scale run config: tiny model, few epochs, small batches."""
    from iclct.config import ModelConfig, PhaseConfig, RunConfig

    model = ModelConfig(dim=8, heads=2, encoder_layers=1, icl_layers=2,
                        decorator_hidden=8, decoder_hidden=8)
    cfg = RunConfig(
        model=model,
        phase1=PhaseConfig(lr=1e-3, epochs=2, patience=3, batch_size=128),
        phase2=PhaseConfig(lr=3e-4, epochs=2, patience=3, context_size=60,
                           chunk_size=24, k_neighbors=8),
        phase3=PhaseConfig(lr=3e-5, epochs=1, patience=2, context_size=60,
                           chunk_size=24, k_neighbors=8),
        seed=5,
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One line per acceptance criterion at the end of a run."""
    lines = []
    for status in ("passed", "failed", "skipped"):
        for rep in terminalreporter.stats.get(status, []):
            if getattr(rep, "when", "call") != "call" and status != "skipped":
                continue
            if "test_acceptance.py" in str(getattr(rep, "nodeid", "")):
                name = rep.nodeid.split("::")[-1]
                lines.append((name, status.upper()))
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, status in sorted(set(lines)):
            terminalreporter.write_line(f"{name}: {status}")
