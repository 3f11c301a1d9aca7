import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(autouse=True)
def _log_dir(tmp_path, monkeypatch):
    # setup_logging() writes a rotating file; keep it out of the working tree
    monkeypatch.setenv('KOROBOV_LOG_DIR', str(tmp_path / 'logs'))
    monkeypatch.delenv('KOROBOV_CHECKPOINT_DB', raising=False)
    monkeypatch.delenv('KOROBOV_WORKERS', raising=False)
