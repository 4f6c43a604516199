import os
import sys
from pathlib import Path

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("fast", max_examples=10, deadline=None)
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

torch.set_num_threads(1)

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.fixture(scope="session")
def models():
    from streamanon.checkpoint import Models

    return Models.build(seed=0)


@pytest.fixture(scope="session")
def small_arvc():
    from streamanon.arvc import ARVC
    from streamanon.config import ARVCConfig

    torch.manual_seed(0)
    m = ARVC(ARVCConfig(content_vocab=16, n_codebooks=3, codebook_size=32, speaker_dim=8, dim=16, ffn_dim=32))
    return m.eval()


@pytest.fixture(scope="session")
def pool_dir(tmp_path_factory):
    from streamanon.synth import make_pool

    return make_pool(tmp_path_factory.mktemp("pool"), seed=0, speakers_per_dataset=2, utts_per_speaker=4,
                     seconds=(2.0, 4.0))


@pytest.fixture(scope="session")
def pool(pool_dir):
    from streamanon.anonymizer import pool_build

    return pool_build(pool_dir)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {status:<11} {detail}")
