import numpy as np
import pytest

from dualattn import config as C

# results recorded by test_acceptance.py, echoed in the terminal summary
ACCEPTANCE = {}

# a 16x16 model small enough for full training steps inside unit tests
TINY = {
    "num_layers": "3", "g_channels": "8", "g_min_channels": "4", "sentence_dim": "8",
    "noise_dim": "4", "d_channels": "4", "d_max_channels": "8", "d_text_channels": "4",
    "embed_dim": "4", "enc_hidden": "4", "batch": "4", "n_train": "48", "n_test": "12",
    "steps": "6",
}


@pytest.fixture
def tiny_cfg():
    return C.build(TINY)[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
