import numpy as np
import pytest

from tip_ssl.data import SynthConfig, synth_generate
from tip_ssl.model import ModelConfig, TIPModel
from tip_ssl.vision import VisionConfig

TINY_MODEL = ModelConfig(d_model=16, n_heads=4, tab_layers=2, interact_layers=2, proj_dim=8,
                         gi_hidden=16, gt_hidden=16, ffn_mult=2,
                         vision=VisionConfig(image_size=8, widths=(8, 8), strides=(1, 2)))
TINY_SYNTH = SynthConfig(n_samples=120, image_size=8, seed=3)


@pytest.fixture(scope="session")
def tiny_data():
    return synth_generate(TINY_SYNTH)


@pytest.fixture
def tiny_model(tiny_data):
    return TIPModel(TINY_MODEL, tiny_data.schema, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion; printed in the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        request.config.stash[_ACCEPTANCE].append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
