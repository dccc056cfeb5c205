import numpy as np
import pytest
import torch

from poseforge import skeleton as sk

# Keep BLAS thread fan-out stable so timings and results are reproducible
# across runs on the same machine.
torch.set_num_threads(torch.get_num_threads())

_ACCEPTANCE_LINES: list[str] = []


def record_criterion(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def skel() -> sk.SkeletonDef:
    return sk.load_skeleton()


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(12345))
