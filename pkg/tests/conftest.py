import numpy as np
import pytest

from occlusplint.mesh import RigidTransform
from occlusplint.synthkit import ArchSpec, make_arch_pair


@pytest.fixture(scope="session")
def arch():
    return make_arch_pair()


@pytest.fixture(scope="session")
def coarse_arch():
    # about 4k triangles per jaw, small enough for brute-force oracles
    return make_arch_pair(ArchSpec(resolution=1.2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_transform(rng, angle=20.0, shift=5.0):
    return RigidTransform.random(rng, angle, shift)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
