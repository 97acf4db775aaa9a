import numpy as np
import pytest

from dgcem.assembly import AssemblyConfig, IPDGOperators, assemble_source
from dgcem.grid import build_mesh, partition_of_unity
from dgcem.media import generate_medium, material_from_modulus, voigt_tensor, weight_k1


class Problem:
    """Mesh, medium and operators for one test configuration."""

    def __init__(self, nc, nf, contrast=1e4, kind="channels_plus_inclusions", seed=2024, E=None, gamma=8.0, eta=1):
        self.mesh = build_mesh(nc, nc, nf)
        self.E = generate_medium(kind, self.mesh, contrast, seed) if E is None else E
        self.material = material_from_modulus(self.E, 0.25)
        self.voigt = voigt_tensor(self.material)
        self.pou = partition_of_unity(self.mesh)
        self.weights = weight_k1(self.material, self.pou)
        self.config = AssemblyConfig(gamma, eta)
        self.ops = IPDGOperators(self.mesh, self.voigt)
        self.A = self.ops.adg(self.config)
        self.N = self.ops.norm_matrix(self.config)
        self.F = assemble_source(self.mesh, (0.0, 1.0))


@pytest.fixture(scope="session")
def small():
    return Problem(4, 4)


@pytest.fixture(scope="session")
def small_uniform():
    return Problem(4, 4, kind="uniform")


@pytest.fixture(scope="session")
def desk():
    return Problem(8, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criterion -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{cid:>4} {'PASS' if ok else 'FAIL'}  {detail}")
