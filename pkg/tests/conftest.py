import numpy as np
import pytest

from posegraphnet.model import ModelConfig, PoseGraphNet
from posegraphnet.skeleton import chain, default_skeleton
from posegraphnet.synthetic import generate_synthetic

_acceptance: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(text): acceptance criterion covered by a test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        outcome = "FAIL" if call.excinfo is not None else "PASS"
        _acceptance.append((outcome, f"{marker.args[0]} [{item.name}]"))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for outcome, text in _acceptance:
        terminalreporter.write_line(f"{outcome}  {text}")


@pytest.fixture(scope="session")
def skeleton():
    return default_skeleton()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth32():
    return generate_synthetic(32, seed=1)


def make_net(sk=None, hidden=8, dropout=0.0, seed=0, **kw):
    sk = sk or chain(3)
    return PoseGraphNet(sk, ModelConfig(hidden=hidden, dropout=dropout, **kw),
                        init_rng=np.random.default_rng(seed), dropout_rng=np.random.default_rng(seed + 1))


def permuted_copy(net, perm):
    """Same weights on the joint-permuted skeleton, raw adjacencies conjugated."""
    perm = np.asarray(perm)
    other = PoseGraphNet(net.skeleton.permuted(perm), net.config)
    src, dst = net.named_parameters(), other.named_parameters()
    for name, p in src.items():
        if name.startswith("adjacency"):
            dst[name].data[...] = p.data[np.ix_(perm, perm)]
        else:
            dst[name].data[...] = p.data
    for name, buf in net.named_buffers().items():
        other.set_buffer(name, buf.copy())
    return other


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
