import hashlib
from pathlib import Path

import pytest

MINISET = Path(__file__).parent / "data" / "miniset"


def pytest_addoption(parser):
    parser.addoption(
        "--runslow",
        action="store_true",
        default=False,
        help="also run tests marked slow (exhaustive sweeps)",
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long exhaustive test, run with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def miniset() -> Path:
    return MINISET


def tree_hash(root: Path, ignore=("run.log",)) -> str:
    """Order-independent digest of a directory tree (relative paths plus
    file bytes); used by the determinism checks."""
    digest = hashlib.sha256()
    for path in sorted(p for p in Path(root).rglob("*") if p.is_file()):
        if path.name in ignore:
            continue
        digest.update(str(path.relative_to(root)).encode())
        digest.update(b"\0")
        digest.update(path.read_bytes())
        digest.update(b"\0")
    return digest.hexdigest()


@pytest.fixture
def hash_tree():
    return tree_hash
