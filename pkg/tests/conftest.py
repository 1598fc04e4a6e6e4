import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import make_random_archive, make_scene, tiny_spec  # noqa: E402

from puzzlesim import netspec  # noqa: E402
from puzzlesim.archive import save_archive  # noqa: E402


@pytest.fixture(scope="session")
def tiny():
    spec = tiny_spec()
    return spec, make_random_archive(spec, seed=7)


@pytest.fixture(scope="session")
def squeezenet_spec():
    return netspec.builtin_spec("squeezenet")


@pytest.fixture(scope="session")
def squeezenet_archive(squeezenet_spec):
    return make_random_archive(squeezenet_spec, seed=11)


@pytest.fixture(scope="session")
def squeezenet_archive_file(tmp_path_factory, squeezenet_archive):
    path = tmp_path_factory.mktemp("archive") / "squeezenet.pzta"
    save_archive(squeezenet_archive, path)
    return path


@pytest.fixture(scope="session")
def small_scene():
    """Five 96x96 references plus a held-out view from one texture canvas."""
    refs, held_out = make_scene(seed=3, n_refs=5, size=96)
    return refs, held_out


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance checklist collected by test_acceptance.py."""
    results = sys.modules.get("test_acceptance")
    if results is None or not getattr(results, "RESULTS", None):
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria:")
    for line in results.RESULTS:
        terminalreporter.write_line("  " + line)
