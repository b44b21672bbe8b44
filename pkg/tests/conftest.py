import pytest

from hyploc.harness.config import RunConfig

TINY = dict(n_train=16, n_test=8, beams=8, azimuth_samples=60, sph_height=16, sph_width=32, bev_height=16,
            bev_width=16, width=16, heads=2, sa_centroids=16, sa_neighbors=8, ffb_blocks=1, head_hidden=16,
            batch_size=4, epochs=2)


@pytest.fixture(scope="session")
def tiny_data_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("tiny_world")


@pytest.fixture
def tiny_cfg(tiny_data_dir, tmp_path):
    """Small enough to train a couple of epochs in about a second."""
    return RunConfig(data_dir=str(tiny_data_dir), out_dir=str(tmp_path / "run"), **TINY)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
