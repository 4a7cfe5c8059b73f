import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

# first calls may include numba compilation
settings.register_profile("default", deadline=None)
settings.load_profile("default")

from assign_hoi.synthetic import SyntheticConfig, generate_synthetic  # noqa: E402


@pytest.fixture(scope="session")
def small_dataset():
    cfg = SyntheticConfig(num_videos=8, num_subjects=2, num_objects_range=(1, 3),
                          num_frames_range=(30, 50), mean_segment_length=8, feature_dim=6, seed=11)
    return generate_synthetic(cfg)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
