import numpy as np
import pytest

from convexrot.geometry import half_disk, half_ellipse, segments_for
from convexrot.mesh import MeshTemplate


@pytest.fixture(scope="session")
def ball_boundary_4():
    """Half-disk boundary with chords <= 2^-4 scaled to the unit-ball volume."""
    h = 2.0 ** -4
    b = half_disk(segments_for(h)).refined(h)
    return b.scaled((4.0 * np.pi / 3.0 / b.volume()) ** (1.0 / 3.0))


@pytest.fixture(scope="session")
def ball_mesh_4(ball_boundary_4):
    return MeshTemplate.for_boundary(ball_boundary_4, 2.0 ** -4).map(ball_boundary_4)


@pytest.fixture(scope="session")
def coarse_ball():
    h = 2.0 ** -2
    b = half_disk(segments_for(h))
    return b, MeshTemplate.for_boundary(b, h).map(b)


@pytest.fixture(scope="session")
def coarse_ellipse():
    h = 2.0 ** -2
    b = half_ellipse(1.3, segments_for(h, 1.3))
    return b, MeshTemplate.for_boundary(b, h).map(b)


# one line per acceptance criterion, shown in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
