import numpy as np
import pytest

from stcos.geometry import ArealUnit, SupportSet


def square(uid, x0, y0, side=1.0):
    ring = [(x0, y0), (x0 + side, y0), (x0 + side, y0 + side),
            (x0, y0 + side), (x0, y0)]
    return ArealUnit.from_polygon_coords(uid, [ring])


@pytest.fixture
def unit_square():
    return square("sq", 0.0, 0.0)


@pytest.fixture
def row5():
    """Five unit squares in a row along the x axis."""
    return SupportSet([square(f"b{i}", float(i), 0.0) for i in range(5)],
                      disjoint=True)


@pytest.fixture
def grid2x2():
    return SupportSet([square(f"g{i}{j}", float(j), float(i))
                       for i in range(2) for j in range(2)], disjoint=True)


@pytest.fixture
def l_shape():
    """L-shaped polygon: 2x1 horizontal arm plus 1x1 block on top of the
    left cell; total area 3."""
    ring = [(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2), (0, 0)]
    return ArealUnit.from_polygon_coords("L", [ring])


def rng(seed=0):
    return np.random.default_rng(seed)
