import numpy as np
import pytest

from crowdflux.advect import (GridSpec, ParticleSet, advect_frame, advect_stream, make_block_grid, make_grid,
                              select_characteristic)
from crowdflux.errors import DimensionMismatch, GridTooFine
from crowdflux.flow_io import FlowField, sample_flow

from conftest import random_flow


def brute_particle(flow, grid, cell, s, velocity):
    """Pixel-by-pixel reference: sort by (-speed, row, col), keep moving pixels."""
    x0, x1, y0, y1 = grid.bounds(cell)
    pixels = []
    for y in range(y0, y1):
        for x in range(x0, x1):
            sp = float(np.hypot(np.float64(flow.u[y, x]), np.float64(flow.v[y, x])))
            pixels.append((-sp, y, x))
    pixels.sort()
    top = [(y, x) for sp, y, x in pixels[:s] if sp < 0]
    if not top:
        return grid.center(cell), (0.0, 0.0)
    cx = sum(x for _, x in top) / len(top)
    cy = sum(y for y, _ in top) / len(top)
    if velocity == "mean":
        vel = (sum(float(flow.u[y, x]) for y, x in top) / len(top),
               sum(float(flow.v[y, x]) for y, x in top) / len(top))
    else:
        vel = sample_flow(flow, cx, cy)
    return (cx, cy), vel


def test_grid_remainder_goes_to_last_cells():
    g = make_grid(23, 17, 4)
    assert (g.cell_width, g.cell_height) == (5, 4)
    assert g.bounds(3) == (15, 23, 0, 4)
    assert g.bounds(15) == (15, 23, 12, 17)
    labels = g.label_map()
    counts = np.bincount(labels.ravel(), minlength=g.n)
    assert counts.sum() == 23 * 17
    assert counts[0] == 20 and counts[15] == 8 * 5


def test_label_map_matches_bounds():
    g = make_grid(31, 22, 3)
    labels = g.label_map()
    for c in range(g.n):
        x0, x1, y0, y1 = g.bounds(c)
        assert np.all(labels[y0:y1, x0:x1] == c)


def test_grid_too_fine():
    with pytest.raises(GridTooFine):
        make_grid(10, 5, 6)
    with pytest.raises(GridTooFine):
        make_grid(10, 10, 0)
    with pytest.raises(GridTooFine):
        make_block_grid(10, 10, 11)


def test_block_grid_shape():
    g = make_block_grid(320, 240, 20)
    assert (g.rows, g.cols, g.n) == (12, 16, 192)


@pytest.mark.parametrize("velocity", ["mean", "centroid"])
@pytest.mark.parametrize("s", [1, 3, 7])
def test_particles_match_pixel_oracle(velocity, s, rng):
    flow = random_flow(rng, 23, 17)
    # sprinkle still pixels and exact speed ties
    u = flow.u.copy()
    v = flow.v.copy()
    u[rng.random(u.shape) < 0.3] = 0
    v[u == 0] = 0
    u[2, 1:4] = 5.0
    v[2, 1:4] = 0.0
    flow = FlowField(u, v)
    grid = make_grid(23, 17, 4)
    ps = advect_frame(flow, grid, s, 0, velocity)
    for cell in range(grid.n):
        pos, vel = brute_particle(flow, grid, cell, s, velocity)
        assert np.allclose(ps.positions[cell], pos, atol=1e-12)
        assert np.allclose(ps.velocities[cell], vel, atol=1e-9)
        p = select_characteristic(grid, cell, flow, s, 0, velocity)
        assert np.allclose(p.position, pos, atol=1e-12)
        assert np.allclose(p.velocity, vel, atol=1e-9)


def test_still_cell_gives_placeholder_at_centre():
    grid = make_grid(20, 20, 2)
    ps = advect_frame(FlowField.zeros(20, 20), grid, 5)
    assert ps.positions.tolist() == [[5.0, 5.0], [15.0, 5.0], [5.0, 15.0], [15.0, 15.0]]
    assert not ps.velocities.any()


def test_fewer_moving_pixels_than_s():
    u = np.zeros((10, 10), dtype=np.float32)
    u[3, 4] = 2.0
    ps = advect_frame(FlowField(u, np.zeros_like(u)), make_grid(10, 10, 1), 5)
    assert ps.positions[0].tolist() == [4.0, 3.0]
    assert ps.velocities[0].tolist() == [2.0, 0.0]


def test_dimension_mismatch(rng):
    with pytest.raises(DimensionMismatch):
        advect_frame(random_flow(rng, 10, 10), make_grid(12, 10, 2))


def test_bad_velocity_mode(rng):
    with pytest.raises(ValueError):
        advect_frame(random_flow(rng, 10, 10), make_grid(10, 10, 2), velocity="median")


def test_stream_frame_indices(rng):
    grid = make_grid(8, 8, 2)
    frames = list(advect_stream([random_flow(rng, 8, 8) for _ in range(3)], grid, 2, start=4))
    assert [f.frame_index for f in frames] == [4, 5, 6]


def test_particle_set_views():
    ps = ParticleSet([[1, 2], [3, 4]], [[3, 4], [0, 0]], frame_index=7)
    assert len(ps) == 2
    assert ps[0].speed == 5.0 and ps[1].frame_index == 7
    assert ParticleSet.from_particles(list(ps)).positions.tolist() == ps.positions.tolist()


def test_grid_spec_helpers():
    g = GridSpec(2, 3, 4, 5, 12, 10)
    assert g.rowcol(4) == (1, 1) and g.index(1, 1) == 4
    with pytest.raises(IndexError):
        g.rowcol(6)
    mask = g.cells_mask([0, 5])
    assert mask.sum() == 40
    assert g.cells_touching(mask).tolist() == [0, 5]
