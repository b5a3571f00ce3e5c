import itertools
import math
import warnings

import numpy as np
import pytest

from esp.dof import (
    ApertureGeometry, LinkGeometry, count_shell_3d, count_visible_2d, dft_codebook, dof_link,
    dof_unbounded,
)
from esp.em import Medium
from esp.errors import ParameterError

M = Medium(1.0)


def shell_oracle(side, lam):
    """Brute-force lattice points 2 pi n / L within the shell |k| in k0 +- pi / L."""
    k0 = 2 * np.pi / lam
    delta = 2 * np.pi / side
    n = math.ceil(side / lam) + 1
    count = 0
    for nx, ny, nz in itertools.product(range(-n, n + 1), repeat=3):
        k = 2 * np.pi / side * math.sqrt(nx * nx + ny * ny + nz * nz)
        if abs(k - k0) <= delta / 2:
            count += 1
    return count


def disk_oracle(lx, ly, lam):
    n = int(lx / lam) + 1
    m = int(ly / lam) + 1
    return sum(1 for a in range(-n, n + 1) for b in range(-m, m + 1)
               if (a * lam / lx) ** 2 + (b * lam / ly) ** 2 <= 1 + 1e-12)


def test_segment_formula():
    assert dof_unbounded(ApertureGeometry.segment(6.0), M).value == pytest.approx(12.0)


def test_square_lattice_ratio_pi_over_four():
    n = dof_unbounded(ApertureGeometry.square(20.0), M, "lattice").lattice_count
    assert abs(n / 40.0**2 - np.pi / 4) / (np.pi / 4) < 0.05


def test_square_lattice_ratio_converges():
    n = dof_unbounded(ApertureGeometry.square(50.0), M, "lattice").value
    assert 0.9 <= n / (np.pi * 50.0**2) <= 1.1


@pytest.mark.parametrize("lx,ly", [(4.0, 4.0), (5.3, 7.1), (10.0, 4.5)])
def test_visible_2d_matches_brute_force(lx, ly):
    assert count_visible_2d(lx, ly, 1.0) == disk_oracle(lx, ly, 1.0)


def test_cube_lattice_matches_brute_force():
    assert count_shell_3d(6.0, 6.0, 6.0, 1.0) == shell_oracle(6.0, 1.0)
    assert dof_unbounded(ApertureGeometry.cube(6.0), M, "lattice").value == shell_oracle(6.0, 1.0)


def test_cube_formula_is_exact_shell():
    v = dof_unbounded(ApertureGeometry.cube(10.0), M).value
    assert v == pytest.approx(np.pi / 3 + 4 * np.pi * 100)


def test_unequal_sides_need_lattice():
    with pytest.raises(ParameterError):
        dof_unbounded(ApertureGeometry.rectangle(5.0, 8.0), M)
    assert dof_unbounded(ApertureGeometry.rectangle(5.0, 8.0), M, "lattice").value > 0


def test_small_aperture_warns():
    with pytest.warns(UserWarning):
        dof_unbounded(ApertureGeometry.segment(2.0), M)


def test_polarization_multiplier():
    g = ApertureGeometry.square(10.0)
    assert dof_unbounded(g, M, polarizations=2).value == pytest.approx(
        2 * dof_unbounded(g, M).value)


@pytest.mark.parametrize("make", [ApertureGeometry.segment, ApertureGeometry.square,
                                  ApertureGeometry.cube])
def test_formula_monotone_in_length(make):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        vals = [dof_unbounded(make(L), M).value for L in np.linspace(1, 30, 40)]
    assert np.all(np.diff(vals) > 0)


def test_invalid_geometry():
    with pytest.raises(ParameterError):
        ApertureGeometry.segment(-1.0)
    with pytest.raises(ParameterError):
        LinkGeometry.segments(1.0, 1.0, 0.0)


def test_link_classic_direct_value():
    m = Medium(0.1)
    assert dof_link(LinkGeometry.segments(1.0, 1.0, 10.0), m, "classic").value == pytest.approx(1.0)


def test_link_corrected_segment_limit():
    g = LinkGeometry.segments(8.0, 1e9 * 5.0, 5.0)
    assert dof_link(g, M).value == pytest.approx(16.0, rel=1e-3)


def test_link_corrected_square_limit():
    at = 25.0
    g = LinkGeometry.squares(at, 1e20, 1.0)
    assert dof_link(g, M).value == pytest.approx(np.pi * at, rel=1e-6)


def test_square_corrected_requires_smaller_transmitter():
    with pytest.raises(ParameterError):
        dof_link(LinkGeometry.squares(100.0, 50.0, 10.0), M)


def test_corrected_never_exceeds_unbounded(rng):
    for _ in range(200):
        lt, lr, d = rng.uniform(1, 50, 3)
        seg = dof_link(LinkGeometry.segments(lt, lr, d), M).value
        assert seg <= 2 * lt + 1e-12
        at = lt**2
        sq = dof_link(LinkGeometry.squares(at, at * rng.uniform(1.01, 10), d), M).value
        assert sq <= np.pi * at + 1e-9


def test_classic_and_corrected_agree_paraxially(rng):
    for _ in range(100):
        d = rng.uniform(50, 500)
        lr = d * rng.uniform(0.001, 0.05)
        c = dof_link(LinkGeometry.segments(4.0, lr, d), M, "classic").value
        k = dof_link(LinkGeometry.segments(4.0, lr, d), M, "corrected").value
        assert abs(c - k) / k < 0.1


def test_codebook_unitary_and_angles():
    for n in (1, 4, 7, 16):
        cb = dft_codebook(n)
        assert np.allclose(cb.matrix.conj().T @ cb.matrix, np.eye(n), atol=1e-12)
        assert np.allclose(cb.matrix[:, 0], 1 / np.sqrt(n))
    cb = dft_codebook(4)
    ang = dict(zip(cb.beam_index, cb.angles_deg))
    assert ang[1] == pytest.approx(30.0)
    assert ang[2] == pytest.approx(90.0)
    assert ang[0] == 0.0


def test_result_rounding_half_up():
    from esp.dof import DofResult
    assert DofResult(2.5, "formula").rounded() == 3
    assert DofResult(2.49, "formula").rounded() == 2
