import math

import numpy as np
import pytest

from mrsim.bloch import GAMMA_PROTON, FrameContext
from mrsim.errors import OutOfGrid, ParseError
from mrsim.system import (
    MU_0,
    CircularLoop,
    Legendre12Inhomogeneity,
    ScalarGrid,
    StaticField,
    UniformSensitivity,
    coil_weight,
    complex_weight,
    default_system,
    delta_b0,
    load_scalar_grid,
    parse_system_file,
    spin_off_resonance,
)

from oracles import legendre_recurrence


def test_legendre12_at_origin_is_zero():
    field = StaticField(b0=1.5, inhomogeneity=Legendre12Inhomogeneity(c=20e-6, r=0.25))
    assert delta_b0(field, (0, 0, 0)) == 0.0


def test_legendre12_on_axis_at_radius():
    inhom = Legendre12Inhomogeneity(c=20e-6, r=0.25)
    assert inhom((0, 0, 0.25)) == pytest.approx(-20e-6, rel=1e-12)


def test_legendre12_equator_half_radius():
    c, r = 20e-6, 0.25
    inhom = Legendre12Inhomogeneity(c=c, r=r)
    p12_0 = legendre_recurrence(12, 0.0)
    assert p12_0 == pytest.approx(0.2255859375)
    assert inhom((r / 2, 0, 0)) == pytest.approx(-c * 0.5**12 * p12_0, rel=1e-12)


def test_legendre12_axially_symmetric():
    inhom = Legendre12Inhomogeneity(c=20e-6, r=0.25)
    rad, z = 0.11, 0.07
    values = [
        inhom((rad * math.cos(a), rad * math.sin(a), z))
        for a in np.linspace(0, 2 * math.pi, 17)
    ]
    np.testing.assert_allclose(values, values[0], rtol=1e-12)


def test_scalar_grid_reproduces_nodes_and_interpolates():
    values = np.arange(27, dtype=float).reshape(3, 3, 3)
    grid = ScalarGrid(shape=(3, 3, 3), origin=(0, 0, 0), step=(1, 1, 1), values=values)
    for iz in range(3):
        for iy in range(3):
            for ix in range(3):
                assert grid((ix, iy, iz)) == values[iz, iy, ix]
    assert grid((0.5, 0, 0)) == pytest.approx((values[0, 0, 0] + values[0, 0, 1]) / 2)
    with pytest.raises(OutOfGrid):
        grid((5.0, 0, 0))


def test_spin_off_resonance_on_resonance_is_zero():
    sys = default_system(b0=1.5)
    assert spin_off_resonance(sys.field, (0, 0, 0), 0.0, sys.frame()) == 0.0


def test_spin_off_resonance_per_microtesla():
    field = StaticField(b0=1.5, inhomogeneity=lambda x: 1e-6)
    ctx = FrameContext.on_resonance(1.5)
    dw = spin_off_resonance(field, (0, 0, 0), 0.0, ctx)
    assert dw == pytest.approx(2 * math.pi * 42.6, rel=1e-12)


def test_spin_off_resonance_additive():
    sys = default_system(b0=1.5)
    assert spin_off_resonance(sys.field, (0, 0, 0), 100.0, sys.frame()) == pytest.approx(100.0)


# ---------------------------------------------------------------------------
# receive sensitivity
# ---------------------------------------------------------------------------


def test_uniform_sensitivity():
    s = UniformSensitivity(s=1.0)
    np.testing.assert_allclose(coil_weight(s, (0.1, 0.2, 0.3)), [1.0, 0.0, 0.0])
    assert complex_weight(s, (0, 0, 0)) == 1.0 + 0.0j


def test_loop_center_field_matches_closed_form():
    loop = CircularLoop(center=(0, 0, 0), normal=(0, 0, 1), diameter=0.15)
    b = coil_weight(loop, (0, 0, 0))
    np.testing.assert_allclose(b[:2], 0.0, atol=1e-18)
    assert b[2] == pytest.approx(MU_0 / 0.15, rel=1e-10)


def test_loop_on_axis_closed_form():
    a = 0.075
    loop = CircularLoop(center=(0, 0, 0), normal=(0, 0, 1), diameter=2 * a)
    z = 0.1
    want = MU_0 * a**2 / (2 * (a**2 + z**2) ** 1.5)
    assert coil_weight(loop, (0, 0, z))[2] == pytest.approx(want, rel=1e-10)


def test_loop_quadrature_converges():
    base = CircularLoop(center=(0, 0, 0), normal=(0, 1, 0), diameter=0.15, segments=256)
    fine = CircularLoop(center=(0, 0, 0), normal=(0, 1, 0), diameter=0.15, segments=512)
    point = (0.05, 0.03, 0.02)  # > D/10 from the wire
    np.testing.assert_allclose(base(point), fine(point), atol=1e-8 * np.linalg.norm(base(point)))


def test_loop_axis_points_receive_nothing():
    # on the loop axis the coil field is purely longitudinal: dark zone
    loop = CircularLoop(center=(0, 0, 0.2), normal=(0, 0, 1), diameter=0.15)
    w = complex_weight(loop, (0, 0, 0.0))
    assert abs(w) < 1e-18
    off_axis = complex_weight(loop, (0.05, 0.0, 0.0))
    assert abs(off_axis) > 1e-12 * MU_0


# ---------------------------------------------------------------------------
# description files
# ---------------------------------------------------------------------------


def test_parse_system_file_legendre_and_loop():
    text = (
        "[static_field]\n"
        "b0_T = 1.5\n"
        "inhomogeneity = legendre12 C_uT=20 R_m=0.25\n"
        "[receive]\n"
        "model = loop center_m=0,0,0.1 normal=0,0,1 diameter_m=0.15\n"
    )
    sys = parse_system_file(text)
    assert sys.field.b0 == 1.5
    assert isinstance(sys.field.inhomogeneity, Legendre12Inhomogeneity)
    assert sys.field.inhomogeneity.c == pytest.approx(20e-6)
    assert isinstance(sys.receive, CircularLoop)


def test_parse_system_grid_file(tmp_path):
    path = tmp_path / "field.grid"
    header = "2 2 2 0 0 0 0.1 0.1 0.1\n"
    values = " ".join(str(v * 1e-6) for v in range(8))
    path.write_text(header + values + "\n")
    sys = parse_system_file(
        "[static_field]\nb0_T = 1.0\ninhomogeneity = grid file=field.grid\n",
        base_dir=str(tmp_path),
    )
    assert sys.field.delta_b0((0.1, 0.0, 0.0)) == pytest.approx(1e-6)
    assert sys.field.delta_b0((0.0, 0.1, 0.1)) == pytest.approx(6e-6)


def test_parse_system_requires_b0():
    with pytest.raises(ParseError):
        parse_system_file("[receive]\nmodel = uniform\n")


def test_load_scalar_grid_rejects_wrong_count(tmp_path):
    path = tmp_path / "bad.grid"
    path.write_text("2 2 2 0 0 0 1 1 1\n1 2 3\n")
    with pytest.raises(ParseError):
        load_scalar_grid(str(path))
