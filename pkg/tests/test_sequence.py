import math

import numpy as np
import pytest

from mrsim.bloch import GAMMA_PROTON, HardPulse
from mrsim.errors import InvalidParameter, ParseError, TimingInfeasible, UnitError
from mrsim.sequence import (
    AcquisitionSpec,
    ElementarySequence,
    GradientWaveform,
    Sequence,
    build_cpmg,
    build_gradient_epi,
    build_spin_echo,
    build_tse,
    parse_sequence_file,
    readout_duration,
    readout_gradient,
    serialize_sequence,
    split_elementary,
)


def test_readout_gradient_table_values():
    # whole-body protocol: FOV 0.5 m, 256 samples, 0.239 mT/m readout
    dt = readout_duration(0.5, 256, 0.239e-3)
    assert readout_gradient(0.5, 256, dt) == pytest.approx(0.239e-3, rel=1e-12)
    # small-bore protocol: FOV 0.128 m, 64 samples, 2.349 mT/m
    dt = readout_duration(0.128, 64, 2.349e-3)
    assert readout_gradient(0.128, 64, dt) == pytest.approx(2.349e-3, rel=1e-12)


def test_readout_gradient_two_sample_collapse():
    g = readout_gradient(0.5, 2, 1e-3)
    assert g == pytest.approx(2 * math.pi / (GAMMA_PROTON * 0.5 * 1e-3))


def test_readout_gradient_rejects_bad_input():
    with pytest.raises(InvalidParameter):
        readout_gradient(-1.0, 64, 1e-3)
    with pytest.raises(InvalidParameter):
        readout_gradient(0.5, 1, 1e-3)


# ---------------------------------------------------------------------------
# gradient waveforms
# ---------------------------------------------------------------------------


def test_trapezoid_moment_closed_form():
    g = GradientWaveform.trapezoid(gx=2e-3, ramp_s=1e-3, flat_s=4e-3)
    dur = 6e-3
    m = g.moments(dur, GAMMA_PROTON)
    assert m[0] == pytest.approx(GAMMA_PROTON * 2e-3 * 5e-3, rel=1e-12)
    # quadrature oracle on the partial moments
    ts = np.linspace(0, dur, 1201)
    amp = np.where(ts < 1e-3, ts / 1e-3, np.where(ts < 5e-3, 1.0, (6e-3 - ts) / 1e-3)) * 2e-3
    numeric = GAMMA_PROTON * np.concatenate([[0.0], np.cumsum((amp[1:] + amp[:-1]) / 2 * np.diff(ts))])
    analytic = g.partial_moments(ts, dur, GAMMA_PROTON)[:, 0]
    np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-9)


def test_sampled_waveform_moment_matches_trapz():
    rng = np.random.default_rng(3)
    samples = rng.normal(size=(25, 3)) * 1e-3
    g = GradientWaveform.from_samples(samples, sample_dt=1e-4)
    m = g.moments(24e-4, GAMMA_PROTON)
    np.testing.assert_allclose(
        m, GAMMA_PROTON * np.trapezoid(samples, dx=1e-4, axis=0), rtol=1e-12
    )


def test_trapezoid_duration_mismatch_rejected():
    with pytest.raises(InvalidParameter):
        ElementarySequence(
            gradient=GradientWaveform.trapezoid(gx=1e-3, ramp_s=1e-3, flat_s=1e-3),
            duration=5e-3,
        )


def test_acquisition_sample_times_span_interval():
    acq = AcquisitionSpec(True, 5)
    np.testing.assert_allclose(acq.sample_times(1.0), [0.0, 0.25, 0.5, 0.75, 1.0])


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def test_spin_echo_counts_and_moments():
    n = 64
    g = readout_gradient(0.5, n, 0.02)
    seq = build_spin_echo(fov=0.5, n=n, te=0.05, tr=0.5, readout_grad=g)
    acqs = list(seq.acquisitions())
    assert len(acqs) == n
    assert all(es.acquisition.n_samples == n for _, es in acqs)
    # dephasing moment is half the readout moment
    dephase = seq.elements[0].gradient.moments(seq.elements[0].duration, GAMMA_PROTON)[0]
    readout = acqs[0][1].gradient.moments(acqs[0][1].duration, GAMMA_PROTON)[0]
    assert dephase == pytest.approx(readout / 2.0, rel=1e-12)
    # effective phase encodes (sign flipped by the 180 pulse) run from the
    # most negative ky upward in steps of 2*pi/FOV
    ky = [
        -seq.elements[4 * r].gradient.moments(seq.elements[4 * r].duration, GAMMA_PROTON)[1]
        for r in range(n)
    ]
    steps = np.diff(ky)
    np.testing.assert_allclose(steps, 2 * math.pi / 0.5, rtol=1e-9)
    assert ky[0] < 0


def test_spin_echo_echo_crosses_k_zero_at_te():
    te = 0.05
    g = readout_gradient(0.5, 33, 0.02)
    seq = build_spin_echo(fov=0.5, n=33, te=te, tr=0.5, readout_grad=g)
    # walk cumulative kx for one excitation, flipping sign at the 180 pulse
    k = 0.0
    t = 0.0
    for es in seq.elements[:4]:
        if es.pulse is not None and abs(es.pulse.alpha - math.pi) < 1e-12:
            k = -k
        if es.acquisition.enabled:
            ts = es.acquisition.sample_times(es.duration)
            partial = es.gradient.partial_moments(ts, es.duration, GAMMA_PROTON)[:, 0]
            crossing = ts[np.argmin(np.abs(k + partial))]
            assert t + crossing == pytest.approx(te, rel=1e-9)
        k += es.gradient.moments(es.duration, GAMMA_PROTON)[0]
        t += es.duration


def test_spin_echo_timing_infeasible():
    g = readout_gradient(0.5, 64, 0.2)  # 200 ms readout cannot fit into TE = 50 ms
    with pytest.raises(TimingInfeasible):
        build_spin_echo(fov=0.5, n=64, te=0.05, tr=0.5, readout_grad=g)


def test_tse_row_ordering_sequential():
    g = readout_gradient(0.5, 16, 0.004)
    seq = build_tse(fov=0.5, n=16, turbo_factor=2, echo_spacing=0.02, tr=0.5, readout_grad=g)
    rows = [es.kspace_row for _, es in seq.acquisitions()]
    assert rows == [s * 2 + e for s in range(8) for e in range(2)]


def test_epi_interleaved_shots_cover_rows():
    g = readout_gradient(0.5, 256, 0.5e-3)
    seq = build_gradient_epi(fov=0.5, n=256, n_echoes=63, readout_grad=g, shots=4)
    rows = sorted(es.kspace_row for _, es in seq.acquisitions())
    assert len(rows) == 63 * 4 == 252
    assert len(set(rows)) == 252
    # interleaved: row e*shots + s is reversed iff echo e is odd
    for _, es in seq.acquisitions():
        assert es.kspace_reversed == ((es.kspace_row // 4) % 2 == 1)


def test_epi_alternates_readout_sign():
    g = readout_gradient(0.5, 32, 0.5e-3)
    seq = build_gradient_epi(fov=0.5, n=32, n_echoes=32, readout_grad=g)
    signs = [np.sign(es.gradient.gx) for _, es in seq.acquisitions()]
    assert signs == [1, -1] * 16


def test_cpmg_echo_times():
    g = readout_gradient(0.375, 32, 0.012)
    seq = build_cpmg(fov=0.375, n=32, n_echoes=12, dte=0.02, tr=1.0, readout_grad=g)
    np.testing.assert_allclose(seq.meta["echo_times"], np.arange(1, 13) * 0.02)
    volumes = {es.kspace_volume for _, es in seq.acquisitions()}
    assert volumes == set(range(12))
    # every excitation re-encodes the same row for all 12 echoes
    rows = [es.kspace_row for _, es in seq.acquisitions()]
    assert rows[:12] == [0] * 12


# ---------------------------------------------------------------------------
# description files
# ---------------------------------------------------------------------------

TWO_PULSE_FILE = """
# two-interval sequence
[elementary]
duration_s = 0.01
rf_flip_deg = 90
grad_x_mT_per_m = 1.0

[elementary]
duration_s = 0.01
rf_flip_deg = 90
grad_x_mT_per_m = 1.0
"""


def test_parse_two_pulse_file():
    seq = parse_sequence_file(TWO_PULSE_FILE)
    assert len(seq.elements) == 2
    assert seq.elements[0].pulse.alpha == pytest.approx(math.pi / 2)


def test_parse_acquisition_block():
    seq = parse_sequence_file(
        "[elementary]\nduration_s = 0.01\ngrad_x_mT_per_m = 0.5\nacquire = 64\n"
    )
    assert seq.elements[0].acquisition == AcquisitionSpec(True, 64)


def test_parse_malformed_flip_names_line():
    text = "[elementary]\nduration_s = 0.01\nrf_flip_deg = ninety\n"
    with pytest.raises(ParseError) as err:
        parse_sequence_file(text)
    assert err.value.line == 3


def test_parse_missing_unit_suffix():
    with pytest.raises(UnitError):
        parse_sequence_file("[elementary]\nduration = 0.01\n")


def test_parse_unknown_key():
    with pytest.raises(ParseError):
        parse_sequence_file("[elementary]\nduration_s = 0.01\nbananas = 3\n")


def test_parse_rf_shaped_expands(tmp_path):
    env = np.stack([np.ones(8), np.zeros(8)], axis=1)
    np.savetxt(tmp_path / "env.txt", env)
    text = "[rf_shaped]\nsamples = env.txt\nsample_dt_s = 1e-5\ngrad_z_mT_per_m = 2.0\n"
    seq = parse_sequence_file(text, base_dir=str(tmp_path))
    assert len(seq.elements) == 8
    assert all(es.duration == 1e-5 for es in seq.elements)
    assert all(es.gradient.gz == pytest.approx(2e-3) for es in seq.elements)
    alpha = seq.elements[0].pulse.alpha
    assert alpha == pytest.approx(GAMMA_PROTON * 1e-6 * 1e-5)


@pytest.mark.parametrize(
    "builder",
    [
        lambda: build_spin_echo(0.5, 8, 0.05, 0.5, readout_gradient(0.5, 8, 0.02)),
        lambda: build_tse(0.5, 8, 2, 0.04, 0.5, readout_gradient(0.5, 8, 0.01)),
        lambda: build_gradient_epi(0.5, 8, 8, readout_gradient(0.5, 8, 1e-3)),
        lambda: build_cpmg(0.5, 4, 3, 0.04, 0.5, readout_gradient(0.5, 4, 0.01)),
    ],
)
def test_builders_round_trip_through_files(builder):
    seq = builder()
    text = serialize_sequence(seq)
    reparsed = parse_sequence_file(text)
    assert serialize_sequence(reparsed) == text
    assert len(reparsed.elements) == len(seq.elements)
    for a, b in zip(seq.elements, reparsed.elements):
        assert b.duration == a.duration
        assert b.gradient == a.gradient
        assert b.pulse == a.pulse
        assert b.acquisition == a.acquisition
        assert (a.kspace_row, a.kspace_volume, a.kspace_reversed) == (
            b.kspace_row,
            b.kspace_volume,
            b.kspace_reversed,
        )


def test_split_preserves_fields():
    seq = build_spin_echo(0.5, 4, 0.05, 0.5, readout_gradient(0.5, 4, 0.02))
    split = split_elementary(seq, 0, seq.elements[0].duration / 3.0)
    assert len(split.elements) == len(seq.elements) + 1
    assert split.elements[1].pulse is None
    total = split.elements[0].duration + split.elements[1].duration
    assert total == pytest.approx(seq.elements[0].duration, rel=1e-15)
    m_orig = seq.elements[0].gradient.moments(seq.elements[0].duration, GAMMA_PROTON)
    m_split = split.elements[0].gradient.moments(
        split.elements[0].duration, GAMMA_PROTON
    ) + split.elements[1].gradient.moments(split.elements[1].duration, GAMMA_PROTON)
    np.testing.assert_allclose(m_split, m_orig, rtol=1e-12)


def test_sequence_requires_elements():
    with pytest.raises(InvalidParameter):
        Sequence([], name="empty")


def test_null_pulse_allowed():
    es = ElementarySequence(pulse=HardPulse(0.0, 0.0), duration=0.0)
    assert es.pulse.is_identity
