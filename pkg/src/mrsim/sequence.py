"""Imaging sequences as ordered lists of elementary sequences.

An elementary sequence is the universal building block: an (optional)
hard RF pulse acting at its start, a gradient waveform whose functional
form is fixed over the interval, a duration, and an optional acquisition
window.  Builders for the standard experiments (spin echo, turbo spin
echo, gradient EPI, CPMG) and a line-oriented description-file grammar
live here too.

Readout dimensioning follows the rectangular-gradient relation

    G = 2*pi*(N-1) / (gamma * FOV * dt)

so the k-step between adjacent samples (and between phase-encode rows)
is 2*pi/FOV and the N samples span +-k_max = +-pi*(N-1)/FOV inclusive.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

import numpy as np

from .bloch import GAMMA_PROTON, HardPulse
from .errors import InvalidParameter, ParseError, TimingInfeasible, UnitError

__all__ = [
    "GradientWaveform",
    "AcquisitionSpec",
    "ElementarySequence",
    "Sequence",
    "readout_gradient",
    "readout_duration",
    "build_spin_echo",
    "build_tse",
    "build_gradient_epi",
    "build_cpmg",
    "parse_sequence_file",
    "serialize_sequence",
    "split_elementary",
]


@dataclass(frozen=True)
class GradientWaveform:
    """Per-axis gradient over one elementary sequence.

    ``gx, gy, gz`` are amplitudes in T/m (flat-top amplitudes for the
    trapezoid shape).  Sampled waveforms carry an (n, 3) array in T/m
    plus the sample spacing.
    """

    shape: str = "constant"  # constant | trapezoid | sampled
    gx: float = 0.0
    gy: float = 0.0
    gz: float = 0.0
    ramp_s: float = 0.0
    flat_s: float = 0.0
    samples: Optional[tuple] = None  # row-major ((gx,gy,gz), ...) in T/m
    sample_dt: float = 0.0

    @staticmethod
    def none() -> "GradientWaveform":
        return GradientWaveform()

    @staticmethod
    def constant(gx: float = 0.0, gy: float = 0.0, gz: float = 0.0) -> "GradientWaveform":
        return GradientWaveform("constant", gx, gy, gz)

    @staticmethod
    def trapezoid(gx=0.0, gy=0.0, gz=0.0, ramp_s=0.0, flat_s=0.0) -> "GradientWaveform":
        return GradientWaveform("trapezoid", gx, gy, gz, ramp_s=ramp_s, flat_s=flat_s)

    @staticmethod
    def from_samples(samples, sample_dt: float) -> "GradientWaveform":
        arr = tuple(tuple(float(v) for v in row) for row in np.atleast_2d(samples))
        return GradientWaveform("sampled", samples=arr, sample_dt=float(sample_dt))

    @property
    def is_zero(self) -> bool:
        if self.shape == "sampled":
            return self.samples is None or not np.any(np.asarray(self.samples))
        return self.gx == 0.0 and self.gy == 0.0 and self.gz == 0.0

    def amplitudes(self) -> np.ndarray:
        return np.array([self.gx, self.gy, self.gz])

    def moments(self, duration: float, gamma: float = GAMMA_PROTON) -> np.ndarray:
        """gamma * integral(G dt) per axis over the full interval, rad/m."""
        if self.shape == "constant":
            return gamma * self.amplitudes() * duration
        if self.shape == "trapezoid":
            return gamma * self.amplitudes() * (self.ramp_s + self.flat_s)
        arr = np.asarray(self.samples, dtype=float)
        return gamma * np.trapezoid(arr, dx=self.sample_dt, axis=0)

    def partial_moments(self, ts, duration: float, gamma: float = GAMMA_PROTON) -> np.ndarray:
        """Cumulative moments gamma * integral_0^t(G) at times ts, shape (len(ts), 3)."""
        ts = np.asarray(ts, dtype=float)
        if self.shape == "constant":
            return gamma * np.outer(ts, self.amplitudes())
        if self.shape == "trapezoid":
            r, f = self.ramp_s, self.flat_s
            up = np.clip(ts, 0.0, r)
            flat = np.clip(ts - r, 0.0, f)
            down = np.clip(ts - r - f, 0.0, r)
            # unit-amplitude integral: ramp up, flat top, ramp down
            unit = up**2 / (2.0 * r) if r > 0.0 else np.zeros_like(ts)
            unit = unit + flat
            if r > 0.0:
                unit = unit + down - down**2 / (2.0 * r)
            return gamma * np.outer(unit, self.amplitudes())
        arr = np.asarray(self.samples, dtype=float)
        grid = np.arange(arr.shape[0]) * self.sample_dt
        cum = np.concatenate(
            [np.zeros((1, 3)), np.cumsum((arr[1:] + arr[:-1]) / 2.0 * self.sample_dt, axis=0)]
        )
        out = np.empty((ts.size, 3))
        for ax in range(3):
            out[:, ax] = np.interp(ts, grid, cum[:, ax])
        return gamma * out


@dataclass(frozen=True)
class AcquisitionSpec:
    """Data acquisition within one elementary sequence.

    When enabled, n_samples points are taken at i*duration/(n-1),
    i = 0..n-1, i.e. both endpoints are sampled.
    """

    enabled: bool = False
    n_samples: int = 0

    def sample_times(self, duration: float) -> np.ndarray:
        if not self.enabled:
            return np.empty(0)
        if self.n_samples == 1:
            return np.array([0.0])
        return np.arange(self.n_samples) * (duration / (self.n_samples - 1))


NO_ACQ = AcquisitionSpec()


@dataclass(frozen=True)
class ElementarySequence:
    """One atomic interval: hard pulse at the start, fixed-form gradient,
    optional acquisition.  Zero fields and zero duration are allowed."""

    pulse: Optional[HardPulse] = None
    gradient: GradientWaveform = field(default_factory=GradientWaveform.none)
    duration: float = 0.0
    acquisition: AcquisitionSpec = NO_ACQ
    # k-space placement of this acquisition, recorded by the builders so
    # reconstruction needs no sequence-specific knowledge
    kspace_row: Optional[int] = None
    kspace_volume: int = 0
    kspace_reversed: bool = False

    def __post_init__(self):
        if self.duration < 0.0:
            raise InvalidParameter(f"duration must be >= 0, got {self.duration}")
        if self.acquisition.enabled:
            if self.duration <= 0.0:
                raise InvalidParameter("acquisition requires duration > 0")
            if self.acquisition.n_samples < 1:
                raise InvalidParameter("acquisition requires n_samples >= 1")
        if self.gradient.shape == "trapezoid" and self.duration > 0.0:
            want = 2.0 * self.gradient.ramp_s + self.gradient.flat_s
            if abs(want - self.duration) > 1e-12 * max(1.0, self.duration):
                raise InvalidParameter(
                    f"trapezoid 2*ramp+flat = {want} does not match duration {self.duration}"
                )


@dataclass
class Sequence:
    """Ordered, immutable-after-construction list of elementary sequences."""

    elements: list
    name: str = "sequence"
    repetitions: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.elements:
            raise InvalidParameter("a sequence needs at least one elementary sequence")

    @property
    def duration(self) -> float:
        return sum(es.duration for es in self.elements)

    def acquisitions(self) -> Iterator[tuple]:
        """Yield (element_index, es) for every acquiring elementary sequence."""
        for i, es in enumerate(self.elements):
            if es.acquisition.enabled:
                yield i, es

    @property
    def n_acquisitions(self) -> int:
        return sum(1 for _ in self.acquisitions())

    def trajectory_table(self) -> list:
        """(volume, row, reversed) per acquisition, in acquisition order."""
        return [
            (es.kspace_volume, es.kspace_row, es.kspace_reversed) for _, es in self.acquisitions()
        ]


# ---------------------------------------------------------------------------
# readout dimensioning
# ---------------------------------------------------------------------------


def readout_gradient(fov: float, n: int, dt: float, gamma: float = GAMMA_PROTON) -> float:
    """Rectangular readout gradient (T/m) for n samples over duration dt."""
    if fov <= 0.0 or dt <= 0.0 or gamma <= 0.0:
        raise InvalidParameter("fov, dt and gamma must be positive")
    if n < 2:
        raise InvalidParameter(f"need at least 2 samples, got {n}")
    return 2.0 * math.pi * (n - 1) / (gamma * fov * dt)


def readout_duration(fov: float, n: int, grad: float, gamma: float = GAMMA_PROTON) -> float:
    """Acquisition duration (s) matching a given readout gradient."""
    if fov <= 0.0 or grad <= 0.0 or gamma <= 0.0:
        raise InvalidParameter("fov, grad and gamma must be positive")
    if n < 2:
        raise InvalidParameter(f"need at least 2 samples, got {n}")
    return 2.0 * math.pi * (n - 1) / (gamma * fov * grad)


def _k_step(fov: float) -> float:
    return 2.0 * math.pi / fov


def _phase_encode(row: int, n_rows: int, fov: float) -> float:
    """ky of one row (rad/m); row 0 is the most negative."""
    return (row - (n_rows - 1) / 2.0) * _k_step(fov)


def _grad_for_moments(mx: float, my: float, duration: float, gamma: float) -> GradientWaveform:
    """Constant gradient realizing the requested x/y moments over duration."""
    if mx == 0.0 and my == 0.0:
        return GradientWaveform.none()
    return GradientWaveform.constant(
        gx=mx / (gamma * duration), gy=my / (gamma * duration)
    )


def _check_interval(value: float, what: str) -> float:
    if value < 0.0:
        raise TimingInfeasible(f"{what} comes out negative ({value:.6g} s)")
    return value


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def build_spin_echo(
    fov: float,
    n: int,
    te: float,
    tr: float,
    readout_grad: float,
    gamma: float = GAMMA_PROTON,
) -> Sequence:
    """Two-pulse spin echo, one excitation per phase-encode row.

    Per row: 90deg pulse with a dephasing x lobe (half the readout
    moment) plus the row's y moment, a 180deg pulse at te/2, the readout
    with n samples whose k=0 crossing sits at te, and a relaxation
    filler up to tr.  Rows run from the most negative ky upward.
    """
    tau = readout_duration(fov, n, readout_grad, gamma)
    k_max = gamma * readout_grad * tau / 2.0
    half1 = _check_interval(te / 2.0, "time before the refocusing pulse")
    half2 = _check_interval(te / 2.0 - tau / 2.0, "interval between 180deg pulse and readout")
    filler = _check_interval(tr - te - tau / 2.0, "relaxation filler")
    elements = []
    for row in range(n):
        # encode before the refocusing pulse, which negates transverse k:
        # apply -ky so the readout samples the row at +ky
        ky = _phase_encode(row, n, fov)
        elements.append(
            ElementarySequence(
                pulse=HardPulse(math.pi / 2.0, 0.0),
                gradient=_grad_for_moments(k_max, -ky, half1, gamma),
                duration=half1,
            )
        )
        elements.append(ElementarySequence(pulse=HardPulse(math.pi, 0.0), duration=half2))
        elements.append(
            ElementarySequence(
                gradient=GradientWaveform.constant(gx=readout_grad),
                duration=tau,
                acquisition=AcquisitionSpec(True, n),
                kspace_row=row,
            )
        )
        elements.append(ElementarySequence(duration=filler))
    return Sequence(
        elements,
        name="spin_echo",
        meta={"kind": "se", "fov": fov, "n": n, "te": te, "tr": tr, "readout_grad": readout_grad},
    )


def _echo_train(
    fov: float,
    n: int,
    n_echoes: int,
    dte: float,
    tr: float,
    readout_grad: float,
    gamma: float,
    row_of_echo,
    volume_of_echo,
    shot_rows: int,
    blip_s: float,
):
    """Common 90-(180-encode-read-rewind)* skeleton for TSE and CPMG."""
    tau = readout_duration(fov, n, readout_grad, gamma)
    k_max = gamma * readout_grad * tau / 2.0
    half1 = _check_interval(dte / 2.0, "time before the first refocusing pulse")
    gap = _check_interval(
        dte / 2.0 - tau / 2.0 - blip_s, "interval between refocusing pulse and readout"
    )
    n_shots = n // shot_rows
    train = n_echoes * dte + tau / 2.0 + blip_s
    filler = _check_interval(tr - train, "relaxation filler")
    elements = []
    for shot in range(n_shots):
        elements.append(
            ElementarySequence(
                pulse=HardPulse(math.pi / 2.0, 0.0),
                gradient=_grad_for_moments(k_max, 0.0, half1, gamma),
                duration=half1,
            )
        )
        for echo in range(n_echoes):
            row = row_of_echo(shot, echo)
            ky = _phase_encode(row, n, fov)
            elements.append(ElementarySequence(pulse=HardPulse(math.pi, math.pi / 2.0), duration=gap))
            elements.append(
                ElementarySequence(gradient=_grad_for_moments(0.0, ky, blip_s, gamma), duration=blip_s)
            )
            elements.append(
                ElementarySequence(
                    gradient=GradientWaveform.constant(gx=readout_grad),
                    duration=tau,
                    acquisition=AcquisitionSpec(True, n),
                    kspace_row=row,
                    kspace_volume=volume_of_echo(shot, echo),
                )
            )
            elements.append(
                ElementarySequence(gradient=_grad_for_moments(0.0, -ky, blip_s, gamma), duration=blip_s)
            )
            if echo < n_echoes - 1:
                elements.append(
                    ElementarySequence(duration=_check_interval(gap, "inter-echo filler"))
                )
        elements.append(ElementarySequence(duration=filler))
    return elements, tau


def build_tse(
    fov: float,
    n: int,
    turbo_factor: int,
    echo_spacing: float,
    tr: float,
    readout_grad: float,
    gamma: float = GAMMA_PROTON,
    blip_s: float = 1e-3,
) -> Sequence:
    """Turbo spin echo: turbo_factor echoes per excitation.

    Echo e of shot s lands in k-space row s*turbo_factor + e (sequential
    sorting in order of creation), so later echoes of a shot are weaker
    by exp(-e*echo_spacing/T2) and the rows carry the corresponding
    periodic amplitude modulation.
    """
    if n % turbo_factor != 0:
        raise InvalidParameter(f"matrix size {n} not divisible by turbo factor {turbo_factor}")
    elements, tau = _echo_train(
        fov,
        n,
        turbo_factor,
        echo_spacing,
        tr,
        readout_grad,
        gamma,
        row_of_echo=lambda s, e: s * turbo_factor + e,
        volume_of_echo=lambda s, e: 0,
        shot_rows=turbo_factor,
        blip_s=blip_s,
    )
    return Sequence(
        elements,
        name="tse",
        meta={
            "kind": "tse",
            "fov": fov,
            "n": n,
            "tf": turbo_factor,
            "echo_spacing": echo_spacing,
            "tr": tr,
            "readout_grad": readout_grad,
            "readout_duration": tau,
        },
    )


def build_cpmg(
    fov: float,
    n: int,
    n_echoes: int,
    dte: float,
    tr: float,
    readout_grad: float,
    gamma: float = GAMMA_PROTON,
    blip_s: float = 1e-3,
) -> Sequence:
    """CPMG multi-echo train: every echo re-acquires the same row.

    Echo e of every excitation goes to volume e, so the run yields one
    k-space matrix per echo time (e+1)*dte; fitting the per-pixel decay
    over those volumes recovers T2 and the relative spin density.
    """
    elements, tau = _echo_train(
        fov,
        n,
        n_echoes,
        dte,
        tr,
        readout_grad,
        gamma,
        row_of_echo=lambda s, e: s,
        volume_of_echo=lambda s, e: e,
        shot_rows=1,
        blip_s=blip_s,
    )
    return Sequence(
        elements,
        name="cpmg",
        meta={
            "kind": "cpmg",
            "fov": fov,
            "n": n,
            "n_echoes": n_echoes,
            "dte": dte,
            "tr": tr,
            "readout_grad": readout_grad,
            "echo_times": [(e + 1) * dte for e in range(n_echoes)],
            "readout_duration": tau,
        },
    )


def build_gradient_epi(
    fov: float,
    n: int,
    n_echoes: int,
    readout_grad: float,
    shots: int = 1,
    gamma: float = GAMMA_PROTON,
    blip_s: float = 1e-4,
    prephase_s: Optional[float] = None,
) -> Sequence:
    """Gradient echo planar imaging with a meandering readout.

    A single excitation produces n_echoes lines; the readout gradient
    alternates sign so every other line is acquired in reversed sample
    order.  With shots > 1 the shots interleave: shot s, echo e covers
    row e*shots + s.  Rows beyond shots*n_echoes stay empty.
    """
    tau = readout_duration(fov, n, readout_grad, gamma)
    k_max = gamma * readout_grad * tau / 2.0
    if prephase_s is None:
        prephase_s = tau / 2.0
    if shots * n_echoes > n:
        raise InvalidParameter(f"{shots} shots x {n_echoes} echoes exceed {n} rows")
    dky = _k_step(fov)
    elements = []
    for shot in range(shots):
        ky0 = _phase_encode(shot, n, fov)
        elements.append(
            ElementarySequence(
                pulse=HardPulse(math.pi / 2.0, 0.0),
                gradient=_grad_for_moments(-k_max, ky0, prephase_s, gamma),
                duration=prephase_s,
            )
        )
        for echo in range(n_echoes):
            row = echo * shots + shot
            sign = 1.0 if echo % 2 == 0 else -1.0
            elements.append(
                ElementarySequence(
                    gradient=GradientWaveform.constant(gx=sign * readout_grad),
                    duration=tau,
                    acquisition=AcquisitionSpec(True, n),
                    kspace_row=row,
                    kspace_reversed=echo % 2 == 1,
                )
            )
            if echo < n_echoes - 1:
                elements.append(
                    ElementarySequence(
                        gradient=_grad_for_moments(0.0, shots * dky, blip_s, gamma),
                        duration=blip_s,
                    )
                )
    # time at which the ky = 0 level is crossed at kx = 0 (center of the train)
    te_eff = prephase_s + ((n - 1) / (2.0 * shots)) * (tau + blip_s) + tau / 2.0
    return Sequence(
        elements,
        name="gradient_epi",
        meta={
            "kind": "epi",
            "fov": fov,
            "n": n,
            "n_echoes": n_echoes,
            "shots": shots,
            "readout_grad": readout_grad,
            "readout_duration": tau,
            "te_eff": te_eff,
        },
    )


def split_elementary(seq: Sequence, index: int, t_split: float) -> Sequence:
    """Cut one constant-gradient, non-acquiring elementary sequence in two.

    The fields are unchanged and the second half starts with a null
    pulse, so spin trajectories must not change (decomposition
    soundness).
    """
    es = seq.elements[index]
    if es.acquisition.enabled or es.gradient.shape != "constant":
        raise InvalidParameter("can only split constant-gradient intervals without acquisition")
    if not (0.0 <= t_split <= es.duration):
        raise InvalidParameter(f"split time {t_split} outside [0, {es.duration}]")
    first = replace(es, duration=t_split)
    second = replace(es, pulse=None, duration=es.duration - t_split)
    elements = list(seq.elements[:index]) + [first, second] + list(seq.elements[index + 1 :])
    return Sequence(elements, name=seq.name, repetitions=seq.repetitions, meta=dict(seq.meta))


# ---------------------------------------------------------------------------
# description files
# ---------------------------------------------------------------------------

_ES_KEYS = {
    "duration_s",
    "rf_flip_deg",
    "rf_phase_deg",
    "grad_x_mT_per_m",
    "grad_y_mT_per_m",
    "grad_z_mT_per_m",
    "grad_shape",
    "ramp_s",
    "flat_s",
    "acquire",
    "kspace_row",
    "kspace_volume",
    "kspace_reversed",
}
_SHAPED_KEYS = {
    "samples",
    "sample_dt_s",
    "grad_x_mT_per_m",
    "grad_y_mT_per_m",
    "grad_z_mT_per_m",
}
_SEQ_KEYS = {"name", "repetitions"}
# bare stems that are missing their unit suffix
_UNITLESS = {
    "duration": "duration_s",
    "rf_flip": "rf_flip_deg",
    "rf_phase": "rf_phase_deg",
    "grad_x": "grad_x_mT_per_m",
    "grad_y": "grad_y_mT_per_m",
    "grad_z": "grad_z_mT_per_m",
    "ramp": "ramp_s",
    "flat": "flat_s",
    "sample_dt": "sample_dt_s",
}


def _parse_float(value: str, key: str, line: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise ParseError(f"malformed value for {key}: {value!r}", line) from None


def _block_to_es(block: dict, lines: dict, blockline: int) -> ElementarySequence:
    duration = _parse_float(block.get("duration_s", "0"), "duration_s", lines.get("duration_s", blockline))
    flip = _parse_float(block.get("rf_flip_deg", "0"), "rf_flip_deg", lines.get("rf_flip_deg", blockline))
    phase = _parse_float(block.get("rf_phase_deg", "0"), "rf_phase_deg", lines.get("rf_phase_deg", blockline))
    pulse = HardPulse(math.radians(flip), math.radians(phase)) if flip != 0.0 else None
    amps = [
        1e-3 * _parse_float(block.get(k, "0"), k, lines.get(k, blockline))
        for k in ("grad_x_mT_per_m", "grad_y_mT_per_m", "grad_z_mT_per_m")
    ]
    shape = block.get("grad_shape", "constant")
    if shape == "constant":
        grad = GradientWaveform.constant(*amps)
    elif shape == "trapezoid":
        grad = GradientWaveform.trapezoid(
            *amps,
            ramp_s=_parse_float(block.get("ramp_s", "0"), "ramp_s", blockline),
            flat_s=_parse_float(block.get("flat_s", "0"), "flat_s", blockline),
        )
    else:
        raise ParseError(f"unknown grad_shape {shape!r}", lines.get("grad_shape", blockline))
    acq = NO_ACQ
    if "acquire" in block:
        try:
            n = int(block["acquire"])
        except ValueError:
            raise ParseError(f"malformed acquire count {block['acquire']!r}", lines["acquire"]) from None
        acq = AcquisitionSpec(True, n)
    row = None
    if "kspace_row" in block:
        row = int(block["kspace_row"])
    try:
        return ElementarySequence(
            pulse=pulse,
            gradient=grad,
            duration=duration,
            acquisition=acq,
            kspace_row=row,
            kspace_volume=int(block.get("kspace_volume", "0")),
            kspace_reversed=block.get("kspace_reversed", "false").lower() == "true",
        )
    except InvalidParameter as exc:
        raise ParseError(str(exc), blockline) from None


def _expand_shaped(block: dict, lines: dict, blockline: int, base_dir: str, gamma: float) -> list:
    if "samples" not in block or "sample_dt_s" not in block:
        raise ParseError("[rf_shaped] needs samples=<file> and sample_dt_s", blockline)
    path = block["samples"]
    if not os.path.isabs(path):
        path = os.path.join(base_dir, path)
    try:
        data = np.loadtxt(path, ndmin=2)
    except OSError as exc:
        raise ParseError(f"cannot read envelope file {path}: {exc}", lines["samples"]) from None
    if data.shape[1] != 2:
        raise ParseError(f"envelope file {path} must have two columns", lines["samples"])
    b1 = (data[:, 0] + 1j * data[:, 1]) * 1e-6  # uT -> T
    dt = _parse_float(block["sample_dt_s"], "sample_dt_s", lines["sample_dt_s"])
    amps = [
        1e-3 * _parse_float(block.get(k, "0"), k, lines.get(k, blockline))
        for k in ("grad_x_mT_per_m", "grad_y_mT_per_m", "grad_z_mT_per_m")
    ]
    grad = GradientWaveform.constant(*amps)
    out = []
    for sample in b1:
        amp = abs(sample)
        pulse = HardPulse(gamma * amp * dt, math.atan2(sample.imag, sample.real)) if amp else None
        out.append(ElementarySequence(pulse=pulse, gradient=grad, duration=dt))
    return out


def parse_sequence_file(text: str, base_dir: str = ".", gamma: float = GAMMA_PROTON) -> Sequence:
    """Parse the sequence description grammar into a Sequence.

    Blocks: ``[sequence]`` (name, repetitions), ``[elementary]`` and
    ``[rf_shaped]`` (expanded into one elementary sequence per envelope
    sample).  ``#`` starts a comment; keys carry their units in their
    names.
    """
    elements: list = []
    name = "sequence"
    reps = 1
    block: Optional[dict] = None
    block_kind = ""
    block_line = 0
    key_lines: dict = {}

    def flush():
        nonlocal block
        if block is None:
            return
        if block_kind == "elementary":
            elements.append(_block_to_es(block, key_lines, block_line))
        elif block_kind == "rf_shaped":
            elements.extend(_expand_shaped(block, key_lines, block_line, base_dir, gamma))
        block = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(f"malformed block header {line!r}", lineno)
            flush()
            kind = line[1:-1].strip()
            if kind not in ("sequence", "elementary", "rf_shaped"):
                raise ParseError(f"unknown block [{kind}]", lineno)
            block, block_kind, block_line, key_lines = {}, kind, lineno, {}
            continue
        if "=" not in line:
            raise ParseError(f"expected key = value, got {line!r}", lineno)
        if block is None:
            raise ParseError("key outside of any block", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key in _UNITLESS:
            raise UnitError(f"key {key!r} is missing its unit suffix (use {_UNITLESS[key]!r})", lineno)
        allowed = {"sequence": _SEQ_KEYS, "elementary": _ES_KEYS, "rf_shaped": _SHAPED_KEYS}[block_kind]
        if key not in allowed:
            raise ParseError(f"unknown key {key!r} in [{block_kind}]", lineno)
        if block_kind == "sequence":
            if key == "name":
                name = value
            else:
                reps = int(value)
            block = {}
            continue
        block[key] = value
        key_lines[key] = lineno
    flush()
    if not elements:
        raise ParseError("no elementary sequences in file", 1)
    return Sequence(elements, name=name, repetitions=reps)


def _fmt(value: float) -> str:
    return repr(float(value))


def _fmt_converted(value: float, to_file, from_file) -> str:
    """Shortest file representation whose parse recovers ``value`` exactly.

    Unit conversion (T/m to mT/m, radians to degrees) is not an exact
    float round trip, so probe the neighboring representable values.
    """
    base = float(to_file(value))
    cand = base
    for _ in range(3):
        if from_file(float(repr(cand))) == value:
            return repr(cand)
        cand = math.nextafter(cand, math.inf)
    cand = base
    for _ in range(3):
        cand = math.nextafter(cand, -math.inf)
        if from_file(float(repr(cand))) == value:
            return repr(cand)
    return repr(base)


def _fmt_mt_per_m(amp: float) -> str:
    return _fmt_converted(amp, lambda v: v * 1e3, lambda v: v * 1e-3)


def _fmt_deg(angle: float) -> str:
    return _fmt_converted(angle, math.degrees, math.radians)


def serialize_sequence(seq: Sequence) -> str:
    """Render a Sequence in the description grammar (round-trip exact)."""
    out = ["[sequence]", f"name = {seq.name}", f"repetitions = {seq.repetitions}", ""]
    for es in seq.elements:
        out.append("[elementary]")
        out.append(f"duration_s = {_fmt(es.duration)}")
        if es.pulse is not None and es.pulse.alpha != 0.0:
            out.append(f"rf_flip_deg = {_fmt_deg(es.pulse.alpha)}")
            out.append(f"rf_phase_deg = {_fmt_deg(es.pulse.phi)}")
        g = es.gradient
        if g.shape == "sampled":
            raise InvalidParameter("sampled gradient waveforms have no file representation")
        if g.shape == "trapezoid":
            out.append("grad_shape = trapezoid")
            out.append(f"ramp_s = {_fmt(g.ramp_s)}")
            out.append(f"flat_s = {_fmt(g.flat_s)}")
        for axis, amp in zip("xyz", (g.gx, g.gy, g.gz)):
            if amp != 0.0:
                out.append(f"grad_{axis}_mT_per_m = {_fmt_mt_per_m(amp)}")
        if es.acquisition.enabled:
            out.append(f"acquire = {es.acquisition.n_samples}")
            if es.kspace_row is not None:
                out.append(f"kspace_row = {es.kspace_row}")
                out.append(f"kspace_volume = {es.kspace_volume}")
                out.append(f"kspace_reversed = {'true' if es.kspace_reversed else 'false'}")
        out.append("")
    return "\n".join(out)
