"""Imaging-system model: static field, inhomogeneity maps, receive coil.

Off-resonance sign convention (shared with :mod:`mrsim.bloch`): positive
delta-omega means faster clockwise precession in the rotating frame.
Susceptibility field maps are input data (sampled grids produced by
other tools), never computed here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.polynomial import legendre as npleg

from .bloch import GAMMA_PROTON, FrameContext
from .errors import InvalidParameter, OutOfGrid, ParseError

MU_0 = 4.0e-7 * math.pi

_P12_COEFFS = np.zeros(13)
_P12_COEFFS[12] = 1.0


def legendre_p12(x) -> np.ndarray:
    """Legendre polynomial of order 12."""
    return npleg.legval(np.asarray(x, dtype=float), _P12_COEFFS)


@dataclass(frozen=True)
class ScalarGrid:
    """Regular scalar grid with trilinear interpolation, values x-fastest."""

    shape: tuple  # (nx, ny, nz)
    origin: tuple  # (x0, y0, z0)
    step: tuple  # (dx, dy, dz)
    values: np.ndarray  # shape (nz, ny, nx)

    def _fractional_index(self, x: tuple) -> tuple:
        idx = []
        for axis in range(3):
            n = self.shape[axis]
            if n == 1:
                f = 0.0
            else:
                f = (x[axis] - self.origin[axis]) / self.step[axis]
            if f < -1e-9 or f > n - 1 + 1e-9:
                raise OutOfGrid(
                    f"position {x} outside grid coverage on axis {'xyz'[axis]}"
                )
            idx.append(min(max(f, 0.0), n - 1))
        return tuple(idx)

    def __call__(self, x: tuple) -> float:
        fx, fy, fz = self._fractional_index(x)
        out = 0.0
        for dz in (0, 1):
            for dy in (0, 1):
                for dx in (0, 1):
                    ix = min(int(fx) + dx, self.shape[0] - 1)
                    iy = min(int(fy) + dy, self.shape[1] - 1)
                    iz = min(int(fz) + dz, self.shape[2] - 1)
                    wx = (fx - int(fx)) if dx else (1.0 - (fx - int(fx)))
                    wy = (fy - int(fy)) if dy else (1.0 - (fy - int(fy)))
                    wz = (fz - int(fz)) if dz else (1.0 - (fz - int(fz)))
                    out += wx * wy * wz * float(self.values[iz, iy, ix])
        return out


@dataclass(frozen=True)
class VectorGrid:
    """Regular 3-vector grid; components interpolated independently."""

    components: tuple  # three ScalarGrid

    def __call__(self, x: tuple) -> np.ndarray:
        return np.array([g(x) for g in self.components])


@dataclass(frozen=True)
class Legendre12Inhomogeneity:
    """Spherical-harmonic style deviation of the static field magnitude.

    delta_B0(x) = -C * (r/R)^12 * P12(cos(theta)) with r = |x| and theta
    the declination from the z axis; C >= 0 in tesla, R > 0 in meters.
    """

    c: float
    r: float

    def __post_init__(self):
        if self.c < 0.0 or self.r <= 0.0:
            raise InvalidParameter(f"need C >= 0 and R > 0, got C={self.c}, R={self.r}")

    def __call__(self, x: tuple) -> float:
        rad = math.sqrt(x[0] ** 2 + x[1] ** 2 + x[2] ** 2)
        if rad == 0.0:
            return 0.0
        cos_theta = x[2] / rad
        return -self.c * (rad / self.r) ** 12 * float(legendre_p12(cos_theta))


@dataclass(frozen=True)
class StaticField:
    """Nominal flux density plus an optional inhomogeneity model."""

    b0: float
    inhomogeneity: Optional[object] = None  # None | Legendre12Inhomogeneity | ScalarGrid

    def delta_b0(self, x: tuple) -> float:
        if self.inhomogeneity is None:
            return 0.0
        return self.inhomogeneity(x)


def delta_b0(field: StaticField, x: tuple) -> float:
    """Static-field deviation (tesla) at position x."""
    return field.delta_b0(x)


def spin_off_resonance(
    field: StaticField, x: tuple, object_delta_omega: float, ctx: FrameContext
) -> float:
    """Rotating-frame precession rate (rad/s) of a spin at x.

    Sum of the carrier detuning gamma*B0 - omega_hf, the static-field
    deviation gamma*delta_B0(x), and the object's own chemical-shift /
    susceptibility offset.
    """
    return (ctx.gamma * field.b0 - ctx.omega_hf) + ctx.gamma * field.delta_b0(x) + object_delta_omega


# ---------------------------------------------------------------------------
# receive sensitivity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UniformSensitivity:
    """Homogeneous, purely transverse sensitivity (S, 0, 0)."""

    s: float = 1.0

    def __call__(self, x: tuple) -> np.ndarray:
        return np.array([self.s, 0.0, 0.0])


@dataclass(frozen=True)
class CircularLoop:
    """Sensitivity of a circular receive loop via the field it would
    produce per unit current (reciprocity).

    The line integral over the loop is evaluated with the midpoint rule,
    which converges spectrally for points away from the wire.
    """

    center: tuple
    normal: tuple
    diameter: float
    segments: int = 256

    def __post_init__(self):
        if self.diameter <= 0.0:
            raise InvalidParameter(f"diameter must be positive, got {self.diameter}")
        n = np.asarray(self.normal, dtype=float)
        if not np.linalg.norm(n) > 0.0:
            raise InvalidParameter("normal must be a nonzero vector")

    def __call__(self, x: tuple) -> np.ndarray:
        a = self.diameter / 2.0
        n = np.asarray(self.normal, dtype=float)
        n = n / np.linalg.norm(n)
        helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = np.cross(n, helper)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(n, e1)
        theta = (np.arange(self.segments) + 0.5) * (2.0 * math.pi / self.segments)
        points = (
            np.asarray(self.center)
            + a * np.outer(np.cos(theta), e1)
            + a * np.outer(np.sin(theta), e2)
        )
        dl = (
            a
            * (2.0 * math.pi / self.segments)
            * (-np.outer(np.sin(theta), e1) + np.outer(np.cos(theta), e2))
        )
        rvec = np.asarray(x, dtype=float) - points
        dist = np.linalg.norm(rvec, axis=1)
        if np.any(dist < 1e-12):
            raise InvalidParameter("sensitivity evaluated on the loop wire")
        contrib = np.cross(dl, rvec) / dist[:, None] ** 3
        return MU_0 / (4.0 * math.pi) * contrib.sum(axis=0)


def coil_weight(sensitivity, x: tuple) -> np.ndarray:
    """Sensitivity 3-vector at position x."""
    return sensitivity(x)


def complex_weight(sensitivity, x: tuple) -> complex:
    """Per-spin complex receive weight.

    A sample contribution is weight * (mx + 1j*my); with the scalar
    product convention Re(weight * mxy) = Sx*mx + Sy*my, so regions
    where the coil field is purely longitudinal receive nothing.
    """
    s = np.asarray(sensitivity(x), dtype=float)
    return complex(s[0], -s[1])


@dataclass(frozen=True)
class SystemModel:
    """Static field plus receive coil, with the rotating-frame context."""

    field: StaticField
    receive: object
    gamma: float = GAMMA_PROTON
    omega_hf: Optional[float] = None

    def frame(self) -> FrameContext:
        omega = self.omega_hf if self.omega_hf is not None else self.gamma * self.field.b0
        return FrameContext(omega_hf=omega, gamma=self.gamma)


def default_system(b0: float = 1.5) -> SystemModel:
    return SystemModel(field=StaticField(b0=b0), receive=UniformSensitivity())


# ---------------------------------------------------------------------------
# grid files and the system description grammar
# ---------------------------------------------------------------------------


def _read_grid_numbers(path: str, per_node: int):
    with open(path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split()
    if len(tokens) < 9:
        raise ParseError(f"grid file {path} lacks the 9-number header")
    nx, ny, nz = (int(float(t)) for t in tokens[:3])
    origin = tuple(float(t) for t in tokens[3:6])
    step = tuple(float(t) for t in tokens[6:9])
    data = np.array([float(t) for t in tokens[9:]])
    want = nx * ny * nz * per_node
    if data.size != want:
        raise ParseError(f"grid file {path}: expected {want} values, found {data.size}")
    return (nx, ny, nz), origin, step, data


def load_scalar_grid(path: str) -> ScalarGrid:
    """Grid file: header ``nx ny nz x0 y0 z0 dx dy dz``, then nx*ny*nz
    values in tesla, x-fastest."""
    shape, origin, step, data = _read_grid_numbers(path, 1)
    values = data.reshape(shape[2], shape[1], shape[0])
    return ScalarGrid(shape=shape, origin=origin, step=step, values=values)


def load_vector_grid(path: str) -> VectorGrid:
    """Same header as the scalar grid, three values per node (x-fastest)."""
    shape, origin, step, data = _read_grid_numbers(path, 3)
    comps = []
    data = data.reshape(-1, 3)
    for c in range(3):
        values = data[:, c].reshape(shape[2], shape[1], shape[0])
        comps.append(ScalarGrid(shape=shape, origin=origin, step=step, values=values))
    return VectorGrid(components=tuple(comps))


def _parse_kv_tail(parts, line):
    out = {}
    for part in parts:
        if "=" not in part:
            raise ParseError(f"expected key=value, got {part!r}", line)
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def parse_system_file(text: str, base_dir: str = ".") -> SystemModel:
    """Parse the system description grammar into a SystemModel."""
    import os

    b0 = None
    inhom = None
    receive = UniformSensitivity()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line == "[static_field]":
                section = "static_field"
            elif line == "[receive]":
                section = "receive"
            else:
                raise ParseError(f"unknown block {line!r}", lineno)
            continue
        if "=" not in line or section is None:
            raise ParseError(f"expected key = value inside a block, got {line!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if section == "static_field":
            if key == "b0_T":
                b0 = float(value)
            elif key == "inhomogeneity":
                parts = value.split()
                model = parts[0]
                kv = _parse_kv_tail(parts[1:], lineno)
                if model == "none":
                    inhom = None
                elif model == "legendre12":
                    try:
                        inhom = Legendre12Inhomogeneity(
                            c=float(kv["C_uT"]) * 1e-6, r=float(kv["R_m"])
                        )
                    except KeyError as exc:
                        raise ParseError(f"legendre12 needs {exc} ", lineno) from None
                elif model == "grid":
                    if "file" not in kv:
                        raise ParseError("grid inhomogeneity needs file=<path>", lineno)
                    path = kv["file"]
                    if not os.path.isabs(path):
                        path = os.path.join(base_dir, path)
                    inhom = load_scalar_grid(path)
                else:
                    raise ParseError(f"unknown inhomogeneity model {model!r}", lineno)
            else:
                raise ParseError(f"unknown key {key!r} in [static_field]", lineno)
        else:
            if key != "model":
                raise ParseError(f"unknown key {key!r} in [receive]", lineno)
            parts = value.split()
            model = parts[0]
            kv = _parse_kv_tail(parts[1:], lineno)
            if model == "uniform":
                receive = UniformSensitivity(s=float(kv.get("S", "1")))
            elif model == "loop":
                try:
                    receive = CircularLoop(
                        center=tuple(float(v) for v in kv["center_m"].split(",")),
                        normal=tuple(float(v) for v in kv["normal"].split(",")),
                        diameter=float(kv["diameter_m"]),
                    )
                except KeyError as exc:
                    raise ParseError(f"loop model needs {exc}", lineno) from None
            elif model == "grid":
                if "file" not in kv:
                    raise ParseError("grid receive model needs file=<path>", lineno)
                path = kv["file"]
                if not os.path.isabs(path):
                    path = os.path.join(base_dir, path)
                receive = load_vector_grid(path)
            else:
                raise ParseError(f"unknown receive model {model!r}", lineno)
    if b0 is None:
        raise ParseError("system file is missing b0_T", 1)
    return SystemModel(field=StaticField(b0=b0, inhomogeneity=inhom), receive=receive)
