"""IPMSM and DC-motor vector fields, torque, and power quantities.

Everything is SI. Speeds are electrical rad/s unless a name says otherwise;
mechanical speed is omega_e / P. The dq plant state is (i_d, i_q, omega_e):

    di_d/dt    = (-R i_d + L_q omega_e i_q + v_d) / L_d
    di_q/dt    = (-L_d omega_e i_d - R i_q + v_q - Phi omega_e) / L_q
    domega/dt  = (-D omega_e + P^2 (Phi + (L_d - L_q) i_d) i_q - P T_L) / J

L_d == L_q degenerates to an SPMSM (no reluctance torque).
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np

from .configfile import ConfigError, parse_float, parse_int, read_kv

TWO_PI = 2.0 * math.pi


class PlantState(NamedTuple):
    i_d: float   # A
    i_q: float   # A
    omega_e: float  # electrical rad/s


class VoltageInput(NamedTuple):
    v_d: float  # V
    v_q: float  # V


# Config keys for MotorParams, in file order (flat key=value format).
_PARAM_KEYS = ("R", "Ld", "Lq", "Phi", "P", "J", "D", "Vmax", "Imax", "Pmax",
               "fmin", "fmax", "TLmin", "TLmax")


@dataclass(frozen=True)
class MotorParams:
    """Physical constants plus ratings and operating-range limits.

    f_min/f_max are mechanical rpm; T_Lmin/T_Lmax bound the load torque;
    P_max caps mechanical power omega_m * T_L over the operating region.
    """

    R: float        # winding resistance, ohm
    L_d: float      # d-axis inductance, H
    L_q: float      # q-axis inductance, H
    Phi: float      # permanent magnet flux, Wb
    P: int          # pole pairs
    J: float        # inertia, kg m^2
    D: float        # viscous friction, N m s/rad
    V_max: float    # voltage rating, V
    I_max: float    # current rating, A
    P_max: float    # power rating, W
    f_min: float    # min mechanical speed, rpm
    f_max: float    # max mechanical speed, rpm
    T_Lmin: float   # min load torque, N m
    T_Lmax: float   # max load torque, N m

    def __post_init__(self) -> None:
        positive = {"R": self.R, "L_d": self.L_d, "L_q": self.L_q, "Phi": self.Phi,
                    "J": self.J, "V_max": self.V_max, "I_max": self.I_max,
                    "P_max": self.P_max}
        for name, value in positive.items():
            if not (value > 0.0 and math.isfinite(value)):
                raise ValueError(f"MotorParams.{name} must be positive and finite, got {value}")
        if self.P < 1 or self.P != int(self.P):
            raise ValueError(f"MotorParams.P must be a positive integer, got {self.P}")
        if not (self.D >= 0.0 and math.isfinite(self.D)):
            raise ValueError(f"MotorParams.D must be >= 0, got {self.D}")
        if not self.f_min < self.f_max:
            raise ValueError("MotorParams requires f_min < f_max")
        if not self.T_Lmin < self.T_Lmax:
            raise ValueError("MotorParams requires T_Lmin < T_Lmax")

    @property
    def omega_e_rated(self) -> float:
        """Electrical speed at f_max, rad/s."""
        return rpm_to_omega_e(self.f_max, self.P)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str], source: str = "config") -> "MotorParams":
        values = {key: parse_float(mapping, key, source) for key in _PARAM_KEYS if key != "P"}
        pole_pairs = parse_int(mapping, "P", source)
        unknown = set(mapping) - set(_PARAM_KEYS)
        if unknown:
            raise ConfigError(f"{source}: unknown keys {sorted(unknown)}")
        try:
            return cls(R=values["R"], L_d=values["Ld"], L_q=values["Lq"], Phi=values["Phi"],
                       P=pole_pairs, J=values["J"], D=values["D"], V_max=values["Vmax"],
                       I_max=values["Imax"], P_max=values["Pmax"], f_min=values["fmin"],
                       f_max=values["fmax"], T_Lmin=values["TLmin"], T_Lmax=values["TLmax"])
        except ValueError as exc:
            raise ConfigError(f"{source}: {exc}") from exc

    @classmethod
    def from_config(cls, path: str | os.PathLike) -> "MotorParams":
        return cls.from_mapping(read_kv(path), source=os.fspath(path))

    def to_mapping(self) -> dict[str, float]:
        return {"R": self.R, "Ld": self.L_d, "Lq": self.L_q, "Phi": self.Phi,
                "P": self.P, "J": self.J, "D": self.D, "Vmax": self.V_max,
                "Imax": self.I_max, "Pmax": self.P_max, "fmin": self.f_min,
                "fmax": self.f_max, "TLmin": self.T_Lmin, "TLmax": self.T_Lmax}


def rpm_to_omega_e(rpm: float, pole_pairs: int) -> float:
    """Mechanical rpm -> electrical rad/s."""
    return rpm * pole_pairs * TWO_PI / 60.0


def omega_e_to_rpm(omega_e: float, pole_pairs: int) -> float:
    return omega_e * 60.0 / (pole_pairs * TWO_PI)


def _check_finite(*values: float) -> None:
    for value in values:
        if not math.isfinite(value):
            raise ValueError(f"non-finite input to plant evaluation: {value!r}")


def pmsm_derivative(params: MotorParams, state: PlantState, v: VoltageInput,
                    t_load: float) -> tuple[float, float, float]:
    """Right-hand side of the dq IPMSM ODE, (A/s, A/s, rad/s^2).

    No clamping happens here; limits live in the controllers.
    """
    i_d, i_q, w = state
    v_d, v_q = v
    _check_finite(i_d, i_q, w, v_d, v_q, t_load)
    return _pmsm_rhs(params.R, params.L_d, params.L_q, params.Phi, params.P,
                     params.J, params.D, i_d, i_q, w, v_d, v_q, t_load)


def _pmsm_rhs(R: float, L_d: float, L_q: float, Phi: float, P: int, J: float, D: float,
              i_d: float, i_q: float, w: float, v_d: float, v_q: float,
              t_load: float) -> tuple[float, float, float]:
    return ((-R * i_d + L_q * w * i_q + v_d) / L_d,
            (-L_d * w * i_d - R * i_q + v_q - Phi * w) / L_q,
            (-D * w + P * P * (Phi + (L_d - L_q) * i_d) * i_q - P * t_load) / J)


def pmsm_jacobian(params: MotorParams, state: PlantState) -> np.ndarray:
    """3x3 Jacobian of pmsm_derivative w.r.t. (i_d, i_q, omega_e)."""
    i_d, i_q, w = state
    R, L_d, L_q, Phi, P, J, D = (params.R, params.L_d, params.L_q, params.Phi,
                                 params.P, params.J, params.D)
    return np.array([
        [-R / L_d, L_q * w / L_d, L_q * i_q / L_d],
        [-L_d * w / L_q, -R / L_q, (-L_d * i_d - Phi) / L_q],
        [P * P * (L_d - L_q) * i_q / J, P * P * (Phi + (L_d - L_q) * i_d) / J, -D / J],
    ])


def pmsm_input_jacobian(params: MotorParams) -> np.ndarray:
    """3x2 Jacobian of pmsm_derivative w.r.t. (v_d, v_q); state independent."""
    return np.array([[1.0 / params.L_d, 0.0], [0.0, 1.0 / params.L_q], [0.0, 0.0]])


def electrical_torque(params: MotorParams, state: PlantState) -> float:
    """T_e = P (Phi + (L_d - L_q) i_d) i_q, the torque the mechanical row sees."""
    i_d, i_q, _ = state
    return params.P * (params.Phi + (params.L_d - params.L_q) * i_d) * i_q


def power_quantities(params: MotorParams, state: PlantState,
                     v: VoltageInput) -> tuple[float, float, float]:
    """(electrical input power, copper loss, mechanical power) in W.

    P_mech is shaft-side T_e * omega_m; with D > 0 part of it is friction.
    """
    i_d, i_q, w = state
    p_elec = v.v_d * i_d + v.v_q * i_q
    p_cu = params.R * (i_d * i_d + i_q * i_q)
    p_mech = electrical_torque(params, state) * w / params.P
    return p_elec, p_cu, p_mech


def magnetic_energy(params: MotorParams, i_d: float, i_q: float) -> float:
    return 0.5 * params.L_d * i_d * i_d + 0.5 * params.L_q * i_q * i_q


def power_balance_residual(params: MotorParams, dt: float, i_d: np.ndarray,
                           i_q: np.ndarray, omega_e: np.ndarray, v_d: np.ndarray,
                           v_q: np.ndarray) -> float:
    """Relative energy-balance defect of a sampled trajectory.

    States have n+1 samples, voltages n (held over each step). Compares the
    electrical input energy against copper loss + shaft work + stored magnetic
    energy change + viscous dissipation, all integrated by the trapezoid rule.
    Small only if the samples come from an accurate solution of the plant ODE.
    """
    i_d = np.asarray(i_d, dtype=float)
    i_q = np.asarray(i_q, dtype=float)
    omega_e = np.asarray(omega_e, dtype=float)
    v_d = np.asarray(v_d, dtype=float)
    v_q = np.asarray(v_q, dtype=float)
    if not (len(i_d) == len(i_q) == len(omega_e) == len(v_d) + 1 == len(v_q) + 1):
        raise ValueError("need n+1 state samples and n voltage samples")
    p_elec_samples = v_d * (i_d[:-1] + i_d[1:]) / 2.0 + v_q * (i_q[:-1] + i_q[1:]) / 2.0
    e_elec = float(np.sum(p_elec_samples) * dt)
    p_cu = params.R * (i_d ** 2 + i_q ** 2)
    torque = params.P * (params.Phi + (params.L_d - params.L_q) * i_d) * i_q
    p_mech = torque * omega_e / params.P
    p_visc = (params.D / params.P ** 2) * omega_e ** 2
    e_cu = float(np.trapezoid(p_cu, dx=dt))
    e_mech = float(np.trapezoid(p_mech, dx=dt))
    e_visc = float(np.trapezoid(p_visc, dx=dt))
    de_mag = magnetic_energy(params, float(i_d[-1]), float(i_q[-1])) - \
        magnetic_energy(params, float(i_d[0]), float(i_q[0]))
    defect = e_elec - (e_cu + e_mech + e_visc + de_mag)
    scale = max(abs(e_elec), abs(e_cu) + abs(e_mech) + abs(e_visc) + abs(de_mag), 1e-12)
    return abs(defect) / scale


def clamp_voltage(v: VoltageInput | tuple[float, float], v_max: float) -> VoltageInput:
    """Project v radially onto the circle of radius v_max if it lies outside."""
    if not v_max > 0.0:
        raise ValueError(f"v_max must be positive, got {v_max}")
    v_d, v_q = v
    norm = math.hypot(v_d, v_q)
    if norm <= v_max:
        return VoltageInput(v_d, v_q)
    scale = v_max / norm
    return VoltageInput(v_d * scale, v_q * scale)


def dc_motor_derivative(R: float, L: float, Phi: float, J: float,
                        state: tuple[float, float], v: float,
                        t_load: float) -> tuple[float, float]:
    """Brushed DC motor: di/dt = (-R i + v - Phi w)/L, dw/dt = (Phi i - T_L)/J.

    Under electrical stationarity (L << R^2 J / Phi^2) the speed step response
    is exponential with time constant R J / Phi^2.
    """
    for name, value in (("R", R), ("L", L), ("Phi", Phi), ("J", J)):
        if not value > 0.0:
            raise ValueError(f"{name} must be positive, got {value}")
    i, w = state
    return ((-R * i + v - Phi * w) / L, (Phi * i - t_load) / J)


#: Simulated IPMSM constants used throughout (IEEJ D1-like machine).
D1_PARAMS = MotorParams(R=0.38, L_d=11.2e-3, L_q=19e-3, Phi=0.107, P=2, J=10e-4,
                        D=0.0, V_max=233.0, I_max=13.0, P_max=800.0,
                        f_min=1000.0, f_max=13000.0, T_Lmin=0.1, T_Lmax=1.83)
