"""Cascaded PI field-oriented controller with decoupling and flux-weakening strategies.

The speed PI produces the q-axis current reference; the d-axis reference
comes from the selected strategy:

  mc    keep the current vector on the rated circle, i_d = -sqrt(I_max^2 - i_q^2)
  mtpa  torque-maximizing current angle, i_d = c - sqrt(c^2 + i_q^2),
        c = Phi / (2 (L_q - L_d))   (requires saliency L_q != L_d)

Current PIs with speed decoupling terms produce (v_d, v_q), which is clamped
to the voltage circle. Integrators advance by forward Euler once per dt and,
when limiters are enabled, are clamped to their anti-windup bounds; the
current references are clamped to their limiter bounds likewise.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from typing import Mapping, NamedTuple

from .configfile import ConfigError, parse_bool, parse_float, read_kv
from .plant import MotorParams, PlantState, VoltageInput, clamp_voltage

STRATEGIES = ("mc", "mtpa")


class StrategyError(ValueError):
    """Raised when a current-reference strategy cannot be evaluated."""


class PIState(NamedTuple):
    s_id: float  # d-current error integral, A s
    s_iq: float  # q-current error integral, A s
    s_w: float   # speed error integral, rad


ZERO_PI_STATE = PIState(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class PIGains:
    """Proportional gains, integral times, and limiter bounds.

    Integral gains are k_p / T_i. The reference and anti-windup bounds only
    act when limiters_enabled is set; note the d-axis reference bounds are
    both negative (upper bound -5 A), i.e. the limiter forces flux weakening.
    """

    kp_speed: float
    ti_speed: float
    kp_d: float
    ti_d: float
    kp_q: float
    ti_q: float
    s_w_max: float = 5.0
    s_w_min: float = -1.0
    s_id_max: float = 1.0
    s_id_min: float = -0.03
    s_iq_max: float = 0.02
    s_iq_min: float = -0.01
    id_ref_max: float = -5.0
    id_ref_min: float = -100.0
    iq_ref_max: float = 8.0
    iq_ref_min: float = -100.0
    limiters_enabled: bool = False

    def __post_init__(self) -> None:
        for name in ("kp_speed", "ti_speed", "kp_d", "ti_d", "kp_q", "ti_q"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"PIGains.{name} must be positive")
        for hi, lo in (("s_w_max", "s_w_min"), ("s_id_max", "s_id_min"),
                       ("s_iq_max", "s_iq_min"), ("id_ref_max", "id_ref_min"),
                       ("iq_ref_max", "iq_ref_min")):
            if getattr(self, hi) < getattr(self, lo):
                raise ValueError(f"PIGains.{hi} must be >= {lo}")

    @property
    def ki_speed(self) -> float:
        return self.kp_speed / self.ti_speed

    @property
    def ki_d(self) -> float:
        return self.kp_d / self.ti_d

    @property
    def ki_q(self) -> float:
        return self.kp_q / self.ti_q

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str], source: str = "config") -> "PIGains":
        required = ("kp_speed", "Ti_speed", "kp_d", "Ti_d", "kp_q", "Ti_q")
        kwargs = {
            "kp_speed": parse_float(mapping, "kp_speed", source),
            "ti_speed": parse_float(mapping, "Ti_speed", source),
            "kp_d": parse_float(mapping, "kp_d", source),
            "ti_d": parse_float(mapping, "Ti_d", source),
            "kp_q": parse_float(mapping, "kp_q", source),
            "ti_q": parse_float(mapping, "Ti_q", source),
        }
        optional = ("s_w_max", "s_w_min", "s_id_max", "s_id_min", "s_iq_max", "s_iq_min",
                    "id_ref_max", "id_ref_min", "iq_ref_max", "iq_ref_min")
        for key in optional:
            if key in mapping:
                kwargs[key] = parse_float(mapping, key, source)
        kwargs["limiters_enabled"] = parse_bool(mapping, "limiters_enabled", False, source)
        unknown = set(mapping) - set(required) - set(optional) - {"limiters_enabled"}
        if unknown:
            raise ConfigError(f"{source}: unknown keys {sorted(unknown)}")
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"{source}: {exc}") from exc

    @classmethod
    def from_config(cls, path: str | os.PathLike) -> "PIGains":
        return cls.from_mapping(read_kv(path), source=os.fspath(path))


#: Tuned gains for the D1-like machine (1.0 s acceleration baseline).
#: Enable limiters (``with_limiters``) for the faster 0.2 s ramp condition.
DEFAULT_GAINS = PIGains(kp_speed=0.100, ti_speed=0.100, kp_d=5.60, ti_d=0.0295,
                        kp_q=9.50, ti_q=0.0500)


def with_limiters(gains: PIGains, enabled: bool = True) -> PIGains:
    return replace(gains, limiters_enabled=enabled)


def current_reference(strategy: str, params: MotorParams, i_q_ref: float) -> float:
    """d-axis current reference from the q-axis reference."""
    if strategy == "mc":
        return -math.sqrt(max(params.I_max ** 2 - i_q_ref ** 2, 0.0))
    if strategy == "mtpa":
        if params.L_q == params.L_d:
            raise StrategyError("MTPA needs saliency (L_q != L_d); use strategy 'mc'")
        c = params.Phi / (2.0 * (params.L_q - params.L_d))
        return c - math.sqrt(c * c + i_q_ref * i_q_ref)
    raise StrategyError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def current_loop_voltages(gains: PIGains, params: MotorParams, state: PlantState,
                          i_d_ref: float, i_q_ref: float, s_id: float,
                          s_iq: float) -> tuple[float, float]:
    """Current PI outputs plus decoupling feed-forward, before the voltage clamp."""
    i_d, i_q, w = state
    v_d = gains.kp_d * (i_d_ref - i_d) + gains.ki_d * s_id - params.L_q * i_q * w
    v_q = gains.kp_q * (i_q_ref - i_q) + gains.ki_q * s_iq + params.Phi * w + params.L_d * i_d * w
    return v_d, v_q


def _clip(value: float, lo: float, hi: float) -> float:
    return min(max(value, lo), hi)


def pifoc_step(gains: PIGains, strategy: str, params: MotorParams, pi_state: PIState,
               state: PlantState, omega_ref: float,
               dt: float) -> tuple[VoltageInput, PIState, tuple[float, float]]:
    """One controller update; returns the clamped voltage, the advanced
    integrator state, and the (i_d_ref, i_q_ref) diagnostics."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    i_d, i_q, w = state
    err_w = omega_ref - w

    i_q_ref = gains.kp_speed * err_w + gains.ki_speed * pi_state.s_w
    if gains.limiters_enabled:
        i_q_ref = _clip(i_q_ref, gains.iq_ref_min, gains.iq_ref_max)
    i_d_ref = current_reference(strategy, params, i_q_ref)
    if gains.limiters_enabled:
        i_d_ref = _clip(i_d_ref, gains.id_ref_min, gains.id_ref_max)

    v = clamp_voltage(current_loop_voltages(gains, params, state, i_d_ref, i_q_ref,
                                            pi_state.s_id, pi_state.s_iq), params.V_max)

    s_id = pi_state.s_id + dt * (i_d_ref - i_d)
    s_iq = pi_state.s_iq + dt * (i_q_ref - i_q)
    s_w = pi_state.s_w + dt * err_w
    if gains.limiters_enabled:
        s_id = _clip(s_id, gains.s_id_min, gains.s_id_max)
        s_iq = _clip(s_iq, gains.s_iq_min, gains.s_iq_max)
        s_w = _clip(s_w, gains.s_w_min, gains.s_w_max)

    return v, PIState(s_id, s_iq, s_w), (i_d_ref, i_q_ref)


class PIController:
    """Rollout-facing wrapper; all mutable state lives in the PIState it is handed."""

    def __init__(self, gains: PIGains, strategy: str, params: MotorParams):
        if strategy not in STRATEGIES:
            raise StrategyError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
        if strategy == "mtpa" and params.L_q == params.L_d:
            raise StrategyError("MTPA needs saliency (L_q != L_d)")
        self.gains = gains
        self.strategy = strategy
        self.params = params

    @property
    def name(self) -> str:
        suffix = "+limiters" if self.gains.limiters_enabled else ""
        return f"pifoc:{self.strategy}{suffix}"

    def initial_state(self) -> PIState:
        return ZERO_PI_STATE

    def step(self, ctrl_state: PIState, omega_ref: float, state: PlantState,
             dt: float) -> tuple[float, float, PIState]:
        v, new_state, _ = pifoc_step(self.gains, self.strategy, self.params,
                                     ctrl_state, state, omega_ref, dt)
        return v.v_d, v.v_q, new_state
