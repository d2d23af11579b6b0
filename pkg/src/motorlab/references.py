"""Speed references, load-torque profiles, operating-point datasets, initial states."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .plant import MotorParams, PlantState, rpm_to_omega_e

SeedLike = int | Sequence[int]

#: Fluctuating torque profiles resample their noise on this grid (s).
TORQUE_NOISE_DT = 0.01


def _entropy(seed: SeedLike) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


@dataclass(frozen=True)
class ReferenceProfile:
    """Saturated ramp: rises linearly to omega_final over t_ramp, then holds."""

    omega_final: float  # electrical rad/s
    t_ramp: float       # s

    def __post_init__(self) -> None:
        if not (self.omega_final > 0.0 and self.t_ramp > 0.0):
            raise ValueError("omega_final and t_ramp must be positive")

    def value(self, t: float) -> float:
        return min(self.omega_final * t / self.t_ramp, self.omega_final)

    def values(self, t: np.ndarray) -> np.ndarray:
        return np.minimum(self.omega_final * np.asarray(t, dtype=float) / self.t_ramp,
                          self.omega_final)


def reference_at(profile: ReferenceProfile, t: float) -> float:
    return profile.value(t)


@dataclass(frozen=True)
class OperatingPoint:
    """Final speed / load-torque pair plus the common acceleration time."""

    omega_final: float  # electrical rad/s
    t_load: float       # N m
    t_ramp: float       # s

    def reference(self) -> ReferenceProfile:
        return ReferenceProfile(self.omega_final, self.t_ramp)


@dataclass(frozen=True)
class TorqueProfile:
    """Load torque over one episode.

    kind="step" holds t_load constant. kind="fluctuating" ramps 0 -> t_load
    over t_ramp and multiplies by piecewise-constant noise drawn from
    U[1-r, 1+r], resampled every TORQUE_NOISE_DT. Noise is keyed by
    (seed, cell index) so values are independent of evaluation order.
    """

    t_load: float
    kind: str = "step"
    t_ramp: float = 1.0
    fluctuation_rel: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("step", "fluctuating"):
            raise ValueError(f"unknown torque profile kind {self.kind!r}")
        if not 0.0 <= self.fluctuation_rel < 1.0:
            raise ValueError("fluctuation_rel must be in [0, 1)")

    def value(self, t: float) -> float:
        if self.kind == "step":
            return self.t_load
        base = self.t_load * min(t / self.t_ramp, 1.0)
        if self.fluctuation_rel == 0.0:
            return base
        cell = int(t / TORQUE_NOISE_DT)
        rng = np.random.default_rng((self.seed, cell))
        noise = rng.uniform(1.0 - self.fluctuation_rel, 1.0 + self.fluctuation_rel)
        return base * float(noise)

    def values(self, t: np.ndarray) -> np.ndarray:
        return np.array([self.value(float(ti)) for ti in np.asarray(t, dtype=float)])


def torque_at(profile: TorqueProfile, t: float) -> float:
    return profile.value(t)


def power_feasible(params: MotorParams, rpm: float, t_load: float) -> bool:
    """Mechanical power cap: omega_m * T_L <= P_max (omega_m from rpm)."""
    omega_m = rpm * 2.0 * math.pi / 60.0
    return omega_m * t_load <= params.P_max


def sample_operating_points(params: MotorParams, n: int, seed: SeedLike,
                            t_ramp: float = 1.0) -> list[OperatingPoint]:
    """n points uniform over [f_min,f_max] x [T_Lmin,T_Lmax], power-cap rejected.

    Point i only consumes the stream keyed by (seed, i), so partitioning the
    index range across workers reproduces the same list.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    base = _entropy(seed)
    points = []
    for i in range(n):
        rng = np.random.default_rng(base + (i,))
        while True:
            rpm = rng.uniform(params.f_min, params.f_max)
            t_load = rng.uniform(params.T_Lmin, params.T_Lmax)
            if power_feasible(params, rpm, t_load):
                break
        points.append(OperatingPoint(rpm_to_omega_e(rpm, params.P), float(t_load), t_ramp))
    return points


def evaluation_lattice(params: MotorParams, n_speed: int = 10, n_torque: int = 10,
                       t_ramp: float = 1.0) -> list[OperatingPoint]:
    """Regular speed x torque grid over the range, keeping power-feasible cells.

    Row-major (speed outer, torque inner) ordering; fixed grid so maps built
    from the same params are directly comparable.
    """
    if n_speed < 1 or n_torque < 1:
        raise ValueError("lattice dimensions must be >= 1")
    speeds = np.linspace(params.f_min, params.f_max, n_speed)
    torques = np.linspace(params.T_Lmin, params.T_Lmax, n_torque)
    points = []
    for rpm in speeds:
        for t_load in torques:
            if power_feasible(params, float(rpm), float(t_load)):
                points.append(OperatingPoint(rpm_to_omega_e(float(rpm), params.P),
                                             float(t_load), t_ramp))
    return points


def sample_initial_state(params: MotorParams, seed: SeedLike,
                         training: bool = True) -> PlantState:
    """Zero-centered uniform start for training; zeros for evaluation.

    i_d, i_q ~ U[-2.5, 2.5) A and omega_e ~ U[-100 P 2pi/60, 100 P 2pi/60),
    drawn in that order.
    """
    if not training:
        return PlantState(0.0, 0.0, 0.0)
    rng = np.random.default_rng(_entropy(seed))
    i_d = rng.uniform(-2.5, 2.5)
    i_q = rng.uniform(-2.5, 2.5)
    omega_bound = rpm_to_omega_e(100.0, params.P)
    omega_e = rng.uniform(-omega_bound, omega_bound)
    return PlantState(float(i_d), float(i_q), float(omega_e))


_DATASET_COLUMNS = ("omega_final_rad_s", "T_L_Nm", "t_ramp_s", "seed")


def save_operating_points(path: str | os.PathLike, points: Iterable[OperatingPoint],
                          seeds: Sequence[int]) -> None:
    points = list(points)
    if len(points) != len(seeds):
        raise ValueError("one seed per operating point required")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_DATASET_COLUMNS)
        for point, seed in zip(points, seeds):
            writer.writerow([repr(float(point.omega_final)), repr(float(point.t_load)),
                             repr(float(point.t_ramp)), int(seed)])


def load_operating_points(path: str | os.PathLike) -> tuple[list[OperatingPoint], list[int]]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(_DATASET_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing dataset columns {sorted(missing)}")
        points, seeds = [], []
        for row in reader:
            points.append(OperatingPoint(float(row["omega_final_rad_s"]),
                                         float(row["T_L_Nm"]), float(row["t_ramp_s"])))
            seeds.append(int(row["seed"]))
    return points, seeds
