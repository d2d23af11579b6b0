"""Response metrics, speed-torque sweeps, Newton equilibria, mismatch and
fluctuating-torque studies."""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .plant import MotorParams, PlantState, VoltageInput, pmsm_derivative, pmsm_jacobian
from .references import OperatingPoint, TorqueProfile
from .rollout import SimConfig, Trajectory, simulate

SETTLING_BAND = 0.02
SPEED_FLOOR = 1.0  # rad/s, shared with the loss terms


@dataclass(frozen=True)
class ResponseMetrics:
    settling_time: float | None   # s, None when the band is never held
    overshoot_rel: float
    final_error_rel: float
    efficiency: float | None      # None when the input energy is <= 0
    valid: bool
    diverged: bool


def settling_time_2pct(t: np.ndarray, omega: np.ndarray, omega_final: float,
                       band: float = SETTLING_BAND, diverged: bool = False) -> float | None:
    """Earliest time after which |omega - omega_final| stays within the band.

    Measured against the ramp's final value, not the instantaneous reference.
    """
    if not omega_final > 0.0:
        raise ValueError("omega_final must be positive")
    if diverged or len(t) == 0:
        return None
    outside = np.abs(np.asarray(omega) - omega_final) > band * omega_final
    if not bool(outside.any()):
        return float(t[0])
    last = int(np.nonzero(outside)[0][-1])
    if last == len(t) - 1:
        return None
    return float(t[last + 1])


def efficiency(traj: Trajectory) -> float | None:
    """Mechanical over electrical energy for the episode (trapezoid rule).

    The held voltage makes the input integrand piecewise linear, so each step
    contributes v_k . (i_k + i_{k+1})/2 * dt. None when the input energy is
    not positive (the map's "invalid" cells).
    """
    n = traj.n_steps
    if n == 0:
        return None
    e_in = float(np.sum(traj.v_d * (traj.i_d[:n] + traj.i_d[1:]) / 2.0
                        + traj.v_q * (traj.i_q[:n] + traj.i_q[1:]) / 2.0) * traj.dt)
    if e_in <= 0.0:
        return None
    e_mech = float(np.trapezoid(traj.p_mech, dx=traj.dt))
    return e_mech / e_in


def overshoot_rel(traj: Trajectory, floor: float = SPEED_FLOOR) -> float:
    if traj.n_steps == 0:
        return 0.0
    den = np.maximum(traj.omega_ref[1:], floor)
    return max(float(np.max((traj.omega_e[1:] - traj.omega_ref[1:]) / den)), 0.0)


def response_metrics(traj: Trajectory, omega_final: float,
                     band: float = SETTLING_BAND) -> ResponseMetrics:
    settling = settling_time_2pct(traj.t, traj.omega_e, omega_final, band, traj.diverged)
    ref_end = float(traj.omega_ref[-1])
    final_error = abs(ref_end - float(traj.omega_e[-1])) / max(ref_end, SPEED_FLOOR)
    eff = efficiency(traj)
    valid = (settling is not None and eff is not None and 0.0 <= eff <= 1.0
             and not traj.diverged)
    return ResponseMetrics(settling_time=settling, overshoot_rel=overshoot_rel(traj),
                           final_error_rel=final_error, efficiency=eff, valid=valid,
                           diverged=traj.diverged)


@dataclass
class SweepResult:
    points: list[OperatingPoint]
    metrics: list[ResponseMetrics]
    controller_id: str
    t_ramp: float
    metadata: dict

    @property
    def settled_fraction(self) -> float:
        if not self.points:
            return 0.0
        return sum(m.settling_time is not None for m in self.metrics) / len(self.points)

    @property
    def diverged_fraction(self) -> float:
        if not self.points:
            return 0.0
        return sum(m.diverged for m in self.metrics) / len(self.points)


def _sweep_point(args) -> ResponseMetrics:
    controller, params, point, sim_config, band = args
    traj = simulate(controller, params, point, None, sim_config, None)
    return response_metrics(traj, point.omega_final, band)


def sweep(controller, params: MotorParams, lattice: Sequence[OperatingPoint],
          sim_config: SimConfig, band: float = SETTLING_BAND, n_workers: int = 1,
          metadata: dict | None = None) -> SweepResult:
    """Evaluate every lattice point from the zero state under step load torque.

    Points are independent; with n_workers > 1 they run in an ordered process
    pool, which leaves results identical to the serial order.
    """
    if not lattice:
        raise ValueError("lattice must be nonempty")
    jobs = [(controller, params, point, sim_config, band) for point in lattice]
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            metrics = list(pool.map(_sweep_point, jobs))
    else:
        metrics = [_sweep_point(job) for job in jobs]
    name = getattr(controller, "name", type(controller).__name__)
    return SweepResult(points=list(lattice), metrics=metrics, controller_id=name,
                       t_ramp=lattice[0].t_ramp, metadata=dict(metadata or {}))


SWEEP_COLUMNS = ("omega_final_rad_s", "T_L_Nm", "settling_time_s", "overshoot_rel",
                 "final_error_rel", "efficiency", "valid")


def save_sweep_csv(path: str | os.PathLike, result: SweepResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for point, metrics in zip(result.points, result.metrics):
            writer.writerow([
                repr(float(point.omega_final)), repr(float(point.t_load)),
                "" if metrics.settling_time is None else repr(metrics.settling_time),
                repr(metrics.overshoot_rel), repr(metrics.final_error_rel),
                "" if metrics.efficiency is None else repr(metrics.efficiency),
                int(metrics.valid),
            ])


def _default_starts(params: MotorParams) -> list[PlantState]:
    levels_i = (-params.I_max, 0.0, params.I_max)
    levels_w = (-params.omega_e_rated, 0.0, params.omega_e_rated)
    return [PlantState(i_d, i_q, w)
            for i_d in levels_i for i_q in levels_i for w in levels_w]


def find_equilibria(params: MotorParams, v: VoltageInput | tuple[float, float],
                    t_load: float, starts: Sequence[PlantState] | None = None,
                    residual_tol: float = 1e-8, max_iter: int = 60,
                    dedup_rel: float = 1e-6) -> list[PlantState]:
    """Newton roots of the plant field under fixed (v, T_L).

    Multistart (default 27-point lattice over +/-I_max and +/-rated speed),
    analytic Jacobian, non-converging starts discarded, converged roots
    deduplicated at componentwise relative tolerance. Deterministic order:
    sorted by (omega_e, i_d, i_q).
    """
    if starts is None:
        starts = _default_starts(params)
    if not starts:
        raise ValueError("starts must be nonempty")
    v = VoltageInput(*v)
    roots: list[PlantState] = []
    for start in starts:
        x = np.array(start, dtype=float)
        converged = False
        for _ in range(max_iter):
            f = np.array(pmsm_derivative(params, PlantState(*x), v, t_load))
            if float(np.linalg.norm(f)) < residual_tol:
                converged = True
                break
            jac = pmsm_jacobian(params, PlantState(*x))
            try:
                step = np.linalg.solve(jac, f)
            except np.linalg.LinAlgError:
                break
            x = x - step
            if not np.all(np.isfinite(x)):
                break
        if not converged:
            continue
        candidate = PlantState(float(x[0]), float(x[1]), float(x[2]))
        if not any(_states_close(candidate, root, dedup_rel) for root in roots):
            roots.append(candidate)
    roots.sort(key=lambda s: (s.omega_e, s.i_d, s.i_q))
    return roots


def _states_close(a: PlantState, b: PlantState, rel: float) -> bool:
    return all(abs(x - y) <= rel * max(1.0, abs(x), abs(y)) for x, y in zip(a, b))


def equilibrium_distance(params: MotorParams, state: PlantState,
                         v: VoltageInput | tuple[float, float],
                         t_load: float) -> tuple[float, PlantState | None]:
    """Componentwise distance (relative to the current/speed ratings) from the
    nearest equilibrium under the given held inputs."""
    roots = find_equilibria(params, v, t_load)
    if not roots:
        return math.inf, None
    scales = (params.I_max, params.I_max, params.omega_e_rated)
    best, best_root = math.inf, None
    for root in roots:
        dist = max(abs(x - y) / s for x, y, s in zip(state, root, scales))
        if dist < best:
            best, best_root = dist, root
    return best, best_root


MISMATCH_PARAMETERS = ("Phi", "R", "L_d", "L_q", "J")
MISMATCH_PCTS = (-50, -20, -5, 0, 5, 20, 50, 100, 400)


@dataclass(frozen=True)
class MismatchRow:
    parameter: str
    perturbation_pct: float
    sustained_rate: float


def mismatch_table(controller, params: MotorParams, lattice: Sequence[OperatingPoint],
                   sim_config: SimConfig,
                   parameters: Sequence[str] = MISMATCH_PARAMETERS,
                   pcts: Sequence[float] = MISMATCH_PCTS,
                   band: float = SETTLING_BAND, n_workers: int = 1) -> list[MismatchRow]:
    """Rate of nominally 2%-settled lattice points that stay settled when one
    plant constant is scaled; the controller keeps its nominal design.

    The 0% column re-runs the nominal plant and is 1 by determinism. If the
    nominal plant settles nothing, rates degenerate to 1 at 0% and 0 elsewhere.
    """
    nominal = sweep(controller, params, lattice, sim_config, band, n_workers)
    settled_points = [point for point, metrics in zip(nominal.points, nominal.metrics)
                      if metrics.settling_time is not None]
    rows = []
    for parameter in parameters:
        if not hasattr(params, parameter):
            raise ValueError(f"unknown plant parameter {parameter!r}")
        for pct in pcts:
            if not settled_points:
                rate = 1.0 if pct == 0 else 0.0
            else:
                value = getattr(params, parameter) * (1.0 + pct / 100.0)
                perturbed = replace(params, **{parameter: value})
                result = sweep(controller, perturbed, settled_points, sim_config,
                               band, n_workers)
                sustained = sum(m.settling_time is not None for m in result.metrics)
                rate = sustained / len(settled_points)
            rows.append(MismatchRow(parameter, float(pct), rate))
    return rows


def save_mismatch_csv(path: str | os.PathLike, rows: Sequence[MismatchRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("parameter", "perturbation_pct", "sustained_rate"))
        for row in rows:
            writer.writerow([row.parameter, repr(row.perturbation_pct),
                             repr(row.sustained_rate)])


@dataclass
class FluctuationResult:
    point: OperatingPoint
    trajectory: Trajectory
    mean_abs_error_rel: float  # after the torque ramp, vs omega_final
    settling_time: float | None
    diverged: bool


def fluctuating_torque_eval(controller, params: MotorParams,
                            points: Sequence[OperatingPoint], sim_config: SimConfig,
                            fluctuation_rel: float = 0.3,
                            seed: int = 0) -> list[FluctuationResult]:
    """Replace the step load with a ramp plus multiplicative fluctuation and
    report how well the speed holds the final reference."""
    results = []
    for index, point in enumerate(points):
        profile = TorqueProfile(point.t_load, kind="fluctuating", t_ramp=point.t_ramp,
                                fluctuation_rel=fluctuation_rel,
                                seed=seed * 100_003 + index)
        traj = simulate(controller, params, point, profile, sim_config, None)
        after = traj.t > point.t_ramp
        if bool(after.any()):
            err = np.abs(traj.omega_e[after] - point.omega_final) / point.omega_final
            mean_err = float(np.mean(err))
        else:
            mean_err = math.inf
        settling = settling_time_2pct(traj.t, traj.omega_e, point.omega_final,
                                      diverged=traj.diverged)
        results.append(FluctuationResult(point=point, trajectory=traj,
                                         mean_abs_error_rel=mean_err,
                                         settling_time=settling,
                                         diverged=traj.diverged))
    return results


FLUCT_COLUMNS = ("omega_final_rad_s", "T_L_Nm", "fluctuation_rel", "mean_abs_error_rel",
                 "settling_time_s", "diverged")


def save_fluct_csv(path: str | os.PathLike, results: Sequence[FluctuationResult],
                   fluctuation_rel: float) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(FLUCT_COLUMNS)
        for res in results:
            writer.writerow([
                repr(float(res.point.omega_final)), repr(float(res.point.t_load)),
                repr(float(fluctuation_rel)), repr(res.mean_abs_error_rel),
                "" if res.settling_time is None else repr(res.settling_time),
                int(res.diverged),
            ])
