"""Loss terms over rollout batches, Adam, and the two-phase training loop.

The four loss terms (all dimensionless, averaged over the batch):

  speed      mean over post-initial samples of |ref - speed| / max(ref, eps_w)
  copper     sum over steps of R |i|^2 / max(input power, eps_P) * dt
  overshoot  per-episode max of the positive relative speed excess
  final      relative speed error at the last sample

The reference denominator floor eps_w (default 1 rad/s) keeps the ramp's
t -> 0 region finite; the input-power floor eps_P (default 1 W) does the
same for transients where v . i <= 0. For the first `warmup_epochs` epochs
only the speed-related terms are active; the copper term joins afterwards.
One optimizer update happens per epoch (one minibatch of rollouts).
"""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .evaluation import response_metrics
from .plant import MotorParams
from .references import (OperatingPoint, evaluation_lattice, sample_initial_state,
                         sample_operating_points)
from .rnn import RNNController, init_rnn, param_vector, save_checkpoint, \
    with_param_vector
from .rollout import SimConfig, Trajectory, backward, simulate

log = logging.getLogger(__name__)

SPEED_FLOOR = 1.0   # rad/s
POWER_FLOOR = 1.0   # W


@dataclass(frozen=True)
class LossBreakdown:
    speed: float
    copper: float
    overshoot: float
    final: float
    total: float
    active: tuple[str, ...]


@dataclass(frozen=True)
class TrainConfig:
    n_batch: int = 8
    epochs: int = 1000
    warmup_epochs: int = 50
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    hidden_size: int = 128
    sym_mix: float = 0.85
    diag_shift: float = 0.01
    t_ramp: float = 1.0
    speed_floor: float = SPEED_FLOOR
    power_floor: float = POWER_FLOOR
    tape_mode: str = "full"
    eval_every: int = 25
    checkpoint_every: int = 100
    eval_lattice: tuple[int, int] = (5, 5)
    random_initial_states: bool = True

    def __post_init__(self) -> None:
        if self.n_batch < 1:
            raise ValueError("n_batch must be >= 1")
        if self.warmup_epochs > self.epochs:
            raise ValueError("warmup_epochs must not exceed epochs")


def _ref_den(omega_ref: np.ndarray, floor: float) -> np.ndarray:
    return np.maximum(omega_ref, floor)


def loss_speed(trajs: Sequence[Trajectory], n_time: int, floor: float = SPEED_FLOOR) -> float:
    """Normalized speed-error area; sums samples 1..n (the controller-driven ones)."""
    total = 0.0
    for traj in trajs:
        if traj.n_steps == 0:
            continue
        den = _ref_den(traj.omega_ref[1:], floor)
        total += float(np.sum(np.abs(traj.omega_ref[1:] - traj.omega_e[1:]) / den))
    return total / (len(trajs) * n_time)


def loss_copper(trajs: Sequence[Trajectory], floor: float = POWER_FLOOR) -> float:
    """Copper loss relative to input power, integrated over the episode."""
    total = 0.0
    for traj in trajs:
        if traj.n_steps == 0:
            continue
        n = traj.n_steps
        p_cu = traj.params.R * (traj.i_d[:n] ** 2 + traj.i_q[:n] ** 2)
        den = np.maximum(traj.p_elec, floor)
        total += float(np.sum(p_cu / den)) * traj.dt
    return total / len(trajs)


def loss_overshoot(trajs: Sequence[Trajectory], floor: float = SPEED_FLOOR) -> float:
    total = 0.0
    for traj in trajs:
        if traj.n_steps == 0:
            continue
        den = _ref_den(traj.omega_ref[1:], floor)
        excess = (traj.omega_e[1:] - traj.omega_ref[1:]) / den
        total += max(float(np.max(excess)), 0.0)
    return total / len(trajs)


def loss_final(trajs: Sequence[Trajectory], floor: float = SPEED_FLOOR) -> float:
    """Relative speed error at the last recorded sample.

    For complete episodes the reference there is omega_final and the floor is
    inactive; it only guards truncated episodes that end inside the ramp.
    """
    total = 0.0
    for traj in trajs:
        ref = float(traj.omega_ref[-1])
        total += abs(ref - float(traj.omega_e[-1])) / max(ref, floor)
    return total / len(trajs)


def loss_breakdown(trajs: Sequence[Trajectory], n_time: int, include_copper: bool,
                   speed_floor: float = SPEED_FLOOR,
                   power_floor: float = POWER_FLOOR) -> LossBreakdown:
    l_s = loss_speed(trajs, n_time, speed_floor)
    l_c = loss_copper(trajs, power_floor)
    l_o = loss_overshoot(trajs, speed_floor)
    l_f = loss_final(trajs, speed_floor)
    active = ("speed", "overshoot", "final") + (("copper",) if include_copper else ())
    total = l_s + l_o + l_f + (l_c if include_copper else 0.0)
    return LossBreakdown(speed=l_s, copper=l_c, overshoot=l_o, final=l_f,
                         total=total, active=active)


def loss_seeds(traj: Trajectory, n_time: int, n_batch: int, include_copper: bool,
               speed_floor: float = SPEED_FLOOR,
               power_floor: float = POWER_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of the batch loss w.r.t. this episode's states and voltages.

    The 1/n_batch factors are baked in, so summing per-episode gradients gives
    the batch gradient. Sign conventions at the |.| and max(.) kinks use the
    zero subgradient.
    """
    n = traj.n_steps
    d_states = np.zeros((n + 1, 3))
    d_voltages = np.zeros((n, 2))
    if n == 0:
        return d_states, d_voltages

    ref = traj.omega_ref
    speed = traj.omega_e
    den = _ref_den(ref[1:], speed_floor)

    # speed-error area
    d_states[1:, 2] += -np.sign(ref[1:] - speed[1:]) / den / (n_batch * n_time)

    # overshoot: only the (first) peak sample carries gradient
    excess = (speed[1:] - ref[1:]) / den
    peak = int(np.argmax(excess))
    if float(excess[peak]) > 0.0:
        d_states[peak + 1, 2] += 1.0 / float(den[peak]) / n_batch

    # final value
    ref_end = float(ref[-1])
    err_end = ref_end - float(speed[-1])
    d_states[n, 2] += -float(np.sign(err_end)) / max(ref_end, speed_floor) / n_batch

    if include_copper:
        i_d = traj.i_d[:n]
        i_q = traj.i_q[:n]
        p_in = traj.v_d * i_d + traj.v_q * i_q
        den_p = np.maximum(p_in, power_floor)
        live = p_in > power_floor  # max(.) passes gradient only above the floor
        r = traj.params.R
        i_sq = i_d ** 2 + i_q ** 2
        scale = traj.dt / n_batch
        common = np.where(live, r * i_sq / den_p ** 2, 0.0)
        d_states[:n, 0] += scale * (2.0 * r * i_d / den_p - common * traj.v_d)
        d_states[:n, 1] += scale * (2.0 * r * i_q / den_p - common * traj.v_q)
        d_voltages[:, 0] += -scale * common * i_d
        d_voltages[:, 1] += -scale * common * i_q
    return d_states, d_voltages


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), step=0)


def adam_step(params_vec: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[np.ndarray, AdamState, bool]:
    """Bias-corrected Adam update; a non-finite gradient is skipped (moments decay)."""
    if params_vec.shape != grad.shape or params_vec.shape != state.m.shape:
        raise ValueError("parameter, gradient, and moment shapes must agree")
    if not np.all(np.isfinite(grad)):
        return params_vec, state, False
    step = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    new_params = params_vec - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m=m, v=v, step=step), True


METRIC_COLUMNS = ("epoch", "L_s", "L_c", "L_o", "L_f", "total", "settled_fraction",
                  "mean_overshoot", "mean_efficiency", "diverged_count")


@dataclass
class TrainResult:
    checkpoint_path: str
    best_checkpoint_path: str
    best_eval_checkpoint_path: str
    metrics_path: str
    eval_metrics_path: str
    best_epoch: int
    best_total: float
    best_eval_epoch: int
    best_eval_settled: float
    epochs_run: int
    diverged_total: int


def _response_row(trajs: Sequence[Trajectory], points: Sequence[OperatingPoint],
                  band: float = 0.02) -> tuple[float, float, float | None, int]:
    settled = 0
    overshoots = []
    efficiencies = []
    diverged = 0
    for traj, point in zip(trajs, points):
        metrics = response_metrics(traj, point.omega_final, band=band)
        if metrics.settling_time is not None:
            settled += 1
        overshoots.append(metrics.overshoot_rel)
        if metrics.efficiency is not None:
            efficiencies.append(metrics.efficiency)
        if traj.diverged:
            diverged += 1
    mean_eff = float(np.mean(efficiencies)) if efficiencies else None
    return settled / len(trajs), float(np.mean(overshoots)), mean_eff, diverged


def _write_metrics_row(writer, epoch: int, breakdown: LossBreakdown,
                       settled_fraction: float, mean_overshoot: float,
                       mean_efficiency: float | None, diverged: int) -> None:
    writer.writerow([epoch, repr(breakdown.speed), repr(breakdown.copper),
                     repr(breakdown.overshoot), repr(breakdown.final),
                     repr(breakdown.total), repr(settled_fraction),
                     repr(mean_overshoot),
                     "" if mean_efficiency is None else repr(mean_efficiency),
                     diverged])


def train(params: MotorParams, sim_config: SimConfig, cfg: TrainConfig,
          out_dir: str | os.PathLike) -> TrainResult:
    """Run the full loop; everything derives from cfg.seed, so identical
    configurations reproduce checkpoints and metric logs byte for byte.

    Seed streams: (seed, 0) network init, (seed, 1, epoch) operating points,
    (seed, 2, epoch, i) per-episode initial states.
    """
    os.makedirs(out_dir, exist_ok=True)
    rnn0 = init_rnn((cfg.seed, 0), cfg.hidden_size, cfg.sym_mix, cfg.diag_shift)
    theta = param_vector(rnn0)
    opt = AdamState.zeros(theta.size)
    eval_points = evaluation_lattice(params, *cfg.eval_lattice, t_ramp=cfg.t_ramp)

    metrics_path = os.path.join(os.fspath(out_dir), "metrics.csv")
    eval_metrics_path = os.path.join(os.fspath(out_dir), "eval_metrics.csv")
    checkpoint_path = os.path.join(os.fspath(out_dir), "checkpoint.json")
    best_path = os.path.join(os.fspath(out_dir), "checkpoint_best.json")
    best_eval_path = os.path.join(os.fspath(out_dir), "checkpoint_best_eval.json")

    best_total = math.inf
    best_epoch = 0
    best_eval_settled = -1.0
    best_eval_total = math.inf
    best_eval_epoch = 0
    diverged_total = 0
    n_time = sim_config.n_steps

    with open(metrics_path, "w", newline="", encoding="utf-8") as mfh, \
            open(eval_metrics_path, "w", newline="", encoding="utf-8") as efh:
        mwriter = csv.writer(mfh)
        mwriter.writerow(METRIC_COLUMNS)
        ewriter = csv.writer(efh)
        ewriter.writerow(METRIC_COLUMNS)

        for epoch in range(1, cfg.epochs + 1):
            include_copper = epoch > cfg.warmup_epochs
            points = sample_operating_points(params, cfg.n_batch, (cfg.seed, 1, epoch),
                                             cfg.t_ramp)
            rnn = with_param_vector(rnn0, theta)
            controller = RNNController(rnn, params)
            trajs = []
            grad = np.zeros_like(theta)
            for i, point in enumerate(points):
                start = sample_initial_state(params, (cfg.seed, 2, epoch, i),
                                             training=cfg.random_initial_states)
                traj = simulate(controller, params, point, None, sim_config, start,
                                tape_mode=cfg.tape_mode)
                d_states, d_voltages = loss_seeds(traj, n_time, cfg.n_batch,
                                                  include_copper, cfg.speed_floor,
                                                  cfg.power_floor)
                grad += backward(traj, d_states, d_voltages)
                traj.tape = None  # free before the next episode
                trajs.append(traj)

            breakdown = loss_breakdown(trajs, n_time, include_copper,
                                       cfg.speed_floor, cfg.power_floor)
            theta, opt, applied = adam_step(theta, grad, opt, cfg.lr, cfg.adam_beta1,
                                            cfg.adam_beta2, cfg.adam_eps)
            if not applied:
                log.warning("epoch %d: non-finite gradient, update skipped", epoch)

            settled_fraction, mean_overshoot, mean_eff, diverged = \
                _response_row(trajs, points)
            diverged_total += diverged
            if diverged > cfg.n_batch // 2:
                log.warning("epoch %d: %d/%d rollouts diverged", epoch, diverged,
                            cfg.n_batch)
            _write_metrics_row(mwriter, epoch, breakdown, settled_fraction,
                               mean_overshoot, mean_eff, diverged)
            mfh.flush()

            if breakdown.total < best_total:
                best_total = breakdown.total
                best_epoch = epoch
                save_checkpoint(best_path, with_param_vector(rnn0, theta), seed=cfg.seed,
                                meta={"epoch": epoch, "total_loss": breakdown.total})

            if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
                eval_controller = RNNController(with_param_vector(rnn0, theta), params)
                eval_trajs = [simulate(eval_controller, params, point, None, sim_config,
                                       None, tape_mode="none")
                              for point in eval_points]
                eval_break = loss_breakdown(eval_trajs, n_time, include_copper,
                                            cfg.speed_floor, cfg.power_floor)
                esf, eov, eef, ediv = _response_row(eval_trajs, eval_points)
                _write_metrics_row(ewriter, epoch, eval_break, esf, eov, eef, ediv)
                efh.flush()
                # early-stopping selection: most settled eval points, ties by loss
                if esf > best_eval_settled or (esf == best_eval_settled
                                               and eval_break.total < best_eval_total):
                    best_eval_settled = esf
                    best_eval_total = eval_break.total
                    best_eval_epoch = epoch
                    save_checkpoint(best_eval_path, with_param_vector(rnn0, theta),
                                    seed=cfg.seed,
                                    meta={"epoch": epoch, "eval_settled_fraction": esf,
                                          "eval_total_loss": eval_break.total})

            if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                save_checkpoint(os.path.join(os.fspath(out_dir),
                                             f"checkpoint_epoch{epoch:05d}.json"),
                                with_param_vector(rnn0, theta), seed=cfg.seed,
                                meta={"epoch": epoch})
            log.info("epoch %d/%d total=%.5f active=%s", epoch, cfg.epochs,
                     breakdown.total, "+".join(breakdown.active))

    save_checkpoint(checkpoint_path, with_param_vector(rnn0, theta), seed=cfg.seed,
                    meta={"epoch": cfg.epochs, "final": True})
    return TrainResult(checkpoint_path=checkpoint_path, best_checkpoint_path=best_path,
                       best_eval_checkpoint_path=best_eval_path,
                       metrics_path=metrics_path, eval_metrics_path=eval_metrics_path,
                       best_epoch=best_epoch, best_total=best_total,
                       best_eval_epoch=best_eval_epoch,
                       best_eval_settled=max(best_eval_settled, 0.0),
                       epochs_run=cfg.epochs, diverged_total=diverged_total)
