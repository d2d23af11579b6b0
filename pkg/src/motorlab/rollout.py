"""Closed-loop RK4 rollout and exact reverse-mode differentiation through it.

The forward pass advances the plant with fixed-step RK4; the controller
updates once per dt and its output is zero-order held across the four
stages. For RNN controllers the rollout can record a tape and replay it
backwards, producing the exact gradient of any scalar trajectory loss with
respect to the controller parameters. ReLU uses the (grad = 0 at 0)
subgradient; the voltage clamp uses the radial-projection Jacobian on and
outside the circle. Two tape modes exist:

  "full"        store every hidden state (memory ~ N_time x N_h)
  "checkpoint"  store one hidden state every ~sqrt(N_time) steps and
                recompute the rest segment by segment during the backward
                pass (same gradients up to summation-order rounding)

Plant parameters are constants; only the RNN parameters carry gradients.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .plant import MotorParams, PlantState, _pmsm_rhs
from .references import OperatingPoint, TorqueProfile
from .rnn import RNNController, RNNParams

#: Any state component beyond this magnitude truncates and flags the rollout.
DIVERGENCE_LIMIT = 1.0e6

TAPE_MODES = ("none", "full", "checkpoint")


@dataclass(frozen=True)
class SimConfig:
    """Fixed integration grid; t_sim = n_steps * dt by construction."""

    dt: float = 2.0e-4
    n_steps: int = 10_000

    def __post_init__(self) -> None:
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")

    @property
    def t_sim(self) -> float:
        return self.n_steps * self.dt

    @classmethod
    def from_duration(cls, dt: float, t_sim: float) -> "SimConfig":
        n = round(t_sim / dt)
        if not math.isclose(n * dt, t_sim, rel_tol=1e-9, abs_tol=0.0):
            raise ValueError(f"t_sim={t_sim} is not an integer multiple of dt={dt}")
        return cls(dt=dt, n_steps=n)


@dataclass
class Tape:
    """Intermediates recorded during an RNN rollout, enough to replay it backwards."""

    mode: str
    rnn: RNNParams
    a_matrix: np.ndarray
    v_max: float
    h_full: np.ndarray | None = None     # (n+1, N_h) in "full" mode
    h_snaps: np.ndarray | None = None    # (n_snaps, N_h) in "checkpoint" mode
    snap_stride: int = 0


@dataclass
class Trajectory:
    """Uniformly sampled record of one closed-loop episode.

    State-like arrays have n+1 samples; the held inputs (v_d, v_q, t_load)
    have n. A diverged rollout is truncated to the last healthy sample and
    flagged; the offending step's input is dropped with it.
    """

    params: MotorParams
    dt: float
    t: np.ndarray
    i_d: np.ndarray
    i_q: np.ndarray
    omega_e: np.ndarray
    v_d: np.ndarray
    v_q: np.ndarray
    omega_ref: np.ndarray
    t_load: np.ndarray
    diverged: bool = False
    tape: Tape | None = field(default=None, repr=False)

    @property
    def n_steps(self) -> int:
        return len(self.v_d)

    @property
    def torque(self) -> np.ndarray:
        p = self.params
        return p.P * (p.Phi + (p.L_d - p.L_q) * self.i_d) * self.i_q

    @property
    def p_cu(self) -> np.ndarray:
        return self.params.R * (self.i_d ** 2 + self.i_q ** 2)

    @property
    def p_mech(self) -> np.ndarray:
        return self.torque * self.omega_e / self.params.P

    @property
    def p_elec(self) -> np.ndarray:
        """Instantaneous input power at each step start (held voltage times current)."""
        n = self.n_steps
        return self.v_d * self.i_d[:n] + self.v_q * self.i_q[:n]

    def final_state(self) -> PlantState:
        return PlantState(float(self.i_d[-1]), float(self.i_q[-1]), float(self.omega_e[-1]))

    def final_voltage(self) -> tuple[float, float]:
        if self.n_steps == 0:
            return 0.0, 0.0
        return float(self.v_d[-1]), float(self.v_q[-1])


def rk4_step(f: Callable, y, dt: float):
    """Classical 4-stage Runge-Kutta step with inputs held constant.

    f maps the state to its rate; any exogenous inputs must already be bound
    inside f (zero-order hold over the step).
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate(controller, params: MotorParams, op_point: OperatingPoint,
             torque_profile: TorqueProfile | None = None,
             sim_config: SimConfig | None = None,
             initial_state: PlantState | None = None,
             tape_mode: str = "none") -> Trajectory:
    """Roll the closed loop forward; deterministic given its arguments.

    The controller reads (reference, state) at each sample and its voltage is
    held for the following dt. Divergence (non-finite values or any state
    component beyond DIVERGENCE_LIMIT) truncates the record at the last
    healthy sample and sets the flag.
    """
    if sim_config is None:
        sim_config = SimConfig()
    if tape_mode not in TAPE_MODES:
        raise ValueError(f"tape_mode must be one of {TAPE_MODES}")
    if tape_mode != "none" and not isinstance(controller, RNNController):
        raise ValueError("tape recording requires an RNN controller")
    if torque_profile is None:
        torque_profile = TorqueProfile(op_point.t_load, kind="step")

    n = sim_config.n_steps
    dt = sim_config.dt
    t_grid = np.arange(n + 1) * dt
    omega_ref_arr = op_point.reference().values(t_grid)
    tl_arr = torque_profile.values(t_grid[:-1])
    omega_ref = omega_ref_arr.tolist()
    tl = tl_arr.tolist()

    i_d_arr = np.empty(n + 1)
    i_q_arr = np.empty(n + 1)
    w_arr = np.empty(n + 1)
    vd_arr = np.empty(n)
    vq_arr = np.empty(n)

    if initial_state is None:
        initial_state = PlantState(0.0, 0.0, 0.0)
    i_d, i_q, w = (float(x) for x in initial_state)
    i_d_arr[0], i_q_arr[0], w_arr[0] = i_d, i_q, w

    tape: Tape | None = None
    h_full = None
    h_snaps = None
    stride = 0
    if tape_mode == "full":
        h_full = np.empty((n + 1, controller.rnn.hidden_size))
        h_full[0] = 0.0
    elif tape_mode == "checkpoint":
        stride = max(1, math.isqrt(n))
        h_snaps = np.empty((n // stride + 1, controller.rnn.hidden_size))
        h_snaps[0] = 0.0

    R, L_d, L_q, Phi = params.R, params.L_d, params.L_q, params.Phi
    P, J, D = params.P, params.J, params.D
    sixth = dt / 6.0
    half = 0.5 * dt
    limit = DIVERGENCE_LIMIT

    ctrl_state = controller.initial_state()
    step = controller.step
    diverged = False
    n_rec = n
    for k in range(n):
        v_d, v_q, ctrl_state = step(ctrl_state, omega_ref[k], (i_d, i_q, w), dt)
        if not (math.isfinite(v_d) and math.isfinite(v_q)):
            n_rec, diverged = k, True
            break
        t_l = tl[k]
        k1 = _pmsm_rhs(R, L_d, L_q, Phi, P, J, D, i_d, i_q, w, v_d, v_q, t_l)
        k2 = _pmsm_rhs(R, L_d, L_q, Phi, P, J, D,
                       i_d + half * k1[0], i_q + half * k1[1], w + half * k1[2],
                       v_d, v_q, t_l)
        k3 = _pmsm_rhs(R, L_d, L_q, Phi, P, J, D,
                       i_d + half * k2[0], i_q + half * k2[1], w + half * k2[2],
                       v_d, v_q, t_l)
        k4 = _pmsm_rhs(R, L_d, L_q, Phi, P, J, D,
                       i_d + dt * k3[0], i_q + dt * k3[1], w + dt * k3[2],
                       v_d, v_q, t_l)
        i_d = i_d + sixth * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        i_q = i_q + sixth * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        w = w + sixth * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        if not (math.isfinite(i_d) and math.isfinite(i_q) and math.isfinite(w)
                and abs(i_d) <= limit and abs(i_q) <= limit and abs(w) <= limit):
            n_rec, diverged = k, True
            break
        vd_arr[k], vq_arr[k] = v_d, v_q
        i_d_arr[k + 1], i_q_arr[k + 1], w_arr[k + 1] = i_d, i_q, w
        if h_full is not None:
            h_full[k + 1] = ctrl_state
        elif h_snaps is not None and (k + 1) % stride == 0:
            h_snaps[(k + 1) // stride] = ctrl_state

    if tape_mode == "full":
        tape = Tape("full", controller.rnn, controller.a_matrix, controller.v_max,
                    h_full=h_full[:n_rec + 1])
    elif tape_mode == "checkpoint":
        tape = Tape("checkpoint", controller.rnn, controller.a_matrix, controller.v_max,
                    h_snaps=h_snaps, snap_stride=stride)

    return Trajectory(params=params, dt=dt, t=t_grid[:n_rec + 1],
                      i_d=i_d_arr[:n_rec + 1], i_q=i_q_arr[:n_rec + 1],
                      omega_e=w_arr[:n_rec + 1], v_d=vd_arr[:n_rec], v_q=vq_arr[:n_rec],
                      omega_ref=omega_ref_arr[:n_rec + 1], t_load=tl_arr[:n_rec],
                      diverged=diverged, tape=tape)


def _rk4_vjp(consts, i_d0, i_q0, w0, v_d, v_q, t_l, dt, l1, l2, l3):
    """Adjoint of one RK4 plant step: returns (adj state, adj v_d, adj v_q).

    Recomputes the stage points and pulls the output adjoint (l1,l2,l3) back
    through the analytic stage Jacobians; the held inputs collect the sum of
    all four stage adjoints through the constant input Jacobian.
    """
    (R, L_d, L_q, Phi, P, J, D,
     R_Ld, Lq_Ld, Ld_Lq, R_Lq, Phi_Lq, dLJ, PPPhi_J, D_J, inv_Ld, inv_Lq) = consts
    half = 0.5 * dt
    k1 = _pmsm_rhs(R, L_d, L_q, Phi, P, J, D, i_d0, i_q0, w0, v_d, v_q, t_l)
    s2 = (i_d0 + half * k1[0], i_q0 + half * k1[1], w0 + half * k1[2])
    k2 = _pmsm_rhs(R, L_d, L_q, Phi, P, J, D, s2[0], s2[1], s2[2], v_d, v_q, t_l)
    s3 = (i_d0 + half * k2[0], i_q0 + half * k2[1], w0 + half * k2[2])
    k3 = _pmsm_rhs(R, L_d, L_q, Phi, P, J, D, s3[0], s3[1], s3[2], v_d, v_q, t_l)
    s4 = (i_d0 + dt * k3[0], i_q0 + dt * k3[1], w0 + dt * k3[2])

    sixth = dt / 6.0
    third = dt / 3.0

    g1_ = sixth * l1
    g2_ = sixth * l2
    g3_ = sixth * l3
    a4 = _jt(s4, g1_, g2_, g3_, R_Ld, Lq_Ld, Ld_Lq, R_Lq, Phi_Lq, dLJ, PPPhi_J, D_J)
    sum1, sum2, sum3 = g1_, g2_, g3_

    g1_ = third * l1 + dt * a4[0]
    g2_ = third * l2 + dt * a4[1]
    g3_ = third * l3 + dt * a4[2]
    a3 = _jt(s3, g1_, g2_, g3_, R_Ld, Lq_Ld, Ld_Lq, R_Lq, Phi_Lq, dLJ, PPPhi_J, D_J)
    sum1 += g1_
    sum2 += g2_
    sum3 += g3_

    g1_ = third * l1 + half * a3[0]
    g2_ = third * l2 + half * a3[1]
    g3_ = third * l3 + half * a3[2]
    a2 = _jt(s2, g1_, g2_, g3_, R_Ld, Lq_Ld, Ld_Lq, R_Lq, Phi_Lq, dLJ, PPPhi_J, D_J)
    sum1 += g1_
    sum2 += g2_
    sum3 += g3_

    g1_ = sixth * l1 + half * a2[0]
    g2_ = sixth * l2 + half * a2[1]
    g3_ = sixth * l3 + half * a2[2]
    a1 = _jt((i_d0, i_q0, w0), g1_, g2_, g3_,
             R_Ld, Lq_Ld, Ld_Lq, R_Lq, Phi_Lq, dLJ, PPPhi_J, D_J)
    sum1 += g1_
    sum2 += g2_
    sum3 += g3_

    adj_s = (l1 + a1[0] + a2[0] + a3[0] + a4[0],
             l2 + a1[1] + a2[1] + a3[1] + a4[1],
             l3 + a1[2] + a2[2] + a3[2] + a4[2])
    return adj_s, sum1 * inv_Ld, sum2 * inv_Lq


def _jt(s, g1, g2, g3, R_Ld, Lq_Ld, Ld_Lq, R_Lq, Phi_Lq, dLJ, PPPhi_J, D_J):
    """Transpose-Jacobian product of the plant field at state s."""
    i_d, i_q, w = s
    return (-R_Ld * g1 - Ld_Lq * w * g2 + dLJ * i_q * g3,
            Lq_Ld * w * g1 - R_Lq * g2 + (PPPhi_J + dLJ * i_d) * g3,
            Lq_Ld * i_q * g1 + (-Ld_Lq * i_d - Phi_Lq) * g2 - D_J * g3)


def _plant_consts(params: MotorParams):
    R, L_d, L_q, Phi, P, J, D = (params.R, params.L_d, params.L_q, params.Phi,
                                 params.P, params.J, params.D)
    return (R, L_d, L_q, Phi, P, J, D,
            R / L_d, L_q / L_d, L_d / L_q, R / L_q, Phi / L_q,
            P * P * (L_d - L_q) / J, P * P * Phi / J, D / J, 1.0 / L_d, 1.0 / L_q)


class _GradAccumulator:
    def __init__(self, rnn: RNNParams):
        n = rnn.hidden_size
        self.a = np.zeros((n, n))
        self.w_in = np.zeros((n, 4))
        self.w_out = np.zeros((2, n))
        self.b_rec = np.zeros(n)
        self.b_out = np.zeros(2)

    def flat(self, rnn: RNNParams) -> np.ndarray:
        # A = M + (1-2*beta) M^T, so dL/dM = G_A + (1-2*beta) G_A^T
        grad_m = self.a + (1.0 - 2.0 * rnn.sym_mix) * self.a.T
        return np.concatenate([grad_m.ravel(), self.w_in.ravel(), self.w_out.ravel(),
                               self.b_rec, self.b_out])


def backward(traj: Trajectory, d_states: np.ndarray,
             d_voltages: np.ndarray) -> np.ndarray:
    """Exact reverse-mode gradient of a scalar trajectory loss.

    d_states[k] is the loss derivative w.r.t. (i_d, i_q, omega_e) at sample k
    (n+1 rows); d_voltages[k] w.r.t. the held (v_d, v_q) of step k (n rows).
    Returns the flat gradient over (rec_raw, w_in, w_out, b_rec, b_out).
    """
    tape = traj.tape
    if tape is None:
        raise ValueError("trajectory carries no tape; simulate with tape_mode set")
    n_rec = traj.n_steps
    d_states = np.asarray(d_states, dtype=float)
    d_voltages = np.asarray(d_voltages, dtype=float)
    if d_states.shape != (n_rec + 1, 3):
        raise ValueError(f"d_states must have shape {(n_rec + 1, 3)}, got {d_states.shape}")
    if d_voltages.shape != (n_rec, 2):
        raise ValueError(f"d_voltages must have shape {(n_rec, 2)}, got {d_voltages.shape}")

    rnn = tape.rnn
    grads = _GradAccumulator(rnn)
    adj_s = (float(d_states[n_rec, 0]), float(d_states[n_rec, 1]), float(d_states[n_rec, 2]))
    adj_h = np.zeros(rnn.hidden_size)
    if n_rec == 0:
        return grads.flat(rnn)

    ctx = _BackwardContext(traj, tape, d_states, d_voltages)
    if tape.mode == "full":
        adj_s, adj_h = _segment_backward(ctx, 0, n_rec, tape.h_full, adj_s, adj_h, grads)
    elif tape.mode == "checkpoint":
        stride = tape.snap_stride
        hi = n_rec
        while hi > 0:
            lo = ((hi - 1) // stride) * stride
            h_seg = _recompute_hidden(ctx, lo, hi, tape.h_snaps[lo // stride])
            adj_s, adj_h = _segment_backward(ctx, lo, hi, h_seg, adj_s, adj_h, grads)
            hi = lo
    else:
        raise ValueError(f"tape mode {tape.mode!r} records no intermediates")
    return grads.flat(rnn)


class _BackwardContext:
    """Hot-loop views of the trajectory shared by the segment passes."""

    def __init__(self, traj: Trajectory, tape: Tape, d_states: np.ndarray,
                 d_voltages: np.ndarray):
        self.consts = _plant_consts(traj.params)
        self.dt = traj.dt
        self.i_d = traj.i_d.tolist()
        self.i_q = traj.i_q.tolist()
        self.w = traj.omega_e.tolist()
        self.v_d = traj.v_d.tolist()
        self.v_q = traj.v_q.tolist()
        self.t_l = traj.t_load.tolist()
        self.omega_ref = traj.omega_ref.tolist()
        self.ds = [col.tolist() for col in d_states.T]
        self.dv = [col.tolist() for col in d_voltages.T]
        self.tape = tape
        self.a_t = np.ascontiguousarray(tape.a_matrix.T)
        self.w_in_t = np.ascontiguousarray(tape.rnn.w_in.T)
        self.w_out = tape.rnn.w_out
        self.w_out_t = np.ascontiguousarray(tape.rnn.w_out.T)
        self.b_out = tape.rnn.b_out
        self.v_max = tape.v_max

    def z_rows(self, lo: int, hi: int) -> np.ndarray:
        return np.stack([np.asarray(self.omega_ref[lo:hi]), np.asarray(self.w[lo:hi]),
                         np.asarray(self.i_d[lo:hi]), np.asarray(self.i_q[lo:hi])], axis=1)


def _recompute_hidden(ctx: _BackwardContext, lo: int, hi: int,
                      h_lo: np.ndarray) -> np.ndarray:
    """Replay the hidden recursion over samples lo..hi from a stored snapshot.

    Bitwise identical to the forward pass: same matrices, same expression.
    """
    tape = ctx.tape
    a_matrix, w_in, b_rec = tape.a_matrix, tape.rnn.w_in, tape.rnn.b_rec
    h_seg = np.empty((hi - lo + 1, tape.rnn.hidden_size))
    h_seg[0] = h_lo
    h = h_lo
    z = np.empty(4)
    for k in range(lo, hi):
        z[0] = ctx.omega_ref[k]
        z[1] = ctx.w[k]
        z[2] = ctx.i_d[k]
        z[3] = ctx.i_q[k]
        h = np.maximum(a_matrix @ h + w_in @ z + b_rec, 0.0)
        h_seg[k - lo + 1] = h
    return h_seg


def _segment_backward(ctx: _BackwardContext, lo: int, hi: int, h_seg: np.ndarray,
                      adj_s: tuple[float, float, float], adj_h: np.ndarray,
                      grads: _GradAccumulator) -> tuple[tuple[float, float, float], np.ndarray]:
    """Reverse steps hi-1..lo; h_seg holds hidden states for samples lo..hi."""
    n_seg = hi - lo
    consts = ctx.consts
    dt = ctx.dt
    v_max = ctx.v_max
    u_rows = h_seg[1:] @ ctx.w_out_t + ctx.b_out          # raw outputs, (n_seg, 2)
    masks = h_seg[1:] > 0.0
    adj_u_rows = np.empty((n_seg, 2))
    adj_pre_rows = np.empty((n_seg, h_seg.shape[1]))
    i_d, i_q, w = ctx.i_d, ctx.i_q, ctx.w
    v_d, v_q, t_l = ctx.v_d, ctx.v_q, ctx.t_l
    ds0, ds1, ds2 = ctx.ds
    dv0, dv1 = ctx.dv
    a1, a2, a3 = adj_s

    for j in range(n_seg - 1, -1, -1):
        k = lo + j
        (p1, p2, p3), gvd, gvq = _rk4_vjp(consts, i_d[k], i_q[k], w[k],
                                          v_d[k], v_q[k], t_l[k], dt, a1, a2, a3)
        avd = dv0[k] + gvd
        avq = dv1[k] + gvq
        # clamp subgradient: the boundary |w| == V_max counts as clamped
        u0 = float(u_rows[j, 0])
        u1 = float(u_rows[j, 1])
        w0 = v_max * u0
        w1 = v_max * u1
        norm = math.hypot(w0, w1)
        if norm < v_max:
            adj_u_rows[j, 0] = v_max * avd
            adj_u_rows[j, 1] = v_max * avq
        else:
            # radial projection: J = (V_max/|w|) (I - ww^T/|w|^2), then the V_max scale
            inv = 1.0 / norm
            n0 = w0 * inv
            n1 = w1 * inv
            dot = n0 * avd + n1 * avq
            scale = v_max * v_max * inv
            adj_u_rows[j, 0] = scale * (avd - n0 * dot)
            adj_u_rows[j, 1] = scale * (avq - n1 * dot)
        adj_h1 = ctx.w_out_t @ adj_u_rows[j] + adj_h
        adj_pre = np.where(masks[j], adj_h1, 0.0)
        adj_pre_rows[j] = adj_pre
        adj_h = ctx.a_t @ adj_pre
        adj_z = (ctx.w_in_t @ adj_pre).tolist()
        a1 = ds0[k] + p1 + adj_z[2]
        a2 = ds1[k] + p2 + adj_z[3]
        a3 = ds2[k] + p3 + adj_z[1]

    grads.a += adj_pre_rows.T @ h_seg[:-1]
    grads.w_in += adj_pre_rows.T @ ctx.z_rows(lo, hi)
    grads.b_rec += adj_pre_rows.sum(axis=0)
    grads.w_out += adj_u_rows.T @ h_seg[1:]
    grads.b_out += adj_u_rows.sum(axis=0)
    return (float(a1), float(a2), float(a3)), adj_h


_TRAJECTORY_COLUMNS = ("t", "i_d", "i_q", "omega_e", "v_d", "v_q", "omega_ref",
                       "T_L", "P_elec", "P_cu", "T_e")


def save_trajectory(path: str | os.PathLike, traj: Trajectory) -> None:
    """One CSV per episode; input columns are empty on the final sample row."""
    n = traj.n_steps
    p_elec = traj.p_elec
    p_cu = traj.p_cu
    torque = traj.torque
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_TRAJECTORY_COLUMNS)
        for k in range(len(traj.t)):
            if k < n:
                inputs = [repr(float(traj.v_d[k])), repr(float(traj.v_q[k])),
                          repr(float(traj.t_load[k])), repr(float(p_elec[k]))]
            else:
                inputs = ["", "", "", ""]
            writer.writerow([repr(float(traj.t[k])), repr(float(traj.i_d[k])),
                             repr(float(traj.i_q[k])), repr(float(traj.omega_e[k])),
                             inputs[0], inputs[1],
                             repr(float(traj.omega_ref[k])), inputs[2], inputs[3],
                             repr(float(p_cu[k])), repr(float(torque[k]))])
