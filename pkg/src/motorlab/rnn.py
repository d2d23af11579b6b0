"""ReLU recurrent voltage controller with a Lipschitz-parameterized transition matrix.

The controller maps z = (reference speed, speed, i_d, i_q) to a dq voltage:

    h' = relu(A h + W_in z + b_rec)
    v  = clamp(V_max * (W_out h' + b_out))        onto the V_max circle

A is derived from the trainable raw matrix by

    A = (1-beta) (M + M^T) + beta (M - M^T) - gamma I

with beta in [0,1] blending symmetric/antisymmetric parts and gamma > 0
pulling the diagonal down. The network works in per-unit voltage; the V_max
scale and the clamp are part of the differentiable graph.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .plant import MotorParams, PlantState, clamp_voltage
from .references import SeedLike, _entropy

CHECKPOINT_FORMAT_VERSION = 1
N_INPUTS = 4
N_OUTPUTS = 2


@dataclass(frozen=True)
class RNNParams:
    rec_raw: np.ndarray    # trainable raw transition matrix, (N_h, N_h)
    w_in: np.ndarray       # input weights, (N_h, 4)
    w_out: np.ndarray      # output weights, (2, N_h)
    b_rec: np.ndarray      # hidden bias, (N_h,)
    b_out: np.ndarray      # output bias, (2,)
    sym_mix: float = 0.85  # beta
    diag_shift: float = 0.01  # gamma

    def __post_init__(self) -> None:
        n = self.rec_raw.shape[0]
        shapes = {"rec_raw": (n, n), "w_in": (n, N_INPUTS), "w_out": (N_OUTPUTS, n),
                  "b_rec": (n,), "b_out": (N_OUTPUTS,)}
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"RNNParams.{name} must have shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"RNNParams.{name} contains non-finite entries")
        if not 0.0 <= self.sym_mix <= 1.0:
            raise ValueError("sym_mix must lie in [0, 1]")
        if not self.diag_shift > 0.0:
            raise ValueError("diag_shift must be positive")

    @property
    def hidden_size(self) -> int:
        return self.rec_raw.shape[0]

    @property
    def n_params(self) -> int:
        n = self.hidden_size
        return n * n + n * N_INPUTS + N_OUTPUTS * n + n + N_OUTPUTS


def transition_matrix(rnn: RNNParams) -> np.ndarray:
    """Effective A from the raw matrix.

    Written as M + (1-2 beta) M^T - gamma I, which equals the blend
    (1-beta)(M+M^T) + beta(M-M^T) - gamma I term for term and keeps the
    beta = 1/2 case exactly A == M - gamma I in floating point.
    """
    m = rnn.rec_raw
    a = m + (1.0 - 2.0 * rnn.sym_mix) * m.T
    a[np.diag_indices_from(a)] -= rnn.diag_shift
    return a


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: tuple[int, ...], gain: float) -> np.ndarray:
    bound = gain * math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_rnn(seed: SeedLike, hidden_size: int = 128, sym_mix: float = 0.85,
             diag_shift: float = 0.01) -> RNNParams:
    """Fresh controller parameters.

    Raw transition matrix: Xavier uniform with gain 0.1 (fan_in = fan_out =
    hidden size). Input weights: Xavier uniform with gain 1e-6 and fans
    (4, hidden size). Output weights: U[-1e-6, 1e-6] (near-zero start).
    Biases start at zero. Draw order: rec_raw, w_in, w_out.
    """
    if hidden_size < 1:
        raise ValueError("hidden_size must be >= 1")
    rng = np.random.default_rng(_entropy(seed))
    rec_raw = xavier_uniform(rng, hidden_size, hidden_size, (hidden_size, hidden_size), 0.1)
    w_in = xavier_uniform(rng, N_INPUTS, hidden_size, (hidden_size, N_INPUTS), 1e-6)
    w_out = rng.uniform(-1e-6, 1e-6, size=(N_OUTPUTS, hidden_size))
    return RNNParams(rec_raw=rec_raw, w_in=w_in, w_out=w_out,
                     b_rec=np.zeros(hidden_size), b_out=np.zeros(N_OUTPUTS),
                     sym_mix=sym_mix, diag_shift=diag_shift)


def rnn_step(rnn: RNNParams, h: np.ndarray, z: np.ndarray, v_max: float,
             a_matrix: np.ndarray | None = None) -> tuple[tuple[float, float], np.ndarray]:
    """One controller update: returns the clamped voltage and the new hidden state."""
    if a_matrix is None:
        a_matrix = transition_matrix(rnn)
    h_new = np.maximum(a_matrix @ h + rnn.w_in @ z + rnn.b_rec, 0.0)
    u = rnn.w_out @ h_new + rnn.b_out
    v = clamp_voltage((v_max * float(u[0]), v_max * float(u[1])), v_max)
    return (v.v_d, v.v_q), h_new


class RNNController:
    """Rollout-facing wrapper; caches the derived transition matrix."""

    def __init__(self, rnn: RNNParams, params: MotorParams, name: str = "rnn"):
        self.rnn = rnn
        self.v_max = params.V_max
        self.a_matrix = transition_matrix(rnn)
        self.name = name
        self._z = np.empty(N_INPUTS)

    def initial_state(self) -> np.ndarray:
        return np.zeros(self.rnn.hidden_size)

    def step(self, ctrl_state: np.ndarray, omega_ref: float, state: PlantState,
             dt: float) -> tuple[float, float, np.ndarray]:
        z = self._z
        z[0] = omega_ref
        z[1] = state[2]
        z[2] = state[0]
        z[3] = state[1]
        (v_d, v_q), h_new = rnn_step(self.rnn, ctrl_state, z, self.v_max, self.a_matrix)
        return v_d, v_q, h_new


# --- flat parameter vector (layout: rec_raw, w_in, w_out, b_rec, b_out) ---

def param_vector(rnn: RNNParams) -> np.ndarray:
    return np.concatenate([rnn.rec_raw.ravel(), rnn.w_in.ravel(), rnn.w_out.ravel(),
                           rnn.b_rec, rnn.b_out])


def with_param_vector(rnn: RNNParams, vec: np.ndarray) -> RNNParams:
    if vec.shape != (rnn.n_params,):
        raise ValueError(f"expected parameter vector of length {rnn.n_params}, got {vec.shape}")
    n = rnn.hidden_size
    parts = np.split(vec.astype(float, copy=True),
                     np.cumsum([n * n, n * N_INPUTS, N_OUTPUTS * n, n]))
    return replace(rnn, rec_raw=parts[0].reshape(n, n), w_in=parts[1].reshape(n, N_INPUTS),
                   w_out=parts[2].reshape(N_OUTPUTS, n), b_rec=parts[3], b_out=parts[4])


# --- checkpoint container ---

def save_checkpoint(path: str | os.PathLike, rnn: RNNParams, seed: int | None = None,
                    meta: dict | None = None) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "N_h": rnn.hidden_size,
        "beta": rnn.sym_mix,
        "gamma": rnn.diag_shift,
        "seed": seed,
        "M": rnn.rec_raw.ravel().tolist(),
        "B": rnn.w_in.ravel().tolist(),
        "C": rnn.w_out.ravel().tolist(),
        "b1": rnn.b_rec.tolist(),
        "b2": rnn.b_out.tolist(),
    }
    if meta:
        payload["meta"] = meta
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path: str | os.PathLike) -> tuple[RNNParams, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format_version {version!r} "
                         f"(this build reads version {CHECKPOINT_FORMAT_VERSION})")
    n = int(payload["N_h"])
    rnn = RNNParams(
        rec_raw=np.array(payload["M"], dtype=float).reshape(n, n),
        w_in=np.array(payload["B"], dtype=float).reshape(n, N_INPUTS),
        w_out=np.array(payload["C"], dtype=float).reshape(N_OUTPUTS, n),
        b_rec=np.array(payload["b1"], dtype=float),
        b_out=np.array(payload["b2"], dtype=float),
        sym_mix=float(payload["beta"]),
        diag_shift=float(payload["gamma"]),
    )
    meta = {"seed": payload.get("seed")}
    meta.update(payload.get("meta") or {})
    return rnn, meta
