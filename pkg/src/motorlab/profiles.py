"""Canned experiment profiles: the full benchmark setup and two desk-scale ones.

The full profile is the headline configuration (N_h=128, dt=2e-4, t_sim=2 s,
1000 epochs, 1.0 s ramp on the D1-like machine). The reduced profile is the
compute-bounded end-to-end target used by the acceptance suite; the smoke
profile exists for schedule/determinism checks and quick iteration. Reduced
and smoke shrink the time axis (shorter t_sim with proportionally shorter
t_ramp) and cap the speed range so their references stay reachable within
the shortened episodes; both keep the plant's electrical constants.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from .plant import D1_PARAMS, MotorParams
from .rollout import SimConfig
from .training import TrainConfig


@dataclass(frozen=True)
class Profile:
    name: str
    params: MotorParams
    sim: SimConfig
    train: TrainConfig
    lattice: tuple[int, int]


def full_profile(seed: int = 0) -> Profile:
    return Profile(
        name="full",
        params=D1_PARAMS,
        sim=SimConfig(dt=2e-4, n_steps=10_000),
        train=TrainConfig(n_batch=8, epochs=1000, warmup_epochs=50, lr=1e-3,
                          seed=seed, hidden_size=128, t_ramp=1.0),
        lattice=(10, 10),
    )


def reduced_profile(seed: int = 0) -> Profile:
    """Desk-scale end-to-end target: N_h=32, 2500 steps (0.5 s), 200 epochs."""
    return Profile(
        name="reduced",
        params=replace(D1_PARAMS, f_max=3000.0),
        sim=SimConfig(dt=2e-4, n_steps=2500),
        train=TrainConfig(n_batch=8, epochs=200, warmup_epochs=50, lr=5e-3,
                          seed=seed, hidden_size=32, t_ramp=0.25, eval_every=10,
                          checkpoint_every=0, eval_lattice=(4, 4)),
        lattice=(4, 4),
    )


def smoke_profile(seed: int = 0, epochs: int = 20) -> Profile:
    """Minutes-scale loop exerciser: N_h=8, 250 steps (0.05 s)."""
    return Profile(
        name="smoke",
        params=replace(D1_PARAMS, f_max=1200.0, T_Lmax=0.5),
        sim=SimConfig(dt=2e-4, n_steps=250),
        train=TrainConfig(n_batch=8, epochs=epochs, warmup_epochs=min(50, epochs),
                          lr=5e-3, seed=seed, hidden_size=8, t_ramp=0.02,
                          eval_every=max(epochs // 2, 1), checkpoint_every=0,
                          eval_lattice=(2, 2)),
        lattice=(2, 2),
    )
