"""Command-line interface: train / eval / mismatch / fluct / equilibria.

Every command loads flat key=value configs, writes a manifest.json into the
output directory before any long computation, and drops its results as CSV
(plus a figures_manifest.json that the figures/ renderer consumes).

Exit codes: 0 success, 1 usage or configuration error, 2 when more than half
of the requested simulation points diverged.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources

from . import __version__
from .configfile import ConfigError, write_manifest
from .evaluation import (fluctuating_torque_eval, find_equilibria, mismatch_table,
                         save_fluct_csv, save_mismatch_csv, save_sweep_csv, sweep)
from .pifoc import PIController, PIGains, StrategyError, with_limiters
from .plant import MotorParams, VoltageInput
from .references import evaluation_lattice, sample_operating_points
from .rnn import RNNController, load_checkpoint
from .rollout import SimConfig, save_trajectory, simulate
from .training import TrainConfig, train

PI_TOKENS = ("pifoc:mc", "pifoc:mtpa")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad usage; this tool reserves 2 for
    # runtime divergence, so route parse failures through exit code 1.
    def error(self, message: str):
        raise UsageError(message)


def _default_config(name: str) -> str:
    return str(resources.files("motorlab.data").joinpath(name))


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None,
                        help="motor config file (default: built-in D1-like machine)")
    parser.add_argument("--gains", default=None,
                        help="PI gain config file (default: built-in tuned gains)")
    parser.add_argument("--out", required=True, metavar="DIR", help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--steps", type=int, default=10_000,
                        help="simulation steps per episode (t_sim = steps * dt)")
    parser.add_argument("--dt", type=float, default=2e-4, help="integration step, s")
    parser.add_argument("--t-ramp", type=float, default=1.0, dest="t_ramp",
                        help="reference acceleration time, s")
    parser.add_argument("--lattice", default="10x10", metavar="NxM",
                        help="speed x torque lattice resolution")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker processes for independent sweep points")
    parser.add_argument("--verbose", action="store_true")


def _parse_lattice(text: str) -> tuple[int, int]:
    try:
        n, m = text.lower().split("x")
        return int(n), int(m)
    except ValueError as exc:
        raise UsageError(f"--lattice expects NxM (e.g. 10x10), got {text!r}") from exc


def _load_setup(args) -> tuple[MotorParams, PIGains, str, str]:
    motor_path = args.config or _default_config("motor_d1.cfg")
    gains_path = args.gains or _default_config("pifoc_default.cfg")
    return (MotorParams.from_config(motor_path), PIGains.from_config(gains_path),
            motor_path, gains_path)


def _resolve_controller(token: str, params: MotorParams, gains: PIGains,
                        limiters: bool):
    """A controller token is 'pifoc:mc', 'pifoc:mtpa', or a checkpoint path."""
    if token in PI_TOKENS:
        strategy = token.split(":", 1)[1]
        return PIController(with_limiters(gains, limiters), strategy, params), None
    if token.startswith("pifoc:"):
        raise UsageError(f"unknown controller token {token!r}; "
                         f"expected one of {PI_TOKENS} or a checkpoint path")
    if not os.path.exists(token):
        raise UsageError(f"controller {token!r} is neither a known token nor a file")
    rnn, meta = load_checkpoint(token)
    return RNNController(rnn, params, name=f"rnn:{os.path.basename(token)}"), token


def _require_checkpoint(args, params: MotorParams):
    if not args.checkpoint:
        raise UsageError("--checkpoint PATH is required for this command")
    rnn, _ = load_checkpoint(args.checkpoint)
    return RNNController(rnn, params, name=f"rnn:{os.path.basename(args.checkpoint)}")


def _write_figures_manifest(out_dir: str, specs: list[dict]) -> None:
    path = os.path.join(out_dir, "figures_manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"figures": specs}, fh, indent=2)
        fh.write("\n")


def cmd_train(args) -> int:
    params, _, motor_path, gains_path = _load_setup(args)
    sim = SimConfig(dt=args.dt, n_steps=args.steps)
    lat = _parse_lattice(args.lattice)
    cfg = TrainConfig(n_batch=args.batch, epochs=args.epochs,
                      warmup_epochs=args.warmup, lr=args.lr, seed=args.seed,
                      hidden_size=args.hidden, t_ramp=args.t_ramp,
                      tape_mode=args.tape, eval_every=args.eval_every,
                      checkpoint_every=args.checkpoint_every, eval_lattice=lat,
                      random_initial_states=not args.zero_init)
    os.makedirs(args.out, exist_ok=True)
    write_manifest(args.out, "train", configs={"motor": motor_path},
                   seeds={"master": cfg.seed},
                   extra={"sim": {"dt": sim.dt, "n_steps": sim.n_steps},
                          "train_config": {k: getattr(cfg, k) for k in
                                           ("n_batch", "epochs", "warmup_epochs", "lr",
                                            "hidden_size", "sym_mix", "diag_shift",
                                            "t_ramp", "speed_floor", "power_floor",
                                            "tape_mode", "random_initial_states")}})
    result = train(params, sim, cfg, args.out)
    _write_figures_manifest(args.out, [
        {"kind": "training-curve", "inputs": [result.metrics_path],
         "output": os.path.join(args.out, "training_loss.png"),
         "title": "training loss terms"},
    ])
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"best checkpoint (epoch {result.best_epoch}): {result.best_checkpoint_path}")
    print(f"metrics: {result.metrics_path}")
    return 0


def cmd_eval(args) -> int:
    params, gains, motor_path, gains_path = _load_setup(args)
    controller, checkpoint = _resolve_controller(args.controller, params, gains,
                                                 args.limiters)
    sim = SimConfig(dt=args.dt, n_steps=args.steps)
    n_speed, n_torque = _parse_lattice(args.lattice)
    lattice = evaluation_lattice(params, n_speed, n_torque, t_ramp=args.t_ramp)
    os.makedirs(args.out, exist_ok=True)
    write_manifest(args.out, "eval", configs={"motor": motor_path, "gains": gains_path},
                   seeds={"master": args.seed}, checkpoint=checkpoint,
                   extra={"controller": controller.name, "lattice": args.lattice,
                          "t_ramp": args.t_ramp,
                          "sim": {"dt": sim.dt, "n_steps": sim.n_steps}})
    result = sweep(controller, params, lattice, sim, n_workers=args.threads,
                   metadata={"controller": controller.name})
    csv_path = os.path.join(args.out, "sweep.csv")
    save_sweep_csv(csv_path, result)
    specs = [
        {"kind": "heatmap", "inputs": [csv_path], "value": "settling_time_s",
         "output": os.path.join(args.out, "settling_map.png"),
         "title": f"2% settling time [s], {controller.name}"},
        {"kind": "heatmap", "inputs": [csv_path], "value": "efficiency",
         "output": os.path.join(args.out, "efficiency_map.png"),
         "title": f"motor efficiency, {controller.name}"},
    ]
    if args.trajectories:
        traj_dir = os.path.join(args.out, "trajectories")
        os.makedirs(traj_dir, exist_ok=True)
        traj_paths = []
        for index, point in enumerate(lattice):
            traj = simulate(controller, params, point, None, sim)
            path = os.path.join(traj_dir, f"episode_{index:03d}.csv")
            save_trajectory(path, traj)
            traj_paths.append(path)
        specs.append({"kind": "line-overlay", "inputs": traj_paths, "value": "omega_e",
                      "reference": "omega_ref",
                      "output": os.path.join(args.out, "speed_responses.png"),
                      "title": f"speed responses, {controller.name}"})
        specs.append({"kind": "vector-plane", "inputs": traj_paths,
                      "output": os.path.join(args.out, "current_plane.png"),
                      "title": f"current vector space, {controller.name}"})
    _write_figures_manifest(args.out, specs)
    print(f"sweep: {csv_path} (settled {result.settled_fraction:.0%}, "
          f"diverged {result.diverged_fraction:.0%})")
    return 2 if result.diverged_fraction > 0.5 else 0


def cmd_mismatch(args) -> int:
    params, gains, motor_path, gains_path = _load_setup(args)
    controller = _require_checkpoint(args, params)
    sim = SimConfig(dt=args.dt, n_steps=args.steps)
    n_speed, n_torque = _parse_lattice(args.lattice)
    lattice = evaluation_lattice(params, n_speed, n_torque, t_ramp=args.t_ramp)
    os.makedirs(args.out, exist_ok=True)
    write_manifest(args.out, "mismatch", configs={"motor": motor_path},
                   seeds={"master": args.seed}, checkpoint=args.checkpoint,
                   extra={"lattice": args.lattice, "t_ramp": args.t_ramp,
                          "sim": {"dt": sim.dt, "n_steps": sim.n_steps}})
    rows = mismatch_table(controller, params, lattice, sim, n_workers=args.threads)
    csv_path = os.path.join(args.out, "mismatch.csv")
    save_mismatch_csv(csv_path, rows)
    _write_figures_manifest(args.out, [])
    print(f"mismatch table: {csv_path}")
    return 0


def cmd_fluct(args) -> int:
    params, gains, motor_path, gains_path = _load_setup(args)
    controller = _require_checkpoint(args, params)
    sim = SimConfig(dt=args.dt, n_steps=args.steps)
    points = sample_operating_points(params, args.points, (args.seed, 9), args.t_ramp)
    os.makedirs(args.out, exist_ok=True)
    write_manifest(args.out, "fluct", configs={"motor": motor_path},
                   seeds={"master": args.seed}, checkpoint=args.checkpoint,
                   extra={"fluctuation_rel": args.fluctuation, "points": args.points,
                          "t_ramp": args.t_ramp,
                          "sim": {"dt": sim.dt, "n_steps": sim.n_steps}})
    results = fluctuating_torque_eval(controller, params, points, sim,
                                      fluctuation_rel=args.fluctuation, seed=args.seed)
    csv_path = os.path.join(args.out, "fluct.csv")
    save_fluct_csv(csv_path, results, args.fluctuation)
    traj_paths = []
    for index, res in enumerate(results):
        path = os.path.join(args.out, f"fluct_episode_{index:03d}.csv")
        save_trajectory(path, res.trajectory)
        traj_paths.append(path)
    _write_figures_manifest(args.out, [
        {"kind": "line-overlay", "inputs": traj_paths, "value": "omega_e",
         "reference": "omega_ref", "output": os.path.join(args.out, "fluct_speed.png"),
         "title": "speed under fluctuating load"},
        {"kind": "line-overlay", "inputs": traj_paths, "value": "T_e",
         "reference": "T_L", "output": os.path.join(args.out, "fluct_torque.png"),
         "title": "electrical vs load torque"},
    ])
    diverged = sum(res.diverged for res in results)
    print(f"fluctuating-torque eval: {csv_path}")
    return 2 if diverged > len(results) / 2 else 0


def cmd_equilibria(args) -> int:
    params, _, motor_path, _ = _load_setup(args)
    os.makedirs(args.out, exist_ok=True)
    write_manifest(args.out, "equilibria", configs={"motor": motor_path},
                   seeds={}, extra={"v_d": args.vd, "v_q": args.vq, "t_load": args.tl})
    roots = find_equilibria(params, VoltageInput(args.vd, args.vq), args.tl)
    csv_path = os.path.join(args.out, "equilibria.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("i_d_A,i_q_A,omega_e_rad_s\n")
        for root in roots:
            fh.write(f"{root.i_d!r},{root.i_q!r},{root.omega_e!r}\n")
    _write_figures_manifest(args.out, [])
    print(f"{len(roots)} equilibria: {csv_path}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="motorlab",
                     description="differentiable IPMSM speed-control laboratory")
    parser.add_argument("--version", action="version", version=f"motorlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the RNN controller",
                             description="Train the RNN voltage controller by gradient "
                                         "descent through the unrolled rollout.")
    _add_common(p_train)
    p_train.add_argument("--epochs", type=int, default=1000)
    p_train.add_argument("--warmup", type=int, default=50,
                         help="epochs before the copper term joins the loss")
    p_train.add_argument("--hidden", type=int, default=128, help="RNN hidden size")
    p_train.add_argument("--batch", type=int, default=8)
    p_train.add_argument("--lr", type=float, default=1e-3)
    p_train.add_argument("--tape", choices=("full", "checkpoint"), default="full",
                         help="gradient tape mode (checkpoint = sqrt-memory)")
    p_train.add_argument("--eval-every", type=int, default=25, dest="eval_every")
    p_train.add_argument("--checkpoint-every", type=int, default=100,
                         dest="checkpoint_every")
    p_train.add_argument("--zero-init", action="store_true", dest="zero_init",
                         help="start every training episode from the zero state")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="sweep a controller over the speed-torque plane")
    p_eval.add_argument("controller",
                        help="checkpoint path, 'pifoc:mc', or 'pifoc:mtpa'")
    _add_common(p_eval)
    p_eval.add_argument("--limiters", action="store_true",
                        help="enable PI reference limiters and anti-windup bounds")
    p_eval.add_argument("--trajectories", action="store_true",
                        help="also export one trajectory CSV per lattice point")
    p_eval.set_defaults(func=cmd_eval)

    p_mis = sub.add_parser("mismatch", help="plant-parameter mismatch table")
    _add_common(p_mis)
    p_mis.add_argument("--checkpoint", required=False, default=None, metavar="PATH")
    p_mis.set_defaults(func=cmd_mismatch)

    p_fluct = sub.add_parser("fluct", help="fluctuating load-torque evaluation")
    _add_common(p_fluct)
    p_fluct.add_argument("--checkpoint", required=False, default=None, metavar="PATH")
    p_fluct.add_argument("--fluctuation", type=float, default=0.3,
                         help="relative torque fluctuation amplitude")
    p_fluct.add_argument("--points", type=int, default=4,
                         help="number of sampled operating points")
    p_fluct.set_defaults(func=cmd_fluct)

    p_eq = sub.add_parser("equilibria", help="Newton equilibria under fixed inputs")
    _add_common(p_eq)
    p_eq.add_argument("--vd", type=float, default=0.0, help="held d-axis voltage, V")
    p_eq.add_argument("--vq", type=float, default=0.0, help="held q-axis voltage, V")
    p_eq.add_argument("--tl", type=float, default=0.0, help="held load torque, N m")
    p_eq.set_defaults(func=cmd_equilibria)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False)
                            else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, StrategyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
