"""Differentiable closed-loop IPMSM speed-control laboratory.

A dq-frame IPMSM plant simulated by fixed-step RK4 under either a cascaded
PI field-oriented controller (maximum-current or MTPA current references) or
a ReLU RNN voltage controller with a Lipschitz-parameterized transition
matrix. The RNN trains by exact gradient descent through the unrolled
rollout against speed-tracking, overshoot, final-error, and copper-loss
terms; evaluation produces settling/efficiency maps, Newton equilibrium
checks, parameter-mismatch tables, and fluctuating-load studies.
"""

__version__ = "0.1.0"

from .plant import (D1_PARAMS, MotorParams, PlantState, VoltageInput, clamp_voltage,
                    dc_motor_derivative, electrical_torque, omega_e_to_rpm,
                    pmsm_derivative, pmsm_jacobian, power_balance_residual,
                    power_quantities, rpm_to_omega_e)
from .references import (OperatingPoint, ReferenceProfile, TorqueProfile,
                         evaluation_lattice, reference_at, sample_initial_state,
                         sample_operating_points, torque_at)
from .pifoc import (DEFAULT_GAINS, PIController, PIGains, PIState, StrategyError,
                    current_reference, pifoc_step, with_limiters)
from .rnn import (RNNController, RNNParams, init_rnn, load_checkpoint, param_vector,
                  rnn_step, save_checkpoint, transition_matrix, with_param_vector)
from .rollout import (SimConfig, Tape, Trajectory, backward, rk4_step, save_trajectory,
                      simulate)
from .training import (AdamState, LossBreakdown, TrainConfig, adam_step, loss_breakdown,
                       loss_copper, loss_final, loss_overshoot, loss_seeds, loss_speed,
                       train)
from .evaluation import (MismatchRow, ResponseMetrics, SweepResult, efficiency,
                         equilibrium_distance, find_equilibria, fluctuating_torque_eval,
                         mismatch_table, response_metrics, settling_time_2pct, sweep)
