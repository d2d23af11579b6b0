import json
import math

import numpy as np
import pytest

from motorlab import RNNController, RNNParams, init_rnn, load_checkpoint, rnn_step, \
    save_checkpoint, transition_matrix
from motorlab.rnn import param_vector, with_param_vector

from helpers import assert_rel


def make_params(n=6, sym_mix=0.85, seed=0):
    return init_rnn(seed, hidden_size=n, sym_mix=sym_mix)


def test_transition_matrix_beta_half_is_exact():
    import dataclasses
    rnn = dataclasses.replace(make_params(16), sym_mix=0.5)
    a = transition_matrix(rnn)
    expected = rnn.rec_raw - rnn.diag_shift * np.eye(16)
    assert np.array_equal(a, expected)


def test_transition_matrix_beta_one_antisymmetric_shift():
    import dataclasses
    rnn = dataclasses.replace(make_params(16), sym_mix=1.0)
    a = transition_matrix(rnn)
    assert np.array_equal(a + a.T, -2.0 * rnn.diag_shift * np.eye(16))


def test_transition_matrix_beta_zero_symmetric():
    import dataclasses
    rnn = dataclasses.replace(make_params(16), sym_mix=0.0)
    a = transition_matrix(rnn)
    assert np.array_equal(a, a.T)


def test_transition_matrix_symmetric_part_identity():
    rnn = make_params(12, sym_mix=0.85, seed=3)
    a = transition_matrix(rnn)
    sym = (a + a.T) / 2.0
    expected = (1.0 - rnn.sym_mix) * (rnn.rec_raw + rnn.rec_raw.T) \
        - rnn.diag_shift * np.eye(12)
    np.testing.assert_allclose(sym, expected, rtol=0, atol=1e-15)


def test_transition_matrix_beta_one_spectrum():
    import dataclasses
    rnn = dataclasses.replace(make_params(8, seed=5), sym_mix=1.0)
    eigs = np.linalg.eigvals(transition_matrix(rnn))
    np.testing.assert_allclose(eigs.real, -rnn.diag_shift, atol=1e-12)


def test_rnn_step_zero_params(params):
    n = 8
    rnn = RNNParams(rec_raw=np.zeros((n, n)), w_in=np.zeros((n, 4)),
                    w_out=np.zeros((2, n)), b_rec=np.zeros(n), b_out=np.zeros(2))
    v, h = rnn_step(rnn, np.zeros(n), np.array([100.0, 50.0, 1.0, -1.0]), params.V_max)
    assert v == (0.0, 0.0)
    assert np.array_equal(h, np.zeros(n))


def test_rnn_step_output_scaling_and_clamp(params):
    n = 4
    rnn = RNNParams(rec_raw=np.zeros((n, n)), w_in=np.zeros((n, 4)),
                    w_out=np.zeros((2, n)), b_rec=np.zeros(n),
                    b_out=np.array([2.0, 0.0]))
    v, _ = rnn_step(rnn, np.zeros(n), np.zeros(4), params.V_max)
    # raw output (2, 0) scales to (466, 0), then clamps radially to 233
    assert_rel(v[0], params.V_max, 1e-12)
    assert v[1] == 0.0


def test_rnn_step_hidden_nonnegative(params):
    rng = np.random.default_rng(0)
    n = 16
    rnn = RNNParams(rec_raw=rng.normal(0, 0.5, (n, n)), w_in=rng.normal(0, 0.1, (n, 4)),
                    w_out=rng.normal(0, 0.5, (2, n)), b_rec=rng.normal(0, 1, n),
                    b_out=rng.normal(0, 1, 2))
    h = rng.uniform(0, 1, n)
    for _ in range(50):
        z = rng.normal(0, 100, 4)
        v, h = rnn_step(rnn, h, z, params.V_max)
        assert np.all(h >= 0.0)
        assert math.hypot(*v) <= params.V_max * (1 + 1e-12)


def test_rnn_step_piecewise_linear_jacobian(params):
    # away from ReLU/clamp kinks the step is linear in (h, z)
    rng = np.random.default_rng(2)
    rnn = RNNParams(rec_raw=rng.normal(0, 0.1, (8, 8)),
                    w_in=rng.normal(0, 2e-4, (8, 4)),
                    w_out=rng.normal(0, 1e-2, (2, 8)),
                    b_rec=np.full(8, 0.3), b_out=np.array([0.01, -0.02]))
    h0 = np.full(8, 0.2)
    z0 = np.array([200.0, 180.0, -1.0, 2.0])
    a = transition_matrix(rnn)
    v0, h1 = rnn_step(rnn, h0, z0, params.V_max)
    assert 0.0 < math.hypot(*v0) < params.V_max  # inside the clamp circle
    mask = (h1 > 0).astype(float)
    jac_h = (rnn.w_out * mask) @ a * params.V_max        # dv/dh0
    eps = 1e-5
    for i in range(8):
        bump = np.zeros(8)
        bump[i] = eps
        vp, _ = rnn_step(rnn, h0 + bump, z0, params.V_max)
        vm, _ = rnn_step(rnn, h0 - bump, z0, params.V_max)
        fd = (np.array(vp) - np.array(vm)) / (2 * eps)
        np.testing.assert_allclose(fd, jac_h[:, i], rtol=1e-5, atol=1e-7)


def test_init_rnn_bounds_and_biases():
    rnn = init_rnn(0, hidden_size=128)
    bound_m = 0.1 * math.sqrt(6.0 / (2 * 128))
    assert_rel(bound_m, 0.015309, 1e-4)
    assert np.max(np.abs(rnn.rec_raw)) <= bound_m
    assert np.max(np.abs(rnn.w_in)) <= 1e-6 * math.sqrt(6.0 / (4 + 128))
    assert np.max(np.abs(rnn.w_out)) <= 1e-6
    assert np.all(rnn.b_rec == 0.0) and np.all(rnn.b_out == 0.0)
    assert rnn.sym_mix == 0.85 and rnn.diag_shift == 0.01


def test_init_rnn_deterministic():
    a = init_rnn(123, hidden_size=16)
    b = init_rnn(123, hidden_size=16)
    assert np.array_equal(a.rec_raw, b.rec_raw)
    assert np.array_equal(a.w_in, b.w_in)
    assert np.array_equal(a.w_out, b.w_out)
    c = init_rnn(124, hidden_size=16)
    assert not np.array_equal(a.rec_raw, c.rec_raw)


def test_param_vector_roundtrip():
    rnn = make_params(8, seed=9)
    vec = param_vector(rnn)
    assert vec.shape == (rnn.n_params,)
    rebuilt = with_param_vector(rnn, vec)
    assert np.array_equal(rebuilt.rec_raw, rnn.rec_raw)
    assert np.array_equal(rebuilt.w_out, rnn.w_out)
    bumped = with_param_vector(rnn, vec + 1.0)
    assert np.array_equal(bumped.rec_raw, rnn.rec_raw + 1.0)


def test_checkpoint_roundtrip(tmp_path):
    rnn = make_params(8, seed=4)
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, rnn, seed=4, meta={"note": "unit"})
    loaded, meta = load_checkpoint(path)
    assert np.array_equal(loaded.rec_raw, rnn.rec_raw)
    assert np.array_equal(loaded.w_in, rnn.w_in)
    assert np.array_equal(loaded.b_out, rnn.b_out)
    assert loaded.sym_mix == rnn.sym_mix and loaded.diag_shift == rnn.diag_shift
    assert meta["seed"] == 4 and meta["note"] == "unit"
    payload = json.loads(path.read_text())
    assert payload["format_version"] == 1
    assert payload["N_h"] == 8
    assert len(payload["M"]) == 64  # row-major flat arrays


def test_checkpoint_version_mismatch(tmp_path):
    path = tmp_path / "bad.json"
    payload = {"format_version": 99, "N_h": 2, "beta": 0.85, "gamma": 0.01,
               "seed": 0, "M": [0] * 4, "B": [0] * 8, "C": [0] * 4,
               "b1": [0, 0], "b2": [0, 0]}
    path.write_text(json.dumps(payload))
    with pytest.raises(ValueError, match="format_version"):
        load_checkpoint(path)


def test_controller_wrapper_matches_step(params):
    rnn = make_params(8, seed=6)
    ctrl = RNNController(rnn, params)
    h = ctrl.initial_state()
    assert np.array_equal(h, np.zeros(8))
    state = (1.0, -2.0, 300.0)
    v_d, v_q, h1 = ctrl.step(h, 250.0, state, 2e-4)
    z = np.array([250.0, 300.0, 1.0, -2.0])
    (v_d2, v_q2), h2 = rnn_step(rnn, np.zeros(8), z, params.V_max)
    assert (v_d, v_q) == (v_d2, v_q2)
    assert np.array_equal(h1, h2)
