"""Shared stubs and assertion helpers for the test suite."""


class ZeroController:
    """Controller stub that never applies any voltage."""

    name = "zero"

    def initial_state(self):
        return None

    def step(self, ctrl_state, omega_ref, state, dt):
        return 0.0, 0.0, None


class ConstantController:
    """Controller stub holding a fixed dq voltage."""

    name = "constant"

    def __init__(self, v_d: float, v_q: float):
        self.v = (v_d, v_q)

    def initial_state(self):
        return None

    def step(self, ctrl_state, omega_ref, state, dt):
        return self.v[0], self.v[1], None


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def assert_rel(a: float, b: float, tol: float) -> None:
    assert rel_err(a, b) <= tol, f"{a} vs {b}: relative error {rel_err(a, b):.3e} > {tol}"
