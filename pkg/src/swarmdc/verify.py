"""Self-contained invariant checks behind the ``verify`` CLI subcommand.

Each check is quick and deterministic; the runner prints one line per
check and the subcommand exits nonzero if any fails.  The full test suite
is the authoritative gate; this is the installed smoke check.
"""

from __future__ import annotations

import numpy as np

from .agents import AgentState, RngStream, em_step_integrator, reflect_boundary
from .control import AgentChannel, ControlParams, backstepping_input, build_control_fields
from .fields import (
    DiffusionMatrix,
    Grid,
    ScalarField,
    VectorField,
    gradient,
    jacobian,
    laplacian,
    mass,
)
from .fpk import FpkState, check_cfl, fpk_step
from .kde import KdeConfig, kde_estimate


def _affine_stencils() -> str | None:
    g = Grid(24, 20)
    X, Y = g.meshgrid()
    f = ScalarField(g, 2.0 * X + 3.0 * Y)
    gf = gradient(f)
    if abs(gf.x.values - 2.0).max() > 1e-12 or abs(gf.y.values - 3.0).max() > 1e-12:
        return "gradient not exact on an affine field"
    if abs(laplacian(f).values[1:-1, 1:-1]).max() > 1e-9:
        return "laplacian not zero on an affine field interior"
    jac = jacobian(VectorField(f, ScalarField(g, 5.0 * X)))
    if abs(jac.yx.values - 5.0).max() > 1e-12:
        return "jacobian not exact on an affine field"
    return None


def _conservation() -> str | None:
    rng = np.random.default_rng(1)
    g = Grid(24, 24)
    X, Y = g.meshgrid()
    p0 = 1.0 + 0.3 * np.sin(2 * np.pi * X) * np.cos(np.pi * Y)
    state = FpkState.from_density(ScalarField(g, p0))
    v = VectorField.from_arrays(
        g, 0.05 * np.sin(np.pi * X), 0.05 * np.cos(np.pi * X) * np.sin(np.pi * Y)
    )
    D = DiffusionMatrix.isotropic(5e-4)
    for _ in range(200):
        state = fpk_step(state, v, D, 0.02)
    if abs(mass(state.p) - 1.0) > 1e-12:
        return f"mass drift {abs(mass(state.p) - 1.0)}"
    if state.p.values.min() < -1e-12:
        return f"negative density {state.p.values.min()}"
    return None


def _cfl_arithmetic() -> str | None:
    g = Grid(30, 30)
    zero = VectorField.from_arrays(g, np.zeros((30, 30)), np.zeros((30, 30)))
    ok, _ = check_cfl(zero, DiffusionMatrix.isotropic(1e-3), 0.02)
    if not ok:
        return "paper-scale diffusion rejected"
    fast = VectorField.from_arrays(g, np.full((30, 30), 30.0), np.zeros((30, 30)))
    ok, max_dt = check_cfl(fast, DiffusionMatrix.isotropic(0.0), 0.02)
    if ok or not 0 < max_dt < 0.02:
        return "fast advection not rejected"
    return None


def _reflection() -> str | None:
    x, v = reflect_boundary(np.array([[1.01, 0.5]]), np.array([[0.3, 0.0]]))
    if not (np.allclose(x, [[0.99, 0.5]]) and np.allclose(v, [[-0.3, 0.0]])):
        return "single-axis mirror wrong"
    x, v = reflect_boundary(np.array([[-0.02, 1.03]]), np.array([[-1.0, 2.0]]))
    if not (np.allclose(x, [[0.02, 0.97]]) and np.allclose(v, [[1.0, -2.0]])):
        return "two-axis mirror wrong"
    return None


def _formula_oracle() -> str | None:
    rng = np.random.default_rng(7)
    g = Grid(8, 8)
    D = DiffusionMatrix(rng.normal(0, 0.1, (2, 2)))
    p_star = ScalarField(g, np.ones((8, 8)))
    params = ControlParams(alpha=0.003, k=0.008, eps1=2.0, eps2=2.0, p_star=p_star)
    for _ in range(200):
        vd = VectorField.from_arrays(g, rng.normal(0, 1, (8, 8)), rng.normal(0, 1, (8, 8)))
        p = ScalarField(g, rng.uniform(0.5, 2.0, (8, 8)))
        cf = build_control_fields(vd, None, 0.02, D, p, params)
        x = rng.uniform(0, 1, 2)
        v = rng.normal(0, 1, 2)
        ch = AgentChannel(g2=rng.normal(0, 0.5, (2, 2)))
        u = backstepping_input(x, v, cf, ch, params, D)
        # straight-line transcription on the same sampled values
        from .control import sample_control_fields
        s = sample_control_fields(cf, x[None])
        ve = v - s.v_d[0]
        A = ch.g2 - s.jac_v_d[0] @ D.g1
        tr = float(np.trace(A.T @ A))
        expect = (
            -params.k * ve + s.dv_d_dt[0] + s.jac_v_d[0] @ v + s.G[0]
            - s.grad_phi_term[0] / (4 * params.eps1**4) * ve
            - 3.0 * ve / (4 * params.eps2**2) * tr**2
        )
        if np.abs(u - expect).max() > 1e-12 * max(1.0, np.abs(expect).max()):
            return f"formula mismatch {u} vs {expect}"
    return None


def _kde_contract() -> str | None:
    rng = np.random.default_rng(3)
    g = Grid(31, 31)
    p = kde_estimate(rng.random((200, 2)), KdeConfig(h=0.05, p_min=1e-3), g)
    if abs(mass(p) - 1.0) > 1e-6:
        return f"KDE mass {mass(p)}"
    if p.values.min() <= 0:
        return "KDE not strictly positive"
    return None


def _determinism() -> str | None:
    def run_once():
        rng = RngStream(42, stream=1)
        state = AgentState(
            x=RngStream(42, stream=0).next_uniforms((50, 2)),
            v=np.zeros((50, 2)),
            g2=np.broadcast_to(0.05 * np.eye(2), (50, 2, 2)),
        )
        D = DiffusionMatrix.isotropic(1e-3)
        for _ in range(40):
            state = em_step_integrator(state, np.zeros((50, 2)), D, 0.02, rng)
        return state.x.copy(), state.v.copy()

    x1, v1 = run_once()
    x2, v2 = run_once()
    if not (np.array_equal(x1, x2) and np.array_equal(v1, v2)):
        return "repeated run differs"
    return None


CHECKS = [
    ("stencils exact on affine fields", _affine_stencils),
    ("transport solver conserves mass and positivity", _conservation),
    ("stability bound arithmetic", _cfl_arithmetic),
    ("wall reflection", _reflection),
    ("backstepping input matches straight-line transcription", _formula_oracle),
    ("density estimate mass and floor", _kde_contract),
    ("bit-identical repeated runs", _determinism),
]


def run_verify() -> int:
    failed = 0
    for name, fn in CHECKS:
        try:
            err = fn()
        except Exception as e:  # a check crashing is a failure, not a crash
            err = f"{type(e).__name__}: {e}"
        if err is None:
            print(f"PASS  {name}")
        else:
            print(f"FAIL  {name}: {err}")
            failed += 1
    return 1 if failed else 0
