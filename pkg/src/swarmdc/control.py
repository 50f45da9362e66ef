"""Density feedback field and per-agent backstepping inputs.

The feedback field pushes the estimated density toward the target; the
backstepping input makes each agent's velocity track that field while
canceling the drift terms that appear when the field is differentiated
along a stochastic trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import (
    BilinearSampler,
    DiffusionMatrix,
    ScalarField,
    TensorField,
    VectorField,
    gradient,
    jacobian,
    mass,
    second_derivative,
)


@dataclass
class ControlParams:
    """Gains of the control law plus the target density.

    alpha scales the density feedback velocity, k the velocity error
    damping; eps1 and eps2 are the positive constants of the two high-gain
    relaxation terms.  The target density must have unit mass and a
    positive lower bound.
    """

    alpha: float
    k: float
    eps1: float
    eps2: float
    p_star: ScalarField

    def __post_init__(self):
        for name in ("alpha", "k", "eps1", "eps2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        m = mass(self.p_star)
        if abs(m - 1.0) > 1e-6:
            raise ValueError(f"target density mass {m} is not 1 within 1e-6")
        if np.min(self.p_star.values) <= 0:
            raise ValueError("target density must be bounded below by a positive constant")


@dataclass
class ControlFields:
    """Per-step grid fields consumed by the backstepping input.

    grad_phi_term holds ||p grad(p - p*)||^4 per node, the argument of the
    first high-gain term.
    """

    v_d: VectorField
    dv_d_dt: VectorField
    jac_v_d: TensorField
    G: VectorField
    grad_phi_term: ScalarField

    @property
    def grid(self):
        return self.v_d.grid


@dataclass
class AgentChannel:
    """Per-agent quantities entering the input: noise matrix and velocity error."""

    g2: np.ndarray
    v_err: np.ndarray | None = None

    def __post_init__(self):
        self.g2 = np.asarray(self.g2, dtype=float)
        if self.g2.shape != (2, 2) or not np.all(np.isfinite(self.g2)):
            raise ValueError("g2 must be a finite 2x2 matrix")


def density_feedback(
    p: ScalarField, params: ControlParams, D: DiffusionMatrix
) -> VectorField:
    """Density feedback field v_d = -(alpha grad(p - p*) - sigma grad p) / p.

    The estimator guarantees a positive floor on p; a nonpositive node is
    rejected here because it means the floor was violated upstream.
    """
    if p.grid != params.p_star.grid:
        raise ValueError("density and target grids differ")
    if np.min(p.values) <= 0:
        raise ValueError("density must be strictly positive (floor violated)")
    gt = gradient(ScalarField(p.grid, p.values - params.p_star.values))
    s = D.sigma
    gp = gradient(p)
    sfx = s[0, 0] * gp.x.values + s[0, 1] * gp.y.values
    sfy = s[1, 0] * gp.x.values + s[1, 1] * gp.y.values
    vx = -(params.alpha * gt.x.values - sfx) / p.values
    vy = -(params.alpha * gt.y.values - sfy) / p.values
    return VectorField.from_arrays(p.grid, vx, vy)


def _ito_correction(v_d: VectorField, D: DiffusionMatrix) -> VectorField:
    """Second-order drift G: sigma contracted with the Hessian per component.

    For constant g1 the paper's trace reduces to
    G_j = sum_ab sigma_ab d^2 v_dj / dx_a dx_b.  Diagonal second derivatives
    use the same mirror-ghost stencil as the Laplacian, so the isotropic
    case is exactly sigma0 * laplacian(v_dj); mixed terms compose the
    first-derivative stencils.
    """
    s = D.sigma
    out = []
    for comp in (v_d.x, v_d.y):
        g = s[0, 0] * second_derivative(comp, 0).values
        g += s[1, 1] * second_derivative(comp, 1).values
        if s[0, 1] != 0.0:
            dx_comp = gradient(comp).x
            g += 2.0 * s[0, 1] * gradient(dx_comp).y.values
        out.append(g)
    return VectorField.from_arrays(v_d.grid, out[0], out[1])


def build_control_fields(
    v_d_now: VectorField,
    v_d_prev: VectorField | None,
    dt: float,
    D: DiffusionMatrix,
    p: ScalarField,
    params: ControlParams,
) -> ControlFields:
    """Assemble the derivative fields and gain field for one control period.

    The time derivative is the backward difference against the field of the
    previous period and zero on the first one.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    g = v_d_now.grid
    if v_d_prev is None:
        dvdt = VectorField.from_arrays(g, np.zeros((g.ny, g.nx)), np.zeros((g.ny, g.nx)))
    else:
        if v_d_prev.grid != g:
            raise ValueError("previous field grid differs")
        dvdt = VectorField.from_arrays(
            g,
            (v_d_now.x.values - v_d_prev.x.values) / dt,
            (v_d_now.y.values - v_d_prev.y.values) / dt,
        )
    gt = gradient(ScalarField(g, p.values - params.p_star.values))
    gpt = (p.values**2 * (gt.x.values**2 + gt.y.values**2)) ** 2
    return ControlFields(
        v_d=v_d_now,
        dv_d_dt=dvdt,
        jac_v_d=jacobian(v_d_now),
        G=_ito_correction(v_d_now, D),
        grad_phi_term=ScalarField(g, gpt),
    )


@dataclass
class SampledControlFields:
    """Control fields interpolated at agent positions.

    The gain field is clamped at zero: it is a fourth power, so a negative
    interpolated value is an extrapolation artifact near the walls and
    would flip the damping term into anti-damping.
    """

    v_d: np.ndarray          # (n, 2)
    dv_d_dt: np.ndarray      # (n, 2)
    jac_v_d: np.ndarray      # (n, 2, 2)
    G: np.ndarray            # (n, 2)
    grad_phi_term: np.ndarray  # (n,)


def sample_control_fields(cf: ControlFields, positions: np.ndarray) -> SampledControlFields:
    """Interpolate all control fields at the given positions."""
    s = BilinearSampler(cf.grid, np.atleast_2d(np.asarray(positions, dtype=float)))
    jac = np.stack(
        [
            np.stack([s.sample_values(cf.jac_v_d.xx.values),
                      s.sample_values(cf.jac_v_d.xy.values)], axis=-1),
            np.stack([s.sample_values(cf.jac_v_d.yx.values),
                      s.sample_values(cf.jac_v_d.yy.values)], axis=-1),
        ],
        axis=-2,
    )
    return SampledControlFields(
        v_d=s.sample(cf.v_d),
        dv_d_dt=s.sample(cf.dv_d_dt),
        jac_v_d=jac,
        G=s.sample(cf.G),
        grad_phi_term=np.maximum(s.sample(cf.grad_phi_term), 0.0),
    )


def backstepping_gain(
    grad_phi_term: np.ndarray,
    jac: np.ndarray,
    g2: np.ndarray,
    params: ControlParams,
    D: DiffusionMatrix,
) -> np.ndarray:
    """Total damping coefficient multiplying the velocity error.

    gamma = k + ||p grad(p - p*)||^4 / (4 eps1^4)
              + 3 Tr(A^T A)^2 / (4 eps2^2),  A = g2 - jac g1.
    """
    A = g2 - jac @ D.g1
    tr = np.einsum("...ij,...ij->...", A, A)
    return (
        params.k
        + grad_phi_term / (4.0 * params.eps1**4)
        + 3.0 * tr**2 / (4.0 * params.eps2**2)
    )


def backstepping_input_batch(
    v: np.ndarray,
    sampled: SampledControlFields,
    g2: np.ndarray,
    params: ControlParams,
    D: DiffusionMatrix,
    v_adv: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backstepping inputs for a batch of agents against sampled fields.

    ``v_adv`` is the velocity transporting the field along the trajectory;
    it equals ``v`` for the double integrator and the Euclidean velocity for
    robots whose fields were premultiplied into wheel coordinates.

    Returns (u, gamma, v_err): the input, the total damping coefficient and
    the velocity error, each per agent.
    """
    if v_adv is None:
        v_adv = v
    v_err = v - sampled.v_d
    gamma = backstepping_gain(sampled.grad_phi_term, sampled.jac_v_d, g2, params, D)
    u = (
        -gamma[..., None] * v_err
        + sampled.dv_d_dt
        + np.einsum("...ij,...j->...i", sampled.jac_v_d, v_adv)
        + sampled.G
    )
    if not np.all(np.isfinite(u)):
        raise ValueError("non-finite backstepping input")
    return u, gamma, v_err


def backstepping_input(
    x: np.ndarray,
    v: np.ndarray,
    cf: ControlFields,
    ch: AgentChannel,
    params: ControlParams,
    D: DiffusionMatrix,
) -> np.ndarray:
    """Backstepping input for a single double-integrator agent at position x.

    Implements u = -k ve + d_t v_d + (d_x v_d) v + G
                   - (||p grad(p - p*)||^4 / (4 eps1^4)) ve
                   - (3 ve / (4 eps2^2)) Tr(A^T A)^2
    with ve = v - v_d(x) and A = g2 - (d_x v_d) g1, all fields interpolated
    at x.
    """
    x = np.asarray(x, dtype=float).reshape(1, 2)
    v = np.asarray(v, dtype=float).reshape(1, 2)
    sampled = sample_control_fields(cf, x)
    u, _, _ = backstepping_input_batch(v, sampled, ch.g2[None], params, D)
    return u[0]


def stabilized_input_scale(gamma: np.ndarray, dt: float) -> np.ndarray:
    """Exact-integrator scale factor c(z) = (1 - exp(-z)) / z, z = gamma dt.

    Applying c * u over one step is the exact solution of the
    frozen-coefficient velocity equation dv/dt = -gamma (v - v_eq); it
    coincides with the plain explicit update as z -> 0 and stays
    contractive for arbitrarily stiff gains, which the high-gain terms
    produce on a noisy estimated density.
    """
    z = gamma * dt
    return np.where(z > 0.0, -np.expm1(-np.minimum(z, 700.0)) / np.where(z > 0, z, 1.0), 1.0)
