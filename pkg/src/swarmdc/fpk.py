"""Conservative finite-volume solver for the density transport equation.

Solves d_t p = -div(v p - sigma grad p) on the unit square with zero flux
through the walls.  Face fluxes combine donor-cell upwinding for the
advective part with centered differences for the diffusive part; boundary
faces carry exactly zero flux, so total mass is conserved by construction
(the interior fluxes telescope).  The solver is deliberately finer and
simpler than the controller stack and serves as its independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import DiffusionMatrix, ScalarField, VectorField, l2_norm, mass


class CflViolation(ValueError):
    """Time step too large for the explicit scheme; carries the admissible dt."""

    def __init__(self, dt: float, max_dt: float):
        super().__init__(
            f"dt={dt} violates the stability bound; maximal admissible dt={max_dt}"
        )
        self.max_dt = max_dt


class NegativeDensityError(RuntimeError):
    """Scheme produced density below -1e-12, which signals a solver bug."""


@dataclass
class FpkState:
    """Mass-normalized density field at a point in time."""

    p: ScalarField
    t: float = 0.0

    def __post_init__(self):
        if np.min(self.p.values) < -1e-12:
            raise ValueError("density must be nonnegative")
        m = mass(self.p)
        if abs(m - 1.0) > 1e-10:
            raise ValueError(f"density mass {m} is not 1 within 1e-10")

    @classmethod
    def from_density(cls, p: ScalarField, t: float = 0.0) -> "FpkState":
        """Normalize an arbitrary nonnegative field to unit mass."""
        m = mass(p)
        if m <= 0:
            raise ValueError("density must have positive mass")
        return cls(ScalarField(p.grid, p.values / m), t)


def check_cfl(v: VectorField, D: DiffusionMatrix, dt: float) -> tuple[bool, float]:
    """Check the explicit stability bound; return (ok, max admissible dt).

    Requires dt * (max|v1|/dx + max|v2|/dy) <= 0.5 for advection and
    dt * 2 * (sigma11/dx^2 + sigma22/dy^2) <= 0.5 for diffusion.
    """
    g = v.grid
    adv = np.max(np.abs(v.x.values)) / g.dx + np.max(np.abs(v.y.values)) / g.dy
    diff = 2.0 * (D.sigma[0, 0] / g.dx**2 + D.sigma[1, 1] / g.dy**2)
    rate = max(adv, diff)
    max_dt = 0.5 / rate if rate > 0 else np.inf
    ok = dt * adv <= 0.5 and dt * diff <= 0.5
    return ok, max_dt


def _face_fluxes(p: np.ndarray, v: VectorField, D: DiffusionMatrix, g):
    """Fluxes on interior faces; boundary faces are zero by construction."""
    s = D.sigma
    vx, vy = v.x.values, v.y.values

    # tangential derivatives at nodes, for the off-diagonal diffusive part
    if s[0, 1] != 0.0:
        dpdy_n = np.gradient(p, g.dy, axis=0, edge_order=2)
        dpdx_n = np.gradient(p, g.dx, axis=1, edge_order=2)

    # x-faces between columns i-1 and i, shape (ny, nx-1)
    vf = 0.5 * (vx[:, :-1] + vx[:, 1:])
    up = np.where(vf >= 0.0, p[:, :-1], p[:, 1:])
    fx = vf * up - s[0, 0] * (p[:, 1:] - p[:, :-1]) / g.dx
    if s[0, 1] != 0.0:
        fx -= s[0, 1] * 0.5 * (dpdy_n[:, :-1] + dpdy_n[:, 1:])

    # y-faces between rows j-1 and j, shape (ny-1, nx)
    vf = 0.5 * (vy[:-1, :] + vy[1:, :])
    up = np.where(vf >= 0.0, p[:-1, :], p[1:, :])
    fy = vf * up - s[1, 1] * (p[1:, :] - p[:-1, :]) / g.dy
    if s[0, 1] != 0.0:
        fy -= s[1, 0] * 0.5 * (dpdx_n[:-1, :] + dpdx_n[1:, :])

    return fx, fy


def fpk_step(state: FpkState, v: VectorField, D: DiffusionMatrix, dt: float) -> FpkState:
    """Advance the density by one explicit conservative step.

    Raises :class:`CflViolation` if dt exceeds the stability bound and
    :class:`NegativeDensityError` if the update undershoots below -1e-12.
    """
    if v.grid != state.p.grid:
        raise ValueError("velocity field grid differs from state grid")
    ok, max_dt = check_cfl(v, D, dt)
    if not ok:
        raise CflViolation(dt, max_dt)

    g = state.p.grid
    p = state.p.values
    fx, fy = _face_fluxes(p, v, D, g)

    div = np.zeros_like(p)
    div[:, :-1] += fx / g.dx
    div[:, 1:] -= fx / g.dx
    div[:-1, :] += fy / g.dy
    div[1:, :] -= fy / g.dy
    # div[cell] = (outgoing - incoming) flux balance = discrete flux divergence
    pn = p - dt * div

    if pn.min() < -1e-12:
        raise NegativeDensityError(
            f"density undershoot {pn.min()} below -1e-12 at t={state.t}"
        )
    return FpkState(ScalarField(g, pn), state.t + dt)


@dataclass
class FpkRun:
    """Recorded trajectory of an FPK solve."""

    times: np.ndarray
    mass_err: np.ndarray
    l2_err: np.ndarray | None
    final: FpkState


def run_fpk(
    p0: ScalarField,
    velocity_provider,
    D: DiffusionMatrix,
    dt: float,
    T: float,
    p_star: ScalarField | None = None,
    on_state=None,
) -> FpkRun:
    """Repeatedly step the solver from p0 up to time T.

    ``velocity_provider(t, state)`` returns the velocity field for the step
    starting at time t; closed-loop laws read the density off the state,
    prescribed fields ignore it.  Records per step the mass error and, when
    a target density is supplied, the L2 error against it.  ``on_state`` is
    called as ``on_state(step_index, state)`` on every recorded state,
    including the initial one.
    """
    state = FpkState.from_density(p0)
    nsteps = int(np.floor(T / dt + 1e-9))
    times = np.empty(nsteps + 1)
    merr = np.empty(nsteps + 1)
    l2 = np.empty(nsteps + 1) if p_star is not None else None

    def record(i, s):
        times[i] = s.t
        merr[i] = abs(mass(s.p) - 1.0)
        if l2 is not None:
            l2[i] = l2_norm(ScalarField(s.p.grid, s.p.values - p_star.values))
        if on_state is not None:
            on_state(i, s)

    record(0, state)
    for i in range(1, nsteps + 1):
        v = velocity_provider(state.t, state)
        state = fpk_step(state, v, D, dt)
        record(i, state)
    return FpkRun(times=times, mass_err=merr, l2_err=l2, final=state)
