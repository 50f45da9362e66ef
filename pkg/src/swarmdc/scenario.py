"""Experiment orchestration: config files, the estimate-control-step loop,
metrics, snapshots, and the microscopic/macroscopic comparison run."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .agents import (
    AgentState,
    RngStream,
    RobotState,
    em_step_integrator,
    em_step_robot,
    feedback_linearize,
    heading_matrix,
    heading_matrix_inv,
    reflect_boundary,
)
from .control import (
    ControlParams,
    SampledControlFields,
    backstepping_input_batch,
    build_control_fields,
    density_feedback,
    sample_control_fields,
    stabilized_input_scale,
)
from .fields import (
    BilinearSampler,
    DiffusionMatrix,
    Grid,
    ScalarField,
    VectorField,
    l2_norm,
    mass,
    write_grid_file,
)
from .fpk import fpk_step, FpkState
from .kde import KdeConfig, kde_estimate

METRICS_HEADER = "t,mass_err,l2_err,V1,V2,max_speed,max_u"


class ConfigError(ValueError):
    """Bad or missing configuration value; the message names the key."""


class ScenarioError(RuntimeError):
    """Run aborted: instability or non-finite metric."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class GaussianMixture:
    """Weighted 2D Gaussian mixture used for targets and initial densities."""

    weights: np.ndarray   # (K,), positive, normalized
    means: np.ndarray     # (K, 2)
    covs: np.ndarray      # (K, 2, 2), symmetric positive definite

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.covs = np.asarray(self.covs, dtype=float)
        if self.weights.sum() <= 0:
            raise ConfigError("mixture weights must not all be zero")
        if np.any(self.weights < 0):
            raise ConfigError("mixture weights must be nonnegative")
        self.weights = self.weights / self.weights.sum()
        for c in self.covs:
            if np.linalg.det(c) <= 0 or c[0, 0] <= 0:
                raise ConfigError("mixture covariances must be positive definite")

    def pdf(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        out = np.zeros(np.broadcast(x, y).shape)
        for w, m, c in zip(self.weights, self.means, self.covs):
            ci = np.linalg.inv(c)
            dx, dy = x - m[0], y - m[1]
            q = ci[0, 0] * dx * dx + 2.0 * ci[0, 1] * dx * dy + ci[1, 1] * dy * dy
            out += w * np.exp(-0.5 * q) / (2.0 * np.pi * np.sqrt(np.linalg.det(c)))
        return out

    def sample_in_square(self, rng: RngStream, n: int) -> np.ndarray:
        """Draw n points from the mixture restricted to the unit square."""
        chols = np.linalg.cholesky(self.covs)
        cum = np.cumsum(self.weights)
        out = np.empty((n, 2))
        todo = np.arange(n)
        for _ in range(1000):
            comp = np.searchsorted(cum, rng.next_uniforms(len(todo)))
            z = rng.next_normals((len(todo), 2))
            pts = self.means[comp] + np.einsum("nij,nj->ni", chols[comp], z)
            good = np.all((pts >= 0.0) & (pts <= 1.0), axis=1)
            out[todo[good]] = pts[good]
            todo = todo[~good]
            if len(todo) == 0:
                return out
        raise ConfigError("mixture sampling keeps falling outside the unit square")


@dataclass
class TargetSpec:
    mixture: GaussianMixture
    floor: float

    def __post_init__(self):
        if self.floor <= 0:
            raise ConfigError("target floor must be positive")


def target_density(grid: Grid, spec: TargetSpec) -> ScalarField:
    """Mixture evaluated at cell centers, normalized, floored, renormalized."""
    X, Y = grid.meshgrid()
    p = spec.mixture.pdf(X, Y)
    total = p.sum() * grid.cell_area
    if total <= 0:
        raise ConfigError("target density has no mass on the grid")
    p = p / total
    p = np.maximum(p, spec.floor)
    p = p / (p.sum() * grid.cell_area)
    return ScalarField(grid, p)


@dataclass
class InitSpec:
    positions: str = "uniform"       # uniform | mixture | target
    velocities: str = "zero"         # zero | matched
    mixture: GaussianMixture | None = None


@dataclass
class RobotSpec:
    d: float = 0.1
    inertia: np.ndarray = None
    coriolis: np.ndarray = None
    friction: np.ndarray = None
    theta_noise: np.ndarray = None

    def __post_init__(self):
        self.inertia = np.eye(2) if self.inertia is None else np.asarray(self.inertia, float)
        self.coriolis = np.zeros((2, 2)) if self.coriolis is None else np.asarray(self.coriolis, float)
        self.friction = np.zeros(2) if self.friction is None else np.asarray(self.friction, float)
        self.theta_noise = np.zeros(2) if self.theta_noise is None else np.asarray(self.theta_noise, float)
        if self.d == 0:
            raise ConfigError("robot offset d must be nonzero")
        if np.linalg.det(self.inertia) <= 0:
            raise ConfigError("robot inertia must be positive definite")


@dataclass
class ScenarioConfig:
    model: str                      # integrator | robot
    n_agents: int
    dt: float
    t_end: float
    seed: int
    grid: Grid
    oracle_grid: Grid
    alpha: float
    k: float
    eps1: float
    eps2: float
    kde: KdeConfig
    D: DiffusionMatrix
    g2_base: np.ndarray
    heterogeneity: float
    g2_cap: float
    target: TargetSpec
    init: InitSpec
    robot: RobotSpec
    control_period: int = 1
    snapshot_period: int = 0
    trajectories: bool = False
    compare_velocity: str = "zero"  # zero | swirl
    swirl_strength: float = 0.05

    def __post_init__(self):
        if self.model not in ("integrator", "robot"):
            raise ConfigError(f"run.model must be integrator or robot, got {self.model!r}")
        if self.n_agents < 1:
            raise ConfigError("run.n_agents must be at least 1")
        if self.dt <= 0:
            raise ConfigError("run.dt must be positive")
        if self.t_end <= 0:
            raise ConfigError("run.t_end must be positive")
        if self.control_period < 1:
            raise ConfigError("run.control_period must be at least 1")
        if not 0 <= self.heterogeneity < 1:
            raise ConfigError("noise.heterogeneity must lie in [0, 1)")
        if np.max(np.abs(self.g2_base)) * (1 + self.heterogeneity) > self.g2_cap:
            raise ConfigError("noise.g2 exceeds the configured cap noise.g2_cap")

    @property
    def n_steps(self) -> int:
        return int(np.floor(self.t_end / self.dt + 1e-9))

    def control_params(self, grid: Grid) -> ControlParams:
        return ControlParams(
            alpha=self.alpha, k=self.k, eps1=self.eps1, eps2=self.eps2,
            p_star=target_density(grid, self.target),
        )


_KNOWN_KEYS = {
    "run": {"model", "n_agents", "dt", "t_end", "seed", "grid", "oracle_grid",
            "control_period"},
    "control": {"alpha", "k", "eps1", "eps2"},
    "kde": {"h", "p_min"},
    "noise": {"sigma0", "g1", "g2", "heterogeneity", "g2_cap"},
    "robot": {"d", "inertia", "coriolis", "friction", "theta_noise"},
    "target": None,   # indexed keys, validated separately
    "init": {"positions", "velocities"},
    "output": {"snapshot_period", "trajectories"},
    "compare": {"velocity", "swirl_strength"},
}


def _floats(raw: str, n: int, key: str) -> np.ndarray:
    parts = raw.split()
    if len(parts) != n:
        raise ConfigError(f"{key}: expected {n} numbers, got {raw!r}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as e:
        raise ConfigError(f"{key}: {e}") from None


def _get(cp, section, key, default=None, cast=float):
    if not cp.has_option(section, key):
        if default is None:
            raise ConfigError(f"missing required key {section}.{key}")
        return default
    raw = cp.get(section, key)
    try:
        if cast is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return cast(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r}") from None


def _parse_mixture(cp, section: str) -> GaussianMixture:
    idx = set()
    for key in cp.options(section):
        for prefix in ("weight", "mean", "cov"):
            if key.startswith(prefix) and key[len(prefix):].isdigit():
                idx.add(int(key[len(prefix):]))
                break
        else:
            if section == "target" and key == "floor":
                continue
            raise ConfigError(f"unknown key {section}.{key}")
    if not idx or idx != set(range(1, len(idx) + 1)):
        raise ConfigError(f"{section}: components must be numbered 1..K")
    ws, ms, cs = [], [], []
    for i in sorted(idx):
        ws.append(_get(cp, section, f"weight{i}", default=1.0))
        ms.append(_floats(cp.get(section, f"mean{i}"), 2, f"{section}.mean{i}"))
        c = _floats(cp.get(section, f"cov{i}"), 3, f"{section}.cov{i}")
        cs.append(np.array([[c[0], c[1]], [c[1], c[2]]]))
    return GaussianMixture(np.array(ws), np.array(ms), np.array(cs))


def bundled_config_path(name: str = "paper.cfg") -> Path:
    """Path of a configuration file shipped inside the package."""
    return Path(resources.files("swarmdc") / name)


def parse_config(path) -> ScenarioConfig:
    """Parse a scenario configuration file; unknown keys are errors."""
    path = Path(path)
    if not path.exists() and str(path) == path.name and bundled_config_path(path.name).exists():
        path = bundled_config_path(path.name)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")

    for section in cp.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"unknown section [{section}]")
        known = _KNOWN_KEYS[section]
        if known is not None:
            for key in cp.options(section):
                if key not in known:
                    raise ConfigError(f"unknown key {section}.{key}")

    gx = _floats(_get(cp, "run", "grid", default="30 30", cast=str), 2, "run.grid")
    ox = _floats(_get(cp, "run", "oracle_grid", default="64 64", cast=str), 2,
                 "run.oracle_grid")

    if cp.has_option("noise", "g1"):
        g1 = _floats(cp.get("noise", "g1"), 4, "noise.g1").reshape(2, 2)
        D = DiffusionMatrix(g1)
    else:
        D = DiffusionMatrix.isotropic(_get(cp, "noise", "sigma0", default=0.0))

    if not cp.has_section("target"):
        raise ConfigError("missing required section [target]")
    target = TargetSpec(
        mixture=_parse_mixture(cp, "target"),
        floor=_get(cp, "target", "floor", default=0.1),
    )

    init_positions = _get(cp, "init", "positions", default="uniform", cast=str).strip()
    if init_positions not in ("uniform", "mixture", "target"):
        raise ConfigError(f"init.positions must be uniform|mixture|target, got {init_positions!r}")
    init = InitSpec(
        positions=init_positions,
        velocities=_get(cp, "init", "velocities", default="zero", cast=str).strip(),
        mixture=_parse_mixture(cp, "init") if init_positions == "mixture" else None,
    )
    if init.velocities not in ("zero", "matched"):
        raise ConfigError(f"init.velocities must be zero|matched, got {init.velocities!r}")

    robot = RobotSpec(
        d=_get(cp, "robot", "d", default=0.1),
        inertia=_floats(_get(cp, "robot", "inertia", default="1 0 0 1", cast=str), 4,
                        "robot.inertia").reshape(2, 2),
        coriolis=_floats(_get(cp, "robot", "coriolis", default="0 0 0 0", cast=str), 4,
                         "robot.coriolis").reshape(2, 2),
        friction=_floats(_get(cp, "robot", "friction", default="0 0", cast=str), 2,
                         "robot.friction"),
        theta_noise=_floats(_get(cp, "robot", "theta_noise", default="0 0", cast=str), 2,
                            "robot.theta_noise"),
    )

    cfg = ScenarioConfig(
        model=_get(cp, "run", "model", default="integrator", cast=str).strip(),
        n_agents=_get(cp, "run", "n_agents", cast=int),
        dt=_get(cp, "run", "dt"),
        t_end=_get(cp, "run", "t_end"),
        seed=_get(cp, "run", "seed", default=0, cast=int),
        grid=Grid(int(gx[0]), int(gx[1])),
        oracle_grid=Grid(int(ox[0]), int(ox[1])),
        control_period=_get(cp, "run", "control_period", default=1, cast=int),
        alpha=_get(cp, "control", "alpha"),
        k=_get(cp, "control", "k"),
        eps1=_get(cp, "control", "eps1"),
        eps2=_get(cp, "control", "eps2"),
        kde=KdeConfig(h=_get(cp, "kde", "h", default=0.04),
                      p_min=_get(cp, "kde", "p_min", default=1e-3)),
        D=D,
        g2_base=_floats(_get(cp, "noise", "g2", default="0 0 0 0", cast=str), 4,
                        "noise.g2").reshape(2, 2),
        heterogeneity=_get(cp, "noise", "heterogeneity", default=0.0),
        g2_cap=_get(cp, "noise", "g2_cap", default=10.0),
        target=target,
        init=init,
        robot=robot,
        snapshot_period=_get(cp, "output", "snapshot_period", default=0, cast=int),
        trajectories=_get(cp, "output", "trajectories", default=False, cast=bool),
        compare_velocity=_get(cp, "compare", "velocity", default="zero", cast=str).strip(),
        swirl_strength=_get(cp, "compare", "swirl_strength", default=0.05),
    )
    return cfg


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass
class MetricsRecord:
    t: float
    mass_err: float
    l2_err: float
    V1: float
    V2: float
    max_speed: float
    max_u: float

    def row(self) -> str:
        return ",".join(
            repr(float(v))
            for v in (self.t, self.mass_err, self.l2_err, self.V1, self.V2,
                      self.max_speed, self.max_u)
        )


def write_metrics_csv(path, records: list[MetricsRecord]) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(METRICS_HEADER + "\n")
        for r in records:
            fh.write(r.row() + "\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Initialization helpers
# ---------------------------------------------------------------------------


def _initial_positions(cfg: ScenarioConfig, rng: RngStream) -> np.ndarray:
    n = cfg.n_agents
    if cfg.init.positions == "uniform":
        return rng.next_uniforms((n, 2))
    if cfg.init.positions == "mixture":
        return cfg.init.mixture.sample_in_square(rng, n)
    # target: rejection sampling against the floored, renormalized target
    p_star = target_density(cfg.grid, cfg.target)
    pmax = float(p_star.values.max())
    out = np.empty((n, 2))
    todo = np.arange(n)
    for _ in range(10000):
        pts = rng.next_uniforms((len(todo), 2))
        accept = rng.next_uniforms(len(todo)) * pmax <= BilinearSampler(
            cfg.grid, pts
        ).sample_values(p_star.values)
        out[todo[accept]] = pts[accept]
        todo = todo[~accept]
        if len(todo) == 0:
            return out
    raise ScenarioError("target-density rejection sampling did not converge")


def _heterogeneous_g2(cfg: ScenarioConfig, rng: RngStream) -> np.ndarray:
    eta = (rng.next_uniforms(cfg.n_agents) * 2.0 - 1.0) * cfg.heterogeneity
    return (1.0 + eta)[:, None, None] * cfg.g2_base[None]


# ---------------------------------------------------------------------------
# Main scenario loop
# ---------------------------------------------------------------------------


def run_scenario(cfg: ScenarioConfig, out_dir=None, seed: int | None = None) -> list[MetricsRecord]:
    """Run the full estimate-control-step loop and return the metrics series.

    When ``out_dir`` is given, writes ``metrics.csv``, ``target.grid``,
    periodic ``density_<step>.grid`` snapshots and, if enabled, a
    trajectory CSV.  Aborts with :class:`ScenarioError` on instability
    (any agent faster than 0.5 dx / dt) or a non-finite metric.
    """
    seed = cfg.seed if seed is None else seed
    init_rng = RngStream(seed, stream=0)
    dyn_rng = RngStream(seed, stream=1)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    grid = cfg.grid
    params = cfg.control_params(grid)
    robot_mode = cfg.model == "robot"

    positions = _initial_positions(cfg, init_rng)
    g2 = _heterogeneous_g2(cfg, init_rng)
    if robot_mode:
        theta = init_rng.next_uniforms(cfg.n_agents) * 2.0 * np.pi - np.pi
        state = RobotState(
            q=np.column_stack([positions, theta]),
            v=np.zeros((cfg.n_agents, 2)),
            d=np.full(cfg.n_agents, cfg.robot.d),
            M=cfg.robot.inertia,
            Vm=cfg.robot.coriolis,
            F=cfg.robot.friction,
            f2=np.einsum("ij,njk->nik", cfg.robot.inertia, g2),
            f1_theta_row=cfg.robot.theta_noise,
        )
    else:
        state = AgentState(x=positions, v=np.zeros((cfg.n_agents, 2)), g2=g2)

    if cfg.init.velocities == "matched":
        p0 = kde_estimate(positions, cfg.kde, grid)
        vd0 = density_feedback(p0, params, cfg.D)
        vd_at = BilinearSampler(grid, positions).sample(vd0)
        if robot_mode:
            Ti = heading_matrix_inv(state.theta, state.d)
            state.v = np.einsum("nij,nj->ni", Ti, vd_at)
        else:
            state.v = vd_at

    if out is not None:
        write_grid_file(out / "target.grid", params.p_star, 0.0)

    records: list[MetricsRecord] = []
    traj_rows: list[str] = []
    speed_limit = 0.5 * grid.dx / cfg.dt
    v_d_prev = None
    cf = None

    for n in range(cfg.n_steps + 1):
        t = n * cfg.dt
        positions = state.positions if robot_mode else state.x
        p_hat = kde_estimate(positions, cfg.kde, grid)

        if n % cfg.control_period == 0 or cf is None:
            v_d = density_feedback(p_hat, params, cfg.D)
            cf = build_control_fields(
                v_d, v_d_prev, cfg.dt * cfg.control_period, cfg.D, p_hat, params
            )
            v_d_prev = v_d

        sampled = sample_control_fields(cf, positions)
        if robot_mode:
            Ti = heading_matrix_inv(state.theta, state.d)
            eff = SampledControlFields(
                v_d=np.einsum("nij,nj->ni", Ti, sampled.v_d),
                dv_d_dt=np.einsum("nij,nj->ni", Ti, sampled.dv_d_dt),
                jac_v_d=Ti @ sampled.jac_v_d,
                G=np.einsum("nij,nj->ni", Ti, sampled.G),
                grad_phi_term=sampled.grad_phi_term,
            )
            v_adv = state.euclidean_velocity()
            u, gamma, v_err = backstepping_input_batch(
                state.v, eff, state.g2(), params, cfg.D, v_adv=v_adv
            )
            speeds = np.hypot(v_adv[:, 0], v_adv[:, 1])
        else:
            u, gamma, v_err = backstepping_input_batch(
                state.v, sampled, state.g2, params, cfg.D
            )
            speeds = np.hypot(state.v[:, 0], state.v[:, 1])

        l2 = l2_norm(ScalarField(grid, p_hat.values - params.p_star.values))
        v_err_norm2 = v_err[:, 0] ** 2 + v_err[:, 1] ** 2
        rec = MetricsRecord(
            t=t,
            mass_err=abs(mass(p_hat) - 1.0),
            l2_err=l2,
            V1=0.5 * l2**2,
            V2=0.5 * l2**2 + 0.25 * float(np.mean(v_err_norm2**2)),
            max_speed=float(speeds.max()),
            max_u=float(np.hypot(u[:, 0], u[:, 1]).max()),
        )
        records.append(rec)

        vals = (rec.mass_err, rec.l2_err, rec.V1, rec.V2, rec.max_speed, rec.max_u)
        if not all(np.isfinite(vals)):
            raise ScenarioError(f"non-finite metric at t={t}: {rec}")
        if rec.mass_err > 1e-6:
            raise ScenarioError(f"density mass error {rec.mass_err} at t={t}")
        if rec.max_speed > speed_limit:
            raise ScenarioError(
                f"instability detected at t={t}: max agent speed {rec.max_speed:.3g} "
                f"exceeds 0.5 dx/dt = {speed_limit:.3g}"
            )

        snap = cfg.snapshot_period > 0 and n % cfg.snapshot_period == 0
        if out is not None and snap:
            write_grid_file(out / f"density_{n}.grid", p_hat, t)
        if cfg.trajectories and snap:
            for i in range(cfg.n_agents):
                cols = [t, i, positions[i, 0], positions[i, 1],
                        state.v[i, 0], state.v[i, 1]]
                if robot_mode:
                    cols.append(state.theta[i])
                traj_rows.append(",".join(
                    repr(float(c)) if not isinstance(c, int) else str(c) for c in cols
                ))

        if n == cfg.n_steps:
            break

        u_eff = stabilized_input_scale(gamma, cfg.dt)[:, None] * u
        if robot_mode:
            tau = feedback_linearize(state, u_eff)
            state = em_step_robot(state, tau, cfg.dt, dyn_rng, cfg.D)
        else:
            state = em_step_integrator(state, u_eff, cfg.D, cfg.dt, dyn_rng)

    if out is not None:
        write_metrics_csv(out / "metrics.csv", records)
        if cfg.trajectories:
            header = "t,id,x1,x2,v1,v2" + (",theta" if robot_mode else "")
            tmp = out / "trajectories.csv.tmp"
            tmp.write_text(header + "\n" + "\n".join(traj_rows) + "\n")
            os.replace(tmp, out / "trajectories.csv")
    return records


# ---------------------------------------------------------------------------
# Mean-field closed loop (PDE only)
# ---------------------------------------------------------------------------


def initial_density(cfg: ScenarioConfig, grid: Grid) -> ScalarField:
    if cfg.init.positions == "uniform":
        return ScalarField(grid, np.ones((grid.ny, grid.nx)))
    if cfg.init.positions == "mixture":
        X, Y = grid.meshgrid()
        p = cfg.init.mixture.pdf(X, Y)
        return ScalarField(grid, p / (p.sum() * grid.cell_area))
    return target_density(grid, cfg.target)


def run_fpk_scenario(cfg: ScenarioConfig, out_dir=None) -> list[MetricsRecord]:
    """Run the density transport solver under its own ideal feedback law.

    This is the mean-field counterpart of :func:`run_scenario` (velocity
    error identically zero): the feedback field is recomputed from the PDE
    density each step.  Writes the same metrics and snapshot files so the
    rendering tools apply unchanged.
    """
    grid = cfg.oracle_grid
    params = cfg.control_params(grid)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_grid_file(out / "target.grid", params.p_star, 0.0)

    state = FpkState.from_density(initial_density(cfg, grid))
    records: list[MetricsRecord] = []
    for n in range(cfg.n_steps + 1):
        t = n * cfg.dt
        # positive floor before dividing, mirroring the estimator contract
        p_safe = ScalarField(grid, np.maximum(state.p.values, cfg.kde.p_min))
        v_d = density_feedback(p_safe, params, cfg.D)
        l2 = l2_norm(ScalarField(grid, state.p.values - params.p_star.values))
        speed = float(np.hypot(v_d.x.values, v_d.y.values).max())
        rec = MetricsRecord(
            t=t, mass_err=abs(mass(state.p) - 1.0), l2_err=l2,
            V1=0.5 * l2**2, V2=0.5 * l2**2, max_speed=speed, max_u=0.0,
        )
        records.append(rec)
        if out is not None and cfg.snapshot_period > 0 and n % cfg.snapshot_period == 0:
            write_grid_file(out / f"density_{n}.grid", state.p, t)
        if n == cfg.n_steps:
            break
        state = fpk_step(state, v_d, cfg.D, cfg.dt)

    if out is not None:
        write_metrics_csv(out / "metrics.csv", records)
    return records


# ---------------------------------------------------------------------------
# Microscopic vs macroscopic comparison
# ---------------------------------------------------------------------------


def _compare_velocity_field(cfg: ScenarioConfig, grid: Grid) -> VectorField:
    X, Y = grid.meshgrid()
    if cfg.compare_velocity == "zero":
        return VectorField.from_arrays(grid, np.zeros_like(X), np.zeros_like(Y))
    if cfg.compare_velocity == "swirl":
        a = cfg.swirl_strength
        vx = a * np.sin(np.pi * X) * np.cos(np.pi * Y)
        vy = -a * np.cos(np.pi * X) * np.sin(np.pi * Y)
        return VectorField.from_arrays(grid, vx, vy)
    raise ConfigError(f"compare.velocity must be zero|swirl, got {cfg.compare_velocity!r}")


@dataclass
class CompareRecord:
    t: float
    l1_dist: float
    mass_kde: float
    mass_fpk: float

    def row(self) -> str:
        return ",".join(repr(float(v)) for v in
                        (self.t, self.l1_dist, self.mass_kde, self.mass_fpk))


def compare_mc_fpk(cfg: ScenarioConfig, out_dir=None) -> list[CompareRecord]:
    """March uncontrolled agents and the PDE from the same initial density.

    Agents follow dx = v(x) dt + g1 dW under the prescribed velocity field
    of the [compare] section; the solver integrates the matching transport
    equation on the oracle grid.  At every snapshot period the L1 distance
    between the agents' KDE and the solver density is recorded.
    """
    grid = cfg.oracle_grid
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    v_field = _compare_velocity_field(cfg, grid)
    init_rng = RngStream(cfg.seed, stream=0)
    dyn_rng = RngStream(cfg.seed, stream=1)

    if cfg.init.positions == "uniform":
        positions = init_rng.next_uniforms((cfg.n_agents, 2))
    elif cfg.init.positions == "mixture":
        positions = cfg.init.mixture.sample_in_square(init_rng, cfg.n_agents)
    else:
        positions = _initial_positions(cfg, init_rng)

    state = FpkState.from_density(initial_density(cfg, grid))
    every = cfg.snapshot_period if cfg.snapshot_period > 0 else max(1, cfg.n_steps // 10)
    records: list[CompareRecord] = []

    for n in range(cfg.n_steps + 1):
        t = n * cfg.dt
        if n % every == 0 or n == cfg.n_steps:
            p_hat = kde_estimate(positions, cfg.kde, grid)
            diff = np.abs(p_hat.values - state.p.values)
            records.append(CompareRecord(
                t=t,
                l1_dist=float(diff.sum() * grid.cell_area),
                mass_kde=mass(p_hat),
                mass_fpk=mass(state.p),
            ))
            if out is not None:
                write_grid_file(out / f"mc_{n}.grid", p_hat, t)
                write_grid_file(out / f"fpk_{n}.grid", state.p, t)
        if n == cfg.n_steps:
            break
        v_at = BilinearSampler(grid, positions).sample(v_field)
        dw = dyn_rng.next_normals((cfg.n_agents, 2)) * np.sqrt(cfg.dt)
        moved = positions + v_at * cfg.dt + dw @ cfg.D.g1.T
        positions, _ = reflect_boundary(moved, np.zeros_like(moved))
        state = fpk_step(state, v_field, cfg.D, cfg.dt)

    if out is not None:
        tmp = out / "compare.csv.tmp"
        tmp.write_text(
            "t,l1_dist,mass_kde,mass_fpk\n" + "\n".join(r.row() for r in records) + "\n"
        )
        os.replace(tmp, out / "compare.csv")
    return records
