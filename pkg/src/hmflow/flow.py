"""Explicit time integration of the coupled heat flow.

The evolution is ``du/dt = P(u) lap(u) - Z(du(e1) ^ du(e2)) - R grad V(u)``
stepped by forward Euler followed by pointwise closest-point projection.
The tangential-projector form of the tension term keeps the scheme
matrix-free; the projection re-imposes the manifold constraint exactly at
the sample points.

Determinism: every run is a pure function of the configuration.  All
randomness flows from a single seed through named substreams, the step
size is recomputed from the state each step, and checkpoints round-trip
states exactly (17 significant digits).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .fields import FieldPack, eval_Z, grad_V
from .surface import DiscreteSurface
from .target import EmbeddedTarget


class StepFailureError(RuntimeError):
    """Step size underflow; carries the last diagnostics record."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class MapState:
    u: np.ndarray                  # (n, q) ambient samples of the map
    t: float = 0.0
    on_manifold_residual: float = 0.0


@dataclass
class FlowParams:
    dt0: float = 1e-3
    dt_min: float = 1e-12
    cfl_fraction: float = 0.2
    stop_residual: float = 1e-6
    max_steps: int = 10000
    energy_backtrack: bool = True

    def __post_init__(self):
        if self.dt0 <= 0:
            raise ValueError("dt0 must be positive")
        if self.dt_min > self.dt0:
            raise ValueError("dt_min must not exceed dt0")
        if not 0 < self.cfl_fraction <= 1:
            raise ValueError("cfl_fraction must lie in (0, 1]")


TRACE_COLUMNS = (
    "step", "t", "dt", "E_total", "E_dirichlet", "E_B", "E_V",
    "sup_dphi2", "sup_dtphi2", "el_residual", "onmanifold_residual",
    "sup_distance",
)


@dataclass
class FlowTrace:
    """Per-step diagnostic records plus run-level constants."""

    c1: float = 0.0
    c2: float = 0.0
    config_hash: str = ""
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)   # (t, u) pairs, optional

    def append(self, **kwargs):
        self.records.append(tuple(kwargs[c] for c in TRACE_COLUMNS))

    def column(self, name: str) -> np.ndarray:
        i = TRACE_COLUMNS.index(name)
        return np.array([r[i] for r in self.records])


def cfl_ceiling(surface: DiscreteSurface, cfl_fraction: float) -> float:
    """Hard step ceiling: cfl * h^2 / 4 on grids, row-magnitude bound on meshes."""
    if surface.kind in ("torus", "patch"):
        return cfl_fraction * surface.mesh_parameter**2 / 4
    row_mag = np.asarray(np.abs(surface.stencil).sum(axis=1)).ravel()
    row_mag = row_mag / surface.area_weights
    return cfl_fraction / (2 * float(row_mag.max()))


def stability_constants(surface: DiscreteSurface, pack: FieldPack) -> tuple[float, float]:
    """Analytic growth constants: c1 = |Ric| + |R| |Hess V|, c2 = |R| |Hess V|.

    On a surface |Ric| = |R| / 2.  Returns nan when the potential has no
    analytic Hessian bound.
    """
    r = abs(surface.scalar_curvature)
    try:
        hess = pack.potential.hessian_sup_bound()
    except ValueError:
        return float("nan"), float("nan")
    return r / 2 + r * hess, r * hess


def rhs(surface: DiscreteSurface, target: EmbeddedTarget, pack: FieldPack,
        u: np.ndarray) -> np.ndarray:
    """Flow velocity at each vertex; tangent to the target at every sample.

    The coupling term from the three-form is evaluated per cell on the
    stored frames and averaged back to vertices with area weights.
    """
    lap = surface.laplacian(u)
    force = lap
    omega = pack.omega()
    if not omega.is_zero():
        d1, d2 = surface.gradient_frame(u)
        cell_pts = np.atleast_2d(target.project(surface.cell_corner_mean(u)))
        z_cells = np.atleast_2d(eval_Z(pack, target, cell_pts, d1, d2))
        force = force - surface.cells_to_vertices(z_cells)
    r = surface.scalar_curvature
    if r != 0.0:
        force = force - r * pack.potential._gradient(u)
    return np.atleast_2d(target.apply_projector(u, force))


def el_residual_field(surface, target, pack, u):
    """Euler-Lagrange defect: minus the flow velocity (shared kernel)."""
    r = -rhs(surface, target, pack, u)
    return r, float(np.linalg.norm(r, axis=1).max())


def sup_gradient_sq(surface: DiscreteSurface, u: np.ndarray) -> float:
    d1, d2 = surface.gradient_frame(u)
    return float(((d1**2).sum(axis=1) + (d2**2).sum(axis=1)).max())


def _attempt_step(surface, target, pack, state, params, velocity, e_old):
    """Forward Euler + projection with step-size halving; returns (state, dt)."""
    from .diagnostics import energy

    res = float(np.linalg.norm(velocity, axis=1).max())
    backtrack = params.energy_backtrack and pack.has_two_form
    dt = min(params.dt0, cfl_ceiling(surface, params.cfl_fraction))
    while True:
        trial = np.atleast_2d(target.project(state.u + dt * velocity))
        if backtrack:
            accept = energy(surface, target, pack, trial).total <= e_old + 1e-12
        else:
            vel_trial = rhs(surface, target, pack, trial)
            accept = float(np.linalg.norm(vel_trial, axis=1).max()) <= 10 * res + 1e-30
        if accept:
            break
        dt /= 2
        if dt < params.dt_min:
            raise StepFailureError(
                f"step size underflow below dt_min={params.dt_min}",
                {"t": state.t, "dt": dt, "residual": res},
            )
    new_state = MapState(
        u=trial,
        t=state.t + dt,
        on_manifold_residual=target.on_manifold_error(trial),
    )
    return new_state, dt


def step(surface: DiscreteSurface, target: EmbeddedTarget, pack: FieldPack,
         state: MapState, params: FlowParams,
         velocity: np.ndarray | None = None) -> MapState:
    """One accepted forward-Euler/projection step with step-size control.

    With a two-form available the step backtracks on energy increase;
    otherwise a residual guard rejects steps where the velocity sup norm
    grows more than tenfold.
    """
    from .diagnostics import energy

    vel = velocity if velocity is not None else rhs(surface, target, pack, state.u)
    e_old = (
        energy(surface, target, pack, state.u).total
        if params.energy_backtrack and pack.has_two_form
        else 0.0
    )
    new_state, _ = _attempt_step(surface, target, pack, state, params, vel, e_old)
    return new_state


def run(surface: DiscreteSurface, target: EmbeddedTarget, pack: FieldPack,
        state: MapState, params: FlowParams, anchor: np.ndarray | None = None,
        start_step: int = 0, trace: FlowTrace | None = None,
        snapshot_every: int = 0, on_step=None) -> tuple[MapState, FlowTrace, str]:
    """Iterate steps until the velocity sup norm drops below stop_residual.

    Returns (final state, trace, termination) with termination one of
    "converged", "max_steps", "step_failure".  Identical inputs produce
    identical traces; one trace record is appended per visited state
    (the loaded state is not re-recorded on resume).
    """
    from .diagnostics import energy

    if trace is None:
        c1, c2 = stability_constants(surface, pack)
        trace = FlowTrace(c1=c1, c2=c2)
    if anchor is None:
        anchor = np.zeros(state.u.shape[1])
    step_index = start_step
    pending_dt = 0.0 if step_index == 0 else None
    if step_index == 0 and snapshot_every:
        trace.snapshots.append((state.t, state.u.copy()))
    termination = "max_steps"
    while True:
        vel = rhs(surface, target, pack, state.u)
        res = float(np.linalg.norm(vel, axis=1).max())
        e = energy(surface, target, pack, state.u)
        if pending_dt is not None:
            trace.append(
                step=step_index,
                t=state.t,
                dt=pending_dt,
                E_total=e.total,
                E_dirichlet=e.dirichlet,
                E_B=e.two_form if e.two_form is not None else float("nan"),
                E_V=e.potential,
                sup_dphi2=sup_gradient_sq(surface, state.u),
                sup_dtphi2=res**2,
                el_residual=res,
                onmanifold_residual=state.on_manifold_residual,
                sup_distance=float(np.linalg.norm(state.u - anchor, axis=1).max()),
            )
        if res < params.stop_residual:
            termination = "converged"
            break
        if step_index >= params.max_steps:
            termination = "max_steps"
            break
        try:
            state, dt_used = _attempt_step(
                surface, target, pack, state, params, vel, e.total
            )
        except StepFailureError:
            termination = "step_failure"
            break
        step_index += 1
        pending_dt = dt_used
        if snapshot_every and step_index % snapshot_every == 0:
            trace.snapshots.append((state.t, state.u.copy()))
        if on_step is not None:
            on_step(step_index, state)
    return state, trace, termination


def separation(snapshots_a: list, snapshots_b: list) -> np.ndarray:
    """Per-time sup-norm separation of two (t, u) snapshot sequences."""
    if len(snapshots_a) != len(snapshots_b):
        raise ValueError("snapshot sequences have different lengths")
    out = np.empty(len(snapshots_a))
    for i, ((ta, ua), (tb, ub)) in enumerate(zip(snapshots_a, snapshots_b)):
        if abs(ta - tb) > 1e-12 * (1 + abs(ta)):
            raise ValueError(f"time grids differ at index {i}: {ta} vs {tb}")
        out[i] = np.linalg.norm(ua - ub, axis=1).max()
    return out


def separation_bound_witness(times: np.ndarray, seps: np.ndarray) -> dict:
    """Affine upper bound a + b t for log separation with intercept log s(0).

    Returns the smallest slope making the bound hold; the residuals of the
    witness envelope are <= 0 by construction and are reported for audit.
    """
    times = np.asarray(times, dtype=float)
    seps = np.asarray(seps, dtype=float)
    if seps[0] <= 0:
        raise ValueError("initial separation must be positive")
    logs = np.log(np.maximum(seps, 1e-300))
    a = logs[0]
    pos = times > 0
    slope = float(np.max((logs[pos] - a) / times[pos])) if pos.any() else 0.0
    residuals = logs - (a + slope * times)
    return {
        "intercept": float(a),
        "slope": slope,
        "max_residual": float(residuals.max()),
    }


def confinement_check(trace: FlowTrace, pack: FieldPack, lam1: float,
                      target: EmbeddedTarget, scalar_curvature: float,
                      samples: int = 200, seed: int = 0) -> dict:
    """Report which compactness hypothesis the potential satisfies and
    whether the flow stayed at bounded distance from the anchor."""
    rng = np.random.default_rng(seed)
    sup_dist = trace.column("sup_distance")
    reach = max(2.0, 2.0 * float(sup_dist.max()))
    pts = rng.uniform(-reach, reach, size=(samples, target.ambient_dim))
    if target.kind != "euclidean3":
        pts = np.atleast_2d(target.project(pts))
    hess = pack.potential._hessian(pts)
    r_hess = scalar_curvature * hess
    eigvals = np.linalg.eigvalsh(r_hess)
    dist = np.linalg.norm(pts, axis=1)
    decay_margin = eigvals[:, 0] * (1 + dist)
    hypothesis_decay = bool(decay_margin.min() > 0)
    opnorm = np.abs(eigvals).max()
    hypothesis_lambda1 = bool(opnorm <= lam1 / 2)
    half = len(sup_dist) // 2
    bounded = bool(
        half == 0
        or sup_dist[half:].max() <= sup_dist[:half].max() * (1 + 1e-9) + 1e-12
    )
    return {
        "hypothesis_decay": hypothesis_decay,
        "decay_constant": float(decay_margin.min()),
        "hypothesis_lambda1": hypothesis_lambda1,
        "hess_sup": float(opnorm),
        "lambda1": float(lam1),
        "sup_distance": float(sup_dist.max()),
        "bounded": bounded,
    }


# -- initial maps -------------------------------------------------------------


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Named deterministic substream of the experiment seed."""
    digest = hashlib.sha256(name.encode()).digest()
    sub = int.from_bytes(digest[:8], "big") % (2**63)
    return np.random.default_rng(np.random.SeedSequence([int(seed) % 2**63, sub]))


def smooth_scalar_field(surface: DiscreteSurface, rng: np.random.Generator) -> np.ndarray:
    """Smooth random field with unit sup norm (low-frequency content only)."""
    pos = surface.positions
    if surface.kind in ("torus", "patch"):
        lx = _extent(surface, 0)
        ly = _extent(surface, 1)
        out = np.zeros(surface.vertex_count)
        for kx in range(-2, 3):
            for ky in range(-2, 3):
                if kx == 0 and ky == 0:
                    continue
                amp = 1.0 / (1 + kx * kx + ky * ky)
                a, b = rng.standard_normal(2) * amp
                phase = 2 * np.pi * (kx * pos[:, 0] / lx + ky * pos[:, 1] / ly)
                out += a * np.cos(phase) + b * np.sin(phase)
    else:
        monomials = [pos[:, 0], pos[:, 1], pos[:, 2]]
        monomials += [pos[:, i] * pos[:, j] for i in range(3) for j in range(i, 3)]
        coeffs = rng.standard_normal(len(monomials))
        out = sum(c * m for c, m in zip(coeffs, monomials))
    sup = np.abs(out).max()
    return out / sup if sup > 0 else out


def smooth_vector_field(surface: DiscreteSurface, ambient_dim: int,
                        rng: np.random.Generator) -> np.ndarray:
    return np.stack(
        [smooth_scalar_field(surface, rng) for _ in range(ambient_dim)], axis=1
    )


def build_initial_map(surface: DiscreteSurface, target: EmbeddedTarget,
                      spec: dict) -> np.ndarray:
    """Construct a builtin initial map; see the config reference for kinds."""
    kind = spec.get("kind", "constant")
    q = target.ambient_dim
    seed = int(spec.get("seed", 0))
    amplitude = float(spec.get("amplitude", 0.0))
    perturb = spec.get("perturb", "none")
    rng = rng_stream(seed, "initial_map")
    pos = surface.positions

    if kind == "constant":
        value = np.asarray(spec.get("value", [1.0] + [0.0] * (q - 1)), dtype=float)
        if value.shape != (q,):
            raise ValueError(f"constant map value must have {q} components")
        u = np.tile(value, (surface.vertex_count, 1))
    elif kind == "equator":
        winding = int(spec.get("winding", 1))
        lx = _extent(surface, 0)
        theta = 2 * np.pi * winding * pos[:, 0] / lx
        if perturb == "phase":
            theta = theta + amplitude * smooth_scalar_field(surface, rng)
        u = np.zeros((surface.vertex_count, q))
        u[:, 0] = np.cos(theta)
        u[:, 1] = np.sin(theta)
    elif kind == "torus_wrap":
        if q != 4:
            raise ValueError("torus_wrap requires a 4-dimensional ambient target")
        lx = _extent(surface, 0)
        ly = _extent(surface, 1)
        wx = int(spec.get("winding", 1))
        th1 = 2 * np.pi * wx * pos[:, 0] / lx
        th2 = 2 * np.pi * wx * pos[:, 1] / ly
        if perturb == "phase":
            th1 = th1 + amplitude * smooth_scalar_field(surface, rng)
            th2 = th2 + amplitude * smooth_scalar_field(surface, rng)
        u = np.stack([np.cos(th1), np.sin(th1), np.cos(th2), np.sin(th2)], axis=1)
    elif kind == "identity":
        if surface.kind != "sphere" or surface.positions.shape[1] > q:
            raise ValueError("identity map needs a sphere domain embedded in the target space")
        u = np.zeros((surface.vertex_count, q))
        u[:, :3] = pos
    elif kind == "radial_sphere":
        if surface.kind != "sphere":
            raise ValueError("radial_sphere needs a sphere domain")
        radius = float(spec.get("radius", 1.0))
        orientation = int(spec.get("orientation", 1))
        u = np.zeros((surface.vertex_count, q))
        u[:, :3] = radius * pos
        if orientation < 0:
            u[:, 2] = -u[:, 2]
    else:
        raise ValueError(f"unknown initial map kind {kind!r}")

    if perturb == "smooth":
        xi = amplitude * smooth_vector_field(surface, q, rng)
        if spec.get("volume_neutral", False):
            nu = u - u.mean(axis=0)
            norms = np.linalg.norm(nu, axis=1, keepdims=True)
            nu = np.where(norms > 1e-12, nu / np.maximum(norms, 1e-300), 0.0)
            mean_normal = surface.integrate(np.einsum("ni,ni->n", xi, nu)) / surface.total_area
            xi = xi - mean_normal * nu
        u = u + xi
    elif perturb not in ("none", "phase"):
        raise ValueError(f"unknown perturbation kind {perturb!r}")
    return np.atleast_2d(target.project(u))


def _extent(surface: DiscreteSurface, axis: int) -> float:
    pos = surface.positions[:, axis]
    span = pos.max() - pos.min()
    if surface._periodic:
        n = surface._grid_shape[axis]
        span = span * n / (n - 1)
    return float(span)


# -- checkpoints --------------------------------------------------------------


class CheckpointError(ValueError):
    pass


def write_checkpoint(path, state: MapState, config_hash: str, step_count: int):
    u = np.atleast_2d(state.u)
    lines = [
        "hmflow-checkpoint v1",
        f"config {config_hash}",
        f"step {step_count}",
        f"t {state.t:.17g}",
        f"shape {u.shape[0]} {u.shape[1]}",
    ]
    for row in u:
        lines.append(" ".join(f"{x:.17g}" for x in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_checkpoint(path) -> tuple[MapState, str, int]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    def fail(lineno, msg):
        raise CheckpointError(f"{path}:{lineno}: {msg}")
    if not lines or lines[0] != "hmflow-checkpoint v1":
        fail(1, "bad header (expected 'hmflow-checkpoint v1')")
    try:
        config_hash = lines[1].split(" ", 1)[1]
    except IndexError:
        fail(2, "missing config hash")
    if not lines[2].startswith("step "):
        fail(3, "missing step count")
    step_count = int(lines[2].split()[1])
    if not lines[3].startswith("t "):
        fail(4, "missing time")
    t = float(lines[3].split()[1])
    parts = lines[4].split()
    if len(parts) != 3 or parts[0] != "shape":
        fail(5, "missing shape")
    n, q = int(parts[1]), int(parts[2])
    if len(lines) < 5 + n:
        fail(len(lines), f"expected {n} coordinate rows")
    u = np.empty((n, q))
    for i in range(n):
        vals = lines[5 + i].split()
        if len(vals) != q:
            fail(6 + i, f"expected {q} coordinates, found {len(vals)}")
        try:
            u[i] = [float(v) for v in vals]
        except ValueError:
            fail(6 + i, "unparseable coordinate")
    state = MapState(u=u, t=t)
    return state, config_hash, step_count
