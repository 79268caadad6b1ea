"""Experiment orchestration: build objects from a config, drive the flow,
emit deterministic artifacts.

Every run writes four files into the output directory:

* ``trace.csv``       fixed, versioned column set; one row per visited state
* ``final_state.chk`` text checkpoint (17 significant digits)
* ``diagnostics.json``requested diagnostic records
* ``config.resolved`` normalized configuration sufficient to reproduce the run

Exit codes: 0 converged, 2 max_steps, 3 step_failure, 1 configuration or
I/O error.
"""

from __future__ import annotations

import json
import os
import sys
from collections import deque

import numpy as np

from . import diagnostics as diag
from . import flow as flowmod
from .config import ConfigError, ExperimentConfig
from .fields import (
    ConstantTwoForm,
    FieldPack,
    LinearPotential,
    Polynomial,
    PolyTwoForm,
    PolyVolumeThreeForm,
    QuadraticPotential,
    RadialContractionFourSpace,
    RadialTwoForm,
    VolumeThreeForm,
    ZeroPotential,
    ZeroThreeForm,
    ZeroTwoForm,
)
from .flow import FlowParams, FlowTrace, MapState, TRACE_COLUMNS
from .surface import build_patch, build_sphere, build_torus
from .target import make_target

EXIT_BY_TERMINATION = {"converged": 0, "max_steps": 2, "step_failure": 3}


def build_surface(cfg: ExperimentConfig):
    kind = cfg["domain.kind"]
    if kind == "torus":
        surface = build_torus(cfg["domain.n"], cfg["domain.Lx"], cfg["domain.Ly"])
    elif kind == "patch":
        surface = build_patch(cfg["domain.n"], cfg["domain.Lx"], cfg["domain.Ly"])
    else:
        surface = build_sphere(cfg["domain.subdiv"])
    override = cfg["domain.scalar_curvature_override"]
    if override is not None:
        surface.scalar_curvature = float(override)
    return surface


def build_target(cfg: ExperimentConfig):
    kind = cfg["target.kind"]
    if kind == "ellipsoid":
        return make_target(kind, semi_axes=tuple(cfg["target.semi_axes"]))
    return make_target(kind)


def _parse_poly_two_form(text: str, q: int) -> PolyTwoForm:
    entries: dict[tuple[int, int], Polynomial] = {}
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = [p.strip() for p in chunk.split(",")]
        if len(parts) != 3 + q:
            raise ConfigError(
                [f"fields.B.poly: expected 'i,j,coef,e1..e{q}' per term, got {chunk!r}"]
            )
        i, j = int(parts[0]), int(parts[1])
        coef = float(parts[2])
        expo = tuple(int(p) for p in parts[3:])
        poly = entries.setdefault((i, j), Polynomial(q))
        poly.terms[expo] = poly.terms.get(expo, 0.0) + coef
    return PolyTwoForm(q, entries)


def _parse_poly_volume(text: str) -> Polynomial:
    poly = Polynomial(3)
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = [p.strip() for p in chunk.split(",")]
        if len(parts) != 4:
            raise ConfigError(
                [f"fields.Omega.poly: expected 'coef,e1,e2,e3' per term, got {chunk!r}"]
            )
        coef = float(parts[0])
        expo = tuple(int(p) for p in parts[1:])
        poly.terms[expo] = poly.terms.get(expo, 0.0) + coef
    return poly


def build_fields(cfg: ExperimentConfig) -> FieldPack:
    q = cfg.ambient_dim()

    v_kind = cfg["fields.V.kind"]
    if v_kind == "zero":
        potential = ZeroPotential()
    elif v_kind == "linear":
        a = list(cfg["fields.V.a"])
        if len(a) != q:
            raise ConfigError([f"fields.V.a: expected {q} components"])
        potential = LinearPotential(a, cfg["fields.V.offset"])
    else:
        y0 = list(cfg["fields.V.y0"])
        if len(y0) != q:
            raise ConfigError([f"fields.V.y0: expected {q} components"])
        potential = QuadraticPotential(y0, cfg["fields.V.c"])

    b_kind = cfg["fields.B.kind"]
    if b_kind == "none":
        two_form = None
    elif b_kind == "zero":
        two_form = ZeroTwoForm(q)
    elif b_kind == "radial":
        two_form = RadialTwoForm(cfg["fields.B.f"])
    elif b_kind == "constant":
        coeffs = np.zeros((q, q))
        for chunk in str(cfg["fields.B.coeffs"]).split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            parts = chunk.split(",")
            if len(parts) != 3:
                raise ConfigError(
                    [f"fields.B.coeffs: expected 'i,j,value' per term, got {chunk!r}"]
                )
            i, j, val = int(parts[0]), int(parts[1]), float(parts[2])
            coeffs[i, j] += val
            coeffs[j, i] -= val
        two_form = ConstantTwoForm(coeffs)
    else:
        two_form = _parse_poly_two_form(str(cfg["fields.B.poly"]), q)

    o_kind = cfg["fields.Omega.kind"]
    if o_kind == "auto":
        three_form = two_form.exterior_derivative() if two_form is not None else ZeroThreeForm(q)
    elif o_kind == "zero":
        three_form = ZeroThreeForm(q)
    elif o_kind == "volume":
        three_form = VolumeThreeForm(cfg["fields.Omega.f"])
    elif o_kind == "poly_volume":
        three_form = PolyVolumeThreeForm(_parse_poly_volume(str(cfg["fields.Omega.poly"])))
    else:
        three_form = RadialContractionFourSpace(cfg["fields.Omega.f"])

    exact_flag = cfg["fields.omega_exact"]
    if exact_flag == "auto":
        omega_is_exact = o_kind == "auto" and two_form is not None
    else:
        omega_is_exact = exact_flag == "true"
    return FieldPack(
        potential=potential,
        two_form=two_form,
        three_form=three_form,
        omega_is_exact=omega_is_exact,
    )


def build_flow_params(cfg: ExperimentConfig, pack: FieldPack,
                      max_steps_override: int | None = None) -> FlowParams:
    backtrack_flag = cfg["flow.energy_backtrack"]
    backtrack = pack.has_two_form if backtrack_flag == "auto" else backtrack_flag == "true"
    return FlowParams(
        dt0=cfg["flow.dt0"],
        dt_min=cfg["flow.dt_min"],
        cfl_fraction=cfg["flow.cfl_fraction"],
        stop_residual=cfg["flow.stop_residual"],
        max_steps=cfg["flow.max_steps"] if max_steps_override is None else max_steps_override,
        energy_backtrack=backtrack,
    )


def _initial_map_spec(cfg: ExperimentConfig) -> dict:
    return {
        "kind": cfg["initial_map.kind"],
        "value": list(cfg["initial_map.value"]),
        "winding": cfg["initial_map.winding"],
        "radius": cfg["initial_map.radius"],
        "orientation": cfg["initial_map.orientation"],
        "perturb": cfg["initial_map.perturb"],
        "amplitude": cfg["initial_map.amplitude"],
        "seed": cfg["initial_map.seed"],
        "volume_neutral": cfg["initial_map.volume_neutral"],
    }


def _anchor(cfg: ExperimentConfig) -> np.ndarray:
    anchor = np.asarray(cfg["flow.anchor"], dtype=float)
    q = cfg.ambient_dim()
    if anchor.shape != (q,):
        if np.allclose(anchor, 0):
            anchor = np.zeros(q)
        else:
            raise ConfigError([f"flow.anchor: expected {q} components"])
    return anchor


def format_float(x: float) -> str:
    return f"{x:.17g}"


def write_trace_csv(path, trace: FlowTrace):
    lines = [
        "# hmflow-trace v1",
        f"# c1 = {format_float(trace.c1)}",
        f"# c2 = {format_float(trace.c2)}",
        f"# config = {trace.config_hash}",
        ",".join(TRACE_COLUMNS),
    ]
    for rec in trace.records:
        parts = [str(rec[0])] + [format_float(v) for v in rec[1:]]
        lines.append(",".join(parts))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _state_diagnostics(names, surface, target, pack, state, cfg):
    """Diagnostics computable from a single state."""
    out = {}
    u = state.u
    if "energy" in names:
        e = diag.energy(surface, target, pack, u)
        out["energy"] = {
            "total": e.total,
            "dirichlet": e.dirichlet,
            "two_form": e.two_form,
            "potential": e.potential,
        }
    if "el_residual" in names:
        _, sup = diag.el_residual(surface, target, pack, u)
        out["el_residual"] = {"sup": sup}
    if "stress_energy" in names:
        s = diag.stress_energy(surface, target, pack, u)
        _, div_sup = diag.divergence_stress_energy(surface, target, pack, u)
        trace_dev = float(
            np.abs(
                s[:, 0, 0] + s[:, 1, 1]
                - 2 * surface.scalar_curvature
                * pack.potential._value(
                    np.atleast_2d(target.project(surface.cell_corner_mean(u)))
                )
            ).max()
        )
        out["stress_energy"] = {
            "divergence_sup": div_sup,
            "symmetry_exact": True,
            "trace_identity_dev": trace_dev,
        }
    if "bochner" in names:
        rep = diag.bochner_residual(surface, target, pack, u)
        out["bochner"] = {
            "sup_substituted": rep.sup_substituted,
            "sup_raw": rep.sup_raw,
        }
    if "v_bochner" in names:
        _, sup = diag.v_bochner_residual(surface, target, pack, u)
        out["v_bochner"] = {"sup": sup}
    if "second_variation" in names:
        n_dirs = cfg["diagnostics.second_variation.directions"]
        seed = cfg["initial_map.seed"]
        values = []
        for k in range(n_dirs):
            var = diag.VariationField.random_smooth(
                surface, target, u, seed=seed + 1000 + k
            )
            values.append(diag.second_variation(surface, target, pack, u, var))
        out["second_variation"] = {"directions": n_dirs, "values": values,
                                   "min": min(values)}
    if "monotonicity" in names:
        if surface.kind in ("patch", "sphere"):
            mcfg = diag.MonotonicityConfig(
                pole=cfg["diagnostics.monotonicity.pole"],
                sigma=cfg["diagnostics.monotonicity.sigma"],
                radii=list(cfg["diagnostics.monotonicity.radii"]),
            )
            out["monotonicity"] = diag.monotonicity_ratio(surface, target, pack, u, mcfg)
        else:
            out["monotonicity"] = {"skipped": "domain has no metric balls"}
    if "eigenvalue" in names:
        out["eigenvalue"] = {"lambda1": surface.first_eigenvalue()}
    return out


def run_experiment(cfg: ExperimentConfig, output_dir=None, quiet: bool = False,
                   max_steps_override: int | None = None) -> int:
    out_dir = output_dir if output_dir is not None else cfg["output.directory"]
    try:
        os.makedirs(out_dir, exist_ok=True)
        probe = os.path.join(out_dir, ".write_probe")
        with open(probe, "w") as fh:
            fh.write("")
        os.remove(probe)
    except OSError as exc:
        print(f"error: output directory not writable: {exc}", file=sys.stderr)
        return 1

    surface = build_surface(cfg)
    target = build_target(cfg)
    pack = build_fields(cfg)
    params = build_flow_params(cfg, pack, max_steps_override)
    u0 = flowmod.build_initial_map(surface, target, _initial_map_spec(cfg))
    state = MapState(u=u0, t=0.0, on_manifold_residual=target.on_manifold_error(u0))
    anchor = _anchor(cfg)

    config_hash = cfg.config_hash()
    c1, c2 = flowmod.stability_constants(surface, pack)
    trace = FlowTrace(c1=c1, c2=c2, config_hash=config_hash)

    names = set(cfg["diagnostics.which"])
    cadence = cfg["diagnostics.cadence"]
    snapshot_every = cadence if "flow_bochner" in names else 0
    checkpoint_every = cfg["output.checkpoint_every"]

    on_step = None
    if checkpoint_every:
        def on_step(step_index, st):
            if step_index % checkpoint_every == 0:
                flowmod.write_checkpoint(
                    os.path.join(out_dir, f"checkpoint_{step_index:08d}.chk"),
                    st, config_hash, step_index,
                )

    state, trace, termination = flowmod.run(
        surface, target, pack, state, params, anchor=anchor, trace=trace,
        snapshot_every=snapshot_every, on_step=on_step,
    )
    if snapshot_every:
        trace.snapshots = list(deque(trace.snapshots, maxlen=64))

    write_trace_csv(os.path.join(out_dir, "trace.csv"), trace)
    steps_done = trace.records[-1][0] if trace.records else 0
    flowmod.write_checkpoint(
        os.path.join(out_dir, "final_state.chk"), state, config_hash, steps_done
    )
    with open(os.path.join(out_dir, "config.resolved"), "w", encoding="utf-8") as fh:
        fh.write(cfg.normalized())

    report = {
        "config": config_hash,
        "termination": termination,
        "steps": int(steps_done),
        "t_final": state.t,
        "final": _state_diagnostics(names, surface, target, pack, state, cfg),
    }
    if "confinement" in names:
        lam1 = surface.first_eigenvalue()
        report["confinement"] = flowmod.confinement_check(
            trace, pack, lam1, target, surface.scalar_curvature,
            seed=cfg["initial_map.seed"],
        )
    if "flow_bochner" in names:
        if len(trace.snapshots) >= 3:
            kappa = target.curvature_bound()
            z_sup = diag.z_sup_estimate(pack, target, seed=cfg["initial_map.seed"])
            nz_sup = diag.nabla_z_sup_estimate(pack, target, seed=cfg["initial_map.seed"])
            report["flow_bochner"] = diag.flow_bochner_check(
                surface, target, pack, trace.snapshots, kappa, z_sup, nz_sup,
                trace.c1, trace.c2,
            )
        else:
            report["flow_bochner"] = {"skipped": "fewer than 3 snapshots"}
    _write_json(os.path.join(out_dir, "diagnostics.json"), report)

    if not quiet:
        print(f"termination: {termination} after {steps_done} steps, t = {state.t:.6g}")
        print(f"outputs in {out_dir}")
    return EXIT_BY_TERMINATION[termination]


def resume_experiment(checkpoint_path, cfg: ExperimentConfig, output_dir=None,
                      quiet: bool = False, max_steps_override: int | None = None) -> int:
    out_dir = output_dir if output_dir is not None else cfg["output.directory"]
    try:
        state, saved_hash, start_step = flowmod.read_checkpoint(checkpoint_path)
    except (OSError, flowmod.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    config_hash = cfg.config_hash()
    if saved_hash != config_hash:
        print(
            "error: checkpoint was produced by a different configuration "
            f"({saved_hash[:12]}... != {config_hash[:12]}...)",
            file=sys.stderr,
        )
        return 1
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        print(f"error: output directory not writable: {exc}", file=sys.stderr)
        return 1

    surface = build_surface(cfg)
    target = build_target(cfg)
    pack = build_fields(cfg)
    params = build_flow_params(cfg, pack, max_steps_override)
    state.on_manifold_residual = target.on_manifold_error(state.u)
    anchor = _anchor(cfg)
    c1, c2 = flowmod.stability_constants(surface, pack)
    trace = FlowTrace(c1=c1, c2=c2, config_hash=config_hash)

    state, trace, termination = flowmod.run(
        surface, target, pack, state, params, anchor=anchor, start_step=start_step,
        trace=trace,
    )
    write_trace_csv(os.path.join(out_dir, "trace.csv"), trace)
    steps_done = trace.records[-1][0] if trace.records else start_step
    flowmod.write_checkpoint(
        os.path.join(out_dir, "final_state.chk"), state, config_hash, steps_done
    )
    with open(os.path.join(out_dir, "config.resolved"), "w", encoding="utf-8") as fh:
        fh.write(cfg.normalized())
    names = set(cfg["diagnostics.which"])
    report = {
        "config": config_hash,
        "termination": termination,
        "steps": int(steps_done),
        "t_final": state.t,
        "final": _state_diagnostics(names, surface, target, pack, state, cfg),
    }
    _write_json(os.path.join(out_dir, "diagnostics.json"), report)
    if not quiet:
        print(f"termination: {termination} after {steps_done} steps, t = {state.t:.6g}")
    return EXIT_BY_TERMINATION[termination]


def diagnose_checkpoint(checkpoint_path, cfg: ExperimentConfig, output_dir=None,
                        quiet: bool = False) -> int:
    out_dir = output_dir if output_dir is not None else cfg["output.directory"]
    try:
        state, saved_hash, step_count = flowmod.read_checkpoint(checkpoint_path)
    except (OSError, flowmod.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    config_hash = cfg.config_hash()
    if saved_hash != config_hash:
        print(
            "error: checkpoint/config hash mismatch "
            f"({saved_hash[:12]}... != {config_hash[:12]}...)",
            file=sys.stderr,
        )
        return 1
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        print(f"error: output directory not writable: {exc}", file=sys.stderr)
        return 1
    surface = build_surface(cfg)
    target = build_target(cfg)
    pack = build_fields(cfg)
    names = set(cfg["diagnostics.which"])
    report = {
        "config": config_hash,
        "checkpoint_step": int(step_count),
        "t": state.t,
        "final": _state_diagnostics(names, surface, target, pack, state, cfg),
    }
    for name in names & {"confinement", "flow_bochner"}:
        report[name] = {"skipped": "requires a flow trace"}
    _write_json(os.path.join(out_dir, "diagnostics.json"), report)
    if not quiet:
        print(f"diagnostics written to {os.path.join(out_dir, 'diagnostics.json')}")
    return 0


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
