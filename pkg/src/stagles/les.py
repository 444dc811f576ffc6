"""Coarse-grid flow models with closures, and their evaluation metrics.

Two formulations share the same right-hand side machinery: the general
one adds the closure *outside* the projection (``dif``), the
divergence-consistent one projects the sum (``dcf``).  With no closure the
two coincide.  Instability is reported, never patched: a blow-up ends the
run with the partial trajectory flagged.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .closure import ClosureParams, cnn_forward, smagorinsky
from .grid import VectorField, field_norm
from .operators import FlowParams, body_force, project_arrays, rhs
from .timestepping import BlowupError, rk_step, wray3_tableau

FORMULATIONS = ("dif", "dcf")


class ZeroClosure:
    def __call__(self, v):
        return None


class SmagorinskyClosure:
    def __init__(self, theta):
        self.theta = float(theta)

    def __call__(self, v):
        return smagorinsky(v, self.theta)


class CNNClosure:
    def __init__(self, params):
        if not isinstance(params, ClosureParams):
            raise TypeError("CNNClosure needs a ClosureParams")
        self.params = params

    def __call__(self, v):
        return cnn_forward(v, self.params)


class OracleClosure:
    """Replays recorded commutator fields in call order (validation only).

    The recording must match the consumer's stage structure: one field per
    RK stage per step, in order.
    """

    def __init__(self, fields):
        self.fields = list(fields)
        self.cursor = 0

    def __call__(self, v):
        if self.cursor >= len(self.fields):
            raise IndexError("oracle closure ran out of recorded fields")
        out = self.fields[self.cursor]
        self.cursor += 1
        return out


@dataclass
class LESModel:
    formulation: str
    closure: object  # callable(VectorField) -> VectorField | None
    params: FlowParams
    grid: object

    def __post_init__(self):
        if self.formulation not in FORMULATIONS:
            raise ValueError(f"formulation must be one of {FORMULATIONS}")
        if self.closure is None:
            self.closure = ZeroClosure()


def les_rhs(v, model, force=None):
    """Stage derivative of the model; carries its own projection placement."""
    if force is None:
        force = body_force(model.grid, model.params.force, dtype=v.dtype)
    base = rhs(v, model.params, force=force)
    m = model.closure(v)
    if m is None:
        return VectorField(model.grid, project_arrays(base.components, model.grid))
    if model.formulation == "dif":
        proj = VectorField(model.grid, project_arrays(base.components, model.grid))
        return proj + m
    total = base + m
    return VectorField(model.grid, project_arrays(total.components, model.grid))


@dataclass
class LESTrajectory:
    times: list
    states: list
    stable: bool = True
    metrics: list = field(default_factory=list)  # rows: (t, energy, div_rms[, rel_err])

    def write_csv(self, path, reference=None):
        has_err = any(len(row) > 3 for row in self.metrics)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["t", "energy", "divergence_rms"]
            if has_err:
                header.append("relative_error")
            w.writerow(header)
            for row in self.metrics:
                w.writerow([f"{x:.17g}" for x in row])


def total_energy(v):
    return 0.5 * field_norm(v, weighting="volume") ** 2


def divergence_rms(v):
    from .operators import divergence

    dv = divergence(v).values
    return float(np.sqrt(np.mean(dv.astype(np.float64) ** 2)))


def run_les(v0, model, dt, n_steps, tableau=None, observer=None, reference=None):
    """Fixed-step rollout; records (t, E, div_rms[, rel err]) per state.

    ``reference`` is an optional list of fields aligned with the produced
    states (including the initial one) used for the relative-error column.
    A blow-up terminates the run and flags the trajectory unstable.
    """
    if tableau is None:
        tableau = wray3_tableau()
    force = body_force(model.grid, model.params.force, dtype=v0.dtype)

    def rhs_fn(v):
        return les_rhs(v, model, force=force)

    traj = LESTrajectory(times=[0.0], states=[v0])

    def record(i, t, v):
        row = [t, total_energy(v), divergence_rms(v)]
        if reference is not None and i < len(reference):
            ref = reference[i]
            row.append(field_norm(v - ref) / field_norm(ref))
        traj.metrics.append(tuple(row))
        if observer is not None:
            observer(i, t, v)

    record(0, 0.0, v0)
    v = v0
    for i in range(1, n_steps + 1):
        try:
            v = rk_step(v, dt, tableau, rhs_fn, project_each_stage=False)
        except BlowupError:
            traj.stable = False
            break
        traj.times.append(i * dt)
        traj.states.append(v)
        record(i, i * dt, v)
    return traj


def aposteriori_error(v_states, u_states, times_v=None, times_u=None):
    """Mean relative trajectory error over the post-initial snapshots."""
    if len(v_states) != len(u_states):
        raise ValueError("trajectories have different lengths")
    if times_v is not None and times_u is not None:
        if not np.allclose(times_v, times_u, rtol=0, atol=1e-12):
            raise ValueError("trajectory timestamps are misaligned")
    pairs = list(zip(v_states, u_states))
    if len(pairs) > 1:
        pairs = pairs[1:]
    errs = [field_norm(v - u) / field_norm(u) for v, u in pairs]
    return float(np.mean(errs))


def filtered_reference_rollout(u0, cmap, kind, params, dt, n_steps, tableau=None):
    """Run the fine solver and capture filtered states plus stage commutators.

    Returns (filtered_states, stage_commutators) where the commutators are
    ordered exactly as an :class:`OracleClosure` on the coarse model will
    consume them.  The identity behind this: filtering each projected fine
    stage derivative equals the coarse stage derivative plus the stage's
    commutator, so replaying the recorded fields reproduces the filtered
    trajectory to round-off.
    """
    from .filters import apply_filter

    if tableau is None:
        tableau = wray3_tableau()
    fine = cmap.fine
    coarse = cmap.coarse
    force_f = body_force(fine, params.force, dtype=u0.dtype)
    force_c = body_force(coarse, params.force, dtype=u0.dtype)
    a = tableau.a_float()

    u = VectorField(fine, project_arrays(u0.components, fine))
    filtered = [apply_filter(u, cmap, kind)]
    stage_comms = []
    for _ in range(n_steps):
        stages = []
        for i in range(tableau.stages):
            comps = tuple(c.copy() for c in u.components)
            for j in range(i):
                if a[i][j] != 0.0:
                    comps = tuple(c + dt * a[i][j] * k for c, k in zip(comps, stages[j]))
            ui = VectorField(fine, comps)
            ki = project_arrays(rhs(ui, params, force=force_f).components, fine)
            stages.append(ki)
            # stage commutator: filtered fine derivative minus coarse derivative
            fki = apply_filter(VectorField(fine, ki), cmap, kind)
            ubar_i = apply_filter(ui, cmap, kind)
            kbar = project_arrays(rhs(ubar_i, params, force=force_c).components, coarse)
            stage_comms.append(fki - VectorField(coarse, kbar))
        out = tuple(c.copy() for c in u.components)
        for i in range(tableau.stages):
            bi = tableau.b_float()[i]
            if bi != 0.0:
                out = tuple(c + dt * bi * k for c, k in zip(out, stages[i]))
        u = VectorField(fine, out)
        filtered.append(apply_filter(u, cmap, kind))
    return filtered, stage_comms
