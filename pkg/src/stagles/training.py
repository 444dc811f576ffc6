"""Losses and training loops for the closure network.

A-priori training fits the network output to stored commutator fields; the
a-posteriori loss unrolls the coarse model with one RK step per stored
snapshot interval and penalizes the relative trajectory defect.  Both
gradients come from the tape in :mod:`stagles.autodiff`.

Iteration semantics: one iteration consumes one batch; epochs are seeded
shuffles of the training split.  Validation runs on a fixed cadence and
the parameters with the lowest validation loss are the ones returned.
Diverged rollouts contribute a sentinel loss and their update is skipped.
"""

import csv
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import AdamState, Tape, adam_step, clip_gradient, cosine_lr
from .closure import ClosureParams, cnn_forward, collocate_arrays, save_params
from .grid import VectorField, field_norm
from .les import LESModel, SmagorinskyClosure, aposteriori_error, les_rhs
from .operators import body_force
from .timestepping import BlowupError, rk_step, wray3_tableau

BLOWUP_SENTINEL = 1e6


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "prior"  # "prior" | "post"
    batch_size: int = 8
    n_iterations: int = 500
    n_unroll: int = 50
    lr_start: float = 1e-3
    lr_end: float = 1e-6
    seed: int = 0
    validation_every: int = 20
    formulation: str = "dcf"  # used by the a-posteriori loss
    max_grad_norm: float = None  # optional clip for unstable runs

    def __post_init__(self):
        if self.loss not in ("prior", "post"):
            raise ValueError("loss must be 'prior' or 'post'")
        if self.n_unroll < 1 or self.n_iterations < 0 or self.batch_size < 1:
            raise ValueError("budgets must be positive")


@dataclass
class PairSample:
    """One filtered snapshot with its commutator target."""

    ubar: VectorField
    comm: VectorField


@dataclass
class TrajectoryWindow:
    """Consecutive filtered snapshots separated by a fixed stored dt."""

    snapshots: list
    dt: float


@dataclass
class PairDataset:
    train: list
    valid: list


@dataclass
class TrajectoryDataset:
    train: list
    valid: list


# ---------------------------------------------------------------------------
# losses (forward evaluation)
# ---------------------------------------------------------------------------


def loss_prior(batch, params):
    """Mean of |m(ubar) - c|^2 / |c|^2 over the batch."""
    if not batch:
        raise ValueError("empty batch")
    acc = 0.0
    for sample in batch:
        cn = field_norm(sample.comm)
        if cn == 0.0:
            raise ValueError("zero-norm commutator target in batch")
        m = cnn_forward(sample.ubar, params)
        acc += (field_norm(m - sample.comm) / cn) ** 2
    return acc / len(batch)


def loss_post(window, closure, flow_params, formulation, n_unroll=None):
    """Relative unrolled trajectory defect driven by stored snapshots."""
    snaps = window.snapshots
    if n_unroll is None:
        n_unroll = len(snaps) - 1
    if len(snaps) < n_unroll + 1:
        raise ValueError(f"window provides {len(snaps)} snapshots, need {n_unroll + 1}")
    grid = snaps[0].grid
    model = LESModel(formulation=formulation, closure=closure, params=flow_params, grid=grid)
    force = body_force(grid, flow_params.force, dtype=snaps[0].dtype)
    tableau = wray3_tableau()

    def rhs_fn(v):
        return les_rhs(v, model, force=force)

    v = snaps[0]
    acc = 0.0
    for i in range(1, n_unroll + 1):
        try:
            v = rk_step(v, window.dt, tableau, rhs_fn, project_each_stage=False)
        except BlowupError:
            warnings.warn("LES rollout blew up; returning sentinel loss", RuntimeWarning)
            return BLOWUP_SENTINEL
        ref = snaps[i]
        acc += (field_norm(v - ref) / field_norm(ref)) ** 2
    return acc / n_unroll


# ---------------------------------------------------------------------------
# tape construction
# ---------------------------------------------------------------------------


def _cnn_on_tape(tape, theta_var, arch, channels_var):
    x = channels_var
    for ly, (ksl, kshape, bsl) in zip(arch.layers, arch.slices()):
        K = tape.apply("slice1d", theta_var, start=ksl.start, shape=kshape)
        if bsl is not None:
            b = tape.apply("slice1d", theta_var, start=bsl.start, shape=(ly.out_channels,))
            x = tape.apply("conv", x, K, b)
        else:
            x = tape.apply("conv", x, K)
        if ly.activation == "tanh":
            x = tape.apply("tanh", x)
    return tape.apply("decollocate", x)


def grad_loss_prior(batch, theta, arch):
    """Value and gradient of the a-priori loss at ``theta``."""
    tape = Tape()
    theta_var = tape.leaf(np.asarray(theta, dtype=np.float64), name="theta")
    total = None
    for sample in batch:
        cn2 = field_norm(sample.comm) ** 2
        if cn2 == 0.0:
            raise ValueError("zero-norm commutator target in batch")
        x = tape.leaf(collocate_arrays(sample.ubar.components), name="input")
        m = _cnn_on_tape(tape, theta_var, arch, x)
        c = tape.leaf(tuple(sample.comm.components), name="target")
        term = tape.apply("sqnorm", tape.apply("sub", m, c))
        term = tape.apply("sscale", term, c=1.0 / (len(batch) * cn2))
        total = term if total is None else tape.apply("sadd", total, term)
    g = tape.grad(total, theta_var)
    return total.value, g


def _les_rhs_on_tape(tape, v, theta_var, arch, grid, nu, force_comps, formulation):
    conv = tape.apply("convection", v, h=grid.h)
    diff = tape.apply("diffusion", v, h=grid.h, nu=nu)
    s = tape.apply("add", conv, diff)
    if force_comps is not None:
        s = tape.apply("cadd", s, const=force_comps)
    x = tape.apply("collocate", v)
    m = _cnn_on_tape(tape, theta_var, arch, x)
    if formulation == "dif":
        return tape.apply("add", tape.apply("project", s, grid=grid), m)
    return tape.apply("project", tape.apply("add", s, m), grid=grid)


def grad_loss_post(window, theta, arch, flow_params, formulation, n_unroll=None):
    """Value and gradient of the a-posteriori loss at ``theta``.

    Raises FloatingPointError when the unrolled trajectory produces
    non-finite adjoints or states (handled by the caller as a rejected
    step).
    """
    snaps = window.snapshots
    if n_unroll is None:
        n_unroll = len(snaps) - 1
    if len(snaps) < n_unroll + 1:
        raise ValueError(f"window provides {len(snaps)} snapshots, need {n_unroll + 1}")
    grid = snaps[0].grid
    tableau = wray3_tableau()
    a = tableau.a_float()
    b = tableau.b_float()
    force = body_force(grid, flow_params.force, dtype=np.float64)
    force_comps = tuple(force.components)
    if all(np.all(fc == 0) for fc in force_comps):
        force_comps = None

    tape = Tape()
    theta_var = tape.leaf(np.asarray(theta, dtype=np.float64), name="theta")
    v = tape.leaf(tuple(snaps[0].components), name="v0")
    total = None
    for i in range(1, n_unroll + 1):
        stages = []
        for si in range(tableau.stages):
            vi = v
            for sj in range(si):
                if a[si][sj] != 0.0:
                    vi = tape.apply("axpy", vi, stages[sj], c=window.dt * a[si][sj])
            k = _les_rhs_on_tape(
                tape, vi, theta_var, arch, grid, flow_params.viscosity, force_comps, formulation
            )
            if not all(np.all(np.isfinite(c)) for c in k.value):
                raise FloatingPointError(f"rollout blew up in step {i}")
            stages.append(k)
        for si in range(tableau.stages):
            if b[si] != 0.0:
                v = tape.apply("axpy", v, stages[si], c=window.dt * b[si])
        ref = snaps[i]
        rn2 = field_norm(ref) ** 2
        term = tape.apply("sqnorm", tape.apply("sub", v, tape.leaf(tuple(ref.components))))
        term = tape.apply("sscale", term, c=1.0 / (n_unroll * rn2))
        total = term if total is None else tape.apply("sadd", total, term)
    g = tape.grad(total, theta_var)
    return total.value, g


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------


def _batches(n_samples, batch_size, n_iterations, seed):
    """Seeded epochs of shuffled batches, truncated to the iteration budget."""
    rng = np.random.default_rng(seed)
    produced = 0
    while produced < n_iterations:
        order = rng.permutation(n_samples)
        for start in range(0, n_samples, batch_size):
            if produced >= n_iterations:
                return
            idx = order[start : start + batch_size]
            if len(idx) == 0:
                break
            yield idx
            produced += 1


class _MetricsLog:
    def __init__(self, path):
        self.path = path
        self.t0 = time.monotonic()
        if path is not None:
            with open(path, "w", newline="") as fh:
                csv.writer(fh).writerow(
                    ["iteration", "lr", "train_loss", "validation_loss", "wall_time_s"]
                )

    def row(self, iteration, lr, train_loss, valid_loss):
        if self.path is None:
            return
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow(
                [
                    iteration,
                    f"{lr:.8g}",
                    f"{train_loss:.10g}",
                    "" if valid_loss is None else f"{valid_loss:.10g}",
                    f"{time.monotonic() - self.t0:.3f}",
                ]
            )


@dataclass
class TrainResult:
    params: ClosureParams
    best_validation: float
    history: list = field(default_factory=list)  # (iteration, lr, train, valid)


def train_prior(dataset, arch, config, theta0=None, log_path=None, checkpoint_path=None):
    """A-priori training with Adam and cosine annealing; keeps the best-validation θ."""
    if theta0 is None:
        raise ValueError("provide initial parameters (init_params(arch, seed))")
    theta = np.array(theta0.theta, dtype=np.float64)
    state = AdamState.zeros(theta.size)
    log = _MetricsLog(log_path)
    best_theta = theta.copy()
    best_valid = _validate_prior(dataset.valid, theta, arch)
    history = []
    it = 0
    for idx in _batches(len(dataset.train), config.batch_size, config.n_iterations, config.seed):
        lr = cosine_lr(it, max(config.n_iterations, 1), config.lr_start, config.lr_end)
        batch = [dataset.train[i] for i in idx]
        value, g = grad_loss_prior(batch, theta, arch)
        g = clip_gradient(g, config.max_grad_norm)
        theta, state = adam_step(theta, g, state, lr)
        it += 1
        valid = None
        if it % config.validation_every == 0 or it == config.n_iterations:
            valid = _validate_prior(dataset.valid, theta, arch)
            if valid < best_valid:
                best_valid = valid
                best_theta = theta.copy()
                if checkpoint_path is not None:
                    save_params(ClosureParams(best_theta, arch), checkpoint_path)
        history.append((it, lr, value, valid))
        log.row(it, lr, value, valid)
    return TrainResult(
        params=ClosureParams(best_theta, arch), best_validation=best_valid, history=history
    )


def _validate_prior(samples, theta, arch):
    if not samples:
        return float("inf")
    return loss_prior(samples, ClosureParams(np.asarray(theta), arch))


def train_post(dataset, theta_init, arch, flow_params, config, log_path=None, checkpoint_path=None):
    """A-posteriori fine-tuning; Adam restarts without the prior history terms."""
    theta = np.array(theta_init.theta if isinstance(theta_init, ClosureParams) else theta_init)
    state = AdamState.zeros(theta.size)
    log = _MetricsLog(log_path)
    best_theta = theta.copy()
    best_valid = _validate_post(dataset.valid, theta, arch, flow_params, config)
    history = []
    it = 0
    for idx in _batches(len(dataset.train), config.batch_size, config.n_iterations, config.seed):
        lr = cosine_lr(it, max(config.n_iterations, 1), config.lr_start, config.lr_end)
        value = 0.0
        g = np.zeros_like(theta)
        rejected = False
        for i in idx:
            try:
                v, gi = grad_loss_post(
                    dataset.train[i], theta, arch, flow_params, config.formulation, config.n_unroll
                )
            except FloatingPointError:
                warnings.warn("rejected update: rollout diverged", RuntimeWarning)
                value = BLOWUP_SENTINEL
                rejected = True
                break
            value += v / len(idx)
            g += gi / len(idx)
        if not rejected:
            g = clip_gradient(g, config.max_grad_norm)
            theta, state = adam_step(theta, g, state, lr)
        it += 1
        valid = None
        if it % config.validation_every == 0 or it == config.n_iterations:
            valid = _validate_post(dataset.valid, theta, arch, flow_params, config)
            if valid < best_valid:
                best_valid = valid
                best_theta = theta.copy()
                if checkpoint_path is not None:
                    save_params(ClosureParams(best_theta, arch), checkpoint_path)
        history.append((it, lr, value, valid))
        log.row(it, lr, value, valid)
    return TrainResult(
        params=ClosureParams(best_theta, arch), best_validation=best_valid, history=history
    )


def _validate_post(windows, theta, arch, flow_params, config):
    if not windows:
        return float("inf")
    from .les import CNNClosure

    closure = CNNClosure(ClosureParams(np.asarray(theta), arch))
    vals = [
        loss_post(w, closure, flow_params, config.formulation, config.n_unroll) for w in windows
    ]
    return float(np.mean(vals))


def default_smagorinsky_grid():
    return np.arange(0, 301) / 1000.0


def smagorinsky_search(windows, flow_params, formulation="dcf", thetas=None, n_unroll=None):
    """Grid search on the mean relative a-posteriori training error.

    Ties break toward the smaller coefficient (ascending scan, strict
    improvement required).
    """
    if thetas is None:
        thetas = default_smagorinsky_grid()
    best_theta = None
    best_err = np.inf
    tableau = wray3_tableau()
    for theta in thetas:
        closure = SmagorinskyClosure(theta)
        errs = []
        for w in windows:
            n = len(w.snapshots) - 1 if n_unroll is None else n_unroll
            grid = w.snapshots[0].grid
            model = LESModel(formulation=formulation, closure=closure, params=flow_params, grid=grid)
            force = body_force(grid, flow_params.force, dtype=w.snapshots[0].dtype)

            def rhs_fn(v):
                return les_rhs(v, model, force=force)

            v = w.snapshots[0]
            states = [v]
            diverged = False
            for _ in range(n):
                try:
                    v = rk_step(v, w.dt, tableau, rhs_fn, project_each_stage=False)
                except BlowupError:
                    diverged = True
                    break
                states.append(v)
            if diverged:
                errs.append(BLOWUP_SENTINEL)
            else:
                errs.append(aposteriori_error(states, w.snapshots[: n + 1]))
        err = float(np.mean(errs))
        if err < best_err:
            best_err = err
            best_theta = float(theta)
    return best_theta, best_err
