"""Dataset generation and persistence.

Field files use the "SGF1" layout: 4-byte magic, u8 kind (0 scalar,
1 vector), u8 dimension, u8 precision (32 or 64), per-axis u64 cell
counts, per-axis f64 box lengths, then one payload block per component in
axis-1-fastest order with little-endian floats.  Box origins are not
persisted; loaded grids start at zero.

A dataset run integrates one fine trajectory per seed, discards a burn-in
interval, then records filtered snapshots and commutator fields for every
(coarse size, filter kind) combination at a fixed step stride.  Snapshot
commutators are always computed in 64-bit and cast to the dataset
precision on write.  The manifest (JSON) indexes every file with an
FNV-1a checksum.
"""

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .filters import CoarseningMap, apply_filter, commutator
from .grid import ScalarField, VectorField, make_grid
from .initial_conditions import SpectrumSpec, random_spectral_field
from .operators import BodyForceSpec, FlowParams, body_force, rhs
from .timestepping import StepControl, integrate, rk_step, wray3_tableau

SCHEMA_VERSION = 1

_PRECISIONS = {32: np.float32, 64: np.float64}


def fnv1a64(data):
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def fnv1a64_file(path):
    with open(path, "rb") as fh:
        return fnv1a64(fh.read())


# ---------------------------------------------------------------------------
# SGF1 field files
# ---------------------------------------------------------------------------


def save_field(fld, path):
    vector = isinstance(fld, VectorField)
    grid = fld.grid
    dtype = fld.dtype
    if dtype == np.float32:
        precision, fmt = 32, "<f4"
    elif dtype == np.float64:
        precision, fmt = 64, "<f8"
    else:
        raise ValueError(f"unsupported dtype {dtype}")
    with open(path, "wb") as fh:
        fh.write(b"SGF1")
        fh.write(struct.pack("<BBB", 1 if vector else 0, grid.d, precision))
        for n in grid.N:
            fh.write(struct.pack("<Q", n))
        for a in range(grid.d):
            fh.write(struct.pack("<d", grid.axis_extent(a)))
        arrays = fld.components if vector else (fld.values,)
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr.ravel(order="F")).astype(fmt).tobytes())


def load_field(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != b"SGF1":
            raise ValueError(f"not a field file (magic {magic!r})")
        kind, d, precision = struct.unpack("<BBB", fh.read(3))
        if kind not in (0, 1) or d not in (2, 3) or precision not in _PRECISIONS:
            raise ValueError(f"corrupt field header (kind={kind}, d={d}, bits={precision})")
        N = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(d))
        lengths = tuple(struct.unpack("<d", fh.read(8))[0] for _ in range(d))
        grid = make_grid(d, N, lengths)
        dtype = _PRECISIONS[precision]
        count = int(np.prod(N))
        n_comp = d if kind == 1 else 1
        arrays = []
        for _ in range(n_comp):
            raw = fh.read(count * dtype().itemsize)
            if len(raw) != count * dtype().itemsize:
                raise ValueError("truncated field payload")
            flat = np.frombuffer(raw, dtype="<f4" if precision == 32 else "<f8")
            arrays.append(flat.astype(dtype).reshape(N, order="F"))
    if kind == 1:
        return VectorField(grid, tuple(arrays))
    return ScalarField(grid, arrays[0])


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GenerateConfig:
    d: int = 2
    dns_n: int = 256
    lengths: object = 1.0
    viscosity: float = 5e-4
    force: BodyForceSpec = field(default_factory=lambda: BodyForceSpec("kolmogorov", 1.0, 4))
    kappa_p: float = 20.0
    seeds: tuple = (0,)
    t_burn: float = 0.5
    t_end: float = 1.5
    dt: float = 1e-3
    burn_sigma: float = 0.85
    stride: int = 5
    coarse_sizes: tuple = (32,)
    filter_kinds: tuple = ("fa",)
    precision: int = 64

    def __post_init__(self):
        if self.precision not in _PRECISIONS:
            raise ValueError("precision must be 32 or 64")
        for k in self.filter_kinds:
            if k not in ("fa", "va"):
                raise ValueError(f"unknown filter kind {k!r}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


def _snapshot_name(traj, index, n, kind, what):
    return f"traj{traj:02d}/t{index:05d}_n{n}_{kind}_{what}.sgf"


def generate_dataset(config, out_dir):
    """Run the fine solver per seed and write filtered snapshot datasets.

    Returns the manifest dict (also written to ``manifest.json``).
    """
    os.makedirs(out_dir, exist_ok=True)
    grid = make_grid(config.d, (config.dns_n,) * config.d, config.lengths)
    params = FlowParams(viscosity=config.viscosity, force=config.force)
    maps = {n: CoarseningMap.create(grid, (n,) * config.d) for n in config.coarse_sizes}
    tableau = wray3_tableau()
    dtype = _PRECISIONS[config.precision]
    snapshot_dt = config.dt * config.stride

    files = []
    written = []
    try:
        for ti, seed in enumerate(config.seeds):
            os.makedirs(os.path.join(out_dir, f"traj{ti:02d}"), exist_ok=True)
            u = random_spectral_field(grid, SpectrumSpec(config.kappa_p, seed=seed))
            if config.t_burn > 0:
                u = integrate(
                    u,
                    config.t_burn,
                    StepControl(mode="cfl", sigma=config.burn_sigma),
                    tableau,
                    params,
                )
            u = u.astype(dtype)
            force = body_force(grid, params.force, dtype=dtype)

            def rhs_fn(v):
                return rhs(v, params, force=force)

            n_steps = int(round((config.t_end - config.t_burn) / config.dt))
            index = 0
            for step in range(n_steps + 1):
                if step > 0 and step % config.stride == 0:
                    t = config.t_burn + step * config.dt
                    u64 = u.astype(np.float64)
                    for n, cmap in maps.items():
                        for kind in config.filter_kinds:
                            ubar = apply_filter(u64, cmap, kind)
                            comm = commutator(u64, cmap, kind, params)
                            for what, fldd in (("ubar", ubar), ("comm", comm)):
                                rel = _snapshot_name(ti, index, n, kind, what)
                                path = os.path.join(out_dir, rel)
                                save_field(fldd.astype(dtype), path)
                                written.append(path)
                                files.append(
                                    {
                                        "path": rel,
                                        "checksum": f"{fnv1a64_file(path):016x}",
                                        "trajectory": ti,
                                        "grid": n,
                                        "filter": kind,
                                        "index": index,
                                        "t": t,
                                        "dt_next": snapshot_dt,
                                        "field": what,
                                    }
                                )
                    index += 1
                if step < n_steps:
                    u = rk_step(u, config.dt, tableau, rhs_fn, project_each_stage=True)
    except Exception:
        for path in written:
            if os.path.exists(path):
                os.unlink(path)
        raise

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "dns": {
            "d": config.d,
            "n": config.dns_n,
            "lengths": [grid.axis_extent(a) for a in range(config.d)],
            "viscosity": config.viscosity,
            "force": {
                "kind": config.force.kind,
                "amplitude": config.force.amplitude,
                "wavenumber": config.force.wavenumber,
            },
            "kappa_p": config.kappa_p,
        },
        "t_burn": config.t_burn,
        "t_end": config.t_end,
        "dt": config.dt,
        "stride": config.stride,
        "snapshot_dt": snapshot_dt,
        "coarse_sizes": list(config.coarse_sizes),
        "filter_kinds": list(config.filter_kinds),
        "seeds": list(config.seeds),
        "precision": config.precision,
        "splits": {},
        "files": files,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)
    return manifest


def split_dataset(manifest, counts, seed=0):
    """Assign whole trajectories to (train, valid, test); returns a new manifest.

    Splitting is at trajectory level only, so no window of one trajectory
    can leak across splits.
    """
    n_traj = len(manifest["seeds"])
    n_train, n_valid, n_test = counts
    if n_train + n_valid + n_test > n_traj:
        raise ValueError(f"{n_traj} trajectories cannot fill splits {counts}")
    order = list(np.random.default_rng(seed).permutation(n_traj))
    out = dict(manifest)
    out["splits"] = {
        "train": sorted(int(i) for i in order[:n_train]),
        "valid": sorted(int(i) for i in order[n_train : n_train + n_valid]),
        "test": sorted(int(i) for i in order[n_train + n_valid : n_train + n_valid + n_test]),
    }
    return out


def verify_manifest(manifest, base_dir):
    """Checksum every referenced file; raises on missing or corrupt entries."""
    for entry in manifest["files"]:
        path = os.path.join(base_dir, entry["path"])
        if not os.path.exists(path):
            raise FileNotFoundError(f"dataset file missing: {entry['path']}")
        actual = f"{fnv1a64_file(path):016x}"
        if actual != entry["checksum"]:
            raise ValueError(f"checksum mismatch for {entry['path']}")


def load_manifest(path):
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported manifest schema {manifest.get('schema_version')}")
    return manifest


def _entries(manifest, trajectory, grid_n, kind, what):
    sel = [
        e
        for e in manifest["files"]
        if e["trajectory"] == trajectory
        and e["grid"] == grid_n
        and e["filter"] == kind
        and e["field"] == what
    ]
    return sorted(sel, key=lambda e: e["index"])


def load_pairs(manifest, base_dir, grid_n, kind, trajectories):
    """(ubar, commutator) samples for the given trajectories, time-ordered."""
    from .training import PairSample

    out = []
    for ti in trajectories:
        ubars = _entries(manifest, ti, grid_n, kind, "ubar")
        comms = _entries(manifest, ti, grid_n, kind, "comm")
        for ue, ce in zip(ubars, comms):
            out.append(
                PairSample(
                    ubar=load_field(os.path.join(base_dir, ue["path"])),
                    comm=load_field(os.path.join(base_dir, ce["path"])),
                )
            )
    return out


def load_trajectory(manifest, base_dir, grid_n, kind, trajectory):
    """Filtered snapshot sequence and the stored snapshot interval."""
    ubars = _entries(manifest, trajectory, grid_n, kind, "ubar")
    snaps = [load_field(os.path.join(base_dir, e["path"])) for e in ubars]
    return snaps, manifest["snapshot_dt"]


def make_windows(snapshots, dt, n_unroll, hop=None):
    """Slice a snapshot sequence into unroll windows of n_unroll + 1 states."""
    from .training import TrajectoryWindow

    if hop is None:
        hop = n_unroll
    out = []
    start = 0
    while start + n_unroll < len(snapshots):
        out.append(TrajectoryWindow(snapshots=snapshots[start : start + n_unroll + 1], dt=dt))
        start += hop
    return out


def flow_params_from_manifest(manifest):
    f = manifest["dns"]["force"]
    return FlowParams(
        viscosity=manifest["dns"]["viscosity"],
        force=BodyForceSpec(f["kind"], f["amplitude"], f["wavenumber"]),
    )
