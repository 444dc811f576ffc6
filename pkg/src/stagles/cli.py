"""Command line entry point.

Subcommands mirror the workflow: ``generate`` builds a filtered dataset
from fine runs, ``train`` fits a closure (``--loss prior|post``), ``les``
rolls out a coarse model against stored reference data, ``analyze`` emits
spectrum/energy/divergence CSVs, and ``validate`` runs the built-in
exactness suites.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical
failure (blow-up), 3 validation-suite failure.  Every run directory gets
the resolved configuration echoed to ``resolved_config.json``.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .closure import ClosureParams, default_cnn_architecture, init_params, load_params, save_params
from .filters import CoarseningMap
from .grid import make_grid
from .les import CNNClosure, LESModel, SmagorinskyClosure, divergence_rms, run_les, total_energy
from .operators import BodyForceSpec, FlowParams
from .pipeline import (
    GenerateConfig,
    flow_params_from_manifest,
    generate_dataset,
    load_manifest,
    load_pairs,
    load_trajectory,
    make_windows,
    split_dataset,
    verify_manifest,
)
from .timestepping import BlowupError
from .training import PairDataset, TrainConfig, TrajectoryDataset, smagorinsky_search, train_post, train_prior

_SCHEMA = {
    "grid": {"d", "n", "lengths"},
    "flow": {"reynolds", "viscosity", "force_kind", "force_amplitude", "force_wavenumber"},
    "ic": {"kappa_p", "seeds"},
    "time": {"t_burn", "t_end", "dt", "burn_sigma"},
    "filters": {"kinds", "coarse"},
    "dataset": {"stride", "precision", "splits", "split_seed", "dir"},
    "closure": {"kind", "theta", "channels", "radius", "hidden_layers", "params_file"},
    "training": {
        "loss",
        "batch",
        "iterations",
        "n_unroll",
        "lr_start",
        "lr_end",
        "seed",
        "validation_every",
        "formulation",
        "grid_n",
        "filter",
        "window_hop",
        "smagorinsky_grid_step",
        "smagorinsky_grid_max",
    },
    "les": {"formulation", "closure", "theta", "params_file", "n_steps", "grid_n", "filter", "trajectory"},
    "analysis": {"bin_ratio", "grid_n", "filter", "trajectory"},
}


class ConfigError(ValueError):
    pass


def load_config(path):
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}")
    for section, body in cfg.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"top-level key {section!r} must be a section")
        for key in body:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
    return cfg


def _flow_params(cfg):
    flow = cfg.get("flow", {})
    if "viscosity" in flow and "reynolds" in flow:
        raise ConfigError("give either viscosity or reynolds, not both")
    if "viscosity" in flow:
        nu = float(flow["viscosity"])
    elif "reynolds" in flow:
        nu = 1.0 / float(flow["reynolds"])
    else:
        raise ConfigError("[flow] needs viscosity or reynolds")
    force = BodyForceSpec(
        kind=flow.get("force_kind", "none"),
        amplitude=float(flow.get("force_amplitude", 1.0)),
        wavenumber=int(flow.get("force_wavenumber", 4)),
    )
    return FlowParams(viscosity=nu, force=force)


def _dataset_dir(cfg):
    try:
        return cfg["dataset"]["dir"]
    except KeyError:
        raise ConfigError("[dataset] dir is required for this command")


def _echo_config(cfg, args, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    resolved = {
        "tool_version": __version__,
        "config": cfg,
        "overrides": {
            "seed": args.seed,
            "precision": args.precision,
            "workers": args.workers,
        },
    }
    with open(os.path.join(out_dir, "resolved_config.json"), "w") as fh:
        json.dump(resolved, fh, indent=1)


def _arch_from_config(cfg, d):
    cl = cfg.get("closure", {})
    return default_cnn_architecture(
        d,
        channels=int(cl.get("channels", 24)),
        radius=int(cl.get("radius", 2)),
        hidden_layers=int(cl.get("hidden_layers", 3)),
    )


def _training_section(cfg):
    tr = cfg.get("training", {})
    grid_n = tr.get("grid_n")
    kind = tr.get("filter", "fa")
    if grid_n is None:
        raise ConfigError("[training] grid_n is required")
    return tr, int(grid_n), kind


def cmd_generate(cfg, args, out_dir):
    grid_cfg = cfg.get("grid", {})
    time_cfg = cfg.get("time", {})
    ds = cfg.get("dataset", {})
    flow = _flow_params(cfg)
    seeds = cfg.get("ic", {}).get("seeds", [0])
    if args.seed is not None:
        seeds = [args.seed]
    gen = GenerateConfig(
        d=int(grid_cfg.get("d", 2)),
        dns_n=int(grid_cfg.get("n", 256)),
        lengths=grid_cfg.get("lengths", 1.0),
        viscosity=flow.viscosity,
        force=flow.force,
        kappa_p=float(cfg.get("ic", {}).get("kappa_p", 20.0)),
        seeds=tuple(seeds),
        t_burn=float(time_cfg.get("t_burn", 0.5)),
        t_end=float(time_cfg.get("t_end", 1.5)),
        dt=float(time_cfg.get("dt", 1e-3)),
        burn_sigma=float(time_cfg.get("burn_sigma", 0.85)),
        stride=int(ds.get("stride", 5)),
        coarse_sizes=tuple(cfg.get("filters", {}).get("coarse", [32])),
        filter_kinds=tuple(cfg.get("filters", {}).get("kinds", ["fa"])),
        precision=int(args.precision or ds.get("precision", 64)),
    )
    data_dir = ds.get("dir", os.path.join(out_dir, "dataset"))
    manifest = generate_dataset(gen, data_dir)
    splits = ds.get("splits")
    if splits:
        manifest = split_dataset(manifest, tuple(int(x) for x in splits), seed=int(ds.get("split_seed", 0)))
        with open(os.path.join(data_dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=1)
    print(f"dataset written to {data_dir} ({len(manifest['files'])} files)")
    return 0


def cmd_train(cfg, args, out_dir):
    data_dir = _dataset_dir(cfg)
    manifest = load_manifest(os.path.join(data_dir, "manifest.json"))
    verify_manifest(manifest, data_dir)
    tr, grid_n, kind = _training_section(cfg)
    loss = args.loss or tr.get("loss", "prior")
    flow = flow_params_from_manifest(manifest)
    arch = _arch_from_config(cfg, manifest["dns"]["d"])
    splits = manifest["splits"]
    if not splits:
        raise ConfigError("dataset manifest has no splits; run generate with dataset.splits")
    config = TrainConfig(
        loss=loss,
        batch_size=int(tr.get("batch", 8)),
        n_iterations=int(tr.get("iterations", 500)),
        n_unroll=int(tr.get("n_unroll", 50)),
        lr_start=float(tr.get("lr_start", 1e-3 if loss == "prior" else 1e-4)),
        lr_end=float(tr.get("lr_end", 1e-6)),
        seed=int(args.seed if args.seed is not None else tr.get("seed", 0)),
        validation_every=int(tr.get("validation_every", 20)),
        formulation=tr.get("formulation", "dcf"),
    )
    log_path = os.path.join(out_dir, f"train_{loss}_metrics.csv")
    ckpt = os.path.join(out_dir, f"closure_{loss}.cnp")

    cl = cfg.get("closure", {})
    if loss == "prior":
        pairs_train = load_pairs(manifest, data_dir, grid_n, kind, splits["train"])
        pairs_valid = load_pairs(manifest, data_dir, grid_n, kind, splits["valid"])
        theta0 = init_params(arch, seed=config.seed)
        result = train_prior(
            PairDataset(pairs_train, pairs_valid),
            arch,
            config,
            theta0=theta0,
            log_path=log_path,
            checkpoint_path=ckpt,
        )
    else:
        if "params_file" in cl:
            theta0 = load_params(cl["params_file"])
        else:
            theta0 = init_params(arch, seed=config.seed)
        hop = int(tr.get("window_hop", config.n_unroll))
        wtrain, wvalid = [], []
        for split_name, target in (("train", wtrain), ("valid", wvalid)):
            for ti in splits[split_name]:
                snaps, dt = load_trajectory(manifest, data_dir, grid_n, kind, ti)
                target.extend(make_windows(snaps, dt, config.n_unroll, hop=hop))
        result = train_post(
            TrajectoryDataset(wtrain, wvalid),
            theta0,
            arch,
            flow,
            config,
            log_path=log_path,
            checkpoint_path=ckpt,
        )
    save_params(result.params, ckpt)
    print(f"best validation loss {result.best_validation:.6g}; parameters at {ckpt}")
    return 0


def _closure_from_config(section, arch):
    kind = section.get("closure", section.get("kind", "none"))
    if kind == "none":
        return None
    if kind == "smagorinsky":
        return SmagorinskyClosure(float(section.get("theta", 0.1)))
    if kind == "cnn":
        if "params_file" not in section:
            raise ConfigError("cnn closure needs params_file")
        return CNNClosure(load_params(section["params_file"]))
    raise ConfigError(f"unknown closure kind {kind!r}")


def cmd_les(cfg, args, out_dir):
    data_dir = _dataset_dir(cfg)
    manifest = load_manifest(os.path.join(data_dir, "manifest.json"))
    les_cfg = cfg.get("les", {})
    grid_n = int(les_cfg.get("grid_n", manifest["coarse_sizes"][0]))
    kind = les_cfg.get("filter", manifest["filter_kinds"][0])
    formulation = args.formulation or les_cfg.get("formulation", "dcf")
    traj_idx = les_cfg.get("trajectory")
    if traj_idx is None:
        split = manifest["splits"].get("test") or [0]
        traj_idx = split[0]
    snaps, dt = load_trajectory(manifest, data_dir, grid_n, kind, int(traj_idx))
    flow = flow_params_from_manifest(manifest)
    arch = _arch_from_config(cfg, manifest["dns"]["d"])
    section = dict(les_cfg)
    if args.closure:
        section["closure"] = args.closure
    closure = _closure_from_config(section, arch)
    n_steps = int(les_cfg.get("n_steps", len(snaps) - 1))
    n_steps = min(n_steps, len(snaps) - 1)
    model = LESModel(formulation=formulation, closure=closure, params=flow, grid=snaps[0].grid)
    traj = run_les(snaps[0], model, dt, n_steps, reference=snaps[: n_steps + 1])
    csv_path = os.path.join(out_dir, f"les_{formulation}_{kind}_n{grid_n}.csv")
    traj.write_csv(csv_path)
    errs = [row[3] for row in traj.metrics if len(row) > 3]
    print(
        f"rollout {'stable' if traj.stable else 'UNSTABLE'}; "
        f"mean relative error {np.mean(errs[1:]) if len(errs) > 1 else 0.0:.6g}; metrics at {csv_path}"
    )
    return 0 if traj.stable else 2


def cmd_analyze(cfg, args, out_dir):
    from .analysis import GOLDEN_RATIO, energy_spectrum

    data_dir = _dataset_dir(cfg)
    manifest = load_manifest(os.path.join(data_dir, "manifest.json"))
    an = cfg.get("analysis", {})
    grid_n = int(an.get("grid_n", manifest["coarse_sizes"][0]))
    kind = an.get("filter", manifest["filter_kinds"][0])
    traj_idx = int(an.get("trajectory", 0))
    snaps, dt = load_trajectory(manifest, data_dir, grid_n, kind, traj_idx)
    what = args.what
    path = os.path.join(out_dir, f"{what}_{kind}_n{grid_n}.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if what == "spectrum":
            spec = energy_spectrum(snaps[-1], a=float(an.get("bin_ratio", GOLDEN_RATIO)))
            w.writerow(["kappa", "energy"])
            for lv, en in zip(spec.levels, spec.energies):
                w.writerow([f"{lv:.10g}", f"{en:.10g}"])
        elif what == "energy":
            w.writerow(["t", "energy"])
            for i, s in enumerate(snaps):
                w.writerow([f"{i * dt:.10g}", f"{total_energy(s):.10g}"])
        elif what == "divergence":
            w.writerow(["t", "divergence_rms"])
            for i, s in enumerate(snaps):
                w.writerow([f"{i * dt:.10g}", f"{divergence_rms(s):.10g}"])
        else:
            raise ConfigError(f"unknown analysis target {what!r}")
    print(f"wrote {path}")
    return 0


def cmd_validate(args, out_dir):
    from .validation import run_suite

    suites = ["operators", "filters", "taylor-green", "gradients"] if args.suite == "all" else [args.suite]
    rows = []
    failed = False
    for suite in suites:
        for name, value, tol, ok in run_suite(suite):
            rows.append((suite, name, value, tol, ok))
            status = "pass" if ok else "FAIL"
            print(f"[{status}] {suite}/{name}: {value:.3e} (tol {tol:.1e})")
            failed |= not ok
    path = os.path.join(out_dir, "validation.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["suite", "check", "value", "tolerance", "pass"])
        for row in rows:
            w.writerow(row)
    print(f"residuals at {path}")
    return 3 if failed else 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="stagles", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--output", default="runs/out", help="run directory for outputs")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--precision", type=int, choices=(32, 64), default=None)
        p.add_argument("--workers", type=int, default=None, help="numba thread count")

    common(sub.add_parser("generate", help="run fine trajectories and write a filtered dataset"))
    p_train = sub.add_parser("train", help="fit a closure model")
    common(p_train)
    p_train.add_argument("--loss", choices=("prior", "post"), default=None)
    p_les = sub.add_parser("les", help="roll out a coarse model against stored data")
    common(p_les)
    p_les.add_argument("--closure", choices=("none", "smagorinsky", "cnn"), default=None)
    p_les.add_argument("--formulation", choices=("dif", "dcf"), default=None)
    p_an = sub.add_parser("analyze", help="emit spectrum/energy/divergence CSVs")
    common(p_an)
    p_an.add_argument("--what", choices=("spectrum", "energy", "divergence"), required=True)
    p_val = sub.add_parser("validate", help="run built-in exactness suites")
    common(p_val, needs_config=False)
    p_val.add_argument(
        "--suite",
        choices=("operators", "filters", "taylor-green", "gradients", "all"),
        default="all",
    )

    args = parser.parse_args(argv)
    if args.workers:
        import numba

        numba.set_num_threads(args.workers)

    out_dir = args.output
    try:
        if args.command == "validate":
            os.makedirs(out_dir, exist_ok=True)
            return cmd_validate(args, out_dir)
        cfg = load_config(args.config)
        _echo_config(cfg, args, out_dir)
        if args.command == "generate":
            return cmd_generate(cfg, args, out_dir)
        if args.command == "train":
            return cmd_train(cfg, args, out_dir)
        if args.command == "les":
            return cmd_les(cfg, args, out_dir)
        if args.command == "analyze":
            return cmd_analyze(cfg, args, out_dir)
        raise ConfigError(f"unknown command {args.command}")
    except (ConfigError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BlowupError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
