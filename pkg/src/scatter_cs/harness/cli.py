"""Command-line entry point: ``scatter-cs <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
import argparse
import contextlib
import sys

import numpy as np

from ..errors import ConfigError, DomainError, ScatterError
from ..forward import PlaneWave, foldy_lax_solve, scattering_amplitude
from ..recover import basis_pursuit, bpdn, brute_force_l0, omp
from ..scene import (FAR_2D, FAR_3D, SensorSet, draw_nearfield_sensors, draw_target, read_scene,
                     rng_from, write_scene)
from ..sensing import build_for_sensors, coherence, read_matrix, spectral_norm, write_matrix
from .config import load_config
from .experiments import DRIVERS, _draw_directions, _lattice, write_csv
from .theory import theory_bounds

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w") as fh:
            yield fh


def _parse_set(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args, experiment=None):
    over = _parse_set(args.set)
    for k in ("seed", "trials", "threads", "out"):
        v = getattr(args, k, None)
        if v is not None:
            over[k] = v
    if experiment is not None:
        over["experiment"] = experiment
    return load_config(args.config, over)


def _draw_sensors(cfg, lat, rng):
    if cfg.experiment == "mc-dt":
        return draw_nearfield_sensors(lat, cfg.n, cfg.aperture, cfg.delta_min, rng)
    f_i, f_s = cfg.densities()
    p = cfg.p if cfg.model == "born" else 1
    return SensorSet(FAR_3D if cfg.dim == 3 else FAR_2D, _draw_directions(f_i, p, rng),
                     _draw_directions(f_s, cfg.n, rng))


def _write_vector(fh, v):
    fh.write("index,re,im\n")
    for j, z in enumerate(np.asarray(v, dtype=complex)):
        fh.write(f"{j},{float(z.real)!r},{float(z.imag)!r}\n")


def _read_vector(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1] + 1j * data[:, 2]


# --------------------------------------------------------------------------
# subcommands

def cmd_simulate(args):
    """Draw a scene from the config and write it with its data vector."""
    cfg = _config(args)
    lat = _lattice(cfg)
    rng = rng_from(cfg.seed)
    sensors = _draw_sensors(cfg, lat, rng)
    target = draw_target(lat, cfg.s[0], cfg.amplitude, rng)
    omega = cfg.omega[0]
    if sensors.kind == "near-field":
        phi = build_for_sensors(lat, sensors, omega)
        Y = phi.entries @ target.nu
    elif cfg.model == "born":
        Y = build_for_sensors(lat, sensors, omega, "born").entries @ target.nu
    else:
        U = foldy_lax_solve(target, lat, PlaneWave(sensors.incident_directions()[0]), omega)
        Y = 4 * np.pi / omega ** 2 * scattering_amplitude(target, U, omega, sensors.sampling_directions())
    scene_path = cfg.out or "scene.txt"
    write_scene(scene_path, lat, target, sensors)
    with open(args.data or scene_path + ".data.csv", "w") as fh:
        _write_vector(fh, Y)
    return 0


def cmd_build_matrix(args):
    lat, _, sensors = read_scene(args.scene)
    if sensors is None:
        raise ConfigError("scene file has no [sensors] section")
    phi = build_for_sensors(lat, sensors, args.omega, args.model)
    with _output(args.out) as fh:
        write_matrix(fh, phi)
    return 0


def cmd_recover(args):
    phi = read_matrix(args.matrix)
    y = _read_vector(args.data)
    if args.method == "bp":
        res = basis_pursuit(phi, y)
    elif args.method == "omp":
        res = omp(phi, y, args.s_max)
    elif args.method == "bpdn":
        if args.lam is None:
            raise ConfigError("bpdn needs --lam")
        res = bpdn(phi, y, args.lam)
    else:
        res = brute_force_l0(phi, y, args.s_max)
    with _output(args.out) as fh:
        _write_vector(fh, res.x_hat)
    print(f"# method={args.method} support={list(res.support_hat)} residual={res.residual_2!r} "
          f"iterations={res.iterations} converged={int(res.converged)}", file=sys.stderr)
    return 0


def cmd_experiment(args):
    cfg = _config(args, args.command)
    result = DRIVERS[args.command](cfg)
    with _output(cfg.out) as fh:
        write_csv(result, fh)
    if result.rows and all(r.get("skipped") for r in result.rows):
        print("every trial was skipped", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


def cmd_theory(args):
    cfg = _config(args)
    lat = _lattice(cfg)
    sensors = _draw_sensors(cfg, lat, rng_from(cfg.seed))
    phi = build_for_sensors(lat, sensors, cfg.omega[0], cfg.model)
    target = draw_target(lat, cfg.s[0], cfg.amplitude, rng_from(cfg.seed + 1))
    rep = theory_bounds(cfg, coherence(phi), spectral_norm(phi), target=target)
    with _output(cfg.out) as fh:
        for k, v in rep.as_dict().items():
            if isinstance(v, dict):
                for k2, v2 in v.items():
                    fh.write(f"{k}.{k2} = {v2!r}\n")
            else:
                fh.write(f"{k} = {v!r}\n")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="scatter-cs", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file ([section] key = value)")
    common.add_argument("--seed", type=lambda s: int(s, 0), help="master seed (u64)")
    common.add_argument("--out", help="output path (default stdout)")
    common.add_argument("--trials", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="draw a scene and its data")
    p.add_argument("--data", help="data vector output (default <out>.data.csv)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("build-matrix", parents=[common], help="sensing matrix for a scene file")
    p.add_argument("--scene", required=True)
    p.add_argument("--omega", type=float, required=True)
    p.add_argument("--model", choices=("born", "exact"), default="born")
    p.set_defaults(func=cmd_build_matrix)

    p = sub.add_parser("recover", parents=[common], help="solve for x from a matrix and data file")
    p.add_argument("--matrix", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=("bp", "omp", "bpdn", "l0"), default="bp")
    p.add_argument("--lam", type=float)
    p.add_argument("--s-max", type=int, default=4)
    p.set_defaults(func=cmd_recover)

    for name in DRIVERS:
        p = sub.add_parser(name, parents=[common], help=f"run the {name} experiment")
        p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("theory", parents=[common], help="print the bound report for a config")
    p.set_defaults(func=cmd_theory)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScatterError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
