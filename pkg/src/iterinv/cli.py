"""Command-line entry point.

Exit codes: 0 ok, 1 bad config or inputs, 2 not converged, 3 degenerate
iteration, 4 certificate failed.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import config as config_mod
from .errors import DegenerateIteration, InvalidInput, IterInvError
from .intent import EmbedConfig, embed_many
from .inversion import InversionProblem, run, write_trace_csv
from .itin import (ItinConfig, SteeringSet, cross_evaluate, probe_mse, run_itin, steering_size_sweep,
                   write_report_csv, write_table_csv)
from .maps import linear_map, random_well_conditioned, sin_linear_map
from .numkit import RngStream
from .particle import EnvConfig, generate
from .policy import read_checkpoint, write_checkpoint
from .storage import atomic_write_text, read_dataset, write_dataset, write_manifest, write_with
from .theory import run_suite, write_certificates_csv

log = logging.getLogger("iterinv")

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_DEGENERATE, EXIT_CERT_FAILED = 0, 1, 2, 3, 4


def env_from(cfg) -> EnvConfig:
    e = cfg["env"]
    return EnvConfig(horizon=e["horizon"], dt=e["dt"], c_max=e["c_max"], f_clip=e["f_clip"], f_acc=e["f_acc"])


def embed_from(cfg, env: EnvConfig) -> EmbedConfig:
    return EmbedConfig(keyframes=cfg["embed"]["keyframes"], normalize=cfg["embed"]["normalize"], c_max=env.c_max)


def itin_from(cfg) -> ItinConfig:
    i = cfg["itin"]
    return ItinConfig(batch_size=i["batch_size"], steering_ratio=i["steering_ratio"], noise_scale=i["noise_scale"],
                      buffer_multiplier=i["buffer_multiplier"], iterations=i["iterations"], ridge=i["ridge"],
                      seed=cfg["run"]["seed"])


def _require(cfg, section, key):
    value = cfg[section][key]
    if value is None:
        raise InvalidInput(f"[{section}] {key} is required for this command")
    return value


# -- commands --------------------------------------------------------------

def build_inversion_problem(cfg):
    inv = cfg["invert"]
    dim = inv["dim"]
    rng = RngStream(cfg["run"]["seed"])
    m = inv["points"] or dim + 2
    if inv["family"] == "custom":
        coeffs = [float(c) for c in _require(cfg, "invert", "coefficients")]
        if len(coeffs) != dim * dim:
            raise InvalidInput(f"[invert] coefficients needs {dim * dim} entries (row-major {dim}x{dim})")
        a = np.array(coeffs).reshape(dim, dim)
        fmap = sin_linear_map(a, inv["amplitude"], inv["frequency"], name="custom")
    elif inv["family"] == "sin-linear":
        fmap = sin_linear_map(np.diag(np.arange(3.0, 3.0 + dim)), inv["amplitude"], inv["frequency"])
    else:
        fmap = linear_map(random_well_conditioned(dim, rng.substream(1)), rng.substream(2).normal(dim))
    y = 5.0 * rng.substream(3).normal((m, dim))
    x0 = rng.substream(4).normal((m, dim))
    return InversionProblem(fmap, y, x0, max_iterations=inv["max_iterations"],
                            residual_target=inv["residual_target"], ridge=inv["ridge"])


def cmd_invert(cfg, out: Path) -> tuple:
    problem = build_inversion_problem(cfg)
    try:
        trace = run(problem)
        code = EXIT_OK if trace.converged else EXIT_NOT_CONVERGED
    except DegenerateIteration as exc:
        log.error("%s", exc)
        trace, code = exc.trace, EXIT_DEGENERATE
    path = write_with(out / "trace.csv", write_trace_csv, trace)
    log.info("invert: %d iterations, residual %.3g, converged=%s", trace.iterations,
             trace.final.mean_residual, trace.converged)
    return code, [path]


def cmd_verify(cfg, out: Path) -> tuple:
    v = cfg["verify"]
    certs = run_suite(tuple(v["suite"]), seed=cfg["run"]["seed"], dims=tuple(cfg.get_list("verify", "dims", int)),
                      trials=v["trials"], instances=v["instances"], epsilon_override=v["epsilon_override"],
                      grid=v["grid"], iterations=v["iterations"])
    path = write_with(out / "certificates.csv", write_certificates_csv, certs)
    for c in certs:
        log.info("%s holds=%s worst=%.4g bound=%.4g", c.certificate_id, c.holds, c.worst_observed, c.bound)
    return (EXIT_OK if all(c.holds for c in certs) else EXIT_CERT_FAILED), [path]


def cmd_gen_data(cfg, out: Path) -> tuple:
    env = env_from(cfg)
    d = cfg["data"]
    seed = cfg["run"]["seed"]
    trajs = generate(d["generator"], d["count"], env, RngStream(seed, (7,)), t_acc=d["t_acc"])
    extra = {"t_acc": d["t_acc"] if d["t_acc"] is not None else env.horizon // 2} if d["generator"] == "deceleration" else None
    files = write_dataset(out, trajs, d["generator"], seed, env, extra)
    return EXIT_OK, files


def _split_dataset(trajs, embed_cfg, steer_size, probe_size, name):
    if steer_size + probe_size > len(trajs):
        raise InvalidInput(f"dataset has {len(trajs)} trajectories; need steer_size + probe_size = "
                           f"{steer_size + probe_size}")
    z = embed_many(np.stack([t.states for t in trajs]), embed_cfg)
    steer = SteeringSet(z[:steer_size], name)
    probe = [(z[i], trajs[i]) for i in range(len(trajs) - probe_size, len(trajs))]
    return steer, probe


def _probe_from(trajs, embed_cfg, probe_size):
    chosen = trajs if probe_size is None else trajs[len(trajs) - probe_size:]
    z = embed_many(np.stack([t.states for t in chosen]), embed_cfg)
    return list(zip(z, chosen))


def cmd_train(cfg, out: Path) -> tuple:
    trajs, meta, env = read_dataset(_require(cfg, "train", "dataset"))
    embed_cfg = embed_from(cfg, env)
    t = cfg["train"]
    steer, probe = _split_dataset(trajs, embed_cfg, t["steer_size"], t["probe_size"], meta["generator"])
    report = run_itin(steer, itin_from(cfg), env, probe, embed_cfg, cfg["policy"]["time_encoding"])
    files = [write_with(out / "report.csv", write_report_csv, report),
             write_with(out / "policy.csv", write_checkpoint, report.final_policy, seed=cfg["run"]["seed"],
                        iteration=len(report.per_iteration))]
    log.info("train: baseline probe %.4g -> final %.4g", report.baseline_probe_mse, report.final_probe_mse)
    return EXIT_OK, files


def _load_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise InvalidInput(f"checkpoint {path} does not exist")
    with open(path, newline="") as fh:
        return read_checkpoint(fh)[0]


def _check_compat(policy, env, embed_cfg):
    if policy.spec.horizon != env.horizon:
        raise InvalidInput(f"checkpoint horizon {policy.spec.horizon} != dataset horizon {env.horizon}")
    if policy.spec.intent_dim != embed_cfg.dim:
        raise InvalidInput(f"checkpoint intent dim {policy.spec.intent_dim} != embedding dim {embed_cfg.dim}")


def cmd_eval(cfg, out: Path) -> tuple:
    policy = _load_checkpoint(_require(cfg, "eval", "checkpoint"))
    trajs, meta, env = read_dataset(_require(cfg, "eval", "dataset"))
    embed_cfg = embed_from(cfg, env)
    _check_compat(policy, env, embed_cfg)
    probe = _probe_from(trajs, embed_cfg, cfg["eval"]["probe_size"])
    mse = probe_mse(policy, probe, env)
    text = f"dataset,probe_count,probe_mse\n{meta['generator']},{len(probe)},{mse!r}\n"
    return EXIT_OK, [atomic_write_text(out / "eval.csv", text)]


def cmd_cross_eval(cfg, out: Path) -> tuple:
    c = cfg["cross_eval"]
    policies, tests, env = {}, {}, None
    for tag in ("a", "b"):
        trajs, _, env_t = read_dataset(_require(cfg, "cross_eval", f"dataset_{tag}"))
        if env is not None and env_t.horizon != env.horizon:
            raise InvalidInput("cross-eval datasets must share a horizon")
        env = env_t
        embed_cfg = embed_from(cfg, env)
        policy = _load_checkpoint(_require(cfg, "cross_eval", f"checkpoint_{tag}"))
        _check_compat(policy, env, embed_cfg)
        policies[c[f"name_{tag}"]] = policy
        tests[c[f"name_{tag}"]] = _probe_from(trajs, embed_cfg, c["probe_size"])
    table = cross_evaluate(policies, tests, env)
    return EXIT_OK, [write_with(out / "cross_eval.csv", write_table_csv, table)]


def cmd_sweep(cfg, out: Path) -> tuple:
    env = env_from(cfg)
    s = cfg["sweep"]
    seeds = cfg.get_list("sweep", "seeds", int)
    table = steering_size_sweep(cfg.get_list("sweep", "sizes", int), s["generator"], itin_from(cfg), env,
                                embed_from(cfg, env), seeds, s["probe_size"], cfg["data"]["t_acc"],
                                threads=cfg["run"]["threads"], time_encoding=cfg["policy"]["time_encoding"])
    lines = ["steer_size,probe_mse_mean," + ",".join(f"seed_{sd}" for sd in seeds)]
    for n, vals in table.items():
        lines.append(f"{n},{float(np.mean(vals))!r}," + ",".join(repr(float(v)) for v in vals))
    return EXIT_OK, [atomic_write_text(out / "sweep.csv", "\n".join(lines) + "\n")]


COMMANDS = {"invert": cmd_invert, "verify": cmd_verify, "gen-data": cmd_gen_data, "train": cmd_train,
            "eval": cmd_eval, "cross-eval": cmd_cross_eval, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iterinv", description=__doc__.splitlines()[0])
    parser.add_argument("--print-defaults", action="store_true", help="print the default config and exit")
    sub = parser.add_subparsers(dest="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="INI config file")
        p.add_argument("--seed", type=int, help="root seed (overrides [run] seed)")
        p.add_argument("--out", type=Path, help="output directory (overrides [run] out)")
        p.add_argument("--threads", type=int, help="worker threads (overrides [run] threads)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        print(config_mod.describe_defaults())
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    overrides = list(args.overrides)
    for flag, key in ((args.seed, "run.seed"), (args.out, "run.out"), (args.threads, "run.threads")):
        if flag is not None:
            overrides.append(f"{key}={flag}")
    started = time.monotonic()
    try:
        cfg = config_mod.load(args.config, overrides)
        out = Path(cfg["run"]["out"])
        out.mkdir(parents=True, exist_ok=True)
        code, outputs = COMMANDS[args.command](cfg, out)
    except IterInvError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    write_manifest(out, args.command, cfg.snapshot(), cfg["run"]["seed"], time.monotonic() - started, outputs)
    return code


if __name__ == "__main__":
    sys.exit(main())
