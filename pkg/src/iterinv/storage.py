"""Atomic file output, dataset directories and run manifests."""
from __future__ import annotations

import io
import json
import os
import subprocess
import tempfile
from pathlib import Path

from . import __version__
from .errors import InvalidInput
from .particle import EnvConfig, read_trajectory_csv, write_trajectory_csv

DATASET_META = "dataset.json"
MANIFEST = "manifest.json"


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_with(path, writer, obj, **kwargs) -> Path:
    """Render ``writer(obj, fh, **kwargs)`` into memory, then write atomically."""
    buf = io.StringIO()
    writer(obj, buf, **kwargs)
    return atomic_write_text(path, buf.getvalue())


def env_to_dict(env: EnvConfig) -> dict:
    return {"horizon": env.horizon, "dt": env.dt, "c_max": env.c_max, "f_clip": env.f_clip, "f_acc": env.f_acc}


def write_dataset(out_dir, trajectories, generator: str, seed: int, env: EnvConfig, extra=None) -> list:
    out_dir = Path(out_dir)
    files = []
    for i, traj in enumerate(trajectories):
        files.append(write_with(out_dir / f"traj_{i:05d}.csv", write_trajectory_csv, traj))
    meta = {"generator": generator, "seed": seed, "count": len(trajectories), "env": env_to_dict(env),
            "files": [f.name for f in files]}
    if extra:
        meta.update(extra)
    files.append(atomic_write_text(out_dir / DATASET_META, json.dumps(meta, indent=2, sort_keys=True) + "\n"))
    return files


def read_dataset(path):
    """Returns (trajectories, meta, env)."""
    path = Path(path)
    meta_path = path / DATASET_META
    if not meta_path.is_file():
        raise InvalidInput(f"{path} is not a dataset directory (missing {DATASET_META})")
    meta = json.loads(meta_path.read_text())
    trajs = []
    for name in meta["files"]:
        with open(path / name, newline="") as fh:
            trajs.append(read_trajectory_csv(fh))
    env = EnvConfig(**meta["env"])
    for t in trajs:
        if t.horizon != env.horizon:
            raise InvalidInput(f"trajectory horizon {t.horizon} != dataset horizon {env.horizon}")
    return trajs, meta, env


def version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(out_dir, command: str, config: dict, seed, runtime_s: float, outputs) -> Path:
    out_dir = Path(out_dir)
    names = sorted(str(Path(p).resolve().relative_to(out_dir.resolve())) if Path(p).resolve().is_relative_to(
        out_dir.resolve()) else str(p) for p in outputs)
    manifest = {"command": command, "config": config, "version": version_string(), "seed": seed,
                "runtime_seconds": round(runtime_s, 3), "outputs": names}
    return atomic_write_text(out_dir / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
