"""On-disk artifacts: JSON/CSV reports, policy checkpoints and run manifests.

Reports are written so that identical inputs give identical bytes: JSON keys
are sorted and floats use their shortest round-tripping repr. Manifests carry
wall-clock timestamps and are the one intentional exception.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .demos import Standardizer
from .envs import GridSpec
from .errors import InputError, ParseError
from .evaluation import LearnedPolicy
from .policy import PolicyParams

MANIFEST_NAME = "manifest.json"
CHECKPOINT_FORMAT = "ckil-checkpoint/1"


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps_json(obj))
    return path


def _cell(value):
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


def write_csv(path, rows: list[dict], columns: list[str]) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    path = Path(path)
    path.write_text(buf.getvalue())
    return path


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir, command: str, config: dict, inputs: dict, outputs: list, started: str) -> Path:
    """Record one run in ``out_dir/manifest.json``.

    A directory holds a single manifest; runs of different commands (or with
    different outputs) into the same directory become separate entries in it.
    ``content_hash`` covers the config and the input file hashes, so two runs
    with the same hash must produce the same output hashes.
    """
    out_dir = Path(out_dir)
    input_hashes = {name: {"path": str(p), "sha256": sha256_file(p)} for name, p in sorted(inputs.items())}
    identity = {"command": command, "config": config, "inputs": {k: v["sha256"] for k, v in input_hashes.items()}}
    entry = {
        "command": command,
        "config": config,
        "inputs": input_hashes,
        "content_hash": hashlib.sha256(dumps_json(identity).encode()).hexdigest(),
        "outputs": {Path(p).name: sha256_file(p) for p in outputs},
        "started_at": started,
        "finished_at": _now(),
        "version": __version__,
    }
    path = out_dir / MANIFEST_NAME
    manifest = {"runs": {}}
    if path.exists():
        try:
            manifest = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"existing manifest is not valid JSON: {exc.msg}", line=exc.lineno) from None
    key = command + ":" + ",".join(sorted(entry["outputs"]))
    manifest.setdefault("runs", {})[key] = entry
    return write_json(path, manifest)


def start_time() -> str:
    return _now()


def grid_to_dict(grid: GridSpec | None):
    if grid is None:
        return None
    return {"cells_per_dim": list(grid.cells_per_dim), "bounds": [list(b) for b in grid.bounds]}


def grid_from_dict(d) -> GridSpec | None:
    if d is None:
        return None
    return GridSpec(tuple(int(c) for c in d["cells_per_dim"]), tuple((float(lo), float(hi)) for lo, hi in d["bounds"]))


def save_checkpoint(path, *, algorithm: str, env_id: str, policy: LearnedPolicy, kernel: dict | None,
                    train: dict, history: dict) -> Path:
    return write_json(path, {
        "format": CHECKPOINT_FORMAT,
        "algorithm": algorithm,
        "env": env_id,
        "params": policy.params.to_dict(),
        "standardizer": policy.standardizer.to_dict(),
        "grid": grid_to_dict(policy.grid),
        "kernel": kernel,
        "train": train,
        "history": history,
    })


def load_checkpoint(path):
    """Returns ``(env_id, algorithm, LearnedPolicy, raw dict)``."""
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"checkpoint is not valid JSON: {exc.msg}", line=exc.lineno) from None
    if not isinstance(raw, dict) or raw.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(f"not a {CHECKPOINT_FORMAT} file", field="format")
    try:
        params = PolicyParams.from_dict(raw["params"])
        standardizer = Standardizer.from_dict(raw["standardizer"])
        grid = grid_from_dict(raw.get("grid"))
        env_id = raw["env"]
    except KeyError as exc:
        raise ParseError(f"checkpoint is missing {exc.args[0]!r}", field=exc.args[0]) from None
    except (TypeError, ValueError) as exc:
        raise ParseError(f"checkpoint is malformed: {exc}") from None
    return env_id, raw.get("algorithm"), LearnedPolicy(params, standardizer, grid), raw
