"""File formats. Floats are written with 17 significant digits so reads are exact."""
from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .chain import TransitionKernel, build_custom_kernel
from .errors import ConfigError, KernelError


def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj):
    atomic_write(path, dumps_json(obj))


def fmt(x) -> str:
    return f"{float(x):.17g}"


def kernel_to_csv(P: TransitionKernel) -> str:
    lines = [f"{P.n},{fmt(P.dt)}"]
    lines += [",".join(fmt(v) for v in row) for row in P.rows]
    return "\n".join(lines) + "\n"


def kernel_from_csv(text: str) -> TransitionKernel:
    rows = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if rows and rows[0].replace(" ", "") == "n,dt":
        rows = rows[1:]
    try:
        n_txt, dt_txt = rows[0].split(",")
        n, dt = int(n_txt), float(dt_txt)
        mat = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    except (IndexError, ValueError) as exc:
        raise KernelError(f"malformed kernel file: {exc}") from exc
    if mat.shape != (n, n):
        raise KernelError(f"kernel file declares n={n} but holds shape {mat.shape}")
    return build_custom_kernel(mat, dt, normalize=False)


def read_kernel(path) -> TransitionKernel:
    try:
        return kernel_from_csv(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read kernel file: {exc}") from exc


def solution_to_csv(w, Mw, mask, target_states) -> str:
    lines = ["state,w,Mw,impulse_flag,target_state"]
    for i in range(len(w)):
        lines.append(f"{i},{fmt(w[i])},{fmt(Mw[i])},{int(mask[i])},{int(target_states[i])}")
    return "\n".join(lines) + "\n"


def solution_from_csv(text: str):
    lines = text.strip().splitlines()
    if not lines or lines[0].strip() != "state,w,Mw,impulse_flag,target_state":
        raise ConfigError("unexpected solution header")
    data = [ln.split(",") for ln in lines[1:]]
    w = np.array([float(r[1]) for r in data])
    Mw = np.array([float(r[2]) for r in data])
    mask = np.array([r[3].strip() == "1" for r in data])
    tgt = np.array([int(r[4]) for r in data])
    return w, Mw, mask, tgt


def vector_from_csv(path) -> np.ndarray:
    """One number per line (a header line is skipped if it does not parse)."""
    out = []
    for ln in Path(path).read_text().splitlines():
        ln = ln.strip().split(",")[-1]
        if not ln:
            continue
        try:
            out.append(float(ln))
        except ValueError:
            if out:
                raise ConfigError(f"bad number {ln!r} in {path}") from None
    return np.array(out)


def matrix_from_csv(path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read matrix file {path}: {exc}") from exc
