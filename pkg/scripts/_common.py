"""Command-line parsing for dataclass experiment configs."""
from __future__ import annotations

import argparse
import dataclasses
import json
from pathlib import Path


def parse_config(cls, description):
    """Build ``cls`` from --field flags; list fields take comma-separated values."""
    p = argparse.ArgumentParser(description=description)
    for f in dataclasses.fields(cls):
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        if isinstance(default, bool):
            p.add_argument(f"--{f.name}", action=argparse.BooleanOptionalAction, default=default)
        elif isinstance(default, (list, tuple)):
            kind = type(default[0]) if default else str
            p.add_argument(f"--{f.name}", type=lambda s, k=kind: [k(x) for x in s.split(",")], default=default)
        else:
            p.add_argument(f"--{f.name}", type=type(default) if default is not None else str, default=default)
    return cls(**vars(p.parse_args()))


def write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)] + [",".join(_cell(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _cell(v):
    return f"{v:.17g}" if isinstance(v, float) else str(v)
