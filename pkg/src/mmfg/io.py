"""Config loading and artifact writing (CSV with round-trip decimals, JSON)."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .example6 import ExampleParams, embedded_model
from .model import LqgModel, ModelValidationError

COMMANDS = ("validate", "solve", "simulate", "chaos", "nash", "measure-rate", "example6")


class ConfigError(ValueError):
    pass


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def emit_csv(header, rows, path) -> None:
    """Header plus rows; floats with 17 significant digits, LF line endings."""
    width = len(header)
    lines = [",".join(header)]
    for r in rows:
        if len(r) != width:
            raise ValueError(f"row of length {len(r)} in a table of width {width}")
        lines.append(",".join(format_value(v) for v in r))
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def write_json(obj, path) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        json.dump(jsonable(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


@dataclass
class RunConfig:
    """A resolved run: model (or example parameters), grid, Monte Carlo and
    experiment settings."""

    command: str
    model: LqgModel
    example: ExampleParams | None
    n_steps: int
    n_paths: int
    seed: int
    experiment: dict = field(default_factory=dict)
    output_dir: str = "mmfg-out"

    def to_dict(self) -> dict:
        """Resolved settings; the output directory is left out so reruns into
        different directories produce identical summaries."""
        out = {"command": self.command, "grid": {"T": self.model.T, "n_steps": self.n_steps},
               "mc": {"n_paths": self.n_paths, "seed": self.seed},
               "experiment": self.experiment}
        if self.example is not None:
            out["example"] = self.example.to_dict()
        else:
            out["model"] = self.model.to_dict()
        return out


_TOP_KEYS = {"model", "example", "grid", "mc", "experiment", "output_dir"}


def _int(section, key, default, minimum):
    v = section.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"{key} must be an integer >= {minimum}, got {v!r}")
    return v


def parse_config(data: dict, command: str, seed=None, out=None) -> RunConfig:
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    example = None
    if "example" in data:
        if "model" in data:
            raise ConfigError("give either 'model' or 'example', not both")
        try:
            example = ExampleParams.from_dict(data["example"] or {})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"example: {exc}") from exc
        model = embedded_model(example)
    elif "model" in data:
        if command == "example6":
            raise ConfigError("example6 needs an 'example' section")
        model = LqgModel.from_dict(data["model"])  # raises ModelValidationError
    elif command == "example6":
        example = ExampleParams()
        model = embedded_model(example)
    else:
        raise ConfigError("config needs a 'model' or 'example' section")
    grid = data.get("grid", {})
    mc = data.get("mc", {})
    if "T" in grid and float(grid["T"]) != model.T:
        raise ConfigError(f"grid.T={grid['T']} differs from the model horizon {model.T}")
    n_steps = _int(grid, "n_steps", 200, 2)
    n_paths = _int(mc, "n_paths", 100, 2)
    s = mc.get("seed", 0) if seed is None else seed
    if isinstance(s, bool) or not isinstance(s, int) or s < 0 or s >= 2 ** 64:
        raise ConfigError(f"seed must be an integer in [0, 2^64), got {s!r}")
    exp = data.get("experiment", {})
    if not isinstance(exp, dict):
        raise ConfigError("experiment must be an object")
    return RunConfig(command, model, example, n_steps, n_paths, s, dict(exp),
                     out if out is not None else data.get("output_dir", "mmfg-out"))


def load_config(path, command: str, seed=None, out=None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return parse_config(data, command, seed, out)

__all__ = ["ConfigError", "ModelValidationError", "RunConfig", "emit_csv", "format_value",
           "jsonable", "load_config", "parse_config", "write_json", "COMMANDS"]
