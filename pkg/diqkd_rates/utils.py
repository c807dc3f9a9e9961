import hashlib
import json
from pathlib import Path

import numpy as np

from .exceptions import ConfigError

ENTROPY_FLOOR = 1e-300


def validate_params(params, defaults, name, verbose=False):
    """Return a copy of `defaults` updated with `params`.

    Raises ConfigError on unrecognized keys.
    """
    if params is None:
        params = {}
    unrecognized_params = set(params.keys()) - set(defaults.keys())
    if len(unrecognized_params):
        raise ConfigError(
            f"Unrecognized parameter keys for {name}: "
            f"{unrecognized_params}.\n\n"
            f"Default (recognized) parameters for {name}: {defaults}"
        )
    missing_params = set(defaults.keys()) - set(params.keys())
    if verbose and len(missing_params):
        print(f"{name}: Use default value for params: {missing_params}")
    merged = {k: v for k, v in defaults.items()}
    merged.update(params)
    return merged


def shannon_term(x):
    """h(x) = -x log2(x), elementwise, with h(0) = 0."""
    x = np.asarray(x, dtype=float)
    safe = np.where(x > ENTROPY_FLOOR, x, 1.0)
    return np.where(x > ENTROPY_FLOOR, -safe * np.log2(safe), 0.0)


def binary_entropy(x):
    return float(shannon_term(x) + shannon_term(1.0 - x))


def to_jsonable(obj):
    """Recursively convert numpy containers/scalars to plain python."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def config_fingerprint(config):
    """sha256 of the canonical JSON dump of `config` (sorted keys)."""
    payload = json.dumps(to_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def write_json(obj, filepath):
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    with open(filepath, "w") as f:
        json.dump(to_jsonable(obj), f, indent=2, sort_keys=True)


def read_json(filepath):
    with open(filepath, "r") as f:
        return json.load(f)


def data_path(filename):
    """Path of a file shipped in diqkd_rates/data."""
    return Path(__file__).parent / "data" / filename
