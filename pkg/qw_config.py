import logging
import os
from copy import deepcopy
from typing import Any, Dict, Optional

from qw_errors import UsageError

logger = logging.getLogger(__name__)

DEFAULT_SWEEP = [0.2, 0.4, 0.6, 0.8, 1.0]

KEY_ALIASES = {"lambda": "lam", "output": "out"}

# any user-supplied member replaces the whole default group
TIMING_KEYS = frozenset({"tau", "steps", "time"})


class ConfigManager:
    """Experiment defaults per subcommand, optionally overridden by a key=value file."""

    def __init__(self, config_file: Optional[str] = None):
        self.config_file = config_file

        self.default_config = {
            "common": {
                "gamma": 1.0,
                "seed": 0,
                "stride": 1,
                "start": 0,
                "workers": 1,
                "trajectories": 1000,
                "format": "csv",
            },
            "trajectory": {
                "graph": "lattice2d:10x10",
                "lam": 0.5,
                "tau": 1e-4,
                "steps": 100000,
                "start": 44,  # centre of the 10x10 lattice
                "stride": 100,
            },
            "channel": {
                "graph": "ring:15",
                "lam": 0.5,
                "tau": 0.004,
                "steps": 5000,
                "stride": 5,
            },
            "complete": {
                "graph": "complete:15",
                "lam": 0.3,
                "tau": 1e-4,
                "steps": 100000,
                "stride": 100,
            },
            "montecarlo": {
                "graph": "ring:5",
                "lam": 0.5,
                "tau": 0.01,
                "steps": 1000,
                "stride": 10,
                "trajectories": 1000,
            },
            "classical": {
                "graph": "complete:15",
                "lam": 0.3,
                "tau": 1e-4,
                "steps": 100000,
                "stride": 100,
            },
            "oracle": {
                "graph": "ring:4",
                "lam": 1.0,
                "tau": 0.01,
                "time": 10.0,
                "which": "rescaled",
            },
            "envelope": {
                "graph": "ring:4",
                "lam": 0.2,
                "tau": 0.1,
                "steps": 1000,
                "trajectory_steps": 3000,
                "trajectories": 1000,
            },
            "convergence": {
                "graph": "ring:10",
                "lam": 0.5,
                "time": 10.0,
                "steps_list": [250, 500, 1000, 2000, 4000],
            },
            "horizon": {
                "graph": "ring:5",
                "lam": 0.5,
                "time": 10.0,
                "steps_list": [500, 1000, 2000, 4000],
                "epsilons": [0.02, 0.05, 0.1],
            },
        }

        self.known_keys = {"graph", "lam", "tau", "steps", "time", "out", "which", "sweep",
                           "steps_list", "epsilons", "trajectory_steps", "backend", "average"}
        for section in self.default_config.values():
            self.known_keys.update(section)

    @staticmethod
    def normalize_key(key: str) -> str:
        key = key.strip().lstrip("-").replace("-", "_").lower()
        return KEY_ALIASES.get(key, key)

    def defaults_for(self, command: str) -> Dict[str, Any]:
        if command not in self.default_config or command == "common":
            raise UsageError(f"unknown command {command!r}")
        merged = deepcopy(self.default_config["common"])
        merged.update(deepcopy(self.default_config[command]))
        return merged

    def read_file(self, path: str) -> Dict[str, str]:
        """Parse a key=value file. Values stay strings; the experiment model coerces them."""
        try:
            with open(path, "r", encoding="utf-8") as f:
                lines = f.readlines()
        except OSError as e:
            raise UsageError(f"cannot read config file {path}: {e.strerror or e}") from e

        values: Dict[str, str] = {}
        for lineno, raw in enumerate(lines, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise UsageError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key = self.normalize_key(key)
            if key not in self.known_keys:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = value.strip()
        logger.debug(f"Loaded {len(values)} settings from {path}")
        return values

    def load_config(self, command: str, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """Defaults, then the config file, then explicit overrides (flags)."""
        supplied: Dict[str, Any] = {}
        if self.config_file:
            if not os.path.exists(self.config_file):
                raise UsageError(f"config file {self.config_file} does not exist")
            supplied.update(self.read_file(self.config_file))
        for key, value in (overrides or {}).items():
            if value is not None:
                supplied[self.normalize_key(key)] = value
        return merge_settings(self.defaults_for(command), supplied)

    def update_config(self, command: str, new_config: Dict[str, Any]) -> None:
        unknown = [k for k in new_config if self.normalize_key(k) not in self.known_keys]
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        section = self.default_config.setdefault(command, {})
        section.update({self.normalize_key(k): v for k, v in new_config.items()})


def merge_settings(defaults: Dict[str, Any], supplied: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(defaults)
    if TIMING_KEYS & supplied.keys():
        for key in TIMING_KEYS:
            merged.pop(key, None)
    merged.update(supplied)
    return merged
