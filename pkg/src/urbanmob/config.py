"""Pipeline configuration: one JSON file, overridable from the command line."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .geodesy import InvalidRegion, Region, region_from_config
from .restsim.ratelimit import RateLimitPolicy
from .selection import SelectionConfig
from .store import ClusterConfig
from .streamsim.service import StreamConfig
from .streamsim.world import DEFAULT_METROS

DEFAULTS: dict[str, Any] = {
    "seed": 7,
    "world": {"n_users": 2000, "metro_fraction": 0.6, "bot_fraction": 0.05,
              "protected_fraction": 0.05, "geolocated_fraction": 0.12, "mean_friends": 15.0},
    "corpus": {"n_events": 10000},
    "regions": copy.deepcopy(DEFAULT_METROS),
    "cluster": ClusterConfig().to_dict(),
    "stream": {"sample_rate": 0.01, "shuffle_window": 16, "delete_probability": 0.02,
               "delete_before_original_probability": 0.3,
               "max_connect_attempts_per_minute": 5, "ban_duration_s": 300,
               "emit_rate_per_s": 0.0},
    "rest": RateLimitPolicy().to_dict(),
    "selection": {"region": "barcelona", "spacing_miles": 1.0, "radius_miles": 1.0,
                  "distinct_epsilon_miles": 0.0, "min_distinct_locations": 2},
    "schedule": {"guard_s": 1.0, "passes": 1, "duration_s": 900.0},
    "bench": {"batch_size": 10000, "n_batches": 20, "query_workers": 2},
    "paths": {"state_dir": "state", "out_dir": "out"},
}


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"config key {key!r}: {msg}")
        self.key = key


def _merge(base: dict, over: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(key, "unknown key")
        if isinstance(base[k], dict) and k not in ("regions",):
            if not isinstance(v, dict):
                raise ConfigError(key, "expected an object")
            if k == "cluster" and "collections" in v:
                out[k]["collections"] = v["collections"]
                v = {kk: vv for kk, vv in v.items() if kk != "collections"}
            out[k] = _merge(out[k], v, key + ".") if v else out[k]
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class PipelineConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __post_init__(self):
        self.validate()

    @classmethod
    def load(cls, path: Optional[str | Path] = None, overrides: Optional[dict] = None
             ) -> "PipelineConfig":
        raw = copy.deepcopy(DEFAULTS)
        if path is not None:
            try:
                user = json.loads(Path(path).read_text())
            except json.JSONDecodeError as e:
                raise ConfigError(str(path), f"invalid JSON: {e}") from e
            if not isinstance(user, dict):
                raise ConfigError(str(path), "top level must be an object")
            raw = _merge(raw, user)
        for dotted, value in (overrides or {}).items():
            raw = _merge(raw, _nest(dotted, value))
        return cls(raw)

    def validate(self) -> None:
        r = self.raw
        if not isinstance(r["seed"], int):
            raise ConfigError("seed", "must be an integer")
        _wrap("cluster", lambda: self.cluster)
        _wrap("stream", lambda: self.stream)
        _wrap("rest", lambda: self.rest)
        for name in r["regions"]:
            _wrap(f"regions.{name}", lambda n=name: self.region(n))
        sel = r["selection"]["region"]
        if sel not in r["regions"]:
            raise ConfigError("selection.region", f"no region named {sel!r}")
        _wrap("selection", lambda: self.selection)
        w = r["world"]
        if not isinstance(w["n_users"], int) or w["n_users"] < 1:
            raise ConfigError("world.n_users", "must be a positive integer")
        for k in ("metro_fraction", "bot_fraction", "protected_fraction", "geolocated_fraction"):
            if not 0 <= w[k] <= 1:
                raise ConfigError(f"world.{k}", "must lie in [0, 1]")
        n = r["corpus"]["n_events"]
        if not isinstance(n, int) or n < 0:
            raise ConfigError("corpus.n_events", "must be a non-negative integer")

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def cluster(self) -> ClusterConfig:
        c = ClusterConfig.from_dict(self.raw["cluster"])
        c.validate()
        return c

    @property
    def stream(self) -> StreamConfig:
        return StreamConfig(**self.raw["stream"])

    @property
    def rest(self) -> RateLimitPolicy:
        return RateLimitPolicy.from_dict(self.raw["rest"])

    def region(self, name: str) -> Region:
        try:
            return region_from_config(self.raw["regions"][name])
        except KeyError:
            raise ConfigError(f"regions.{name}", "no such region") from None

    @property
    def selection(self) -> SelectionConfig:
        s = dict(self.raw["selection"])
        s["region"] = self.region(s["region"])
        return SelectionConfig(**s)

    @property
    def state_dir(self) -> Path:
        return Path(self.raw["paths"]["state_dir"])

    @property
    def out_dir(self) -> Path:
        return Path(self.raw["paths"]["out_dir"])

    def to_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, indent=1) + "\n"


def _nest(dotted: str, value) -> dict:
    parts = dotted.split(".")
    out: dict = {parts[-1]: value}
    for p in reversed(parts[:-1]):
        out = {p: out}
    return out


def _wrap(key: str, fn) -> None:
    try:
        fn()
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError, InvalidRegion) as e:
        raise ConfigError(key, str(e)) from e
