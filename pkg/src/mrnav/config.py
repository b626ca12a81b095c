"""Run settings and the key-value config file.

The file is plain ``key = value`` lines (``#`` comments allowed), parsed with
configparser under an implicit section. Credentials never live here; the live
client reads its key from the environment variable named by ``api_key_env``.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .frontier import FrontierParams
from .sim import SensorParams
from .vlm import EndpointConfig


@dataclass(frozen=True)
class Settings:
    # sensor
    sensor_range: float = 5.0
    sensor_fov_deg: float = 90.0
    ray_count: int | None = None
    label_dropout: float = 0.0
    false_label_rate: float = 0.0
    # map / frontier
    side_meters: float = 24.0
    dbscan_eps: float = 0.15
    dbscan_min_pts: int = 4
    frontier_dilation: int = 3
    frontier_min_size: int = 10
    # local policy
    plan_dilation: int = 2
    lookahead: float = 0.5
    heading_threshold_deg: float = 15.0
    snap_radius: float = 0.5
    # global planner
    lam: float = 1.0
    prompt_mode: str = "topview"
    distance_hints: bool = False
    # live endpoint
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    timeout: float = 60.0
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.0

    def sensor(self) -> SensorParams:
        return SensorParams(
            self.sensor_range, math.radians(self.sensor_fov_deg), self.ray_count, self.label_dropout, self.false_label_rate
        )

    def frontier(self) -> FrontierParams:
        return FrontierParams(self.frontier_dilation, self.frontier_min_size)

    def endpoint(self) -> EndpointConfig:
        return EndpointConfig(self.base_url, self.model, self.timeout, self.api_key_env, self.temperature)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self, **extra) -> str:
        blob = json.dumps({"settings": self.to_dict(), **extra}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _coerce(name: str, raw: str):
    f = {f.name: f for f in dataclasses.fields(Settings)}[name]
    kind = str(f.type)
    if kind.startswith("bool"):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if kind.startswith("int | None"):
        return None if raw.strip().lower() in ("", "none") else int(raw)
    if kind.startswith("int"):
        return int(raw)
    if kind.startswith("float"):
        return float(raw)
    return raw.strip()


def load_settings(path: str | Path | None = None, **overrides) -> Settings:
    values: dict = {}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        parser.read_string("[settings]\n" + Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in dataclasses.fields(Settings)}
        for key, raw in parser["settings"].items():
            if "key" in key and key != "api_key_env":
                raise ValueError("credentials must come from the environment")
            if key not in known:
                raise ValueError(f"unknown setting {key!r} in {path}")
            values[key] = _coerce(key, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return Settings(**values)
