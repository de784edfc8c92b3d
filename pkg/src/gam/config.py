"""Engine configuration: defaults, config file, environment and flag overrides."""
from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .pagestore import TOOLS
from .researcher import OutputFormat, ResearchConfig

ENV_VARS = {"GAM_STORE": "store_path", "GAM_BASE_URL": "base_url"}


@dataclass(frozen=True)
class EngineConfig:
    page_size: int = 2048
    max_reflection_depth: int = 3
    top_k: int = 5
    output_format: OutputFormat = OutputFormat.INTEGRATION_ONLY
    enabled_tools: tuple[str, ...] = TOOLS
    store_path: str | None = None
    # backend: a scripted rule file wins over the HTTP endpoint
    scripted_rules: str | None = None
    base_url: str | None = None
    model: str = "gpt-4o-mini"
    memo_budget: int = 256
    header_budget: int = 128
    context_budget: int = 96_000
    index_headers: bool = True
    reflect_sees_pages: bool = False

    def __post_init__(self):
        tools = self.enabled_tools
        if isinstance(tools, str):
            tools = tuple(t.strip() for t in tools.split(",") if t.strip())
        tools = tuple(t for t in TOOLS if t in tools) if set(tools) <= set(TOOLS) else None
        if not tools:
            raise ValueError(f"enabled_tools must be a non-empty subset of {TOOLS}, got {self.enabled_tools!r}")
        object.__setattr__(self, "enabled_tools", tools)
        object.__setattr__(self, "output_format", OutputFormat(self.output_format))
        for name in ("page_size", "max_reflection_depth", "top_k"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def research(self) -> ResearchConfig:
        return ResearchConfig(
            max_reflection_depth=self.max_reflection_depth,
            top_k=self.top_k,
            output_format=self.output_format,
            enabled_tools=self.enabled_tools,
            reflect_sees_pages=self.reflect_sees_pages,
            context_budget=self.context_budget,
        )

    def with_overrides(self, **values) -> EngineConfig:
        return replace(self, **{k: v for k, v in values.items() if v is not None})

    @classmethod
    def resolve(cls, config_file=None, env=None, **flags) -> EngineConfig:
        """Build a config with precedence flags > environment > file > defaults."""
        known = {f.name for f in fields(cls)}
        values: dict = {}
        if config_file is not None:
            with open(config_file, "rb") as fh:
                data = tomllib.load(fh)
            unknown = set(data) - known
            if unknown:
                raise ValueError(f"unknown config keys: {sorted(unknown)}")
            values.update(data)
        env = os.environ if env is None else env
        for var, name in ENV_VARS.items():
            if env.get(var):
                values[name] = env[var]
        values.update({k: v for k, v in flags.items() if v is not None})
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if isinstance(values.get("enabled_tools"), list):
            values["enabled_tools"] = tuple(values["enabled_tools"])
        if values.get("store_path") is not None:
            values["store_path"] = str(Path(values["store_path"]))
        return cls(**values)
