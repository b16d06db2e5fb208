"""Toolkit configuration file (JSON) and model-client selection."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .grounding import PromptConfig
from .relations import RelationConfig
from .statements import SynonymTable
from .vision import DEFAULT_CHAR_CAP, OutlineStyle

_KEYS = {"relations", "prompt", "outline", "char_cap", "client", "http", "parallel", "seed", "synonyms"}


@dataclass
class HttpSettings:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-4o"
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 60.0
    temperature: float | None = None


@dataclass
class ToolkitConfig:
    relations: RelationConfig = field(default_factory=RelationConfig)
    prompt: PromptConfig = field(default_factory=PromptConfig)
    outline: OutlineStyle = field(default_factory=OutlineStyle)
    synonyms: SynonymTable = field(default_factory=SynonymTable)
    char_cap: int = DEFAULT_CHAR_CAP
    client: str = "oracle"
    http: HttpSettings = field(default_factory=HttpSettings)
    parallel: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.parallel < 1:
            raise ValueError("parallel must be >= 1")
        if self.char_cap < 1:
            raise ValueError("char_cap must be >= 1")

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> "ToolkitConfig":
        unknown = set(data) - _KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls()
        if "relations" in data:
            cfg.relations = RelationConfig.from_dict(data["relations"])
        if "prompt" in data:
            p = dict(data["prompt"])
            if "system_template_file" in p:
                path = Path(p.pop("system_template_file"))
                if base is not None and not path.is_absolute():
                    path = base / path
                p["system_template"] = path.read_text(encoding="utf-8")
            cfg.prompt = PromptConfig(**p)
        if "outline" in data:
            o = data["outline"]
            colors = tuple((name, tuple(rgb)) for name, rgb in o.get("colors", OutlineStyle().colors))
            cfg.outline = OutlineStyle(colors, int(o.get("width", 3)))
        if "synonyms" in data:
            cfg.synonyms = SynonymTable({k: tuple(v) for k, v in data["synonyms"].items()})
        if "http" in data:
            cfg.http = HttpSettings(**data["http"])
        for key in ("char_cap", "client", "parallel", "seed"):
            if key in data:
                setattr(cfg, key, data[key])
        cfg.__post_init__()
        return cfg

    @classmethod
    def load(cls, path) -> "ToolkitConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")), path.parent)

    def snapshot(self) -> dict:
        return {
            "relations": self.relations.to_dict(),
            "prompt": self.prompt.to_dict(),
            "char_cap": self.char_cap,
            "client": self.client,
            "parallel": self.parallel,
            "seed": self.seed,
        }
