from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import attr


@attr.define(slots=True)
class ConfigFiles:
    """
    Writes experiment configuration files into a directory, one per call.
    """

    root: Path = attr.field()
    written: list[Path] = attr.field(factory=list)

    def write(self, values: dict[str, Any], name: str | None = None) -> Path:
        path = self.root / (name or f"config-{len(self.written)}.json")
        path.write_text(json.dumps(values, indent=2) + "\n", encoding="utf-8")
        self.written.append(path)
        return path

    def write_text(self, text: str, name: str = "raw.json") -> Path:
        path = self.root / name
        path.write_text(text, encoding="utf-8")
        self.written.append(path)
        return path
