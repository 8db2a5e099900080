"""Prompt templates live as text files so they can be tuned without code changes."""
from __future__ import annotations

import string
from importlib import resources
from pathlib import Path

TEMPLATE_NAMES = ("reflection", "composition", "peer_assessment", "critic", "personality",
                  "single_shot")


class _Blank(dict):
    def __missing__(self, key):
        return ""


def load_template(name: str, template_dir: str | Path | None = None) -> str:
    if template_dir is not None:
        candidate = Path(template_dir) / f"{name}.txt"
        if candidate.exists():
            return candidate.read_text(encoding="utf-8")
    return resources.files(__package__).joinpath("templates", f"{name}.txt").read_text(
        encoding="utf-8")


def render(name: str, template_dir: str | Path | None = None, **values) -> str:
    """Fill named placeholders; unknown placeholders render empty."""
    text = load_template(name, template_dir)
    return string.Formatter().vformat(text, (), _Blank(values))


def placeholders(name: str, template_dir: str | Path | None = None) -> set[str]:
    text = load_template(name, template_dir)
    return {f for _, f, _, _ in string.Formatter().parse(text) if f}
