"""Shipped network fixtures (synthetic)."""

from pathlib import Path

DIR = Path(__file__).parent


def path(name: str) -> Path:
    """Path of a shipped fixture, e.g. ``path("two_node")``."""
    p = DIR / (name if name.endswith(".json") else f"{name}.json")
    if not p.exists():
        raise FileNotFoundError(p)
    return p


def names() -> list[str]:
    return sorted(p.stem for p in DIR.glob("*.json"))
