"""Executable domains and the dataset format."""
from .base import Domain, GeneratedTask, Task, load_ground_truth, load_tasks, save_tasks


def get_domain(name: str) -> Domain:
    if name == "strings":
        from .strings import STRINGS

        return STRINGS
    if name == "graphics":
        from .graphics import GRAPHICS

        return GRAPHICS
    raise KeyError(f"unknown domain {name!r}")


__all__ = [
    "Domain",
    "GeneratedTask",
    "Task",
    "get_domain",
    "load_ground_truth",
    "load_tasks",
    "save_tasks",
]
