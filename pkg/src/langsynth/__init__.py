"""langsynth: joint library learning and language-guided program search."""

__version__ = "0.1.0"
