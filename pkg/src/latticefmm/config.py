"""Run configuration: defaults, environment overrides, cache location.

Precedence for every knob is flags > environment > defaults.  The
environment variables are ``LFMM_EPS``, ``LFMM_NLEAF`` and
``LFMM_CACHE_DIR``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

DEFAULT_EPS = 1e-10
DEFAULT_NLEAF = 64
DEFAULT_RTABLE = 30
DEFAULT_PROXY_PER_EDGE = 40
DEFAULT_SEED = 0


@dataclass
class RunConfig:
    eps: float = DEFAULT_EPS
    nleaf: int = DEFAULT_NLEAF
    rtable: int = DEFAULT_RTABLE
    proxy_per_edge: int = DEFAULT_PROXY_PER_EDGE
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if not (1e-14 < self.eps < 1e-2):
            raise ValueError(f"eps must lie in (1e-14, 1e-2), got {self.eps}")
        if self.nleaf < 1:
            raise ValueError(f"nleaf must be >= 1, got {self.nleaf}")
        if self.rtable < 3:
            raise ValueError(f"rtable must be >= 3, got {self.rtable}")

    @classmethod
    def from_env(cls, **overrides) -> "RunConfig":
        """Build a config from the environment, then apply explicit overrides.

        Overrides passed as ``None`` are ignored so CLI code can forward
        unset flags directly.
        """
        values = {}
        if "LFMM_EPS" in os.environ:
            values["eps"] = float(os.environ["LFMM_EPS"])
        if "LFMM_NLEAF" in os.environ:
            values["nleaf"] = int(os.environ["LFMM_NLEAF"])
        for key, val in overrides.items():
            if val is not None:
                values[key] = val
        return cls(**values)


def cache_dir() -> Path:
    """Directory for the Green-function table and operator caches."""
    root = os.environ.get("LFMM_CACHE_DIR")
    if root:
        return Path(root)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "latticefmm"
