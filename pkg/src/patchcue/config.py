"""Runtime settings shared by the CLI and the HTTP service.

Resolution order is flag > environment variable > default.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Mapping

from patchcue.geometry import DEFAULT_PATCH_SIZE
from patchcue.grpo import DEFAULT_BETA, DEFAULT_EPSILON, DEFAULT_STD_FLOOR
from patchcue.pipeline import DEFAULT_IOU_THRESHOLD
from patchcue.rewards import DEFAULT_TAU

ENV_PREFIX = "PATCHCUE_"


@dataclass(frozen=True)
class Settings:
    tau: float = DEFAULT_TAU
    patch_size: int = DEFAULT_PATCH_SIZE
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    epsilon: float = DEFAULT_EPSILON
    beta: float = DEFAULT_BETA
    std_floor: float = DEFAULT_STD_FLOOR
    max_batch: int = 1024
    parallelism: int = 1
    bind: str = "127.0.0.1:8787"

    def __post_init__(self) -> None:
        if not 0 < self.tau <= 1:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if self.patch_size <= 0:
            raise ValueError(f"patch size must be positive, got {self.patch_size}")
        if not 0 <= self.iou_threshold <= 1:
            raise ValueError(f"iou threshold must lie in [0, 1], got {self.iou_threshold}")
        if self.epsilon <= 0 or self.beta < 0 or self.std_floor <= 0:
            raise ValueError("epsilon > 0, beta >= 0 and std_floor > 0 are required")
        if self.max_batch < 0:
            raise ValueError("max batch must be non-negative")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    @classmethod
    def resolve(cls, env: Mapping[str, str] | None = None, **overrides: Any) -> Settings:
        """Defaults, then ``PATCHCUE_*`` variables, then non-None overrides."""
        env = os.environ if env is None else env
        values: dict[str, Any] = {}
        for f in fields(cls):
            raw = env.get(ENV_PREFIX + f.name.upper())
            if raw is not None and raw != "":
                values[f.name] = _coerce(f.type, raw, f.name)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return replace(cls(), **values)

    @property
    def host_port(self) -> tuple[str, int]:
        host, _, port = self.bind.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"bind address must be HOST:PORT, got {self.bind!r}")
        return host, int(port)

    def public(self) -> dict:
        d = asdict(self)
        d["patch_h"] = d["patch_w"] = self.patch_size
        return d


def _coerce(type_name: Any, raw: str, name: str) -> Any:
    kind = {"float": float, "int": int, "str": str}[str(type_name)]
    try:
        return kind(raw)
    except ValueError:
        raise ValueError(f"{ENV_PREFIX}{name.upper()}={raw!r} is not a valid {kind.__name__}") from None
