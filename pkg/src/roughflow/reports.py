"""Report containers shared by the verification routines."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


@dataclass
class DefectReport:
    """Sampled lower bound on a supremum, with the sample that attains it.

    ``value`` is the largest ratio seen; ``witness`` records where it was
    attained so a failure can be reproduced.
    """

    name: str
    value: float
    witness: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)
    seed: int | None = None
    threshold: float | None = None
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if np.isnan(self.value) or self.value < 0:
            raise ValueError(f"defect value must be >= 0, got {self.value}")
        self.value = float(self.value)

    @property
    def ok(self):
        """True when no threshold was set or the value stays below it."""
        return self.threshold is None or self.value <= self.threshold

    def to_dict(self):
        return _plain(asdict(self))

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)


def to_jsonable(obj):
    return _plain(obj)
