"""Reproducible run records (JSON)."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if np.isnan(v):
            return "nan"
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


@dataclass
class RunRecord:
    algorithm: str
    seed: int
    config: dict
    evidence: float
    log_evidence: float
    mean: list
    ess: float
    evaluations: int
    c_hat_trace: list = field(default_factory=list)
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)
    status: str = "ok"
    error: Optional[str] = None

    def to_dict(self, include_timing: bool = True) -> dict:
        d = _jsonable(asdict(self))
        if not include_timing:
            d.pop("wall_time", None)
        return d

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)

    def write(self, path: str | Path, include_timing: bool = True) -> None:
        Path(path).write_text(self.to_json(include_timing) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> "RunRecord":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        for key in ("evidence", "log_evidence", "ess"):
            if isinstance(d.get(key), str):
                d[key] = float(d[key])
        return cls(**d)


def record_from_particles(algorithm: str, seed: int, config: dict, particles, evaluations: int,
                          wall_time: float = 0.0, c_hat_trace=(), **extra) -> RunRecord:
    return RunRecord(
        algorithm=algorithm,
        seed=int(seed),
        config=_jsonable(config),
        evidence=particles.evidence(),
        log_evidence=particles.log_evidence(),
        mean=_jsonable(particles.mean()),
        ess=particles.ess(),
        evaluations=int(evaluations),
        c_hat_trace=_jsonable(list(c_hat_trace)),
        wall_time=float(wall_time),
        extra=_jsonable(extra),
    )
