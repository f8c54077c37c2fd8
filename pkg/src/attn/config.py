"""Run configuration: YAML in, dataclasses with defaults, dict echo out."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import yaml

from .disentangler import AttnConfig
from .lattice import Lattice2D, LocalTerm, RydbergParams, build_model, spacing_for_vnn
from .ttn import SweepConfig


@dataclass
class ModelConfig:
    """Model and lattice.  Rydberg units: MHz, um; ``c6`` in GHz um^6.

    ``v_nn`` (if set) fixes the spacing ``a``.
    """

    name: str = "ising"
    L: int = 4
    Ly: int | None = None
    boundary: str = "periodic"
    omega: float = 4.0
    delta: float = 0.0
    v_nn: float | None = 46.0
    a: float | None = None
    c6: float = 863.0
    delta_br: float | None = -7.0

    def lattice(self) -> Lattice2D:
        return Lattice2D(self.L, self.boundary, self.Ly)

    def rydberg(self) -> RydbergParams:
        a = self.a if self.v_nn is None else spacing_for_vnn(self.v_nn, self.c6)
        if a is None:
            raise ValueError("Rydberg model needs v_nn or a")
        return RydbergParams(omega=self.omega, delta=self.delta, c6=self.c6, a=a, delta_br=self.delta_br)

    def terms(self) -> list[LocalTerm]:
        return build_model(self.name, self.lattice(), self.rydberg() if self.name == "rydberg" else None)


@dataclass
class ScanConfig:
    param: str = "delta"
    start: float = 0.0
    stop: float = 30.0
    step: float = 1.0

    def values(self) -> np.ndarray:
        if self.step <= 0:
            raise ValueError("scan step must be positive")
        n = int(np.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        if n < 1:
            raise ValueError("scan range is empty")
        return np.round(self.start + self.step * np.arange(n), 12)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    ansatz: str = "attn"
    m: list = field(default_factory=lambda: [16])
    seed: int = 0
    sweep: dict = field(default_factory=dict)
    attn: dict = field(default_factory=dict)
    scan: ScanConfig | None = None
    output_dir: str = "runs/out"
    checkpoint_every: int = 1
    scan_mode: str = "independent"
    restarts: int = 1
    warm_sweep: dict = field(default_factory=dict)
    observables: list = field(default_factory=lambda: ["densities", "correlators"])
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if isinstance(self.scan, dict):
            self.scan = ScanConfig(**self.scan)
        if isinstance(self.m, int):
            self.m = [self.m]
        self.m = [int(v) for v in self.m]
        self.validate()

    def validate(self):
        L = self.model.L
        for ext in (L, self.model.Ly or L):
            if ext < 1 or ext & (ext - 1):
                raise ValueError(f"lattice extents must be powers of two, got {ext}")
        if not self.m or min(self.m) < 1:
            raise ValueError("bond dimensions must be >= 1")
        if self.ansatz not in ("ttn", "attn"):
            raise ValueError(f"unknown ansatz {self.ansatz!r}")
        if self.scan_mode not in ("independent", "forward", "bidirectional"):
            raise ValueError(f"unknown scan mode {self.scan_mode!r}")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.model.name not in ("ising", "heisenberg", "rydberg"):
            raise ValueError(f"unknown model {self.model.name!r}")
        if self.scan is not None:
            if not hasattr(self.model, self.scan.param):
                raise ValueError(f"cannot scan unknown parameter {self.scan.param!r}")
            self.scan.values()
        dataclasses.replace(SweepConfig(**self.sweep), **self.warm_sweep)
        self.attn_config(self.m[0])

    def sweep_config(self, m: int) -> SweepConfig:
        return SweepConfig(max_m=m, **self.sweep)

    def attn_config(self, m: int, seed: int | None = None) -> AttnConfig:
        return AttnConfig(sweep=self.sweep_config(m), seed=self.seed if seed is None else seed, **self.attn)

    def points(self) -> list[dict]:
        if self.scan is None:
            return [{}]
        return [{self.scan.param: float(v)} for v in self.scan.values()]

    def model_at(self, point: dict) -> ModelConfig:
        return dataclasses.replace(self.model, **point)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**d)


def load_config(path: str) -> RunConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return RunConfig.from_dict(data)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
