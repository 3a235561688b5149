"""Injected link delays.

Links are named by the message they carry: ``data`` (spout to worker),
``pull`` (worker to master), ``model`` (master to worker) and ``gradient``
(worker to master). Each link has its own seeded stream so adding delay on
one link does not perturb the draws on another.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..rng import SplitMix64

LINKS = ("data", "pull", "model", "gradient")
LINK_OF_KIND = {"data": "data", "pull-request": "pull", "model": "model", "gradient": "gradient", "shutdown": "data"}


@dataclass(frozen=True)
class Delay:
    dist: str = "zero"  # zero | fixed | uniform
    lo: float = 0.0
    hi: float = 0.0

    def __post_init__(self):
        if self.dist not in ("zero", "fixed", "uniform"):
            raise ValueError(f"unknown delay distribution {self.dist!r}")
        if self.lo < 0 or self.hi < 0:
            raise ValueError("delays must be non-negative")
        if self.dist == "uniform" and self.hi < self.lo:
            raise ValueError("uniform delay needs lo <= hi")

    @classmethod
    def parse(cls, text: str) -> "Delay":
        """``zero``, ``fixed:0.05`` or ``uniform:0.01:0.02`` (seconds / ticks)."""
        parts = text.split(":")
        if parts[0] == "zero":
            return cls()
        if parts[0] == "fixed" and len(parts) == 2:
            v = float(parts[1])
            return cls("fixed", v, v)
        if parts[0] == "uniform" and len(parts) == 3:
            return cls("uniform", float(parts[1]), float(parts[2]))
        raise ValueError(f"cannot parse delay {text!r}")

    def __str__(self):
        if self.dist == "zero":
            return "zero"
        if self.dist == "fixed":
            return f"fixed:{self.lo!r}"
        return f"uniform:{self.lo!r}:{self.hi!r}"


@dataclass
class LatencyModel:
    links: dict[str, Delay] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.links) - set(LINKS)
        if unknown:
            raise ValueError(f"unknown links {sorted(unknown)}")
        self._streams = {name: SplitMix64.substream(self.seed, "latency", i) for i, name in enumerate(LINKS)}

    @classmethod
    def zero(cls) -> "LatencyModel":
        return cls()

    @property
    def is_zero(self) -> bool:
        return all(d.dist == "zero" for d in self.links.values())

    def sample(self, link: str) -> float:
        d = self.links.get(link)
        if d is None or d.dist == "zero":
            return 0.0
        if d.dist == "fixed":
            return d.lo
        return d.lo + (d.hi - d.lo) * self._streams[link].random()

    def for_kind(self, kind: str) -> float:
        return self.sample(LINK_OF_KIND[kind])

    def describe(self) -> dict[str, str]:
        return {name: str(self.links.get(name, Delay())) for name in LINKS}
