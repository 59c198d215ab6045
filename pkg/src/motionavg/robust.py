"""Robust losses for IRLS: ρ(r) and the weight ψ(r)/r."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("l2", "huber", "geman_mcclure", "cauchy")


@dataclass(frozen=True)
class RobustLoss:
    kind: str = "l2"
    c: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown robust loss {self.kind!r}; expected one of {KINDS}")
        if not self.c > 0:
            raise ValueError("robust loss scale c must be positive")

    def rho(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        c = self.c
        if self.kind == "l2":
            return 0.5 * r**2
        if self.kind == "huber":
            return np.where(r <= c, 0.5 * r**2, c * (r - 0.5 * c))
        if self.kind == "geman_mcclure":
            return 0.5 * c**2 * r**2 / (c**2 + r**2)
        return 0.5 * c**2 * np.log1p((r / c) ** 2)

    def weight(self, r):
        """ψ(r)/r, in (0, 1]; 1 at r = 0."""
        r = np.abs(np.asarray(r, dtype=float))
        c = self.c
        if self.kind == "l2":
            return np.ones_like(r)
        if self.kind == "huber":
            return np.where(r <= c, 1.0, c / np.maximum(r, c))
        if self.kind == "geman_mcclure":
            return c**4 / (c**2 + r**2) ** 2
        return 1.0 / (1.0 + (r / c) ** 2)

    def total(self, r) -> float:
        return float(np.sum(self.rho(r)))

    @classmethod
    def parse(cls, text: str, c: float | None = None) -> "RobustLoss":
        """Accepts ``huber``, ``huber(0.1)`` or a kind plus a separate ``c``."""
        text = text.strip().lower().replace("-", "_")
        if "(" in text and text.endswith(")"):
            kind, arg = text[:-1].split("(", 1)
            return cls(kind.strip(), float(arg))
        return cls(text, 1.0 if c is None else float(c))

    def __str__(self) -> str:
        return self.kind if self.kind == "l2" else f"{self.kind}({self.c:g})"
