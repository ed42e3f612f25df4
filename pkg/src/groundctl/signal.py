"""Scalar control signals stored on composite Gauss-Legendre grids.

A :class:`ControlSignal` holds nodal values on ``n`` Gauss points per
panel and is interpreted as the degree ``n - 1`` polynomial interpolant on
each panel (zero outside its support).  With this reading the stored
quadrature gives the exact ``L^2`` norm, and restriction, refinement and
concatenation are exact operations.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.polynomial import legendre as L

from .errors import DimensionError, DomainError
from .quadrature import composite_rule, gauss_rule

__all__ = ["ControlSignal"]


@lru_cache(maxsize=16)
def _to_legendre(n: int) -> np.ndarray:
    # maps nodal values at the n Gauss points to Legendre coefficients
    x, _ = gauss_rule(n)
    m = np.linalg.inv(L.legvander(x, n - 1))
    m.setflags(write=False)
    return m


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """Piecewise-polynomial control on ``[edges[0], edges[-1]]``.

    Parameters
    ----------
    edges : ndarray, shape (P + 1,)
        Strictly increasing panel boundaries.
    values : ndarray, shape (P, n)
        Values at the ``n`` Gauss-Legendre nodes of each panel.
    """

    edges: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
            raise DomainError("edges must be strictly increasing with at least two entries")
        if v.ndim != 2 or v.shape[0] != e.size - 1:
            raise DimensionError(f"values must have shape ({e.size - 1}, n), got {v.shape}")
        e.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "values", v)

    # -- construction -----------------------------------------------------
    @classmethod
    def from_function(cls, f: Callable[[np.ndarray], np.ndarray], edges, n: int = 12) -> "ControlSignal":
        """Sample ``f`` at the Gauss nodes of the given panels."""
        nodes, _ = composite_rule(edges, n)
        return cls(edges, np.asarray(f(nodes), dtype=float) * np.ones_like(nodes))

    @classmethod
    def zero(cls, t0: float, t1: float, n: int = 12, panels: int = 1) -> "ControlSignal":
        return cls(np.linspace(t0, t1, panels + 1), np.zeros((panels, n)))

    @classmethod
    def concatenate(cls, parts: Sequence["ControlSignal"]) -> "ControlSignal":
        """Join signals with disjoint, ordered supports; gaps become zero panels."""
        parts = list(parts)
        if not parts:
            raise DomainError("nothing to concatenate")
        n = parts[0].order
        edges = [parts[0].edges]
        values = [parts[0].values]
        end = parts[0].t1
        for s in parts[1:]:
            if s.order != n:
                s = s.resampled(n)
            if s.t0 < end - 1e-14 * max(1.0, abs(end)):
                raise DomainError("signals to concatenate overlap")
            if s.t0 > end:
                edges.append(np.array([s.t0]))
                values.append(np.zeros((1, n)))
            edges.append(s.edges[1:])
            values.append(s.values)
            end = s.t1
        return cls(np.concatenate(edges), np.concatenate(values))

    # -- basic properties --------------------------------------------------
    @property
    def order(self) -> int:
        """Nodes per panel."""
        return int(self.values.shape[1])

    @property
    def t0(self) -> float:
        return float(self.edges[0])

    @property
    def t1(self) -> float:
        return float(self.edges[-1])

    @property
    def panels(self) -> int:
        return int(self.values.shape[0])

    @cached_property
    def _rule(self):
        return composite_rule(self.edges, self.order)

    @property
    def nodes(self) -> np.ndarray:
        return self._rule[0]

    @property
    def weights(self) -> np.ndarray:
        return self._rule[1]

    @cached_property
    def _coef(self) -> np.ndarray:
        return self.values @ _to_legendre(self.order).T

    def l2_norm(self) -> float:
        """Exact ``L^2`` norm of the piecewise polynomial."""
        return float(np.sqrt(np.sum(self.weights * self.values ** 2)))

    def support_length(self, atol: float = 0.0) -> float:
        """Total length of panels on which the signal is not identically zero."""
        live = np.any(np.abs(self.values) > atol, axis=1)
        return float(np.sum(np.diff(self.edges)[live]))

    # -- evaluation --------------------------------------------------------
    def _locate(self, t: np.ndarray):
        idx = np.clip(np.searchsorted(self.edges, t, side="right") - 1, 0, self.panels - 1)
        a, b = self.edges[idx], self.edges[idx + 1]
        s = (2.0 * t - (a + b)) / (b - a)
        inside = (t >= self.t0) & (t <= self.t1)
        return idx, s, inside

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        shape = t.shape
        t = t.ravel()
        idx, s, inside = self._locate(t)
        out = L.legval(s, self._coef[idx].T, tensor=False)
        return np.where(inside, out, 0.0).reshape(shape)

    def primitive(self, t) -> np.ndarray:
        """``int_{t0}^{t} p(s) ds``, constant outside the support."""
        t = np.asarray(t, dtype=float)
        shape = t.shape
        t = np.clip(t.ravel(), self.t0, self.t1)
        half = 0.5 * np.diff(self.edges)
        anti = L.legint(self._coef.T, lbnd=-1).T  # per panel, variable s
        full = L.legval(1.0, anti.T) * half
        offset = np.concatenate([[0.0], np.cumsum(full)])
        idx, s, _ = self._locate(t)
        part = L.legval(s, anti[idx].T, tensor=False) * half[idx]
        return (offset[idx] + part).reshape(shape)

    def increments(self, times) -> np.ndarray:
        """Integrals of ``p`` over consecutive intervals of ``times``."""
        return np.diff(self.primitive(times))

    # -- transformations ---------------------------------------------------
    def shifted(self, dt: float) -> "ControlSignal":
        return ControlSignal(self.edges + dt, self.values)

    def scaled(self, c: float) -> "ControlSignal":
        return ControlSignal(self.edges, c * self.values)

    def resampled(self, n: int) -> "ControlSignal":
        """Same panels, ``n`` nodes each (exact when ``n >= order``)."""
        nodes, _ = composite_rule(self.edges, n)
        return ControlSignal(self.edges, self(nodes))

    def split_at(self, points: Iterable[float]) -> "ControlSignal":
        """Insert extra panel boundaries; the function is unchanged."""
        pts = [p for p in points if self.t0 < p < self.t1]
        edges = np.union1d(self.edges, pts)
        if edges.size == self.edges.size:
            return self
        # evaluate each new panel's nodes strictly inside its parent panel
        nodes, _ = composite_rule(edges, self.order)
        parent = np.searchsorted(self.edges, 0.5 * (edges[:-1] + edges[1:]), side="right") - 1
        a, b = self.edges[parent][:, None], self.edges[parent + 1][:, None]
        s = (2.0 * nodes - (a + b)) / (b - a)
        vals = np.array([L.legval(s[i], self._coef[parent[i]]) for i in range(len(parent))])
        return ControlSignal(edges, vals)

    def refined(self, factor: int = 2) -> "ControlSignal":
        """Split every panel into ``factor`` equal parts."""
        pts = [a + (b - a) * j / factor for a, b in zip(self.edges[:-1], self.edges[1:]) for j in range(1, factor)]
        return self.split_at(pts)

    def restrict(self, a: float, b: float) -> "ControlSignal":
        """The signal on ``[a, b]``, a sub-interval of its support."""
        if not (self.t0 - 1e-15 <= a < b <= self.t1 + 1e-15):
            raise DomainError("restriction interval outside the support")
        s = self.split_at([a, b])
        keep = (s.edges[:-1] >= a - 1e-15) & (s.edges[1:] <= b + 1e-15)
        i = np.nonzero(keep)[0]
        return ControlSignal(s.edges[i[0]: i[-1] + 2], s.values[i])

    def extended(self, t1: float) -> "ControlSignal":
        """Append a zero panel up to ``t1`` (no-op if already reached)."""
        if t1 <= self.t1:
            return self
        return ControlSignal(np.append(self.edges, t1), np.vstack([self.values, np.zeros((1, self.order))]))

    def to_rows(self):
        """``(t, weight, p)`` triples for CSV export."""
        return np.column_stack([self.nodes.ravel(), self.weights.ravel(), self.values.ravel()])
