#!/usr/bin/env python3
"""
Sparse event-based optical flow
Triplet matching inside grid cells followed by per-cell registration
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core import EventArray

logger = logging.getLogger(__name__)

# Relative tolerance under which two registration costs count as a tie
COST_TIE_TOLERANCE = 1e-9
# Triplet legs must last longer than this fraction of tau
MIN_LEG_FRACTION = 0.5
RATIO_EPSILON = 1e-9


@dataclass(frozen=True)
class FlowVector:
    """One registered flow estimate for a grid cell (pixels / second)"""
    u: float
    v: float
    fu: float
    fv: float
    t: float
    support: int
    cost: float = 0.0


@dataclass(frozen=True)
class RoiRegistration:
    """Winner of the per-cell cost minimisation"""
    index: int
    flow: Tuple[float, float]
    support: int
    cost: float


def _legal_pairs(t: np.ndarray, min_leg: float) -> np.ndarray:
    """legal[i, j] for i < j when the leg from event i to event j lasts longer than min_leg"""
    gap = t[None, :] - t[:, None]
    return np.triu((gap > min_leg) & (gap > 0), k=1)


def find_triplets(cell_events: EventArray, tau: float, collinearity_px: float = 1.0) -> np.ndarray:
    """
    Enumerate spatio-temporal triplets of a time-sorted event set

    A triple (i, j, k) with t_i < t_j < t_k is kept when some tau' with
    |tau'| <= tau makes (x_j - x_i)/(t_j - t_i) match (x_k - x_j)/(t_k - t_j + tau')
    and the second displacement passes less than collinearity_px from the
    line of the first. Both legs must last longer than tau / 2.

    Args:
        cell_events: Events of one cell, sorted by time
        tau: Time tolerance in seconds
        collinearity_px: Allowed perpendicular offset of the second displacement

    Returns:
        (T, 3) int array of event indices (i, j, k), in lexicographic order
    """
    if len(cell_events) < 3:
        return np.zeros((0, 3), dtype=np.int64)
    t = cell_events.t
    legal = _legal_pairs(t, MIN_LEG_FRACTION * tau)
    first_i, first_j = np.nonzero(legal)
    # join every first leg (i, j) with the legal second legs (j, k), row-major keeps the order lexicographic
    counts = legal.sum(axis=1)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    repeats = counts[first_j]
    total = int(repeats.sum())
    if total == 0:
        return np.zeros((0, 3), dtype=np.int64)
    I = np.repeat(first_i, repeats)
    J = np.repeat(first_j, repeats)
    before = np.concatenate([[0], np.cumsum(repeats)[:-1]])
    K = first_j[np.repeat(starts[first_j] - before, repeats) + np.arange(total)]
    a = t[J] - t[I]
    b = t[K] - t[J]
    x = cell_events.x.astype(np.float64)
    y = cell_events.y.astype(np.float64)
    d1x, d1y = x[J] - x[I], y[J] - y[I]
    d2x, d2y = x[K] - x[J], y[K] - y[J]
    length1 = np.hypot(d1x, d1y)
    length2 = np.hypot(d2x, d2y)
    s_low = np.maximum((b - tau) / a, 0.0)
    s_high = (b + tau) / a
    moving = (length1 > 0) & (length2 > 0)
    safe = np.where(moving, length1, 1.0)
    ratio = length2 / safe
    offset = np.abs(d1x * d2y - d1y * d2x) / safe
    consistent = (moving & (d1x * d2x + d1y * d2y > 0)
                  & (ratio >= s_low - RATIO_EPSILON) & (ratio <= s_high + RATIO_EPSILON)
                  & ((offset < collinearity_px) | (offset <= RATIO_EPSILON)))
    still = (length1 == 0) & (length2 == 0)
    accepted = consistent | still
    return np.stack([I[accepted], J[accepted], K[accepted]], axis=1)


def triplet_flow(events: EventArray, triplet: Sequence[int]) -> np.ndarray:
    """
    Flow of one triplet from its end points, pixels / second

    Raises:
        ValueError: if the end points share a timestamp
    """
    i, _, k = triplet
    dt = events.t[k] - events.t[i]
    if dt <= 0:
        raise ValueError(f"triplet end points must be time-ordered, got dt={dt}")
    return np.array([events.x[k] - events.x[i], events.y[k] - events.y[i]], dtype=np.float64) / dt


def triplet_flows(events: EventArray, triplets: np.ndarray) -> np.ndarray:
    """Vectorised triplet_flow for a (T, 3) index array"""
    if len(triplets) == 0:
        return np.zeros((0, 2))
    i, k = triplets[:, 0], triplets[:, 2]
    dt = events.t[k] - events.t[i]
    displacement = np.stack([events.x[k] - events.x[i], events.y[k] - events.y[i]], axis=1)
    return displacement.astype(np.float64) / dt[:, None]


def _nearest_sums(candidates: np.ndarray, columns: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Per candidate, the sum over events of the distance to the nearest candidate in the event's column run"""
    distances = np.linalg.norm(candidates[:, None, :] - candidates[None, columns, :], axis=2)
    return np.minimum.reduceat(distances, offsets, axis=1).sum(axis=1)


def _register(candidates: np.ndarray, columns: np.ndarray, offsets: np.ndarray) -> RoiRegistration:
    """
    Minimise over distinct candidate values; duplicates share a cost, so the
    result matches scoring every candidate
    """
    distinct, first, inverse, support = np.unique(candidates, axis=0, return_index=True,
                                                  return_inverse=True, return_counts=True)
    inverse = np.asarray(inverse).reshape(-1)
    if len(columns):
        costs = _nearest_sums(distinct, inverse[columns], offsets)
    else:
        costs = np.zeros(len(distinct))
    best = costs.min()
    tied = np.flatnonzero(costs <= best + COST_TIE_TOLERANCE * (1.0 + abs(best)))
    strongest = tied[support[tied] == support[tied].max()]
    winner = strongest[np.argmin(first[strongest])]
    index = int(first[winner])
    return RoiRegistration(index, (float(candidates[index, 0]), float(candidates[index, 1])),
                           int(support[winner]), float(costs[winner]))


def register_roi(candidates: np.ndarray, per_event_subsets: Sequence[np.ndarray]) -> Optional[RoiRegistration]:
    """
    Pick the candidate flow minimising the summed per-event nearest distance

    Args:
        candidates: (m, 2) candidate flows M (duplicates count as support)
        per_event_subsets: For each event, indices into candidates forming M_i

    Returns:
        RoiRegistration, or None when M is empty. Ties go to larger support,
        then to the earliest candidate.
    """
    candidates = np.asarray(candidates, dtype=np.float64).reshape(-1, 2)
    if len(candidates) == 0:
        return None
    subsets = [np.asarray(s, dtype=np.int64) for s in per_event_subsets if len(s)]
    if not subsets:
        return _register(candidates, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    offsets = np.cumsum([0] + [len(s) for s in subsets[:-1]])
    return _register(candidates, np.concatenate(subsets), offsets)


class RoiGrid:
    """Grid of cells buffering recent events and emitting one flow per cell per step"""

    def __init__(self, width: int, height: int, cell_size: int = 20, window: float = 0.030,
                 tau: float = 0.001, min_events: int = 6, max_events: int = 64,
                 max_triplets: int = 256, collinearity_px: float = 1.0):
        """
        Initialize an empty grid

        Args:
            width, height: Sensor size in pixels
            cell_size: Cell side length g in pixels
            window: Buffer time window W in seconds
            tau: Triplet time tolerance in seconds
            min_events: Minimum active pixels before a cell is searched
            max_events: Most recent per-pixel events of a cell entering the triplet search
            max_triplets: Most recent triplets per cell entering registration
            collinearity_px: Displacement residual allowed in a triplet
        """
        self.width = width
        self.height = height
        self.cell_size = cell_size
        self.window = window
        self.tau = tau
        self.min_events = min_events
        self.max_events = max_events
        self.max_triplets = max_triplets
        self.collinearity_px = collinearity_px
        self.columns = -(-width // cell_size)
        self._buffer = EventArray.empty()
        # cell -> (key of the registered events, flow), reused while a cell's events are unchanged
        self._registered: Dict[int, Tuple[bytes, Optional[FlowVector]]] = {}

    @classmethod
    def from_config(cls, config, width: int, height: int) -> "RoiGrid":
        return cls(width, height, config.flow_cell_size, config.flow_window, config.flow_tau,
                   config.flow_min_events, config.flow_max_events, config.flow_max_triplets,
                   config.flow_collinearity_px)

    def cell_of(self, x, y):
        return (np.asarray(y) // self.cell_size) * self.columns + np.asarray(x) // self.cell_size

    def buffered(self) -> int:
        return len(self._buffer)

    def ingest(self, events: EventArray):
        if len(events):
            b = self._buffer
            self._buffer = EventArray(np.concatenate([b.t, events.t]), np.concatenate([b.x, events.x]),
                                      np.concatenate([b.y, events.y]),
                                      np.concatenate([b.polarity, events.polarity]))

    def evict(self, now: float):
        keep = np.searchsorted(self._buffer.t, now - self.window, side='left')
        if keep:
            self._buffer = self._buffer.select(slice(keep, None))

    def first_per_pixel(self, events: EventArray, members: np.ndarray) -> np.ndarray:
        """Time-ordered subset of members holding the earliest buffered event of each pixel"""
        if len(members) == 0:
            return members
        pixels = events.y[members].astype(np.int64) * self.width + events.x[members]
        _, first = np.unique(pixels, return_index=True)
        return members[np.sort(first)]

    def step(self, new_events: EventArray, now: float) -> List[FlowVector]:
        """
        Ingest a cycle's events and register every touched cell

        Args:
            new_events: Events since the previous step, time-sorted
            now: Current stream time in seconds

        Returns:
            One FlowVector per cell that produced a registration
        """
        self.ingest(new_events)
        self.evict(now)
        if len(new_events) == 0 or len(self._buffer) == 0:
            return []
        b = self._buffer
        cells = self.cell_of(b.x, b.y)
        order = np.argsort(cells, kind='stable')
        sorted_cells = cells[order]
        flows = []
        for cell in np.unique(self.cell_of(new_events.x, new_events.y)):
            lo = np.searchsorted(sorted_cells, cell, side='left')
            hi = np.searchsorted(sorted_cells, cell, side='right')
            members = self.first_per_pixel(b, order[lo:hi])
            if len(members) < self.min_events:
                continue
            flow = self._cached_register(int(cell), b.select(members[-self.max_events:]), now)
            if flow is not None:
                flows.append(flow)
        return flows

    def _cached_register(self, cell: int, events: EventArray, now: float) -> Optional[FlowVector]:
        key = events.t.tobytes() + events.x.tobytes() + events.y.tobytes()
        cached = self._registered.get(cell)
        if cached is not None and cached[0] == key:
            return None if cached[1] is None else replace(cached[1], t=now)
        flow = self._register_cell(events, now)
        self._registered[cell] = (key, flow)
        return flow

    def _register_cell(self, events: EventArray, now: float) -> Optional[FlowVector]:
        triplets = find_triplets(events, self.tau, self.collinearity_px)
        if len(triplets) == 0:
            return None
        if len(triplets) > self.max_triplets:
            newest = np.argsort(-events.t[triplets[:, 2]], kind='stable')[:self.max_triplets]
            triplets = triplets[np.sort(newest)]
        candidates = triplet_flows(events, triplets)
        event_ids = triplets.reshape(-1)
        triplet_ids = np.repeat(np.arange(len(triplets)), 3)
        order = np.argsort(event_ids, kind='stable')
        event_ids, triplet_ids = event_ids[order], triplet_ids[order]
        offsets = np.concatenate([[0], np.flatnonzero(np.diff(event_ids)) + 1])
        result = _register(candidates, triplet_ids, offsets)
        winners = np.all(candidates == candidates[result.index], axis=1)
        members = np.unique(triplets[winners].reshape(-1))
        return FlowVector(float(events.x[members].mean()), float(events.y[members].mean()),
                          result.flow[0], result.flow[1], now, result.support, result.cost)
