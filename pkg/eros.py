#!/usr/bin/env python3
"""
EROS event surface
Each event sets its pixel to 1.0 after decaying its k x k neighbourhood by lambda
"""

import logging
from typing import Iterable, Tuple, Union

import numpy as np

from core import Event, EventArray, Roi

logger = logging.getLogger(__name__)


class ErosSurface:
    """Per-pixel decayed edge-presence map in [0, 1], indexed [y, x]"""

    def __init__(self, width: int, height: int, kernel: int = 7, decay: float = 0.7):
        """
        Initialize an all-zero surface

        Args:
            width, height: Sensor size in pixels
            kernel: Odd neighbourhood side length k
            decay: Multiplicative decay lambda in (0, 1)
        """
        if kernel < 1 or kernel % 2 != 1:
            raise ValueError(f"kernel must be a positive odd integer, got {kernel}")
        if not 0.0 < decay < 1.0:
            raise ValueError(f"decay must be in (0, 1), got {decay}")
        self.width = width
        self.height = height
        self.kernel = kernel
        self.decay = decay
        self.values = np.zeros((height, width), dtype=np.float64)
        self._radius = kernel // 2

    def update(self, event: Event):
        """
        Apply one event

        Raises:
            ValueError: pixel outside the sensor
        """
        self.update_pixel(event.x, event.y)

    def update_pixel(self, x: int, y: int):
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise ValueError(f"event pixel ({x}, {y}) outside {self.width}x{self.height} surface")
        r = self._radius
        window = self.values[max(y - r, 0):y + r + 1, max(x - r, 0):x + r + 1]
        window *= self.decay
        self.values[y, x] = 1.0

    def update_batch(self, events: Union[EventArray, Iterable[Event]]):
        """Apply events one at a time in stream order"""
        if isinstance(events, EventArray):
            xs, ys = events.x, events.y
            if len(xs) and (xs.min() < 0 or xs.max() >= self.width or ys.min() < 0 or ys.max() >= self.height):
                raise ValueError("event batch contains pixels outside the surface")
            values, decay, r = self.values, self.decay, self._radius
            for x, y in zip(xs.tolist(), ys.tolist()):
                values[max(y - r, 0):y + r + 1, max(x - r, 0):x + r + 1] *= decay
                values[y, x] = 1.0
        else:
            for event in events:
                self.update(event)

    def value_at(self, x: int, y: int) -> float:
        return float(self.values[y, x])

    def snapshot_roi(self, center: Tuple[int, int],
                     half_extent: Union[int, Tuple[int, int]]) -> np.ndarray:
        """Copy of the square window around center, zero-padded outside the image"""
        return self.snapshot(Roi.from_center(center, half_extent))

    def snapshot(self, roi: Roi) -> np.ndarray:
        """Copy of an arbitrary window, zero-padded outside the image"""
        patch = np.zeros((roi.height, roi.width), dtype=np.float64)
        x0, y0 = max(roi.x0, 0), max(roi.y0, 0)
        x1, y1 = min(roi.x1, self.width), min(roi.y1, self.height)
        if x1 > x0 and y1 > y0:
            patch[y0 - roi.y0:y1 - roi.y0, x0 - roi.x0:x1 - roi.x0] = self.values[y0:y1, x0:x1]
        return patch

    def reset(self):
        self.values.fill(0.0)
