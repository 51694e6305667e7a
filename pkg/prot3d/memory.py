from collections import deque
from dataclasses import dataclass

import numpy as np

from nncore import ops
from nncore.tensor import Tensor, constant
from prot3d.network import MemoryView


@dataclass
class MemoryEntry:
    frame: int
    coords: np.ndarray
    features: Tensor
    mask: np.ndarray


class TrackerMemory:
    """The K most recent frames, oldest evicted first."""

    def __init__(self, size):
        self.size = size
        self._entries = deque(maxlen=size)

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    @property
    def frames(self):
        return [entry.frame for entry in self._entries]

    def append(self, frame, coords, features, mask):
        """Store world coordinates, (P, F) features and a (P,) targetness mask."""
        self._entries.append(MemoryEntry(frame=frame, coords=np.asarray(coords, dtype=np.float64),
                                         features=constant(features), mask=np.asarray(mask, dtype=np.float64)))

    def view(self, origin):
        """H over all entries, with coordinates moved into the frame centred on `origin`."""
        entries = list(self._entries)
        return MemoryView(
            features=ops.concat([entry.features for entry in entries], axis=0),
            coords=np.concatenate([entry.coords for entry in entries]) - np.asarray(origin),
            mask=np.concatenate([entry.mask for entry in entries]),
        )
