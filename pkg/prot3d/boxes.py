from dataclasses import dataclass

import numpy as np

from benchmark.geom3d import Box9DoF, wrap_angle

MIN_SIZE = 0.01
SCORE_COLUMN = 9


@dataclass
class TrackOutput:
    box: Box9DoF
    score: float
    row: int
    table: np.ndarray


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x)) if x >= 0 else np.exp(x) / (1.0 + np.exp(x))


def decode_box(table, prev_box):
    """
    Pick the row with the highest score logit (first one on ties) and apply
    its offsets to the previous box. Table columns are center offsets
    (x, y, z), angle offsets (alpha, beta, gamma), size offsets in the box's
    (w, h, l) order and the score logit.
    """
    table = np.asarray(getattr(table, 'data', table), dtype=np.float64)
    row = int(np.argmax(table[:, SCORE_COLUMN]))
    offsets = table[row]
    center = np.array(prev_box.center) + offsets[0:3]
    angles = [wrap_angle(a + d) for a, d in zip(prev_box.angles, offsets[3:6])]
    size = np.maximum(np.array(prev_box.size) + offsets[6:9], MIN_SIZE)
    box = Box9DoF(tuple(center), tuple(size), tuple(angles))
    return TrackOutput(box=box, score=float(_sigmoid(offsets[SCORE_COLUMN])), row=row, table=table)


def box_offsets(target, reference, box_dof=9):
    """
    Regression target taking `reference` to `target`: translation, shortest
    arc angle differences and size differences. A 7DoF target leaves pitch
    and roll at zero.
    """
    delta = np.empty(9)
    delta[0:3] = np.array(target.center) - np.array(reference.center)
    delta[3:6] = [wrap_angle(b - a) for a, b in zip(reference.angles, target.angles)]
    delta[6:9] = np.array(target.size) - np.array(reference.size)
    if box_dof == 7:
        delta[4:6] = 0.0
    return delta
