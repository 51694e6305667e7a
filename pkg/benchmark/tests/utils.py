import os

import numpy as np

from benchmark import dataio
from benchmark.geom3d import Box9DoF, SymmetrySpec


def box_cloud(box, count=80, seed=0):
    """Points spread through the inside of a box, world frame."""
    rng = np.random.default_rng(seed)
    local = rng.uniform(-0.45, 0.45, size=(count, 3)) * np.array(box.size)
    return np.array(box.center) + local @ box.rotation.T


def moving_boxes(count, step=(0.05, 0.0, 0.0), size=(0.4, 0.3, 0.5), yaw=0.0):
    return [Box9DoF(tuple(np.array(step) * i), size, (yaw, 0.0, 0.0)) for i in range(count)]


def build_sequence(directory, sequence_id, boxes, category='box', attributes=None, symmetry=None,
                   absent=(), points=80):
    """
    Write a sequence whose frame i carries boxes[i]; frames listed in
    `absent` are labelled fully occluded and hold no target points.
    """
    frames, clouds = [], []
    for index, box in enumerate(boxes):
        if index in absent:
            frames.append(dataio.FrameRecord(index=index, present=False, absence='full_occlusion'))
            clouds.append(np.zeros((0, 3)))
        else:
            frames.append(dataio.FrameRecord(index=index, present=True, box=box))
            clouds.append(box_cloud(box, count=points, seed=index))
    meta = dataio.SequenceMeta(
        sequence_id=sequence_id,
        category=category,
        attributes=attributes or (False,) * len(dataio.ATTRIBUTE_CODES),
        symmetry=symmetry or SymmetrySpec(),
        fps=20.0,
        num_frames=len(boxes),
    )
    path = os.path.join(str(directory), sequence_id)
    dataio.write_sequence(path, meta, frames, clouds)
    return path


def perfect_result(seq):
    """A result that reproduces the ground truth on every present frame."""
    frames = [(frame.index, frame.box) for frame in seq.frames if frame.present]
    return dataio.SequenceResult(sequence_id=seq.sequence_id, frames=frames)
