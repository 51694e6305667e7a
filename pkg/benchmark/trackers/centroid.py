import numpy as np

from benchmark.dataio import SequenceResult
from benchmark.geom3d import Box9DoF, crop_points
from benchmark.trackers.base import Tracker, register_tracker

DEFAULT_SCALE = 2.0


def baseline_centroid(seq, first_box, scale=DEFAULT_SCALE):
    """
    Move the box to the mean of the points cropped around the previous box,
    keeping size and orientation. An empty crop keeps the previous center.
    """
    box = first_box
    frames = []
    for frame in seq.frames[1:]:
        cropped, _ = crop_points(seq.cloud(frame.index), box, scale)
        if cropped.count:
            box = Box9DoF(tuple(np.mean(cropped.points, axis=0)), box.size, box.angles)
        frames.append((frame.index, box))
    return SequenceResult(sequence_id=seq.sequence_id, frames=frames, category=seq.meta.category,
                          attributes=seq.meta.attributes, tracker=CentroidTracker.name)


@register_tracker
class CentroidTracker(Tracker):
    name = 'centroid'

    def setup(self):
        self.scale = float(self.options.get('scale', DEFAULT_SCALE))

    def track(self, seq, first_box):
        return baseline_centroid(seq, first_box, self.scale)
