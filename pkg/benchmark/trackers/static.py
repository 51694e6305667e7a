from benchmark.dataio import SequenceResult
from benchmark.trackers.base import Tracker, register_tracker


def baseline_static(seq, first_box):
    """The first box, unchanged, for every later frame."""
    frames = [(frame.index, first_box) for frame in seq.frames[1:]]
    return SequenceResult(sequence_id=seq.sequence_id, frames=frames, category=seq.meta.category,
                          attributes=seq.meta.attributes, tracker=StaticTracker.name)


@register_tracker
class StaticTracker(Tracker):
    name = 'static'

    def track(self, seq, first_box):
        return baseline_static(seq, first_box)
