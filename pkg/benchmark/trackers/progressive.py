from benchmark.exceptions import ConfigurationError
from benchmark.trackers.base import Tracker, register_tracker
from prot3d.tracker import load_tracker, track_sequence


@register_tracker
class Prot3dTracker(Tracker):
    """The learned tracker; needs the `checkpoint` option pointing at a training checkpoint."""
    name = 'prot3d'

    def setup(self):
        path = self.options.get('checkpoint')
        if not path:
            raise ConfigurationError('the prot3d tracker needs a checkpoint')
        self.params, self.config = load_tracker(path)

    def track(self, seq, first_box):
        return track_sequence(seq, first_box, self.config, self.params)
