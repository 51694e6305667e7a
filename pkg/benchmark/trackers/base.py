import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor

from benchmark.dataio import write_results

# Per module logger
logger = logging.getLogger(__name__)


class Tracker(object):
    """
    A single object tracker: given a sequence and its first-frame box, emit
    one box per later frame.
    """
    name = None

    def __init__(self, options=None):
        super(Tracker, self).__init__()
        self.options = options or {}
        self.setup()

    def setup(self):
        pass

    def track(self, seq, first_box):
        raise NotImplementedError()


trackers = {}
_discovered = False


def register_tracker(klass):
    trackers[klass.name] = klass
    return klass


def get_trackers():
    global _discovered
    if _discovered:
        return trackers
    # Importing the modules will cause their register_tracker() calls
    # being run.
    for fname in sorted(os.listdir(os.path.dirname(__file__))):
        module, ext = os.path.splitext(fname)
        if ext.lower() != '.py':
            continue
        if module in ('__init__', 'base'):
            continue
        full_path = "%s.%s" % (__package__, module)
        __import__(full_path, locals(), globals())
    _discovered = True
    return trackers


def _track_one(args):
    tracker, seq = args
    started = time.perf_counter()
    result = tracker.track(seq, seq.first_box)
    return result, time.perf_counter() - started


def run_tracker(tracker, sequences, out_dir, jobs=1):
    """
    Track every sequence and write results/<id>.jsonl under out_dir.
    Returns (results, seconds per sequence id), both in sequence id order.
    """
    os.makedirs(out_dir, exist_ok=True)
    work = [(tracker, seq) for seq in sorted(sequences, key=lambda s: s.sequence_id)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            done = list(executor.map(_track_one, work))
    else:
        done = [_track_one(item) for item in work]

    results, timings = [], {}
    for result, seconds in done:
        write_results(result, os.path.join(out_dir, '%s.jsonl' % result.sequence_id))
        results.append(result)
        timings[result.sequence_id] = seconds
        logger.info('%s tracked %s: %d boxes in %.2f s' % (tracker.name, result.sequence_id,
                                                             len(result.frames), seconds))
    return results, timings
