import logging

import numpy as np

from benchmark.dataio import SequenceResult
from benchmark.geom3d import contains_points, crop_points
from nncore import checkpoint
from prot3d.boxes import decode_box
from prot3d.config import TrackerConfig
from prot3d.memory import TrackerMemory
from prot3d.network import backbone, forward, resample_points

# Per module logger
logger = logging.getLogger(__name__)


def search_half_extent(box, config):
    """Half-width of the axis-aligned cube covering the enlarged search box."""
    return config.search_scale * box.diagonal / 2.0


def search_region(cloud, box, config):
    """
    Crop around `box` and resample to the configured point count, in the frame
    centred on the box. Returns None when the crop is empty.
    """
    cropped, _ = crop_points(cloud, box, config.search_scale)
    if cropped.count == 0:
        return None
    return resample_points(cropped.points - np.array(box.center), config.search_points)


def track_sequence(seq, first_box, config, params):
    """
    Track through every frame after the first, starting from the given first
    box. One box per frame is emitted, absent-labelled frames included.
    """
    params = params.frozen()
    memory = TrackerMemory(config.memory_size)
    prev = first_box
    frames, scores = [], []

    local = search_region(seq.cloud(0), first_box, config)
    if local is not None:
        world = local + np.array(first_box.center)
        memory.append(0, world, backbone(params, local, config), contains_points(first_box, world))

    for frame in seq.frames[1:]:
        local = search_region(seq.cloud(frame.index), prev, config)
        if local is None:
            logger.warning('%s frame %d: empty search region, keeping the previous box'
                           % (seq.sequence_id, frame.index))
            frames.append((frame.index, prev))
            scores.append(0.0)
            continue
        origin = np.array(prev.center)
        features = backbone(params, local, config)
        context = memory
        if len(memory) == 0:
            # nothing stored yet: attend to this frame under the previous box, store it once below
            context = TrackerMemory(1)
            context.append(frame.index, local + origin, features, contains_points(prev, local + origin))
        _, table = forward(params, config, local, features, context.view(origin), search_half_extent(prev, config))
        output = decode_box(table, prev)
        memory.append(frame.index, local + origin, features, contains_points(output.box, local + origin))
        frames.append((frame.index, output.box))
        scores.append(output.score)
        prev = output.box

    return SequenceResult(sequence_id=seq.sequence_id, frames=frames, scores=scores, category=seq.meta.category,
                          attributes=seq.meta.attributes, tracker='prot3d')


def load_tracker(path):
    """Parameters and TrackerConfig stored in a training checkpoint."""
    params, header = checkpoint.load(path)
    config = TrackerConfig.from_dict(header['extra']['config'])
    return params, config
