import json
import logging
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import List

import numpy as np

from benchmark.exceptions import InvalidArgument
from benchmark.geom3d import Box9DoF, contains_points
from nncore import checkpoint
from nncore.layers import Parameters
from nncore.optim import Adam
from prot3d.loss import COMPONENTS, loss_total
from prot3d.memory import TrackerMemory
from prot3d.network import backbone, forward
from prot3d.tracker import search_half_extent, search_region

# Per module logger
logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingTuple:
    sequence: object
    frame: int
    history: tuple


@dataclass
class TrainingRun:
    params: Parameters
    log: List[dict] = field(default_factory=list)


def training_tuples(sequences, memory_size):
    """
    Every present frame after a sequence's first present frame becomes a
    search frame; its memory is the up to K preceding present frames.
    """
    tuples = []
    for seq in sorted(sequences, key=lambda s: s.sequence_id):
        present = [frame.index for frame in seq.frames if frame.present]
        for position in range(1, len(present)):
            history = tuple(present[max(0, position - memory_size):position])
            tuples.append(TrainingTuple(sequence=seq, frame=present[position], history=history))
    return tuples


def _box(seq, index):
    return seq.frames[index].box


def jitter_box(box, sigma, rng):
    if sigma == 0:
        return box
    return Box9DoF(tuple(np.array(box.center) + rng.normal(0.0, sigma, size=3)), box.size, box.angles)


class _MemoryCache:
    """Ground-truth centred crops of memory frames; they do not change during training."""

    def __init__(self, config):
        self.config = config
        self._crops = {}

    def get(self, seq, index):
        key = (seq.sequence_id, index)
        if key not in self._crops:
            box = _box(seq, index)
            local = search_region(seq.cloud(index), box, self.config)
            world = None if local is None else local + np.array(box.center)
            self._crops[key] = None if local is None else (local, world, contains_points(box, world))
        return self._crops[key]


def tuple_loss(params, config, item, rng, cache):
    """Forward pass and loss of one training tuple, None when its search region is empty."""
    seq = item.sequence
    prev = jitter_box(_box(seq, item.history[-1]), config.prev_box_jitter, rng)
    local = search_region(seq.cloud(item.frame), prev, config)
    if local is None:
        return None

    memory = TrackerMemory(config.memory_size)
    for index in item.history:
        crop = cache.get(seq, index)
        if crop is not None:
            memory_local, world, mask = crop
            memory.append(index, world, backbone(params, memory_local, config), mask)
    if len(memory) == 0:
        return None

    origin = np.array(prev.center)
    outputs, table = forward(params, config, local, backbone(params, local, config), memory.view(origin),
                             search_half_extent(prev, config))
    gt = _box(seq, item.frame)
    gt_local = Box9DoF(tuple(np.array(gt.center) - origin), gt.size, gt.angles)
    prev_local = Box9DoF((0.0, 0.0, 0.0), prev.size, prev.angles)
    return loss_total(outputs, table, gt_local, prev_local, config)


def train(sequences, config, seed=None, log_wall_time=False):
    """
    Adam on the tracking loss over all training tuples, in seeded shuffled
    batches with gradients averaged over each batch.
    """
    tuples = training_tuples(sequences, config.memory_size)
    if not tuples:
        raise InvalidArgument('no training tuples: every sequence needs two present frames')
    seed = config.seed if seed is None else seed
    params = Parameters(seed=seed)
    optimizer = Adam(params, lr=config.learning_rate)
    rng = np.random.default_rng(seed)
    cache = _MemoryCache(config)
    run = TrainingRun(params=params)

    logger.info('training on %d tuples from %d sequences for %d epochs'
                % (len(tuples), len(sequences), config.epochs))
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        totals = defaultdict(float)
        used = 0
        order = rng.permutation(len(tuples))
        for start in range(0, len(order), config.batch_size):
            params.zero_grad()
            valid = 0
            for position in order[start:start + config.batch_size]:
                breakdown = tuple_loss(params, config, tuples[position], rng, cache)
                if breakdown is None:
                    continue
                breakdown.total.backward()
                valid += 1
                for name, value in breakdown.as_dict().items():
                    totals[name] += value
            if not valid:
                continue
            for _, tensor in params.items():
                if tensor.grad is not None:
                    tensor.grad /= valid
            optimizer.step()
            used += valid

        row = {'epoch': epoch, 'tuples': used}
        for name in ('loss',) + COMPONENTS:
            row[name] = totals[name] / used if used else 0.0
        if log_wall_time:
            row['wall_time'] = time.perf_counter() - started
        run.log.append(row)
        logger.info('epoch %d: loss %.5f over %d tuples' % (epoch, row['loss'], used))
    return run


def write_training_log(rows, path):
    with open(path, 'w', encoding='utf8') as f:
        for row in rows:
            f.write(json.dumps(row) + '\n')


def save_checkpoint(path, run, config):
    checkpoint.save(path, run.params, config_hash=config.config_hash(), extra={'config': config.to_dict()})
