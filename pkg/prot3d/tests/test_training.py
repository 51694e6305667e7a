import json
import math

import numpy as np
import pytest

from benchmark import dataio, metrics, synthgen
from benchmark.exceptions import ConfigurationError, InvalidArgument
from benchmark.geom3d import Box9DoF, iou3d
from benchmark.tests.utils import build_sequence, moving_boxes
from nncore.gradcheck import grad_check
from nncore.layers import Parameters
from nncore.optim import Adam
from nncore.tensor import Tensor
from prot3d.boxes import box_offsets
from prot3d.config import ARMS, TrackerConfig, config_hash, load_config
from prot3d.loss import COMPONENTS, loss_total
from prot3d.memory import TrackerMemory
from prot3d.network import StageOutput
from prot3d.tracker import load_tracker, search_region, track_sequence
from prot3d.training import (
    _MemoryCache, save_checkpoint, train, training_tuples, tuple_loss, write_training_log
)

MICRO = TrackerConfig(stages=2, memory_size=2, spt_layers=1, search_points=16, sampled_points=8, feature_width=4,
                      knn=3, voxel_grid=2, batch_size=2, epochs=1, prev_box_jitter=0.0)

PREV = Box9DoF((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
GT = Box9DoF((0.1, 0.0, 0.0), (1.2, 1.0, 1.0), (0.2, 0.0, 0.0))


def micro_sequence(tmpdir, frames=3, **kwargs):
    return dataio.read_sequence(build_sequence(tmpdir, 'micro', moving_boxes(frames), points=40, **kwargs))


def stage(coords, votes, mask_logits, score_logits):
    votes = Tensor(np.asarray(votes, dtype=float))
    return StageOutput(coords=Tensor(np.asarray(coords, dtype=float)), votes=votes,
                       mask_logits=Tensor(np.asarray(mask_logits, dtype=float).reshape(-1, 1)),
                       score_logits=Tensor(np.asarray(score_logits, dtype=float).reshape(-1, 1)),
                       sampled=np.arange(len(votes.data)), sampled_votes=votes, refined=None)


def bce(logit, target):
    probability = 1.0 / (1.0 + math.exp(-logit))
    return -target * math.log(probability) - (1 - target) * math.log(1.0 - probability)


def test_default_config():
    config = TrackerConfig()
    assert (config.stages, config.memory_size, config.spt_layers) == (2, 3, 2)
    assert (config.lambda_mask, config.lambda_center, config.lambda_proposal, config.lambda_score) == \
        (0.2, 10.0, 1.0, 1.0)
    assert (config.learning_rate, config.batch_size, config.epochs) == (0.001, 9, 15)
    assert (config.search_points, config.sampled_points, config.search_scale) == (128, 64, 2.0)
    assert (config.feature_width, config.knn, config.voxel_grid) == (32, 8, 8)


@pytest.mark.parametrize("changes", [
    {'stages': 0},
    {'memory_size': True},
    {'sampled_points': 200},
    {'knn': 64},
    {'search_scale': 0.5},
    {'lambda_center': -1.0},
    {'box_dof': 8},
    {'stage_supervision': 'sometimes'},
    {'voxel_grid': 1},
    {'score_kernel': 2},
])
def test_invalid_configs(changes):
    with pytest.raises(ConfigurationError):
        TrackerConfig(**changes)


def test_config_round_trip_and_hash(tmpdir):
    config = TrackerConfig.for_arm('3', epochs=5)
    assert (config.box_dof, config.stages, config.epochs) == (9, 2, 5)
    assert TrackerConfig.from_dict(config.to_dict()) == config
    assert config.config_hash() == config_hash(config.to_dict())
    assert config.config_hash() != config.replace(epochs=6).config_hash()
    assert len(config.config_hash()) == 64
    assert set(ARMS) == {'1', '2', '3'}

    path = tmpdir.join('tracker.json')
    path.write(json.dumps({'stages': 1, 'knn': 4}))
    assert load_config(str(path)) == TrackerConfig(stages=1, knn=4)


def test_config_errors(tmpdir):
    with pytest.raises(ConfigurationError):
        TrackerConfig.from_dict({'stages': 1, 'heads': 2})
    with pytest.raises(ConfigurationError):
        TrackerConfig.for_arm('4')
    with pytest.raises(ConfigurationError):
        load_config(str(tmpdir.join('missing.json')))
    broken = tmpdir.join('broken.json')
    broken.write('{')
    with pytest.raises(ConfigurationError):
        load_config(str(broken))


def test_perfect_votes_and_offsets_give_zero_residual_terms():
    coords = [[0.0, 0.0, 0.0], [0.2, 0.1, 0.0], [2.0, 0.0, 0.0], [0.0, 3.0, 0.0]]
    votes = np.tile(GT.center, (4, 1))
    output = stage(coords, votes, [3.0, 2.0, -2.0, -3.0], [1.0, 1.0, 1.0, 1.0])
    table = np.tile(np.append(box_offsets(GT, PREV), 2.0), (4, 1))
    breakdown = loss_total([output], Tensor(table), GT, PREV, TrackerConfig())
    assert breakdown.center == 0.0
    assert breakdown.bbox == 0.0
    assert breakdown.mask > 0.0 and breakdown.proposal > 0.0 and breakdown.score > 0.0
    assert set(breakdown.as_dict()) == set(COMPONENTS) | {'loss'}


def test_loss_matches_hand_evaluation():
    config = TrackerConfig()
    coords = np.array([[0.0, 0.0, 0.0], [0.3, 0.2, -0.1], [1.5, 0.0, 0.0], [0.0, -2.0, 0.0]])
    votes = np.array([[0.1, 0.1, 0.0], [0.3, -0.1, 0.1], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    mask_logits = [1.5, 0.5, -1.0, 0.2]
    score_logits = [0.3, -0.4, 0.8, -1.2]
    table = np.array([
        [0.05, 0.0, 0.0, 0.1, 0.0, 0.0, 0.1, 0.0, 0.0, 0.7],
        [0.2, 0.1, 0.0, 0.0, 0.1, 0.0, 0.0, 0.1, 0.0, -0.3],
        [0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.1],
        [0.0, 0.0, 0.0, 0.3, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0],
    ])
    breakdown = loss_total([stage(coords, votes, mask_logits, score_logits)], Tensor(table), GT, PREV, config)

    center = np.array(GT.center)
    # points 0 and 1 lie in the ground truth box
    inside = [1, 1, 0, 0]
    mask = sum(bce(m, t) for m, t in zip(mask_logits, inside)) / 4
    residual = (np.sum((votes[0] - center) ** 2) + np.sum((votes[1] - center) ** 2)) / 2
    near = [bool(np.linalg.norm(v - center) < 0.3) for v in votes]
    proposal = sum(bce(s, t) for s, t in zip(score_logits, near)) / 4
    decoded_near = [bool(np.linalg.norm(row[0:3] - center) < 0.3) for row in table]
    score = sum(bce(row[9], t) for row, t in zip(table, decoded_near)) / 4
    target = box_offsets(GT, PREV)
    rows = [table[i, :9] for i in range(4) if near[i]]
    diffs = np.concatenate([row - target for row in rows])
    bbox = np.mean(np.where(np.abs(diffs) < 1.0, 0.5 * diffs ** 2, np.abs(diffs) - 0.5))

    assert near == [True, True, False, False]
    assert decoded_near == [True, True, False, True]
    assert breakdown.mask == pytest.approx(mask, abs=1e-12)
    assert breakdown.center == pytest.approx(residual, abs=1e-12)
    assert breakdown.proposal == pytest.approx(proposal, abs=1e-12)
    assert breakdown.score == pytest.approx(score, abs=1e-12)
    assert breakdown.bbox == pytest.approx(bbox, abs=1e-12)
    expected = 0.2 * mask + 10.0 * residual + proposal + score + bbox
    assert breakdown.total.item() == pytest.approx(expected, abs=1e-9)


def test_final_only_supervision():
    coords = [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]
    output = stage(coords, coords, [0.5, -0.5], [0.2, 0.1])
    table = Tensor(np.zeros((2, 10)))
    both = loss_total([output, output], table, GT, PREV, TrackerConfig())
    last = loss_total([output, output], table, GT, PREV, TrackerConfig(stage_supervision='final'))
    assert both.mask == pytest.approx(2 * last.mask, abs=1e-15)
    assert both.proposal == pytest.approx(2 * last.proposal, abs=1e-15)
    assert both.bbox == last.bbox and both.score == last.score


def test_training_tuples(tmpdir):
    seq = micro_sequence(tmpdir, frames=5, absent=(2,))
    tuples = training_tuples([seq], memory_size=2)
    assert [(item.frame, item.history) for item in tuples] == [(1, (0,)), (3, (0, 1)), (4, (1, 3))]


def test_training_without_tuples_is_rejected(tmpdir):
    seq = micro_sequence(tmpdir, frames=2, absent=(1,))
    with pytest.raises(InvalidArgument):
        train([seq], MICRO)


def test_search_region(tmpdir):
    seq = micro_sequence(tmpdir)
    box = seq.frames[1].box
    local = search_region(seq.cloud(1), box, MICRO)
    assert local.shape == (MICRO.search_points, 3)
    assert np.abs(local).max() < MICRO.search_scale * box.diagonal
    far = Box9DoF((9.0, 9.0, 9.0), box.size, box.angles)
    assert search_region(seq.cloud(1), far, MICRO) is None


def micro_loss(tmpdir):
    seq = micro_sequence(tmpdir)
    item = training_tuples([seq], MICRO.memory_size)[1]
    params = Parameters(seed=0)
    cache = _MemoryCache(MICRO)
    rng = np.random.default_rng(0)
    return params, lambda: tuple_loss(params, MICRO, item, rng, cache)


GRADCHECK = TrackerConfig(stages=2, memory_size=3, spt_layers=2, search_points=16, sampled_points=8,
                          feature_width=16, knn=3, voxel_grid=2, prev_box_jitter=0.0)

PARAMETER_GROUPS = (
    'backbone.edge1.', 'backbone.edge2.', 'stage0.spt.pos.', 'stage0.spt.mask.', 'stage0.spt.0.cross.q.',
    'stage0.spt.0.self.v.', 'stage0.spt.1.ffn.', 'stage0.spt.1.norm3.', 'stage0.head.', 'stage0.ftb.mlp.',
    'stage0.ftb.edge.', 'stage0.ftb.conv.', 'stage0.score_embed.', 'stage1.spt.1.ffn.', 'stage1.head.',
    'stage1.ftb.conv.', 'stage1.score_embed.', 'final.0.', 'final.1.',
)


def test_full_loss_passes_grad_check(tmpdir):
    seq = micro_sequence(tmpdir, frames=4)
    item = training_tuples([seq], GRADCHECK.memory_size)[-1]
    assert item.history == (0, 1, 2)
    params, cache, rng = Parameters(seed=0), _MemoryCache(GRADCHECK), np.random.default_rng(0)

    def loss():
        return tuple_loss(params, GRADCHECK, item, rng, cache).total
    assert np.isfinite(loss().item())
    # the output layer starts at zero, which would hide the gradient of everything feeding the head
    weights = np.random.default_rng(1)
    params['final.1.weight'].data[:] = weights.normal(scale=0.3, size=params['final.1.weight'].shape)
    params['final.1.bias'].data[:] = weights.normal(scale=0.3, size=params['final.1.bias'].shape)

    for group in PARAMETER_GROUPS:
        tensor = params[next(name for name in params.names() if name.startswith(group))]
        error = grad_check(loss, [tensor], epsilon=1e-6, max_checks=4, floor=1e-4)
        assert np.any(tensor.grad != 0.0), group
        assert error < 1e-3, group


def test_one_adam_step_lowers_the_loss(tmpdir):
    params, loss = micro_loss(tmpdir)
    before = loss()
    before.total.backward()
    for name, tensor in params.items():
        if not name.startswith('final.1.'):
            tensor.grad = None
    Adam(params, lr=1e-3).step()
    assert loss().total.item() < before.total.item()


def test_training_is_deterministic(tmpdir):
    seq = micro_sequence(tmpdir, frames=4)
    config = MICRO.replace(epochs=2, prev_box_jitter=0.05)
    first = train([seq], config, seed=3)
    second = train([seq], config, seed=3)
    assert first.log == second.log
    assert [row['epoch'] for row in first.log] == [1, 2]
    assert first.log[0]['tuples'] == 3
    for name in first.params.names():
        assert np.array_equal(first.params[name].data, second.params[name].data)

    path = tmpdir.join('log.jsonl')
    write_training_log(first.log, str(path))
    assert [json.loads(line) for line in path.readlines()] == first.log


def test_checkpoint_restores_tracker(tmpdir):
    seq = micro_sequence(tmpdir)
    run = train([seq], MICRO, seed=1, log_wall_time=True)
    assert run.log[0]['wall_time'] >= 0.0
    path = str(tmpdir.join('micro.ckpt'))
    save_checkpoint(path, run, MICRO)
    params, config = load_tracker(path)
    assert config == MICRO
    for name in run.params.names():
        assert params[name].data.tobytes() == run.params[name].data.tobytes()


def test_track_sequence_emits_one_box_per_frame(tmpdir):
    seq = dataio.read_sequence(build_sequence(tmpdir, 'two', moving_boxes(2), points=40))
    result = track_sequence(seq, seq.first_box, MICRO, Parameters(seed=0))
    assert [index for index, _ in result.frames] == [1]
    assert result.tracker == 'prot3d'
    assert 0.0 <= result.scores[0] <= 1.0


def test_track_sequence_keeps_box_on_empty_region(tmpdir, caplog):
    seq = micro_sequence(tmpdir, frames=4, absent=(2,))
    result = track_sequence(seq, seq.first_box, MICRO, Parameters(seed=0))
    assert [index for index, _ in result.frames] == [1, 2, 3]
    assert result.frames[1][1] == result.frames[0][1]
    assert result.scores[1] == 0.0
    assert 'empty search region' in caplog.text


def test_seven_dof_arm_runs(tmpdir):
    config = TrackerConfig.for_arm('1', **{key: value for key, value in MICRO.to_dict().items()
                                           if key not in ('box_dof', 'stages')})
    seq = micro_sequence(tmpdir, frames=4)
    result = track_sequence(seq, seq.first_box, config, train([seq], config, seed=0).params)
    assert len(result.frames) == 3
    for _, box in result.frames:
        assert box.angles[1:] == (0.0, 0.0)


def test_first_search_frame_enters_memory_once(tmpdir, monkeypatch):
    stored = []

    class RecordingMemory(TrackerMemory):
        def append(self, frame, *args):
            stored.append((self.size, frame))
            super().append(frame, *args)
    monkeypatch.setattr('prot3d.tracker.TrackerMemory', RecordingMemory)

    # frame 0 holds its points far from the given first box, so tracking starts with an empty memory
    boxes = [Box9DoF((5.0, 0.0, 0.0), (0.4, 0.3, 0.5), (0.0, 0.0, 0.0))] + moving_boxes(4)[1:]
    seq = dataio.read_sequence(build_sequence(tmpdir, 'late', boxes, points=40))
    result = track_sequence(seq, moving_boxes(1)[0], MICRO, Parameters(seed=0))
    assert [index for index, _ in result.frames] == [1, 2, 3]
    kept = [frame for size, frame in stored if size == MICRO.memory_size]
    assert kept[0] == 1
    assert len(kept) == len(set(kept))


def test_tracking_does_not_touch_training_parameters(tmpdir):
    seq = micro_sequence(tmpdir)
    params = Parameters(seed=0)
    track_sequence(seq, seq.first_box, MICRO, params)
    assert len(params) == 0


@pytest.mark.slow
def test_training_on_static_scenes(tmpdir):
    recipe = synthgen.DatasetRecipe(name='static', seed=11, train_fraction=0.5, scenarios=[
        {'count': 6, 'id_prefix': 'static', 'category': 'box', 'num_frames': 6, 'density': 600.0,
         'clutter_points': 20, 'velocity': (0.0, 0.0, 0.0), 'angular_velocity': (0.0, 0.0, 0.0)},
    ])
    synthgen.generate_dataset(recipe, str(tmpdir))
    sequences = [dataio.read_sequence(str(tmpdir.join(sequence_id)))
                 for sequence_id in dataio.list_sequences(str(tmpdir))]
    config = TrackerConfig(stages=2, memory_size=2, spt_layers=1, search_points=48, sampled_points=24,
                           feature_width=16, knn=6, voxel_grid=4, batch_size=4, epochs=30, learning_rate=0.003)
    run = train(sequences[:4], config, seed=0)
    assert run.log[-1]['loss'] <= 0.5 * run.log[0]['loss']

    for seq in sequences[4:]:
        result = track_sequence(seq, seq.first_box, config, run.params)
        overlaps = [iou3d(box, seq.frames[index].box) for index, box in result.frames]
        assert np.mean(overlaps) > 0.5
        assert metrics.ao(overlaps) == pytest.approx(np.mean(overlaps))
