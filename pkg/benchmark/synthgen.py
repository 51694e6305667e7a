"""
Deterministic synthetic sequences with exact 9DoF ground truth.

A scenario describes one target moving through a noisy, cluttered scene;
a dataset recipe expands into many scenarios. Every random draw comes from
one numpy Generator seeded by the scenario, so the same config always
produces byte-identical sequence directories.
"""
import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from django.conf import settings

from benchmark import dataio
from benchmark.exceptions import ConfigurationError, GenerationError, InvalidArgument
from benchmark.geom3d import Box9DoF, PointSet, SymmetrySpec, contains_points, scale_box, wrap_angle

# Per module logger
logger = logging.getLogger(__name__)

SHAPES = ('box', 'cylinder', 'composite')
MOTIONS = ('constant_velocity', 'random_walk')

# target points are sampled slightly inside the box so float32 storage keeps them in it
SURFACE_INSET = 0.98
# clutter and distractor points are kept out of the target box enlarged by this factor
KEEP_OUT_SCALE = 1.1

FM_DIAGONAL_FRACTION = 0.5
ROT_THRESHOLD = math.radians(10.0)
SV_RANGE = (0.75, 1.5)
SPA_MIN_POINTS = 50

SEED_STRIDE = 10007
RECIPES_DIR = os.path.join(os.path.dirname(__file__), 'recipes')


@dataclass
class Occlusion:
    start: int
    end: int
    drop: float = 1.0

    @property
    def full(self):
        return self.drop >= 1.0

    def covers(self, index):
        return self.start <= index <= self.end


@dataclass
class ScenarioConfig:
    seed: int
    sequence_id: str = 'synthetic-0000'
    category: str = 'box'
    num_frames: int = 30
    shape: str = 'box'
    size_range: tuple = (0.3, 0.6)
    density: float = 600.0
    motion: str = 'constant_velocity'
    velocity_range: tuple = (0.05, 0.05, 0.0)
    angular_velocity_range: tuple = (0.03, 0.0, 0.0)
    velocity: Optional[tuple] = None
    angular_velocity: Optional[tuple] = None
    initial_center: tuple = (0.0, 0.0, 0.0)
    initial_tilt: float = 0.0
    scale_rate: float = 1.0
    clutter_points: int = 150
    clutter_extent: float = 2.0
    distractors: int = 0
    similar_distractors: bool = False
    occlusions: List[Occlusion] = field(default_factory=list)
    noise: float = 0.0
    sensor_range: Optional[float] = None
    symmetric: bool = False
    symmetry_axis: str = 'z'
    k: int = field(default_factory=lambda: settings.SOT_SYMMETRY_ROTATIONS)
    fps: float = field(default_factory=lambda: settings.SOT_FPS)

    def __post_init__(self):
        self.occlusions = [o if isinstance(o, Occlusion) else Occlusion(**o) for o in self.occlusions]
        problems = []
        if self.num_frames < 2:
            problems.append('num_frames must be at least 2')
        if self.shape not in SHAPES:
            problems.append('shape must be one of %s' % ', '.join(SHAPES))
        if self.motion not in MOTIONS:
            problems.append('motion must be one of %s' % ', '.join(MOTIONS))
        if not 0 < self.size_range[0] <= self.size_range[1]:
            problems.append('size_range must be 0 < min <= max')
        if self.density < 0 or self.clutter_points < 0 or self.distractors < 0:
            problems.append('density and counts must be non-negative')
        if self.noise < 0:
            problems.append('noise must be non-negative')
        if self.scale_rate <= 0 or self.fps <= 0 or self.clutter_extent <= 0:
            problems.append('scale_rate, fps and clutter_extent must be positive')
        for occlusion in self.occlusions:
            if not 0.0 <= occlusion.drop <= 1.0 or occlusion.start > occlusion.end:
                problems.append('bad occlusion window %r' % (occlusion,))
            elif occlusion.full and occlusion.covers(0):
                problems.append('the first frame cannot be fully occluded')
        if self.sensor_range is not None and np.linalg.norm(self.initial_center) > self.sensor_range:
            problems.append('the initial center lies beyond sensor_range')
        try:
            self.symmetry
        except InvalidArgument as e:
            problems.append(str(e))
        if problems:
            raise ConfigurationError('%s: %s' % (self.sequence_id, '; '.join(problems)))

    @property
    def symmetry(self):
        return SymmetrySpec(symmetric=self.symmetric, axis=self.symmetry_axis, k=self.k)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError('unknown scenario key "%s"' % unknown[0])
        if 'seed' not in data:
            raise ConfigurationError('scenario needs a "seed"')
        return cls(**data)

    def to_dict(self):
        return dataclasses.asdict(self)


#
# Surface sampling, in the box's local frame
#

def _box_shell(rng, half, count):
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]])
    axis = rng.choice(3, size=count, p=areas / areas.sum())
    points = rng.uniform(-1.0, 1.0, size=(count, 3)) * half
    side = np.where(rng.random(count) < 0.5, -1.0, 1.0)
    points[np.arange(count), axis] = side * half[axis]
    return points


def _cylinder_shell(rng, half, count):
    radius = min(half[0], half[1])
    lateral = 2.0 * math.pi * radius * 2.0 * half[2]
    caps = 2.0 * math.pi * radius * radius
    on_side = rng.random(count) < lateral / (lateral + caps)
    theta = rng.uniform(0.0, 2.0 * math.pi, size=count)
    r = np.where(on_side, radius, radius * np.sqrt(rng.random(count)))
    z = np.where(on_side, rng.uniform(-half[2], half[2], size=count),
                 np.where(rng.random(count) < 0.5, -half[2], half[2]))
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def _shell_area(shape, half):
    if shape == 'box':
        return 8.0 * (half[0] * half[1] + half[0] * half[2] + half[1] * half[2])
    radius = min(half[0], half[1])
    if shape == 'cylinder':
        return 2.0 * math.pi * radius * (2.0 * half[2] + radius)
    lower = np.array([half[0], half[1], half[2] / 2.0])
    upper = np.array([half[0] * 0.6, half[1] * 0.6, half[2] / 2.0])
    return _shell_area('box', lower) + _shell_area('cylinder', upper)


def sample_surface(rng, shape, size, density):
    """Surface points of a shape filling a box of the given size, local frame."""
    half = np.asarray(size, dtype=np.float64) / 2.0 * SURFACE_INSET
    count = int(round(density * _shell_area(shape, half)))
    if count == 0:
        return np.zeros((0, 3))
    if shape == 'box':
        return _box_shell(rng, half, count)
    if shape == 'cylinder':
        return _cylinder_shell(rng, half, count)
    # composite: a block on the lower half topped by a narrower cylinder
    lower = np.array([half[0], half[1], half[2] / 2.0])
    upper = np.array([half[0] * 0.6, half[1] * 0.6, half[2] / 2.0])
    lower_count = int(round(count * _shell_area('box', lower) / _shell_area('composite', half)))
    block = _box_shell(rng, lower, lower_count) - np.array([0.0, 0.0, half[2] / 2.0])
    top = _cylinder_shell(rng, upper, count - lower_count) + np.array([0.0, 0.0, half[2] / 2.0])
    return np.concatenate([block, top])


def _to_world(box, local):
    return np.array(box.center) + local @ box.rotation.T


#
# Trajectories
#

def _trajectory(cfg, rng):
    size0 = rng.uniform(cfg.size_range[0], cfg.size_range[1], size=3)
    angles0 = np.array([rng.uniform(-math.pi, math.pi),
                        rng.uniform(-cfg.initial_tilt, cfg.initial_tilt),
                        rng.uniform(-cfg.initial_tilt, cfg.initial_tilt)])
    velocity = np.array(cfg.velocity if cfg.velocity is not None
                        else rng.uniform(-1.0, 1.0, size=3) * np.asarray(cfg.velocity_range), dtype=np.float64)
    spin = np.array(cfg.angular_velocity if cfg.angular_velocity is not None
                    else rng.uniform(-1.0, 1.0, size=3) * np.asarray(cfg.angular_velocity_range), dtype=np.float64)
    center0 = np.asarray(cfg.initial_center, dtype=np.float64)

    boxes = []
    center = center0.copy()
    for t in range(cfg.num_frames):
        if cfg.motion == 'constant_velocity':
            center = center0 + t * velocity
        elif t > 0:
            center = center + rng.uniform(-1.0, 1.0, size=3) * np.abs(velocity)
        boxes.append(Box9DoF(tuple(center), tuple(size0 * cfg.scale_rate ** t), tuple(angles0 + t * spin)))
    return boxes


def _distractor_layout(cfg, rng, box0):
    layout = []
    for _ in range(cfg.distractors):
        heading = rng.uniform(0.0, 2.0 * math.pi)
        distance = rng.uniform(1.5, 3.0) * box0.diagonal
        offset = np.array([math.cos(heading), math.sin(heading), 0.0]) * distance
        if cfg.similar_distractors:
            shape, size = cfg.shape, np.array(box0.size) * rng.uniform(0.9, 1.1, size=3)
        else:
            shape, size = 'box', np.array(box0.size) * rng.uniform(0.4, 2.0, size=3)
        layout.append((shape, size, offset, rng.uniform(-math.pi, math.pi)))
    return layout


def _absence(cfg, index, box):
    if any(o.full and o.covers(index) for o in cfg.occlusions):
        return 'full_occlusion'
    if cfg.sensor_range is not None and np.linalg.norm(box.center) > cfg.sensor_range:
        return 'out_of_view'
    return None


def _frame_cloud(cfg, rng, index, box, layout, absence):
    keep_out = scale_box(box, KEEP_OUT_SCALE)
    parts = []
    if absence is None:
        target = _to_world(box, sample_surface(rng, cfg.shape, box.size, cfg.density))
        for occlusion in cfg.occlusions:
            if occlusion.covers(index) and not occlusion.full:
                target = target[rng.random(target.shape[0]) >= occlusion.drop]
        if cfg.noise > 0:
            target = target + rng.normal(0.0, cfg.noise, size=target.shape)
        if not np.any(contains_points(box, target)):
            raise GenerationError('%s: frame %d is present but has no target points in its box; '
                                  'mark it occluded instead' % (cfg.sequence_id, index))
        parts.append(target)

    for shape, size, offset, yaw in layout:
        distractor = Box9DoF(tuple(np.array(box.center) + offset), tuple(size), (yaw, 0.0, 0.0))
        points = _to_world(distractor, sample_surface(rng, shape, size, cfg.density))
        if cfg.noise > 0:
            points = points + rng.normal(0.0, cfg.noise, size=points.shape)
        parts.append(points[~contains_points(keep_out, points)])

    clutter = np.array(box.center) + rng.uniform(-cfg.clutter_extent, cfg.clutter_extent,
                                                 size=(cfg.clutter_points, 3))
    parts.append(clutter[~contains_points(keep_out, clutter)])
    return PointSet(np.concatenate(parts) if parts else None)


def generate_sequence(cfg, out_dir):
    """
    Write one sequence under out_dir/<sequence id> and return its directory.
    Attribute bits are derived from the written sequence.
    """
    rng = np.random.default_rng(cfg.seed)
    boxes = _trajectory(cfg, rng)
    layout = _distractor_layout(cfg, rng, boxes[0])

    frames, clouds, partial = [], [], []
    for index, box in enumerate(boxes):
        absence = _absence(cfg, index, box)
        if absence is None and any(o.covers(index) and not o.full for o in cfg.occlusions):
            partial.append(index)
        clouds.append(_frame_cloud(cfg, rng, index, box, layout, absence))
        if absence is None:
            frames.append(dataio.FrameRecord(index=index, present=True, box=box))
        else:
            frames.append(dataio.FrameRecord(index=index, present=False, absence=absence))

    meta = dataio.SequenceMeta(
        sequence_id=cfg.sequence_id,
        category=cfg.category,
        attributes=(False,) * len(dataio.ATTRIBUTE_CODES),
        symmetry=cfg.symmetry,
        fps=cfg.fps,
        num_frames=cfg.num_frames,
        extra={'generator': {
            'seed': cfg.seed,
            'shape': cfg.shape,
            'similar_distractors': bool(cfg.distractors and cfg.similar_distractors),
            'partially_occluded_frames': partial,
        }},
    )
    directory = os.path.join(out_dir, cfg.sequence_id)
    dataio.write_sequence(directory, meta, frames, clouds)

    attributes = auto_attributes(dataio.read_sequence(directory))
    dataio.write_meta(directory, dataclasses.replace(meta, attributes=attributes))
    logger.info('generated %s: %d frames, attributes %s' % (
        cfg.sequence_id, cfg.num_frames,
        ','.join(c for c, bit in zip(dataio.ATTRIBUTE_CODES, attributes) if bit) or 'none'))
    return directory


def auto_attributes(seq):
    """
    The 7 attribute bits (INV, DEF, FM, ROT, SV, SD, SPA) from ground truth,
    clouds and the generator provenance block.
    """
    generator = seq.meta.extra.get('generator', {})
    present = [frame for frame in seq.frames if frame.present]

    inv = any(not frame.present for frame in seq.frames) or bool(generator.get('partially_occluded_frames'))

    fm = False
    for previous, current in zip(present, present[1:]):
        moved = np.linalg.norm(np.array(current.box.center) - np.array(previous.box.center))
        if moved > FM_DIAGONAL_FRACTION * current.box.diagonal:
            fm = True
            break

    rot = False
    turned = np.zeros(3)
    for previous, current in zip(present, present[1:]):
        turned += [wrap_angle(b - a) for a, b in zip(previous.box.angles, current.box.angles)]
        if np.any(np.abs(turned) > ROT_THRESHOLD):
            rot = True
            break

    first_volume = present[0].box.volume
    sv = any(not SV_RANGE[0] <= frame.box.volume / first_volume <= SV_RANGE[1] for frame in present)

    sd = bool(generator.get('similar_distractors'))

    spa = any(int(np.count_nonzero(contains_points(frame.box, seq.cloud(frame.index)))) < SPA_MIN_POINTS
              for frame in present)

    return (inv, False, fm, rot, sv, sd, spa)


#
# Dataset recipes
#

@dataclass
class DatasetRecipe:
    name: str
    seed: int
    train_fraction: float
    scenarios: list

    @classmethod
    def from_dict(cls, data):
        unknown = sorted(set(data) - {'name', 'seed', 'train_fraction', 'scenarios'})
        if unknown:
            raise ConfigurationError('unknown recipe key "%s"' % unknown[0])
        try:
            recipe = cls(name=data['name'], seed=data['seed'], train_fraction=data['train_fraction'],
                         scenarios=list(data['scenarios']))
        except KeyError as e:
            raise ConfigurationError('recipe needs a "%s"' % e.args[0])
        if not 0.0 < recipe.train_fraction < 1.0:
            raise ConfigurationError('train_fraction must be in (0, 1)')
        return recipe

    def to_dict(self):
        return dataclasses.asdict(self)

    def expand(self):
        """One ScenarioConfig per generated sequence, in generation order."""
        configs = []
        for entry in self.scenarios:
            entry = dict(entry)
            count = entry.pop('count', 1)
            prefix = entry.pop('id_prefix', entry.get('category', 'synthetic'))
            for number in range(count):
                seed = self.seed * SEED_STRIDE + len(configs)
                configs.append(ScenarioConfig.from_dict(
                    dict(entry, seed=seed, sequence_id='%s-%04d' % (prefix, number))))
        return configs


def load_recipe(path):
    if not os.path.isfile(path) and os.path.isfile(os.path.join(RECIPES_DIR, path + '.json')):
        path = os.path.join(RECIPES_DIR, path + '.json')
    try:
        with open(path, 'r', encoding='utf8') as f:
            return DatasetRecipe.from_dict(json.load(f))
    except FileNotFoundError:
        raise ConfigurationError('recipe %s not found' % path)
    except ValueError as e:
        raise ConfigurationError('recipe %s is not valid JSON (%s)' % (path, e))


def easy_recipe(seed=0):
    """The shipped easy recipe, as found in recipes/easy.json."""
    recipe = load_recipe(os.path.join(RECIPES_DIR, 'easy.json'))
    return dataclasses.replace(recipe, seed=seed)


def _generate(args):
    cfg, out_dir = args
    return generate_sequence(cfg, out_dir)


def generate_dataset(recipe, out_dir, jobs=1):
    """Generate every sequence of a recipe; returns the sequence ids in order."""
    configs = recipe.expand()
    os.makedirs(out_dir, exist_ok=True)
    work = [(cfg, out_dir) for cfg in configs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            list(executor.map(_generate, work))
    else:
        for item in work:
            _generate(item)
    logger.info('recipe %s: generated %d sequences in %s' % (recipe.name, len(configs), out_dir))
    return [cfg.sequence_id for cfg in configs]
