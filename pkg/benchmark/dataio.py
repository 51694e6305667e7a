"""
On-disk sequence format.

A sequence directory holds:

    meta.json          sequence metadata
    anno.jsonl         one annotation object per frame
    frames/NNNNNN.bin  little-endian float32 xyz triples, no header

Frame indices are 0-based; frame 0 carries the given initial box and must be
present. A split file is {"train": [ids], "test": [ids]} and a tracker result
file results/<id>.jsonl holds one {"frame", "box", "score"} object per line.
"""
import json
import logging
import math
import os
from collections import defaultdict, namedtuple
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from django.conf import settings

from benchmark.exceptions import CorruptFileError, FormatError, InvalidArgument
from benchmark.geom3d import AXES, Box9DoF, PointSet, SymmetrySpec

# Per module logger
logger = logging.getLogger(__name__)

ATTRIBUTE_CODES = ('INV', 'DEF', 'FM', 'ROT', 'SV', 'SD', 'SPA')
ABSENCE_REASONS = ('full_occlusion', 'out_of_view')

META_FILE = 'meta.json'
ANNO_FILE = 'anno.jsonl'
FRAMES_DIR = 'frames'
POINT_DTYPE = np.dtype('<f4')
POINT_BYTES = 3 * POINT_DTYPE.itemsize

META_KEYS = ('id', 'category', 'attributes', 'symmetric', 'symmetry_axis', 'k', 'fps', 'num_frames')


class Violation(namedtuple('Violation', 'path line field message')):
    __slots__ = ()

    def __str__(self):
        location = [os.path.basename(self.path)] if self.path else []
        if self.line is not None:
            location.append('line %d' % self.line)
        if self.field is not None:
            location.append('field "%s"' % self.field)
        return '%s: %s' % (', '.join(location), self.message) if location else self.message

    def as_error(self):
        return FormatError(self.message, path=self.path, line=self.line, field=self.field)


@dataclass(frozen=True)
class FrameRecord:
    index: int
    present: bool
    absence: Optional[str] = None
    box: Optional[Box9DoF] = None

    def __post_init__(self):
        if self.present and (self.box is None or self.absence is not None):
            raise InvalidArgument('frame %d: a present frame needs a box and no absence reason' % self.index)
        if not self.present and (self.box is not None or self.absence not in ABSENCE_REASONS):
            raise InvalidArgument('frame %d: an absent frame needs an absence reason and no box' % self.index)

    def to_dict(self):
        return {
            'frame': self.index,
            'present': self.present,
            'absence': self.absence,
            'box': self.box.as_list() if self.box is not None else None,
        }


@dataclass(frozen=True)
class SequenceMeta:
    sequence_id: str
    category: str
    attributes: Tuple[bool, ...]
    symmetry: SymmetrySpec
    fps: float
    num_frames: int
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.attributes) != len(ATTRIBUTE_CODES):
            raise InvalidArgument('attribute vector needs %d entries, got %d'
                                  % (len(ATTRIBUTE_CODES), len(self.attributes)))
        if not self.fps > 0:
            raise InvalidArgument('frame rate must be positive, got %r' % (self.fps,))
        object.__setattr__(self, 'attributes', tuple(bool(a) for a in self.attributes))

    def has_attribute(self, code):
        return self.attributes[ATTRIBUTE_CODES.index(code)]

    def to_dict(self):
        data = {
            'id': self.sequence_id,
            'category': self.category,
            'attributes': list(self.attributes),
            'symmetric': self.symmetry.symmetric,
            'symmetry_axis': self.symmetry.axis,
            'k': self.symmetry.k,
            'fps': self.fps,
            'num_frames': self.num_frames,
        }
        for key in sorted(self.extra):
            data[key] = self.extra[key]
        return data


class Sequence:
    """
    Metadata and per-frame annotations of one sequence; point clouds are read
    from disk on first access unless they were handed in directly.
    """

    def __init__(self, meta, frames, directory=None, clouds=None):
        self.meta = meta
        self.frames = list(frames)
        self.directory = directory
        self._clouds = clouds
        self._cache = {}

    def __repr__(self):
        return 'Sequence(%s, %d frames)' % (self.meta.sequence_id, len(self.frames))

    @property
    def sequence_id(self):
        return self.meta.sequence_id

    @property
    def first_box(self):
        return self.frames[0].box

    def cloud(self, index):
        if self._clouds is not None:
            return self._clouds[index]
        if self.directory is None:
            raise InvalidArgument('sequence %s has no clouds attached' % self.sequence_id)
        if index not in self._cache:
            self._cache[index] = read_frame_cloud(frame_path(self.directory, index))
        return self._cache[index]

    def __getstate__(self):
        # workers re-read clouds from disk
        return dict(self.__dict__, _cache={})

    def evaluated_frames(self):
        """Frames scored by the benchmark: every present frame after the first."""
        return [frame for frame in self.frames[1:] if frame.present]


@dataclass
class SequenceResult:
    sequence_id: str
    frames: List[Tuple[int, Box9DoF]]
    scores: List[float] = field(default_factory=list)
    category: Optional[str] = None
    attributes: Optional[Tuple[bool, ...]] = None
    tracker: Optional[str] = None

    def __post_init__(self):
        if not self.scores:
            self.scores = [1.0] * len(self.frames)
        if len(self.scores) != len(self.frames):
            raise InvalidArgument('%s: %d boxes but %d scores'
                                  % (self.sequence_id, len(self.frames), len(self.scores)))


@dataclass(frozen=True)
class SplitManifest:
    train: Tuple[str, ...]
    test: Tuple[str, ...]

    def __post_init__(self):
        overlap = set(self.train) & set(self.test)
        if overlap:
            raise InvalidArgument('sequences in both splits: %s' % ', '.join(sorted(overlap)))

    def ids(self, split):
        if split not in ('train', 'test'):
            raise InvalidArgument('unknown split %r' % (split,))
        return getattr(self, split)

    def to_dict(self):
        return {'train': list(self.train), 'test': list(self.test)}


def frame_path(directory, index):
    return os.path.join(directory, FRAMES_DIR, '%06d.bin' % index)


#
# Point clouds
#

def write_frame_cloud(points, path):
    if isinstance(points, PointSet):
        points = points.points
    data = np.ascontiguousarray(points, dtype=POINT_DTYPE).reshape(-1, 3)
    with open(path, 'wb') as f:
        f.write(data.tobytes())


def read_frame_cloud(path):
    try:
        with open(path, 'rb') as f:
            raw = f.read()
    except FileNotFoundError:
        raise FormatError('point cloud file is missing', path=path)
    if len(raw) % POINT_BYTES:
        raise CorruptFileError('size %d is not a multiple of %d bytes' % (len(raw), POINT_BYTES), path=path)
    points = np.frombuffer(raw, dtype=POINT_DTYPE).reshape(-1, 3).astype(np.float64)
    if not np.all(np.isfinite(points)):
        raise CorruptFileError('non-finite coordinates', path=path)
    return PointSet(points)


#
# Sequences
#

def _is_int(value):
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _parse_box(values, path, line, violations):
    if not isinstance(values, list) or len(values) != 9:
        count = len(values) if isinstance(values, list) else type(values).__name__
        violations.append(Violation(path, line, 'box', 'box must be a list of 9 numbers, got %s' % count))
        return None
    if not all(_is_number(v) for v in values):
        violations.append(Violation(path, line, 'box', 'box values must be numbers'))
        return None
    if not all(math.isfinite(v) for v in values):
        violations.append(Violation(path, line, 'box', 'box values must be finite'))
        return None
    if any(v <= 0 for v in values[3:6]):
        violations.append(Violation(path, line, 'box', 'box size must be strictly positive'))
        return None
    return Box9DoF.from_array(values)


def _parse_meta(directory, violations, categories):
    path = os.path.join(directory, META_FILE)
    try:
        with open(path, 'r', encoding='utf8') as f:
            data = json.load(f)
    except FileNotFoundError:
        violations.append(Violation(path, None, None, 'mandatory file is missing'))
        return None
    except ValueError as e:
        violations.append(Violation(path, None, None, 'invalid JSON (%s)' % e))
        return None
    if not isinstance(data, dict):
        violations.append(Violation(path, None, None, 'expected a JSON object'))
        return None

    before = len(violations)
    for key in META_KEYS:
        if key not in data:
            violations.append(Violation(path, None, key, 'missing key'))
    if len(violations) > before:
        return None

    checks = (
        ('id', isinstance(data['id'], str) and data['id'] != '', 'must be a non-empty string'),
        ('category', isinstance(data['category'], str), 'must be a string'),
        ('attributes', isinstance(data['attributes'], list) and len(data['attributes']) == len(ATTRIBUTE_CODES)
         and all(isinstance(a, bool) for a in data['attributes']),
         'must be a list of %d booleans' % len(ATTRIBUTE_CODES)),
        ('symmetric', isinstance(data['symmetric'], bool), 'must be a boolean'),
        ('symmetry_axis', data['symmetry_axis'] in AXES, 'must be one of %s' % ', '.join(AXES)),
        ('k', _is_int(data['k']) and data['k'] >= 1, 'must be a positive integer'),
        ('fps', _is_number(data['fps']) and math.isfinite(data['fps']) and data['fps'] > 0, 'must be positive'),
        ('num_frames', _is_int(data['num_frames']) and data['num_frames'] >= 1, 'must be a positive integer'),
    )
    for key, ok, message in checks:
        if not ok:
            violations.append(Violation(path, None, key, '%s, got %r' % (message, data[key])))
    if len(violations) > before:
        return None
    if categories is not None and data['category'] not in categories:
        violations.append(Violation(path, None, 'category', 'unknown category %r' % data['category']))
        return None

    return SequenceMeta(
        sequence_id=data['id'],
        category=data['category'],
        attributes=tuple(data['attributes']),
        symmetry=SymmetrySpec(symmetric=data['symmetric'], axis=data['symmetry_axis'], k=data['k']),
        fps=float(data['fps']),
        num_frames=data['num_frames'],
        extra={key: value for key, value in data.items() if key not in META_KEYS},
    )


def _parse_frame(text, path, line, violations):
    try:
        data = json.loads(text)
    except ValueError as e:
        violations.append(Violation(path, line, None, 'invalid JSON (%s)' % e))
        return None
    if not isinstance(data, dict):
        violations.append(Violation(path, line, None, 'expected a JSON object'))
        return None
    before = len(violations)
    for key in ('frame', 'present', 'absence', 'box'):
        if key not in data:
            violations.append(Violation(path, line, key, 'missing key'))
    if len(violations) > before:
        return None
    if not _is_int(data['frame']) or data['frame'] < 0:
        violations.append(Violation(path, line, 'frame', 'must be a non-negative integer'))
        return None
    index = data['frame']
    if not isinstance(data['present'], bool):
        violations.append(Violation(path, line, 'present', 'frame %d: must be a boolean' % index))
        return None
    absence = data['absence']
    if absence is not None and absence not in ABSENCE_REASONS:
        violations.append(Violation(path, line, 'absence', 'frame %d: unknown absence reason %r' % (index, absence)))
        return None
    box = None
    if data['box'] is not None:
        box = _parse_box(data['box'], path, line, violations)
        if box is None:
            return None

    if data['present']:
        if box is None:
            violations.append(Violation(path, line, 'box', 'frame %d: present frame has no box' % index))
            return None
        if absence is not None:
            violations.append(Violation(path, line, 'absence',
                                        'frame %d: present frame has an absence reason' % index))
            return None
    else:
        if box is not None:
            violations.append(Violation(path, line, 'box', 'frame %d: absent frame carries a box' % index))
            return None
        if absence is None:
            violations.append(Violation(path, line, 'absence', 'frame %d: absent frame has no absence reason' % index))
            return None
    return FrameRecord(index=index, present=data['present'], absence=absence, box=box)


def _parse_annotations(directory, violations):
    path = os.path.join(directory, ANNO_FILE)
    try:
        with open(path, 'r', encoding='utf8') as f:
            lines = f.read().splitlines()
    except FileNotFoundError:
        violations.append(Violation(path, None, None, 'mandatory file is missing'))
        return None

    frames = []
    previous = None
    for line_number, text in enumerate(lines, start=1):
        if not text.strip():
            continue
        frame = _parse_frame(text, path, line_number, violations)
        if frame is None:
            continue
        if previous is not None and frame.index <= previous:
            violations.append(Violation(path, line_number, 'frame',
                                        'frame index %d is not increasing (previous %d)' % (frame.index, previous)))
        elif frame.index != len(frames):
            violations.append(Violation(path, line_number, 'frame',
                                        'frame index %d leaves a gap (expected %d)' % (frame.index, len(frames))))
        previous = frame.index
        frames.append(frame)
    return frames


def _check_sequence(directory, meta, frames, violations, read_clouds):
    anno_path = os.path.join(directory, ANNO_FILE)
    if len(frames) != meta.num_frames:
        violations.append(Violation(anno_path, None, None, 'holds %d frames but meta.json declares %d'
                                    % (len(frames), meta.num_frames)))
    if frames and not frames[0].present:
        violations.append(Violation(anno_path, 1, 'present', 'frame 0: the first frame must be present'))

    for frame in frames:
        path = frame_path(directory, frame.index)
        try:
            size = os.path.getsize(path)
        except OSError:
            violations.append(Violation(path, None, None, 'frame %d: point cloud file is missing' % frame.index))
            continue
        if size % POINT_BYTES:
            violations.append(Violation(path, None, None, 'frame %d: size %d is not a multiple of %d bytes'
                                        % (frame.index, size, POINT_BYTES)))
            continue
        if read_clouds:
            try:
                read_frame_cloud(path)
            except FormatError as e:
                violations.append(Violation(path, None, None, 'frame %d: %s' % (frame.index, e.detail)))


def _load(directory, violations, read_clouds, categories):
    if categories is None:
        categories = settings.SOT_CATEGORIES
    if not os.path.isdir(directory):
        violations.append(Violation(directory, None, None, 'sequence directory does not exist'))
        return None, None
    meta = _parse_meta(directory, violations, categories)
    frames = _parse_annotations(directory, violations)
    if meta is not None and frames is not None:
        _check_sequence(directory, meta, frames, violations, read_clouds)
    return meta, frames


def validate_sequence(directory, categories=None):
    """
    Check a sequence directory and return every violation found, reading all
    point clouds. An empty list means read_sequence will succeed.
    """
    violations = []
    _load(directory, violations, read_clouds=True, categories=categories)
    return violations


def read_sequence(directory, categories=None):
    violations = []
    meta, frames = _load(directory, violations, read_clouds=False, categories=categories)
    if violations:
        raise violations[0].as_error()
    return Sequence(meta, frames, directory=directory)


def write_meta(directory, meta):
    with open(os.path.join(directory, META_FILE), 'w', encoding='utf8') as f:
        f.write(json.dumps(meta.to_dict(), indent=2) + '\n')


def write_sequence(directory, meta, frames, clouds):
    """
    Write a complete sequence directory. `clouds` holds one PointSet per
    frame, absent frames included.
    """
    os.makedirs(os.path.join(directory, FRAMES_DIR), exist_ok=True)
    write_meta(directory, meta)
    with open(os.path.join(directory, ANNO_FILE), 'w', encoding='utf8') as f:
        for frame in frames:
            f.write(json.dumps(frame.to_dict()) + '\n')
    for frame, cloud in zip(frames, clouds):
        write_frame_cloud(cloud, frame_path(directory, frame.index))


def list_sequences(data_dir):
    return sorted(name for name in os.listdir(data_dir)
                  if os.path.isfile(os.path.join(data_dir, name, META_FILE)))


#
# Tracker results
#

def write_results(result, path):
    with open(path, 'w', encoding='utf8') as f:
        for (index, box), score in zip(result.frames, result.scores):
            f.write(json.dumps({'frame': index, 'box': box.as_list(), 'score': float(score)}) + '\n')


def read_results(path):
    sequence_id = os.path.splitext(os.path.basename(path))[0]
    try:
        with open(path, 'r', encoding='utf8') as f:
            lines = f.read().splitlines()
    except FileNotFoundError:
        raise FormatError('result file is missing', path=path)

    frames = []
    scores = []
    for line_number, text in enumerate(lines, start=1):
        if not text.strip():
            continue
        try:
            data = json.loads(text)
        except ValueError as e:
            raise FormatError('invalid JSON (%s)' % e, path=path, line=line_number)
        if not isinstance(data, dict):
            raise FormatError('expected a JSON object', path=path, line=line_number)
        for key in ('frame', 'box', 'score'):
            if key not in data:
                raise FormatError('missing key', path=path, line=line_number, field=key)
        if not _is_int(data['frame']):
            raise FormatError('must be an integer', path=path, line=line_number, field='frame')
        if not _is_number(data['score']):
            raise FormatError('must be a number', path=path, line=line_number, field='score')
        violations = []
        box = _parse_box(data['box'], path, line_number, violations)
        if violations:
            raise violations[0].as_error()
        frames.append((data['frame'], box))
        scores.append(float(data['score']))
    return SequenceResult(sequence_id=sequence_id, frames=frames, scores=scores)


#
# Splits
#

def _round_half_up(value):
    return int(math.floor(value + 0.5 + 1e-9))


def _allocate_train_counts(class_sizes, train_fraction, target):
    """
    Largest-remainder allocation of `target` training sequences over classes,
    keeping at least one sequence of every class with two or more on each side.
    """
    lower = {c: 1 for c in class_sizes}
    upper = {c: (n - 1 if n >= 2 else 1) for c, n in class_sizes.items()}
    quota = {c: train_fraction * n for c, n in class_sizes.items()}
    counts = {c: min(max(int(math.floor(quota[c])), lower[c]), upper[c]) for c in class_sizes}
    remainder = {c: quota[c] - math.floor(quota[c]) for c in class_sizes}

    diff = target - sum(counts.values())
    while diff:
        if diff > 0:
            candidates = sorted((c for c in counts if counts[c] < upper[c]), key=lambda c: (-remainder[c], c))
            step = 1
        else:
            candidates = sorted((c for c in counts if counts[c] > lower[c]), key=lambda c: (remainder[c], c))
            step = -1
        if not candidates:
            break
        for c in candidates[:abs(diff)]:
            counts[c] += step
            diff -= step
    return counts


def make_split(sequence_ids, train_fraction, seed, categories=None):
    """
    Deterministic stratified train/test split.

    `categories` maps sequence id to class label; without it every sequence
    belongs to one class. The train split gets round-half-up of
    train_fraction * n sequences overall.
    """
    if not 0.0 < train_fraction < 1.0:
        raise InvalidArgument('train fraction must be in (0, 1), got %r' % (train_fraction,))
    ids = list(sequence_ids)
    if len(set(ids)) != len(ids):
        raise InvalidArgument('duplicate sequence ids')
    categories = categories or {}

    by_class = defaultdict(list)
    for sequence_id in sorted(ids):
        by_class[categories.get(sequence_id, '')].append(sequence_id)
    for label, members in sorted(by_class.items()):
        if len(members) == 1:
            logger.warning('class "%s" has a single sequence (%s), assigning it to train' % (label, members[0]))

    target = _round_half_up(train_fraction * len(ids))
    counts = _allocate_train_counts({c: len(m) for c, m in by_class.items()}, train_fraction, target)

    rng = np.random.default_rng(seed)
    train, test = [], []
    for label in sorted(by_class):
        members = by_class[label]
        order = rng.permutation(len(members))
        shuffled = [members[i] for i in order]
        train.extend(shuffled[:counts[label]])
        test.extend(shuffled[counts[label]:])
    return SplitManifest(train=tuple(sorted(train)), test=tuple(sorted(test)))


def write_split(manifest, path):
    with open(path, 'w', encoding='utf8') as f:
        f.write(json.dumps(manifest.to_dict(), indent=2) + '\n')


def read_split(path, data_dir=None):
    try:
        with open(path, 'r', encoding='utf8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise FormatError('split file is missing', path=path)
    except ValueError as e:
        raise FormatError('invalid JSON (%s)' % e, path=path)
    for key in ('train', 'test'):
        if not isinstance(data.get(key), list) or not all(isinstance(i, str) for i in data[key]):
            raise FormatError('must be a list of sequence ids', path=path, field=key)
    try:
        manifest = SplitManifest(train=tuple(data['train']), test=tuple(data['test']))
    except InvalidArgument as e:
        raise FormatError(str(e), path=path)
    if data_dir is not None:
        for sequence_id in manifest.train + manifest.test:
            if not os.path.isfile(os.path.join(data_dir, sequence_id, META_FILE)):
                raise FormatError('sequence %s is not in %s' % (sequence_id, data_dir), path=path)
    return manifest


def split_statistics(manifest, sequences):
    """
    Rows comparing the two splits: sequence count, frame count, average
    frames per sequence and number of object classes.
    """
    rows = []
    for split in ('train', 'test'):
        members = [sequences[i] for i in manifest.ids(split)]
        total_frames = sum(s.meta.num_frames for s in members)
        rows.append({
            'split': split,
            'sequences': len(members),
            'frames': total_frames,
            'average_frames': total_frames / len(members) if members else 0.0,
            'classes': len({s.meta.category for s in members}),
        })
    return rows
