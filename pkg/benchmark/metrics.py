"""
Evaluation protocol: per-frame overlaps, per-sequence AO/SR and the
class-balanced mAO/mSR summaries with their per-attribute breakdown.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from benchmark.dataio import ATTRIBUTE_CODES
from benchmark.exceptions import ProtocolViolation
from benchmark.geom3d import iou3d_symmetric

# Per module logger
logger = logging.getLogger(__name__)

SUCCESS_THRESHOLDS = tuple(round(0.05 * i, 2) for i in range(21))
MEAN_TOLERANCE = 1e-12


@dataclass(frozen=True)
class SequenceScore:
    sequence_id: str
    category: str
    ao: float
    sr50: float
    sr75: float
    frames: int
    curve: tuple

    def to_dict(self):
        return {'category': self.category, 'AO': self.ao, 'SR50': self.sr50, 'SR75': self.sr75,
                'frames': self.frames}


@dataclass
class MetricsReport:
    mao: float
    msr50: float
    msr75: float
    classes: Dict[str, dict]
    sequences: Dict[str, SequenceScore]
    success_curve: List[float]
    attributes: Dict[str, Optional[dict]] = field(default_factory=dict)
    tracker: Optional[str] = None

    def __post_init__(self):
        if self.msr75 > self.msr50:
            raise ProtocolViolation('mSR75 %.6f exceeds mSR50 %.6f' % (self.msr75, self.msr50))
        for name in ('mao', 'msr50', 'msr75'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ProtocolViolation('%s %r outside [0, 1]' % (name, value))

    @property
    def auc(self):
        return area_under_curve(self.success_curve)

    def to_dict(self):
        return {
            'tracker': self.tracker,
            'mAO': self.mao,
            'mSR50': self.msr50,
            'mSR75': self.msr75,
            'classes': {label: dict(row) for label, row in sorted(self.classes.items())},
            'attributes': {code: (dict(row) if row is not None else None) for code, row in self.attributes.items()},
            'sequences': {sid: score.to_dict() for sid, score in sorted(self.sequences.items())},
            'success_curve': {
                'thresholds': list(SUCCESS_THRESHOLDS),
                'values': list(self.success_curve),
                'auc': self.auc,
            },
        }


def frame_overlaps(pred, gt):
    """
    IoU of every evaluated frame of `gt` (present frames after the first),
    using the sequence's symmetry. Predictions for other frames are ignored.
    """
    seen = {}
    for index, box in pred.frames:
        if index in seen:
            raise ProtocolViolation('%s: duplicate prediction for frame %d' % (gt.sequence_id, index))
        seen[index] = box
    known = {frame.index for frame in gt.frames}
    for index in seen:
        if index not in known:
            raise ProtocolViolation('%s: prediction for unknown frame %d' % (gt.sequence_id, index))

    ious = []
    for frame in gt.evaluated_frames():
        if frame.index not in seen:
            raise ProtocolViolation('%s: missing prediction for frame %d' % (gt.sequence_id, frame.index))
        ious.append(iou3d_symmetric(seen[frame.index], frame.box, gt.meta.symmetry))
    return ious


def _require_frames(ious):
    if len(ious) == 0:
        raise ProtocolViolation('sequence has no evaluated frames')


def ao(ious):
    _require_frames(ious)
    return float(np.mean(np.asarray(ious, dtype=np.float64)))


def sr(ious, tau):
    _require_frames(ious)
    return float(np.mean(np.asarray(ious, dtype=np.float64) > tau))


def success_curve(ious, thresholds=SUCCESS_THRESHOLDS):
    return [sr(ious, tau) for tau in thresholds]


def area_under_curve(values):
    return float(np.mean(values)) if len(values) else 0.0


def score_sequence(pred, gt):
    ious = frame_overlaps(pred, gt)
    return SequenceScore(
        sequence_id=gt.sequence_id,
        category=gt.meta.category,
        ao=ao(ious),
        sr50=sr(ious, 0.5),
        sr75=sr(ious, 0.75),
        frames=len(ious),
        curve=tuple(success_curve(ious)),
    )


def _score_pair(pair):
    return score_sequence(*pair)


def _match(results, gts):
    by_id = {}
    for gt in gts:
        if gt.sequence_id in by_id:
            raise ProtocolViolation('duplicate ground-truth sequence %s' % gt.sequence_id)
        by_id[gt.sequence_id] = gt
    pairs = {}
    for result in results:
        if result.sequence_id not in by_id:
            raise ProtocolViolation('result for unknown sequence %s' % result.sequence_id)
        if result.sequence_id in pairs:
            raise ProtocolViolation('duplicate result for sequence %s' % result.sequence_id)
        pairs[result.sequence_id] = (result, by_id[result.sequence_id])
    missing = sorted(set(by_id) - set(pairs))
    if missing:
        raise ProtocolViolation('no result for sequence %s' % missing[0])
    return [pairs[sid] for sid in sorted(pairs)]


def score_sequences(results, gts, jobs=1):
    """
    Per-sequence scores keyed and ordered by sequence id. With jobs > 1 the
    sequences are scored in a process pool; the merge order is unchanged.
    """
    pairs = _match(results, gts)
    if jobs > 1 and len(pairs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            scores = list(executor.map(_score_pair, pairs))
    else:
        scores = [_score_pair(pair) for pair in pairs]
    return {score.sequence_id: score for score in scores}


def _summarise(scores, tracker=None):
    if not scores:
        raise ProtocolViolation('nothing to aggregate')
    by_class = {}
    for sid in sorted(scores):
        by_class.setdefault(scores[sid].category, []).append(scores[sid])

    classes = {}
    curves = []
    for label in sorted(by_class):
        members = by_class[label]
        classes[label] = {
            'AO': float(np.mean([s.ao for s in members])),
            'SR50': float(np.mean([s.sr50 for s in members])),
            'SR75': float(np.mean([s.sr75 for s in members])),
            'sequences': len(members),
        }
        curves.append(np.mean([s.curve for s in members], axis=0))

    labels = sorted(classes)
    mao = float(np.mean([classes[c]['AO'] for c in labels]))
    assert abs(mao - sum(classes[c]['AO'] for c in labels) / len(labels)) <= MEAN_TOLERANCE
    return MetricsReport(
        mao=mao,
        msr50=float(np.mean([classes[c]['SR50'] for c in labels])),
        msr75=float(np.mean([classes[c]['SR75'] for c in labels])),
        classes=classes,
        sequences=dict(scores),
        success_curve=[float(v) for v in np.mean(curves, axis=0)],
        tracker=tracker,
    )


def _attribute_rows(scores, gts):
    attributes = {gt.sequence_id: gt.meta.attributes for gt in gts}
    rows = {}
    for position, code in enumerate(ATTRIBUTE_CODES):
        subset = {sid: s for sid, s in scores.items() if attributes[sid][position]}
        if not subset:
            rows[code] = None
            continue
        report = _summarise(subset)
        rows[code] = {'mAO': report.mao, 'mSR50': report.msr50, 'mSR75': report.msr75, 'sequences': len(subset)}
    return rows


def aggregate(results, gts, jobs=1, tracker=None):
    """
    Class-balanced report: class means over that class's sequences, mAO and
    mSR as unweighted means over classes. The attribute breakdown is filled
    in as well.
    """
    gts = list(gts)
    scores = score_sequences(results, gts, jobs=jobs)
    report = _summarise(scores, tracker=tracker)
    report.attributes = _attribute_rows(scores, gts)
    logger.info('evaluated %d sequences over %d classes: mAO %.4f mSR50 %.4f mSR75 %.4f'
                % (len(scores), len(report.classes), report.mao, report.msr50, report.msr75))
    return report


def attribute_report(results, gts, jobs=1):
    """
    One row per attribute code: mAO/mSR50/mSR75 over the sequences carrying
    the attribute, or None when no sequence carries it.
    """
    gts = list(gts)
    return _attribute_rows(score_sequences(results, gts, jobs=jobs), gts)


def _percent(value):
    return '%.2f' % (100.0 * value)


def render_table(header, rows):
    widths = [max(len(str(cell)) for cell in column) for column in zip(header, *rows)]
    lines = ['  '.join(str(cell).ljust(width) for cell, width in zip(header, widths)).rstrip()]
    lines.append('  '.join('-' * width for width in widths))
    for row in rows:
        lines.append('  '.join(str(cell).ljust(width) for cell, width in zip(row, widths)).rstrip())
    return '\n'.join(lines)


def format_table(report):
    header = ('', 'mAO', 'mSR50', 'mSR75', 'seqs')
    rows = [('overall', _percent(report.mao), _percent(report.msr50), _percent(report.msr75),
             len(report.sequences))]
    for label, row in sorted(report.classes.items()):
        rows.append((label, _percent(row['AO']), _percent(row['SR50']), _percent(row['SR75']), row['sequences']))
    for code, row in report.attributes.items():
        if row is None:
            rows.append((code, '-', '-', '-', 0))
        else:
            rows.append((code, _percent(row['mAO']), _percent(row['mSR50']), _percent(row['mSR75']),
                         row['sequences']))
    return render_table(header, rows)


def format_comparison(reports, label='tracker'):
    """Tracker by mAO/mSR50/mSR75 table, one row per report in the given order."""
    header = (label, 'mAO', 'mSR50', 'mSR75')
    rows = [(report.tracker or '?', _percent(report.mao), _percent(report.msr50), _percent(report.msr75))
            for report in reports]
    return render_table(header, rows)


def report_from_dict(data):
    """Rebuild a report from its JSON document, as written by the eval command."""
    scores = {
        sid: SequenceScore(sequence_id=sid, category=row['category'], ao=row['AO'], sr50=row['SR50'],
                           sr75=row['SR75'], frames=row['frames'], curve=())
        for sid, row in data.get('sequences', {}).items()
    }
    return MetricsReport(
        mao=data['mAO'],
        msr50=data['mSR50'],
        msr75=data['mSR75'],
        classes=data.get('classes', {}),
        sequences=scores,
        success_curve=data.get('success_curve', {}).get('values', []),
        attributes=data.get('attributes', {}),
        tracker=data.get('tracker'),
    )
