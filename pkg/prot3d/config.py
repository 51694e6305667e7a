import dataclasses
import hashlib
import json
from dataclasses import dataclass

from benchmark.exceptions import ConfigurationError

SUPERVISION_MODES = ('per_stage', 'final')

# Ablation arms: (9DoF box, progressive architecture) switched off, on/off, on/on
ARMS = {
    '1': {'box_dof': 7, 'stages': 1},
    '2': {'box_dof': 9, 'stages': 1},
    '3': {'box_dof': 9, 'stages': 2},
}


@dataclass(frozen=True)
class TrackerConfig:
    stages: int = 2
    memory_size: int = 3
    spt_layers: int = 2
    search_points: int = 128
    sampled_points: int = 64
    search_scale: float = 2.0
    feature_width: int = 32
    knn: int = 8
    proposal_radius: float = 0.3
    lambda_mask: float = 0.2
    lambda_center: float = 10.0
    lambda_proposal: float = 1.0
    lambda_score: float = 1.0
    learning_rate: float = 0.001
    batch_size: int = 9
    epochs: int = 15
    box_dof: int = 9
    stage_supervision: str = 'per_stage'
    prev_box_jitter: float = 0.05
    voxel_grid: int = 8
    score_kernel: int = 1
    seed: int = 0

    def __post_init__(self):
        problems = []
        for name in ('stages', 'memory_size', 'spt_layers', 'search_points', 'sampled_points', 'feature_width',
                     'knn', 'batch_size', 'epochs', 'voxel_grid'):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                problems.append('%s must be a positive integer' % name)
        if problems:
            raise ConfigurationError('; '.join(problems))
        if self.sampled_points > self.search_points:
            problems.append('sampled_points must not exceed search_points')
        if self.knn >= self.sampled_points:
            problems.append('knn must be smaller than sampled_points')
        if self.search_scale < 1.0:
            problems.append('search_scale must be at least 1')
        if self.proposal_radius <= 0 or self.learning_rate <= 0 or self.prev_box_jitter < 0:
            problems.append('proposal_radius and learning_rate must be positive, prev_box_jitter non-negative')
        if min(self.lambda_mask, self.lambda_center, self.lambda_proposal, self.lambda_score) < 0:
            problems.append('loss weights must be non-negative')
        if self.box_dof not in (7, 9):
            problems.append('box_dof must be 7 or 9')
        if self.stage_supervision not in SUPERVISION_MODES:
            problems.append('stage_supervision must be one of %s' % ', '.join(SUPERVISION_MODES))
        if self.voxel_grid < 2:
            problems.append('voxel_grid must be at least 2')
        if self.score_kernel < 1 or self.score_kernel % 2 == 0:
            problems.append('score_kernel must be a positive odd integer')
        if problems:
            raise ConfigurationError('; '.join(problems))

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError('unknown tracker config key "%s"' % unknown[0])
        return cls(**data)

    @classmethod
    def for_arm(cls, arm, **overrides):
        if arm not in ARMS:
            raise ConfigurationError('unknown ablation arm %r' % (arm,))
        return cls(**dict(ARMS[arm], **overrides))

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def config_hash(self):
        return config_hash(self.to_dict())


def config_hash(data):
    """SHA-256 of the canonical JSON encoding."""
    canonical = json.dumps(data, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf8')).hexdigest()


def load_config(path):
    try:
        with open(path, 'r', encoding='utf8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigurationError('tracker config %s does not exist' % path)
    except ValueError as e:
        raise ConfigurationError('tracker config %s is not valid JSON (%s)' % (path, e))
    return TrackerConfig.from_dict(data)
