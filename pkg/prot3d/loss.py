from dataclasses import dataclass

import numpy as np

from benchmark.geom3d import contains_points
from nncore import ops
from nncore.tensor import Tensor
from prot3d.boxes import box_offsets

COMPONENTS = ('mask', 'center', 'proposal', 'score', 'bbox')


@dataclass
class LossBreakdown:
    total: Tensor
    mask: float
    center: float
    proposal: float
    score: float
    bbox: float

    def as_dict(self):
        values = {name: getattr(self, name) for name in COMPONENTS}
        values['loss'] = self.total.item()
        return values


def _zero():
    return Tensor(np.array(0.0))


def loss_total(stage_outputs, table, gt_box, prev_box, config):
    """
    Weighted training loss for one search frame. `gt_box` and `prev_box` are
    expressed in the search-centred frame, the frame the network works in.

    Mask, center and proposal terms are summed over the supervised stages
    (every stage, or only the last with stage_supervision 'final'); score and
    box terms supervise the final head.
    """
    center = np.array(gt_box.center)
    radius = config.proposal_radius
    supervised = stage_outputs if config.stage_supervision == 'per_stage' else stage_outputs[-1:]

    mask_loss, center_loss, proposal_loss = _zero(), _zero(), _zero()
    for output in supervised:
        inside = contains_points(gt_box, output.coords.data)
        mask_loss = ops.add(mask_loss, ops.bce_with_logits(output.mask_logits, inside.reshape(-1, 1)))
        if np.any(inside):
            residual = ops.sub(ops.gather_rows(output.votes, np.flatnonzero(inside)), Tensor(center))
            center_loss = ops.add(center_loss, ops.mean(ops.sum(ops.mul(residual, residual), axis=1)))
        near = np.linalg.norm(output.votes.data - center, axis=1) < radius
        proposal_loss = ops.add(proposal_loss, ops.bce_with_logits(output.score_logits, near.reshape(-1, 1)))

    decoded_centers = np.array(prev_box.center) + table.data[:, 0:3]
    near = np.linalg.norm(decoded_centers - center, axis=1) < radius
    score_loss = ops.bce_with_logits(ops.columns(table, 9, 10), near.reshape(-1, 1))

    assigned = np.linalg.norm(stage_outputs[-1].sampled_votes.data - center, axis=1) < radius
    rows = np.flatnonzero(assigned) if np.any(assigned) else np.arange(table.shape[0])
    target = np.tile(box_offsets(gt_box, prev_box, config.box_dof), (rows.size, 1))
    bbox_loss = ops.smooth_l1(ops.columns(ops.gather_rows(table, rows), 0, 9), target)

    total = ops.add(ops.add(ops.add(ops.scale(mask_loss, config.lambda_mask),
                                    ops.scale(center_loss, config.lambda_center)),
                            ops.add(ops.scale(proposal_loss, config.lambda_proposal),
                                    ops.scale(score_loss, config.lambda_score))),
                    bbox_loss)
    return LossBreakdown(total=total, mask=mask_loss.item(), center=center_loss.item(),
                         proposal=proposal_loss.item(), score=score_loss.item(), bbox=bbox_loss.item())
