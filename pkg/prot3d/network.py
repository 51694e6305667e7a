"""
Forward pass of the tracker network.

All coordinates here live in the search-centred frame: world axes translated
so the previous box center is the origin.
"""
from dataclasses import dataclass

import numpy as np

from benchmark.geom3d import farthest_point_sampling
from nncore import layers, ops
from nncore.exceptions import InvalidArgument
from nncore.tensor import Tensor

BOX_COLUMNS = 10
SEVEN_DOF_MASK = np.array([1, 1, 1, 1, 0, 0, 1, 1, 1, 1], dtype=np.float64)


@dataclass
class MemoryView:
    """Concatenated memory H with per-row coordinates and targetness mask."""
    features: Tensor
    coords: np.ndarray
    mask: np.ndarray

    @property
    def rows(self):
        return self.features.shape[0]


@dataclass
class StageOutput:
    coords: Tensor
    votes: Tensor
    mask_logits: Tensor
    score_logits: Tensor
    sampled: np.ndarray
    sampled_votes: Tensor
    refined: Tensor


def resample_points(points, count):
    """
    Exactly `count` points: farthest point sampling when there are enough,
    cyclic duplication otherwise.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] == 0:
        raise InvalidArgument('cannot resample an empty point set')
    if points.shape[0] >= count:
        return points[farthest_point_sampling(points, count)]
    return points[np.arange(count) % points.shape[0]]


def backbone(params, coords, config):
    """Two EdgeConv layers over the resampled search points, (P, 3) -> (P, F)."""
    coords = np.asarray(coords, dtype=np.float64)
    width = config.feature_width
    x = layers.edge_conv(params, 'backbone.edge1', Tensor(coords), coords, config.knn, [width])
    return layers.edge_conv(params, 'backbone.edge2', x, coords, config.knn, [width])


def spt_forward(params, name, x, coords, memory, config):
    """
    Spatial-temporal transformer: per layer, cross-attention from the search
    points into the memory, self-attention among the search points and a
    feed-forward block, each followed by a residual add and layer norm.
    """
    width = config.feature_width
    positional = layers.linear(params, name + '.pos', coords, width)
    memory_pos = layers.linear(params, name + '.pos', Tensor(memory.coords), width)
    mask_embed = layers.linear(params, name + '.mask', Tensor(memory.mask.reshape(-1, 1)), width)
    keys = ops.add(ops.add(memory.features, mask_embed), memory_pos)

    for layer in range(config.spt_layers):
        prefix = '%s.%d' % (name, layer)
        query = ops.add(x, positional)
        attended = ops.attention(layers.linear(params, prefix + '.cross.q', query, width),
                                 layers.linear(params, prefix + '.cross.k', keys, width),
                                 layers.linear(params, prefix + '.cross.v', keys, width))
        x = layers.layer_norm(params, prefix + '.norm1',
                              ops.add(x, layers.linear(params, prefix + '.cross.out', attended, width)))

        query = ops.add(x, positional)
        attended = ops.attention(layers.linear(params, prefix + '.self.q', query, width),
                                 layers.linear(params, prefix + '.self.k', query, width),
                                 layers.linear(params, prefix + '.self.v', x, width))
        x = layers.layer_norm(params, prefix + '.norm2',
                              ops.add(x, layers.linear(params, prefix + '.self.out', attended, width)))

        hidden = ops.relu(layers.linear(params, prefix + '.ffn.0', x, 2 * width))
        x = layers.layer_norm(params, prefix + '.norm3',
                              ops.add(x, layers.linear(params, prefix + '.ffn.1', hidden, width)))
    return x


def voxel_coordinates(votes, half_extent, grid_size):
    """Continuous grid coordinates in [0, G-1] of points in the cube [-h, h]^3."""
    if not half_extent > 0:
        raise InvalidArgument('search extent must be positive, got %r' % (half_extent,))
    return ops.scale(ops.add(votes, Tensor(np.array(half_extent))), (grid_size - 1) / (2.0 * half_extent))


def ftb_forward(params, name, features, votes, mask, half_extent, config):
    """
    Feature transformation: concat(features, votes, mask) -> MLP -> EdgeConv,
    then a residual volumetric branch (scatter-mean voxelisation, one 3x3x3
    convolution, trilinear gather back to the points).
    """
    width = config.feature_width
    grid_size = config.voxel_grid
    hidden = layers.mlp(params, name + '.mlp', ops.concat([features, votes, mask], axis=1), [width],
                        final_activation=True)
    hidden = layers.edge_conv(params, name + '.edge', hidden, votes.data, config.knn, [width])

    grid_coords = voxel_coordinates(votes, half_extent, grid_size)
    cell = np.clip(np.rint(grid_coords.data), 0, grid_size - 1).astype(np.int64)
    flat = cell[:, 0] * grid_size * grid_size + cell[:, 1] * grid_size + cell[:, 2]
    grid = ops.scatter_mean(hidden, flat, grid_size ** 3)
    convolved = layers.conv3d(params, name + '.conv', grid, grid_size, width)
    return ops.add(hidden, ops.trilinear_sample(convolved, grid_coords, grid_size))


def stage_forward(params, index, x, coords, memory, half_extent, config):
    name = 'stage%d' % index
    fused = spt_forward(params, name + '.spt', x, coords, memory, config)
    head = layers.mlp(params, name + '.head', fused, [config.feature_width, 5])
    offsets = ops.columns(head, 0, 3)
    mask_logits = ops.columns(head, 3, 4)
    score_logits = ops.columns(head, 4, 5)
    votes = ops.add(coords, offsets)

    sampled = farthest_point_sampling(votes.data, config.sampled_points)
    sampled_votes = ops.gather_rows(votes, sampled)
    refined = ftb_forward(params, name + '.ftb', ops.gather_rows(fused, sampled), sampled_votes,
                          ops.sigmoid(ops.gather_rows(mask_logits, sampled)), half_extent, config)
    refined = ops.add(refined, layers.conv1d(params, name + '.score_embed', ops.gather_rows(score_logits, sampled),
                                             config.feature_width, width=config.score_kernel))
    return StageOutput(coords=coords, votes=votes, mask_logits=mask_logits, score_logits=score_logits,
                       sampled=sampled, sampled_votes=sampled_votes, refined=refined)


def vote_center(outputs):
    """
    Mask-weighted mean of the votes of every stage, (1, 3): each vote is
    weighted by the sigmoid of its targetness logit.
    """
    votes = ops.concat([output.votes for output in outputs], axis=0)
    weights = ops.sigmoid(ops.concat([output.mask_logits for output in outputs], axis=0))
    return ops.div(ops.sum(ops.mul(votes, weights), axis=0), ops.sum(weights, axis=0))


def head_forward(params, x, config, center=None):
    """
    Per point 9 box offsets and a score logit, (D, F) -> (D, 10). The output
    layer starts at zero; when `center` is given it is added to the center
    offsets of every row, so an untrained head proposes the pooled vote center
    with the previous size and orientation.
    """
    hidden = ops.relu(layers.linear(params, 'final.0', x, config.feature_width))
    table = layers.linear(params, 'final.1', hidden, BOX_COLUMNS, init='zeros')
    if center is not None:
        table = ops.add(table, ops.concat([center, Tensor(np.zeros((1, BOX_COLUMNS - 3)))], axis=1))
    if config.box_dof == 7:
        table = ops.mul(table, Tensor(SEVEN_DOF_MASK))
    return table


def forward(params, config, search_coords, search_features, memory, half_extent):
    """Run every stage and the final head; returns (stage outputs, R table)."""
    x = search_features
    coords = Tensor(search_coords)
    outputs = []
    for index in range(config.stages):
        output = stage_forward(params, index, x, coords, memory, half_extent, config)
        outputs.append(output)
        x, coords = output.refined, output.sampled_votes
    return outputs, head_forward(params, x, config, center=vote_center(outputs))
