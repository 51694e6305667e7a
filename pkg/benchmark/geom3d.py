"""
Oriented 9DoF box geometry.

Boxes carry a center, a size (w, h, l) along the local x, y and z axes and
intrinsic Z-Y-X Euler angles (alpha = yaw about z, beta = pitch about y,
gamma = roll about x), so that a box's rotation is Rz(alpha) Ry(beta) Rx(gamma).
Everything here is a pure function over immutable values.
"""
import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from benchmark.exceptions import InvalidArgument

AXES = ('x', 'y', 'z')

# Clipping tolerance, meters
CLIP_EPSILON = 1e-9
# Intersections below this volume count as empty, cubic meters
VOLUME_EPSILON = 1e-12

# Corner sign order: x varies slowest, z fastest, i.e. corner i has
# signs (bit 2, bit 1, bit 0) of i with 0 meaning minus.
CORNER_SIGNS = np.array(list(product((-1.0, 1.0), repeat=3)))

# Corner indices of the six faces, each listed as a cycle around the face.
FACE_INDICES = (
    (0, 1, 3, 2),  # -x
    (4, 5, 7, 6),  # +x
    (0, 1, 5, 4),  # -y
    (2, 3, 7, 6),  # +y
    (0, 2, 6, 4),  # -z
    (1, 3, 7, 5),  # +z
)


def wrap_angle(angle):
    """Wrap an angle in radians to (-pi, pi]."""
    wrapped = angle - 2.0 * math.pi * math.ceil((angle - math.pi) / (2.0 * math.pi))
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def _vector(values, name):
    try:
        vector = tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise InvalidArgument('%s must be a 3-vector of numbers, got %r' % (name, values))
    if len(vector) != 3:
        raise InvalidArgument('%s must have 3 components, got %d' % (name, len(vector)))
    if not all(math.isfinite(v) for v in vector):
        raise InvalidArgument('%s must be finite, got %r' % (name, vector))
    return vector


@dataclass(frozen=True)
class Box9DoF:
    center: tuple
    size: tuple
    angles: tuple

    def __post_init__(self):
        center = _vector(self.center, 'center')
        size = _vector(self.size, 'size')
        angles = _vector(self.angles, 'angles')
        if any(s <= 0.0 for s in size):
            raise InvalidArgument('box size must be strictly positive, got %r' % (size,))
        object.__setattr__(self, 'center', center)
        object.__setattr__(self, 'size', size)
        object.__setattr__(self, 'angles', tuple(wrap_angle(a) for a in angles))

    @classmethod
    def from_array(cls, values):
        """Build a box from [x, y, z, w, h, l, alpha, beta, gamma]."""
        values = list(values)
        if len(values) != 9:
            raise InvalidArgument('a 9DoF box needs 9 values, got %d' % len(values))
        return cls(values[0:3], values[3:6], values[6:9])

    def as_array(self):
        return np.array(self.center + self.size + self.angles, dtype=np.float64)

    def as_list(self):
        return list(self.center + self.size + self.angles)

    @property
    def rotation(self):
        return rotation_matrix(self.angles)

    @property
    def half_size(self):
        return np.array(self.size) / 2.0

    @property
    def volume(self):
        return box_volume(self)

    @property
    def diagonal(self):
        return math.sqrt(sum(s * s for s in self.size))


@dataclass(frozen=True)
class SymmetrySpec:
    symmetric: bool = False
    axis: str = 'z'
    k: int = 120

    def __post_init__(self):
        if self.axis not in AXES:
            raise InvalidArgument('symmetry axis must be one of %s, got %r' % (AXES, self.axis))
        if isinstance(self.k, bool) or not isinstance(self.k, int) or self.k < 1:
            raise InvalidArgument('symmetry rotation count k must be a positive integer, got %r' % (self.k,))


class PointSet:
    """
    An immutable (n, 3) array of finite coordinates in meters.
    """

    __slots__ = ('points',)

    def __init__(self, points=None):
        if points is None:
            array = np.zeros((0, 3), dtype=np.float64)
        else:
            array = np.array(points, dtype=np.float64)
            if array.size == 0:
                array = array.reshape(0, 3)
        if array.ndim != 2 or array.shape[1] != 3:
            raise InvalidArgument('points must have shape (n, 3), got %r' % (array.shape,))
        if not np.all(np.isfinite(array)):
            raise InvalidArgument('points must be finite')
        array.setflags(write=False)
        self.points = array

    @property
    def count(self):
        return self.points.shape[0]

    def __len__(self):
        return self.count

    def __repr__(self):
        return 'PointSet(count=%d)' % self.count

    def take(self, indices):
        return PointSet(self.points[np.asarray(indices, dtype=np.int64)])


def rotation_matrix(angles):
    alpha, beta, gamma = _vector(angles, 'angles')
    ca, sa = math.cos(alpha), math.sin(alpha)
    cb, sb = math.cos(beta), math.sin(beta)
    cg, sg = math.cos(gamma), math.sin(gamma)
    rz = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cg, -sg], [0.0, sg, cg]])
    return rz @ ry @ rx


def euler_from_matrix(rotation):
    """
    Inverse of rotation_matrix. In gimbal lock (|beta| = pi/2) roll is
    reported as 0 and the whole in-plane rotation goes to yaw.
    """
    r = np.asarray(rotation, dtype=np.float64)
    cos_beta = math.hypot(r[2, 1], r[2, 2])
    beta = math.atan2(-r[2, 0], cos_beta)
    if cos_beta > 1e-9:
        alpha = math.atan2(r[1, 0], r[0, 0])
        gamma = math.atan2(r[2, 1], r[2, 2])
    else:
        alpha = math.atan2(-r[0, 1], r[1, 1])
        gamma = 0.0
    return (alpha, beta, gamma)


def axis_rotation(axis, theta):
    c, s = math.cos(theta), math.sin(theta)
    if axis == 'x':
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    if axis == 'y':
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    if axis == 'z':
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    raise InvalidArgument('unknown axis %r' % (axis,))


def rotate_local(box, axis, theta):
    """Spin a box about one of its own local axes, keeping center and size."""
    if theta == 0:
        return box
    rotation = box.rotation @ axis_rotation(axis, theta)
    return Box9DoF(box.center, box.size, euler_from_matrix(rotation))


def scale_box(box, scale):
    return Box9DoF(box.center, tuple(s * scale for s in box.size), box.angles)


def box_volume(box):
    w, h, l = box.size
    return w * h * l


def box_corners(box):
    """The 8 corners as an (8, 3) array, in CORNER_SIGNS order."""
    local = CORNER_SIGNS * box.half_size
    return np.array(box.center) + local @ box.rotation.T


def contains_points(box, points):
    """Closed-box membership mask for an (n, 3) array or a PointSet."""
    if isinstance(points, PointSet):
        points = points.points
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    local = (points - np.array(box.center)) @ box.rotation
    return np.all(np.abs(local) <= box.half_size, axis=1)


def contains(box, point):
    return bool(contains_points(box, np.asarray(point, dtype=np.float64).reshape(1, 3))[0])


def crop_points(cloud, box, scale):
    """
    Points of `cloud` inside `box` enlarged by `scale` about its center.

    Returns the cropped PointSet and the indices of the kept points in the
    original cloud, in input order.
    """
    if not math.isfinite(scale) or scale < 1.0:
        raise InvalidArgument('crop scale must be >= 1, got %r' % (scale,))
    mask = contains_points(scale_box(box, scale), cloud.points)
    indices = np.flatnonzero(mask)
    return PointSet(cloud.points[indices]), indices


def _halfspaces(box):
    """The six (normal, offset) pairs with n.x <= d for points inside box."""
    rotation = box.rotation
    center = np.array(box.center)
    half = box.half_size
    planes = []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            normal = sign * rotation[:, axis]
            planes.append((normal, float(normal @ center) + half[axis]))
    return planes


def _plane_basis(normal):
    helper = np.eye(3)[int(np.argmin(np.abs(normal)))]
    u = np.cross(normal, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(normal, u)


def _unique_points(points):
    unique = []
    for point in points:
        if not any(np.all(np.abs(point - other) <= CLIP_EPSILON) for other in unique):
            unique.append(point)
    return unique


def _clip_polytope(faces, normal, offset):
    """
    Clip a convex polytope, given as a list of face polygons, against the
    half-space n.x <= d. The section through the plane becomes a new face.
    """
    clipped = []
    section = []
    face_on_plane = False
    for face in faces:
        distances = face @ normal - offset
        if np.all(distances > CLIP_EPSILON):
            continue
        if np.all(np.abs(distances) <= CLIP_EPSILON):
            face_on_plane = True
        kept = []
        count = len(face)
        for j in range(count):
            current, following = face[j], face[(j + 1) % count]
            d_current, d_following = distances[j], distances[(j + 1) % count]
            if d_current <= CLIP_EPSILON:
                kept.append(current)
                if d_current >= -CLIP_EPSILON:
                    section.append(current)
            if ((d_current < -CLIP_EPSILON and d_following > CLIP_EPSILON) or
                    (d_current > CLIP_EPSILON and d_following < -CLIP_EPSILON)):
                t = d_current / (d_current - d_following)
                crossing = current + t * (following - current)
                kept.append(crossing)
                section.append(crossing)
        if len(kept) >= 3:
            clipped.append(np.array(kept))

    if not face_on_plane:
        section = _unique_points(section)
        if len(section) >= 3:
            section = np.array(section)
            centroid = section.mean(axis=0)
            u, v = _plane_basis(normal)
            relative = section - centroid
            order = np.argsort(np.arctan2(relative @ v, relative @ u), kind='stable')
            clipped.append(section[order])
    return clipped


def _polytope_volume(faces):
    """Volume of a convex polytope by a tetrahedron fan from its centroid."""
    if len(faces) < 4:
        return 0.0
    centroid = np.concatenate(faces).mean(axis=0)
    volume = 0.0
    for face in faces:
        apex = face[0] - centroid
        b = face[1:-1] - centroid
        c = face[2:] - centroid
        volume += float(np.abs(np.cross(b, c) @ apex).sum())
    return volume / 6.0


def _spheres_disjoint(a, b):
    distance = np.linalg.norm(np.array(a.center) - np.array(b.center))
    return distance > (a.diagonal + b.diagonal) / 2.0


def intersection_volume(a, b):
    """Volume of a ∩ b in cubic meters, 0 below VOLUME_EPSILON."""
    if _spheres_disjoint(a, b):
        return 0.0
    corners = box_corners(a)
    faces = [corners[list(indices)] for indices in FACE_INDICES]
    for normal, offset in _halfspaces(b):
        faces = _clip_polytope(faces, normal, offset)
        if not faces:
            return 0.0
    volume = _polytope_volume(faces)
    if volume <= VOLUME_EPSILON:
        return 0.0
    return min(volume, box_volume(a), box_volume(b))


def iou3d(a, b):
    intersection = intersection_volume(a, b)
    union = box_volume(a) + box_volume(b) - intersection
    return min(max(intersection / union, 0.0), 1.0)


def iou3d_symmetric(pred, gt, sym):
    """
    3D IoU that forgives spins of a symmetric prediction: the prediction is
    rotated k times about its own symmetry axis and the best overlap wins.
    """
    if not sym.symmetric:
        return iou3d(pred, gt)
    if _spheres_disjoint(pred, gt):
        return 0.0
    best = 0.0
    for j in range(sym.k):
        best = max(best, iou3d(rotate_local(pred, sym.axis, 2.0 * math.pi * j / sym.k), gt))
    return best


def farthest_point_sampling(points, m, start=0, return_distances=False):
    """
    Greedy farthest point sampling.

    Index 0 of the result is `start`; every following index maximises the
    minimum Euclidean distance to the already selected points, ties going to
    the lowest index. With `return_distances` the selection-time minimum
    distance of every pick after the first is returned as well.
    """
    if isinstance(points, PointSet):
        points = points.points
    points = np.asarray(points, dtype=np.float64)
    count = points.shape[0]
    if not 1 <= m <= count:
        raise InvalidArgument('cannot sample %d of %d points' % (m, count))
    if not 0 <= start < count:
        raise InvalidArgument('start index %d outside 0..%d' % (start, count - 1))

    selected = np.empty(m, dtype=np.int64)
    selected[0] = start
    distances = []
    min_distance = np.sqrt(np.sum((points - points[start]) ** 2, axis=1))
    min_distance[start] = -np.inf
    for i in range(1, m):
        index = int(np.argmax(min_distance))
        selected[i] = index
        distances.append(float(min_distance[index]))
        min_distance = np.minimum(min_distance, np.sqrt(np.sum((points - points[index]) ** 2, axis=1)))
        min_distance[selected[:i + 1]] = -np.inf
    if return_distances:
        return selected, distances
    return selected
