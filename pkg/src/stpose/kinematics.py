"""A 24-joint kinematic body model and its forward kinematics.

The skeleton is a rooted tree over 24 joints; each joint k carries a rest
position j_k (meters) and a local rotation R_k. World transforms compose
down the tree,

    G_k = G_parent(k) [[R_k, j_k - j_parent(k)], [0, 1]],

and the posed joint position is the translation column of G_k.

The implementation tracks the deviation c_k = p_k - j_k from the rest pose
(c_root = 0, c_k = c_parent + (Rw_parent - I)(j_k - j_parent)), which is
algebraically identical but keeps the identity pose exact: every c_k is
computed as a product with an exactly-zero matrix, so posed joints equal
rest joints bit for bit, for any body shape.

Rest positions live on a 1/128-meter grid so template coordinates (and the
bone offsets derived from them) are exact binary fractions.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

NUM_JOINTS = 24
SHAPE_DIM = 10

SMPL_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8,
                9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)

# per-joint offset from the parent, in units of 1/128 m (root offset is
# absolute); y is up, +x is the body's left, +z is forward
_REST_OFFSETS_128 = (
    (0, 0, 0),       # 0  pelvis
    (9, -11, 1),     # 1  left hip
    (-9, -11, 1),    # 2  right hip
    (0, 16, -2),     # 3  lower spine
    (4, -49, 0),     # 4  left knee
    (-4, -49, 0),    # 5  right knee
    (0, 18, 0),      # 6  mid spine
    (-1, -52, -2),   # 7  left ankle
    (1, -52, -2),    # 8  right ankle
    (0, 7, 1),       # 9  upper spine
    (2, -8, 15),     # 10 left foot
    (-2, -8, 15),    # 11 right foot
    (0, 28, -1),     # 12 neck
    (9, 14, -1),     # 13 left collar
    (-9, 14, -1),    # 14 right collar
    (0, 11, 1),      # 15 head
    (13, 1, -1),     # 16 left shoulder
    (-13, 1, -1),    # 17 right shoulder
    (33, -1, -1),    # 18 left elbow
    (-33, -1, -1),   # 19 right elbow
    (32, 1, 0),      # 20 left wrist
    (-32, 1, 0),     # 21 right wrist
    (11, 0, 0),      # 22 left hand
    (-11, 0, 0),     # 23 right hand
)

_BASIS_SEED = 7
_BASIS_SCALE = 0.05   # largest per-joint displacement at |beta| = 1, meters


def _default_template() -> np.ndarray:
    pos = np.zeros((NUM_JOINTS, 3))
    for k, off in enumerate(_REST_OFFSETS_128):
        base = pos[SMPL_PARENTS[k]] if SMPL_PARENTS[k] >= 0 else 0.0
        pos[k] = base + np.asarray(off, dtype=np.float64) / 128.0
    return pos


def _default_shape_basis() -> np.ndarray:
    """Fixed random (SHAPE_DIM, 72) blendshape basis, scaled so the largest
    per-joint displacement under a unit-norm shape vector is _BASIS_SCALE."""
    rng = np.random.default_rng(_BASIS_SEED)
    basis = rng.standard_normal((SHAPE_DIM, NUM_JOINTS * 3))
    worst = max(np.linalg.svd(basis.reshape(SHAPE_DIM, NUM_JOINTS, 3)[:, k, :],
                              compute_uv=False)[0]
                for k in range(NUM_JOINTS))
    return basis * (_BASIS_SCALE / worst)


class KinematicTree:
    """Rooted tree over 24 joints with rest geometry and a shape basis."""

    def __init__(self, parents, template: np.ndarray, shape_basis: np.ndarray):
        parents = tuple(int(p) for p in parents)
        if len(parents) != NUM_JOINTS:
            raise ValueError(f"expected {NUM_JOINTS} joints, got {len(parents)}")
        roots = [k for k, p in enumerate(parents) if p == -1]
        if len(roots) != 1:
            raise ValueError(f"expected exactly one root, got {roots}")
        for k, p in enumerate(parents):
            if p != -1 and not (0 <= p < NUM_JOINTS):
                raise ValueError(f"joint {k} has out-of-range parent {p}")
            if p == k:
                raise ValueError(f"joint {k} is its own parent")
        self.parents = parents
        self.root = roots[0]

        children: list[list[int]] = [[] for _ in range(NUM_JOINTS)]
        for k, p in enumerate(parents):
            if p != -1:
                children[p].append(k)
        order, queue = [], [self.root]
        while queue:
            k = queue.pop(0)
            order.append(k)
            queue.extend(children[k])
        if len(order) != NUM_JOINTS:
            raise ValueError("parent table contains a cycle or unreachable joints")
        self.topo_order = tuple(order)
        self.children = tuple(tuple(c) for c in children)

        template = np.array(template, dtype=np.float64)
        if template.shape != (NUM_JOINTS, 3) or not np.isfinite(template).all():
            raise ValueError(f"template must be finite ({NUM_JOINTS}, 3)")
        shape_basis = np.array(shape_basis, dtype=np.float64)
        if shape_basis.shape != (SHAPE_DIM, NUM_JOINTS * 3):
            raise ValueError(
                f"shape basis must be ({SHAPE_DIM}, {NUM_JOINTS * 3}), got {shape_basis.shape}")
        template.setflags(write=False)
        shape_basis.setflags(write=False)
        self.template = template
        self.shape_basis = shape_basis

    def ancestors(self, k: int) -> list[int]:
        """Ancestors of joint k, root first; k itself is excluded."""
        if not 0 <= k < NUM_JOINTS:
            raise IndexError(f"joint index {k} out of range")
        path = []
        p = self.parents[k]
        while p != -1:
            path.append(p)
            p = self.parents[p]
        path.reverse()
        return path

    def depth(self, k: int) -> int:
        return len(self.ancestors(k))


def smpl_tree() -> KinematicTree:
    return KinematicTree(SMPL_PARENTS, _default_template(), _default_shape_basis())


def random_tree(seed: int) -> KinematicTree:
    """Uniformly random labeled spanning tree (via a Pruefer sequence),
    rooted at joint 0, sharing the default rest geometry."""
    rng = np.random.default_rng(seed)
    seq = rng.integers(0, NUM_JOINTS, size=NUM_JOINTS - 2)
    degree = np.ones(NUM_JOINTS, dtype=np.int64)
    for x in seq:
        degree[x] += 1
    import heapq
    leaves = [k for k in range(NUM_JOINTS) if degree[k] == 1]
    heapq.heapify(leaves)
    edges = []
    for x in seq:
        u = heapq.heappop(leaves)
        edges.append((u, int(x)))
        degree[u] -= 1
        degree[x] -= 1
        if degree[x] == 1:
            heapq.heappush(leaves, int(x))
    u, v = (k for k in range(NUM_JOINTS) if degree[k] == 1)
    edges.append((u, v))

    adjacency: list[list[int]] = [[] for _ in range(NUM_JOINTS)]
    for a, b in edges:
        adjacency[a].append(b)
        adjacency[b].append(a)
    parents = [-2] * NUM_JOINTS
    parents[0] = -1
    queue = [0]
    while queue:
        k = queue.pop(0)
        for n in adjacency[k]:
            if parents[n] == -2:
                parents[n] = k
                queue.append(n)
    return KinematicTree(parents, _default_template(), _default_shape_basis())


def reverse_tree(tree: KinematicTree) -> KinematicTree:
    """Re-root at the deepest leaf (ties broken toward the lowest index),
    flipping the parent links along the path to the old root."""
    depths = [tree.depth(k) for k in range(NUM_JOINTS)]
    new_root = int(np.argmax(depths))   # argmax takes the first maximum
    parents = list(tree.parents)
    path = [new_root] + tree.ancestors(new_root)[::-1]   # new root up to old root
    parents[new_root] = -1
    for above, below in zip(path[1:], path[:-1]):
        parents[above] = below
    return KinematicTree(parents, tree.template, tree.shape_basis)


# -- tree text format --------------------------------------------------------


def tree_to_text(tree: KinematicTree) -> str:
    lines = []
    for k in range(NUM_JOINTS):
        x, y, z = (float(v) for v in tree.template[k])
        lines.append(f"{k} {tree.parents[k]} {x!r} {y!r} {z!r}")
    return "\n".join(lines) + "\n"


def tree_from_text(text: str) -> KinematicTree:
    """Parse 24 lines of "index parent x y z"; indices may appear in any
    order but each of 0..23 exactly once. The default shape basis applies."""
    rows = [ln for ln in (raw.strip() for raw in text.splitlines()) if ln]
    if len(rows) != NUM_JOINTS:
        raise ValueError(f"expected {NUM_JOINTS} tree lines, got {len(rows)}")
    parents = [None] * NUM_JOINTS
    template = np.zeros((NUM_JOINTS, 3))
    for ln in rows:
        fields = ln.split()
        if len(fields) != 5:
            raise ValueError(f"malformed tree line (want 5 fields): {ln!r}")
        try:
            k, p = int(fields[0]), int(fields[1])
            coords = [float(f) for f in fields[2:]]
        except ValueError as exc:
            raise ValueError(f"malformed tree line: {ln!r}") from exc
        if not 0 <= k < NUM_JOINTS:
            raise ValueError(f"joint index {k} out of range")
        if parents[k] is not None:
            raise ValueError(f"joint {k} defined twice")
        if not all(np.isfinite(coords)):
            raise ValueError(f"non-finite rest position for joint {k}")
        parents[k] = p
        template[k] = coords
    return KinematicTree(parents, template, _default_shape_basis())


def save_tree(tree: KinematicTree, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(tree_to_text(tree))


def load_tree(path) -> KinematicTree:
    with open(path, "r", encoding="utf-8") as fh:
        return tree_from_text(fh.read())


# -- rest pose and forward kinematics ----------------------------------------


def rest_joints(tree: KinematicTree, beta: Tensor) -> Tensor:
    """Rest positions for shape beta: template + reshape(beta @ basis).

    Accepts beta shaped (10,) for a single body or (T, 10) per frame, and
    returns (24, 3) or (T, 24, 3) to match.
    """
    basis = Tensor(np.asarray(tree.shape_basis))
    if beta.shape == (SHAPE_DIM,):
        disp = T.reshape(T.matmul(T.reshape(beta, (1, SHAPE_DIM)), basis),
                         (NUM_JOINTS, 3))
        return T.add(Tensor(np.asarray(tree.template)), disp)
    if beta.ndim == 2 and beta.shape[1] == SHAPE_DIM:
        frames = beta.shape[0]
        disp = T.reshape(T.matmul(beta, basis), (frames, NUM_JOINTS, 3))
        base = T.expand(T.reshape(Tensor(np.asarray(tree.template)),
                                  (1, NUM_JOINTS, 3)), disp.shape)
        return T.add(base, disp)
    raise ShapeError(f"beta must be ({SHAPE_DIM},) or (T, {SHAPE_DIM}), got {beta.shape}")


def forward_kinematics(tree: KinematicTree, rot: Tensor, beta: Tensor,
                       want_transforms: bool = True):
    """Pose the body: rot is (T, 24, 3, 3) local rotations, beta (T, 10).

    Returns (joints, transforms): joints (T, 24, 3) and the stacked world
    transforms (T, 24, 4, 4), or None when want_transforms is False.
    """
    if rot.ndim != 4 or rot.shape[1:] != (NUM_JOINTS, 3, 3):
        raise ShapeError(f"rotations must be (T, {NUM_JOINTS}, 3, 3), got {rot.shape}")
    frames = rot.shape[0]
    if beta.shape != (frames, SHAPE_DIM):
        raise ShapeError(f"beta must be ({frames}, {SHAPE_DIM}), got {beta.shape}")

    rest = rest_joints(tree, beta)
    eye = T.expand(Tensor(np.eye(3)), (frames, 3, 3))

    j: dict[int, Tensor] = {}
    world: dict[int, Tensor] = {}
    dev: dict[int, Tensor] = {}
    pos: dict[int, Tensor] = {}
    for k in tree.topo_order:
        j[k] = T.reshape(T.slice_axis(rest, 1, k, k + 1), (frames, 3, 1))
        r_k = T.reshape(T.slice_axis(rot, 1, k, k + 1), (frames, 3, 3))
        if k == tree.root:
            world[k] = r_k
            dev[k] = Tensor(np.zeros((frames, 3, 1)))
        else:
            p = tree.parents[k]
            bone = T.sub(j[k], j[p])
            world[k] = T.matmul(world[p], r_k)
            dev[k] = T.add(dev[p], T.matmul(T.sub(world[p], eye), bone))
        pos[k] = T.add(j[k], dev[k])

    joints = T.concat([T.reshape(pos[k], (frames, 1, 3)) for k in range(NUM_JOINTS)],
                      axis=1)
    if not want_transforms:
        return joints, None

    bottom = T.expand(Tensor(np.array([[[0.0, 0.0, 0.0, 1.0]]])), (frames, 1, 4))
    mats = []
    for k in range(NUM_JOINTS):
        top = T.concat([world[k], pos[k]], axis=-1)
        g = T.concat([top, bottom], axis=-2)
        mats.append(T.reshape(g, (frames, 1, 4, 4)))
    return joints, T.concat(mats, axis=1)
