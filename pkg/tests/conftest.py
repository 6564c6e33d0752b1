"""Shared fixtures: hand-built subjects, random trees, brute-force oracles."""

from __future__ import annotations

import numpy as np
import pytest

from coroseg.centerline import LEFT, RIGHT, Centerline, SubjectRecord
from coroseg.graph import SkeletonGraph


def straight_line(start, direction, n_points, step=5.0) -> np.ndarray:
    start = np.asarray(start, dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    return np.array([start + i * step * d for i in range(n_points)])


def random_polyline(rng: np.random.Generator, start, n_points, step=5.0) -> np.ndarray:
    """Smooth-ish random walk with fixed step length."""
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    pts = [np.asarray(start, dtype=float)]
    for _ in range(n_points - 1):
        d = d + 0.4 * rng.normal(size=3)
        d /= np.linalg.norm(d)
        pts.append(pts[-1] + step * d)
    return np.array(pts)


def random_tree_subject(rng: np.random.Generator, max_branches: int = 20) -> SubjectRecord:
    """Random two-sided tree with child starts placed exactly on parent vertices."""
    branches: list[Centerline] = []
    for side, origin in ((LEFT, (0.0, 0.0, 0.0)), (RIGHT, (60.0, 0.0, 0.0))):
        root = Centerline(
            f"{side}-root", side, random_polyline(rng, origin, rng.integers(5, 12))
        )
        side_branches = [root]
        n_children = rng.integers(0, max(1, (max_branches - 2) // 2) + 1)
        for c in range(n_children):
            parent = side_branches[rng.integers(0, len(side_branches))]
            k = int(rng.integers(1, len(parent.points) - 1))
            pts = random_polyline(rng, parent.points[k], rng.integers(3, 9))
            pts[0] = parent.points[k]  # bit-exact attachment
            side_branches.append(Centerline(f"{side}-c{c}", side, pts))
        branches.extend(side_branches)
    return SubjectRecord("random-tree", 0.5, branches)


def segment_count_oracle(subject: SubjectRecord) -> int:
    """Per branch: 1 + number of distinct interior attachment points."""
    total = 0
    for cl in subject.centerlines:
        interior = {tuple(p) for p in cl.points[1:-1]}
        starts = {
            tuple(other.points[0])
            for other in subject.centerlines
            if other.branch_id != cl.branch_id
        }
        total += 1 + len(interior & starts)
    return total


def junction_oracle(subject: SubjectRecord) -> set[tuple]:
    """Expected junction coordinates: endpoints plus attachment points."""
    out = set()
    for cl in subject.centerlines:
        out.add(tuple(cl.points[0]))
        out.add(tuple(cl.points[-1]))
    return out


def line_graph_oracle(skel: SkeletonGraph) -> np.ndarray:
    """O(N^2) adjacency by junction-set intersection."""
    segs = skel.segments
    n = len(segs)
    adj = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j and {segs[i].start_junction, segs[i].end_junction} & {
                segs[j].start_junction,
                segs[j].end_junction,
            }:
                adj[i, j] = 1.0
    return adj


def chain_subject() -> SubjectRecord:
    """Two chains whose line graph has no symmetric node pairs.

    Every junction has exactly one segment with a bare far end, so no two
    nodes share a closed neighborhood and all model variants can separate
    every node.
    """
    lm = straight_line((0, 0, 0), (0, 0, 1), 4)
    lad = straight_line(lm[-1], (0.2, 0.9, 0.3), 8)
    s = straight_line(lad[-1], (-0.6, 0.4, -0.5), 5)
    rca = straight_line((35, -10, 3), (0.4, -0.6, 0.6), 9)
    am = straight_line(rca[-1], (0.8, -0.4, 0.3), 6)
    rpda = straight_line(am[-1], (-0.3, -0.4, -0.8), 5)
    return SubjectRecord(
        "chain",
        0.5,
        [
            Centerline("LM", LEFT, lm, "LM"),
            Centerline("LAD", LEFT, lad, "LAD"),
            Centerline("S", LEFT, s, "S"),
            Centerline("RCA", RIGHT, rca, "RCA"),
            Centerline("AM", RIGHT, am, "AM"),
            Centerline("R-PDA", RIGHT, rpda, "R-PDA"),
        ],
    )


def two_branch_subject() -> SubjectRecord:
    """Branch A with child B at A's interior plus a lone right branch."""
    a = straight_line((0, 0, 0), (0, 0, 1), 5)
    b = straight_line(a[2], (1, 0, 0), 4)
    b[0] = a[2]
    r = straight_line((50, 0, 0), (0, 1, 0), 4)
    return SubjectRecord(
        "two-branch",
        0.5,
        [
            Centerline("A", LEFT, a, "LM"),
            Centerline("B", LEFT, b, "LAD"),
            Centerline("R", RIGHT, r, "RCA"),
        ],
    )


def random_rigid_motion(rng: np.random.Generator):
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    rot = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
    trans = rng.uniform(-50, 50, 3)
    return rot, trans


def transform_subject(subject: SubjectRecord, rot: np.ndarray, trans) -> SubjectRecord:
    from dataclasses import replace

    return replace(
        subject,
        centerlines=tuple(
            replace(cl, points=cl.points @ rot.T + np.asarray(trans))
            for cl in subject.centerlines
        ),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
