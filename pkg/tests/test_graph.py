import json

import numpy as np
import pytest

from coroseg.centerline import Centerline, SubjectRecord, prepare_subject
from coroseg.graph import (
    EMBED_DIM,
    GraphBuildError,
    build_reference_frame,
    build_segment_graph,
    line_graph_adjacency,
    node_embedding,
    segment_graph_to_json,
    spherical_encode,
    split_into_segments,
)
from conftest import (
    junction_oracle,
    line_graph_oracle,
    random_rigid_motion,
    random_tree_subject,
    segment_count_oracle,
    straight_line,
    transform_subject,
    two_branch_subject,
)


def test_split_two_branch_subject():
    skel = split_into_segments(two_branch_subject())
    ids = [s.segment_id for s in skel.segments]
    # branch A is cut once where B attaches, B and R stay whole
    assert ids == ["A#0", "A#1", "B#0", "R#0"]
    assert len(skel.junctions) == 6
    a0, a1, b0, _ = skel.segments
    assert a0.end_junction == a1.start_junction == b0.start_junction
    assert np.array_equal(np.vstack([a0.points, a1.points[1:]]), two_branch_subject().centerlines[0].points)


def test_split_counts_vs_oracle_random_trees(rng):
    for _ in range(100):
        subject = random_tree_subject(rng, max_branches=12)
        skel = split_into_segments(subject)
        assert len(skel.segments) == segment_count_oracle(subject)
        expected = {tuple(np.asarray(p)) for p in junction_oracle(subject)}
        got = {tuple(p) for p in skel.junctions.values()}
        assert got == expected


def test_split_rejects_dangling_branch():
    subject = SubjectRecord(
        "s",
        0.5,
        [
            Centerline("a", "left", straight_line((0, 0, 0), (0, 0, 1), 4)),
            Centerline("floater", "left", straight_line((99, 99, 0), (1, 0, 0), 4)),
            Centerline("r", "right", straight_line((50, 0, 0), (0, 1, 0), 4)),
        ],
    )
    with pytest.raises(GraphBuildError, match="dangling"):
        split_into_segments(subject)


def test_line_graph_vs_pairwise_oracle(rng):
    for _ in range(50):
        skel = split_into_segments(random_tree_subject(rng, max_branches=14))
        adj = line_graph_adjacency(skel)
        assert np.array_equal(adj, line_graph_oracle(skel))
        assert np.array_equal(adj, adj.T)
        assert not np.any(np.diag(adj))


def test_line_graph_edge_count_by_junction_degree(rng):
    # independent counting oracle: a junction touched by m segments
    # contributes m*(m-1)/2 edges; in a tree no pair shares two junctions
    for _ in range(50):
        skel = split_into_segments(random_tree_subject(rng, max_branches=14))
        incidence = {}
        for s in skel.segments:
            for j in (s.start_junction, s.end_junction):
                incidence[j] = incidence.get(j, 0) + 1
        expected = sum(m * (m - 1) // 2 for m in incidence.values())
        assert line_graph_adjacency(skel).sum() == 2 * expected


def test_reference_frame_hand_case():
    subject = two_branch_subject()
    frame = build_reference_frame(subject)
    assert np.array_equal(frame.origin, [0, 0, 0])
    # z from the first two points of branch A
    assert np.allclose(frame.basis[2], [0, 0, 1])
    # control = last point of R at (50, 15, 0); projected out of z it points +x-ish
    control = subject.centerlines[2].points[-1]
    w = control - frame.origin
    y = w - (w @ frame.basis[2]) * frame.basis[2]
    assert np.allclose(frame.basis[1], y / np.linalg.norm(y))
    assert np.allclose(frame.basis[0], np.cross(frame.basis[1], frame.basis[2]))


def test_reference_frame_orthonormal_right_handed(rng):
    for _ in range(30):
        frame = build_reference_frame(random_tree_subject(rng))
        b = frame.basis
        assert np.allclose(b @ b.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(b) > 0.999999
        assert frame.scale_mm > 0


def test_reference_frame_degenerate_control():
    # control point along the z-axis leaves the y-axis undefined
    subject = SubjectRecord(
        "s",
        0.5,
        [
            Centerline("a", "left", straight_line((0, 0, 0), (0, 0, 1), 4)),
            Centerline("r", "right", [[0, 0, 40], [1, 0, 41], [0, 0, 90]]),
        ],
    )
    with pytest.raises(GraphBuildError, match="degenerate"):
        build_reference_frame(subject)


def test_spherical_encode_hand_values():
    assert np.allclose(spherical_encode(np.array([1.0, 0, 0])), [1, 1, 0, 0, 1])
    assert np.allclose(spherical_encode(np.array([0, 0, 2.0])), [2, 1, 0, 1, 0])
    assert np.allclose(spherical_encode(np.array([0, 0, -2.0])), [2, 1, 0, -1, 0])
    assert np.array_equal(spherical_encode(np.zeros(3)), [0, 1, 0, 1, 0])


def test_spherical_encode_reconstructs_vector(rng):
    for _ in range(200):
        q = rng.normal(size=3) * rng.uniform(0.01, 10)
        r, ca, sa, ce, se = spherical_encode(q)
        assert abs(ca * ca + sa * sa - 1) < 1e-12
        assert abs(ce * ce + se * se - 1) < 1e-12
        back = r * np.array([se * ca, se * sa, ce])
        assert np.allclose(back, q, atol=1e-12)


def test_node_embedding_layout():
    subject = two_branch_subject()
    frame = build_reference_frame(subject)
    seg = split_into_segments(subject).segments[2]  # B#0, 4 points
    emb = node_embedding(seg, frame)
    assert emb.shape == (EMBED_DIM,)
    pts = seg.points
    mid = pts[(len(pts) - 1) // 2]
    assert np.array_equal(emb[0:3], frame.to_local(pts[0]))
    assert np.array_equal(emb[3:8], spherical_encode(frame.to_local(pts[0])))
    assert np.array_equal(emb[8:11], frame.to_local(mid))
    assert np.array_equal(emb[16:19], frame.to_local(pts[-1]))
    assert np.array_equal(emb[24:27], frame.vector_to_local(pts[1] - pts[0]))
    assert np.array_equal(emb[32:35], frame.vector_to_local(mid - pts[0]))
    assert np.array_equal(emb[40:43], frame.vector_to_local(pts[-1] - mid))


def test_embeddings_invariant_to_rigid_motion(rng):
    for _ in range(20):
        subject = random_tree_subject(rng, max_branches=10)
        base = build_segment_graph(subject)
        rot, trans = random_rigid_motion(rng)
        moved = build_segment_graph(transform_subject(subject, rot, trans))
        assert moved.node_ids == base.node_ids
        assert np.max(np.abs(moved.features - base.features)) < 1e-9
        assert np.array_equal(moved.adjacency, base.adjacency)


def test_embeddings_invariant_to_uniform_rescale(rng):
    from dataclasses import replace

    subject = random_tree_subject(rng, max_branches=10)
    base = build_segment_graph(subject)
    scaled = replace(
        subject,
        centerlines=tuple(
            replace(cl, points=cl.points * 3.0) for cl in subject.centerlines
        ),
    )
    out = build_segment_graph(scaled)
    assert np.max(np.abs(out.features - base.features)) < 1e-9


def test_build_segment_graph_labels_inherited():
    sg = build_segment_graph(two_branch_subject())
    assert sg.labels == ("LM", "LM", "LAD", "RCA")
    assert list(sg.label_indices(["LM", "LAD", "RCA"])) == [0, 0, 1, 2]
    assert list(sg.label_indices(["LAD"])) == [-1, -1, 0, -1]


def test_full_pipeline_from_raw_subject(rng):
    # raw (unresampled, jittered starts) subject through prepare + build
    subject = random_tree_subject(rng, max_branches=8)
    sg = build_segment_graph(prepare_subject(subject))
    assert sg.features.shape == (sg.n_nodes, EMBED_DIM)
    assert np.all(np.isfinite(sg.features))


def test_segment_graph_json_schema():
    sg = build_segment_graph(two_branch_subject())
    doc = json.loads(segment_graph_to_json(sg))
    assert {n["id"] for n in doc["nodes"]} == set(sg.node_ids)
    assert all(len(n["features"]) == EMBED_DIM for n in doc["nodes"])
    assert doc["nodes"][0]["label"] == "LM"
    rebuilt = np.zeros_like(sg.adjacency)
    for i, j in doc["edges"]:
        rebuilt[i, j] = rebuilt[j, i] = 1.0
    assert np.array_equal(rebuilt, sg.adjacency)
