import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import knn_linear_scan, voxel_filter_bruteforce
from skyshade.cloud import EmptyCloud, MapCloud, SpatialIndex, load_cloud, save_cloud, voxel_filter
from skyshade.plyio import CorruptHeader, TruncatedPayload, UnsupportedFormat, read_ply, write_ply


# --- loading ------------------------------------------------------------------


def test_ascii_ply_three_points(tmp_path):
    path = tmp_path / "a.ply"
    path.write_text("ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
                    "property float z\nend_header\n0 0 0\n1 2 3\n-1.5 0.25 9\n")
    cloud = load_cloud(path)
    assert len(cloud) == 3
    np.testing.assert_array_equal(cloud.points[2], [-1.5, 0.25, 9.0])


def test_xyz_csv_with_nan_row(tmp_path):
    path = tmp_path / "a.xyz"
    path.write_text("x,y,z\n0,0,0\nnan,1,1\n1,1,1\n")
    cloud = load_cloud(path)
    assert len(cloud) == 2 and cloud.dropped == 1


def test_xyz_whitespace_no_header(tmp_path):
    path = tmp_path / "a.txt"
    path.write_text("0 0 0\n1 2 3\ninf 0 0\n")
    cloud = load_cloud(path)
    assert len(cloud) == 2 and cloud.dropped == 1


def test_binary_count_mismatch(tmp_path):
    path = tmp_path / "b.ply"
    data = np.zeros(5, dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4")])
    write_ply(path, data)
    raw = path.read_bytes()
    path.write_bytes(raw.replace(b"element vertex 5", b"element vertex 6"))
    with pytest.raises(TruncatedPayload):
        load_cloud(path)


def test_ascii_count_mismatch(tmp_path):
    path = tmp_path / "a.ply"
    path.write_text("ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
                    "property float z\nend_header\n0 0 0\n")
    with pytest.raises(TruncatedPayload):
        load_cloud(path)


@pytest.mark.parametrize("header,error", [
    ("plx\nformat ascii 1.0\nend_header\n", CorruptHeader),
    ("ply\nformat binary_big_endian 1.0\nelement vertex 0\nproperty float x\nend_header\n", UnsupportedFormat),
    ("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n", CorruptHeader),
    ("ply\nformat ascii 1.0\nelement vertex 1\nproperty quux x\nend_header\n", CorruptHeader),
    ("ply\nformat ascii 1.0\nelement vertex 1\nproperty list uchar int idx\nend_header\n1 0\n", UnsupportedFormat),
])
def test_bad_headers(tmp_path, header, error):
    path = tmp_path / "bad.ply"
    path.write_text(header)
    with pytest.raises(error):
        read_ply(path)


def test_unknown_extension(tmp_path):
    path = tmp_path / "a.las"
    path.write_bytes(b"")
    with pytest.raises(UnsupportedFormat):
        load_cloud(path)


def test_face_element_after_vertex_is_ignored(tmp_path):
    path = tmp_path / "mesh.ply"
    path.write_text("ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\n"
                    "property double z\nelement face 1\nproperty list uchar int vertex_indices\n"
                    "end_header\n0 0 0\n1 1 1\n3 0 1 1\n")
    assert len(load_cloud(path)) == 2


@pytest.mark.parametrize("binary", [True, False])
@pytest.mark.parametrize("dtype", ["f4", "f8"])
def test_save_load_round_trip_bit_exact(tmp_path, rng, binary, dtype):
    pts = (rng.normal(size=(500, 3)) * 1e3).astype(dtype).astype(np.float64)
    cloud = MapCloud(pts, {"intensity": rng.integers(0, 255, 500).astype(np.uint8)}, coord_dtype=dtype)
    path = tmp_path / "c.ply"
    save_cloud(path, cloud, binary=binary)
    back = load_cloud(path)
    assert back.points.tobytes() == cloud.points.tobytes()
    np.testing.assert_array_equal(back.extra["intensity"], cloud.extra["intensity"])
    save_cloud(tmp_path / "d.ply", back, binary=binary)
    assert (tmp_path / "d.ply").read_bytes() == path.read_bytes()


def test_xyz_round_trip(tmp_path, rng):
    cloud = MapCloud(rng.normal(size=(50, 3)))
    save_cloud(tmp_path / "c.csv", cloud)
    assert load_cloud(tmp_path / "c.csv").points.tobytes() == cloud.points.tobytes()


# --- voxel filter ---------------------------------------------------------------


def test_copies_collapse_to_one():
    assert len(voxel_filter(MapCloud(np.tile([[0.31, 0.42, 0.53]], (100, 1))), 0.1)) == 1


def test_boundary_at_multiples_of_d_box():
    same = MapCloud(np.array([[0.02, 0.0, 0.0], [0.07, 0.0, 0.0]]))
    straddle = MapCloud(np.array([[0.075, 0.0, 0.0], [0.125, 0.0, 0.0]]))
    assert len(voxel_filter(same, 0.1)) == 1
    assert len(voxel_filter(straddle, 0.1)) == 2


def test_keeps_point_nearest_center():
    pts = np.array([[0.01, 0.01, 0.01], [0.05, 0.05, 0.06], [0.09, 0.0, 0.0]])
    out = voxel_filter(MapCloud(pts), 0.1)
    np.testing.assert_array_equal(out.points, pts[[1]])


def test_cube_matches_bruteforce(rng):
    pts = rng.uniform(0, 1, (1000, 3))
    out = voxel_filter(MapCloud(pts), 0.1)
    keep = voxel_filter_bruteforce(pts, 0.1)
    occupied = len({tuple(np.floor(p / 0.1).astype(int)) for p in pts})
    assert occupied <= len(out) <= 1000
    assert len(out) == occupied
    assert sorted(map(tuple, out.points)) == sorted(map(tuple, pts[keep]))


def test_voxel_filter_order_invariant_and_idempotent(rng):
    pts = rng.normal(size=(3000, 3))
    a = voxel_filter(MapCloud(pts), 0.2)
    b = voxel_filter(MapCloud(pts[rng.permutation(len(pts))]), 0.2)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(voxel_filter(a, 0.2).points, a.points)


def test_voxel_filter_rejects_nonpositive():
    with pytest.raises(ValueError):
        voxel_filter(MapCloud(np.zeros((1, 3))), 0.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 60), st.just(3)),
              elements=st.floats(-3, 3, allow_nan=False)),
       st.sampled_from([0.05, 0.1, 0.25, 1.0]))
def test_voxel_filter_property(pts, d_box):
    out = voxel_filter(MapCloud(pts), d_box)
    keys = np.floor(out.points / d_box)
    assert len(np.unique(keys, axis=0)) == len(out)
    assert sorted(map(tuple, out.points)) == sorted(map(tuple, pts[voxel_filter_bruteforce(pts, d_box)]))
    np.testing.assert_array_equal(voxel_filter(out, d_box).points, out.points)


# --- k-NN --------------------------------------------------------------------------


def test_query_point_is_its_own_nearest(rng):
    pts = rng.normal(size=(100, 3))
    idx, dist = SpatialIndex(pts).knn(pts[17], 1)
    assert idx[0] == 17 and dist[0] == 0.0


def test_top3_matches_linear_scan(rng):
    pts = rng.normal(size=(10, 3))
    q = rng.normal(size=3)
    idx, dist = SpatialIndex(pts).knn(q, 3)
    o_idx, o_dist = knn_linear_scan(pts, q, 3)
    np.testing.assert_array_equal(idx, o_idx)
    np.testing.assert_allclose(dist, o_dist, rtol=0, atol=1e-15)


def test_k_larger_than_cloud(rng):
    idx, dist = SpatialIndex(rng.normal(size=(20, 3))).knn(np.zeros(3), 50)
    assert len(idx) == 20 and np.all(np.diff(dist) >= 0)


def test_empty_index():
    with pytest.raises(EmptyCloud):
        SpatialIndex(np.zeros((0, 3))).knn(np.zeros(3), 1)


def test_ties_broken_by_insertion_order():
    # eight cube corners all equidistant from the center
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    pts = np.vstack([corners[::-1], corners])
    idx, _ = SpatialIndex(pts).knn([0.5, 0.5, 0.5], 5)
    np.testing.assert_array_equal(idx, [0, 1, 2, 3, 4])


def test_lattice_ties_match_linear_scan():
    g = np.arange(6.0)
    pts = np.array(np.meshgrid(g, g, g, indexing="ij")).reshape(3, -1).T
    index = SpatialIndex(pts)
    for q in pts[::7]:
        for k in (1, 6, 7, 19, 27):
            idx, _ = index.knn(q, k)
            np.testing.assert_array_equal(idx, knn_linear_scan(pts, q, k)[0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 40))
def test_knn_property(seed, k):
    r = np.random.default_rng(seed)
    pts = np.round(r.normal(size=(int(r.integers(1, 80)), 3)), 1)  # rounding forces ties
    q = np.round(r.normal(size=3), 1)
    idx, dist = SpatialIndex(pts).knn(q, k)
    o_idx, o_dist = knn_linear_scan(pts, q, k)
    np.testing.assert_array_equal(idx, o_idx)
    np.testing.assert_allclose(dist, o_dist, rtol=0, atol=1e-12)
