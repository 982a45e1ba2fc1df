"""Geometry kernels against brute-force oracles, plus backend agreement.

The numpy and numba implementations must be bit-identical; correctness is
established against independent pure-python reimplementations.
"""

import os
import subprocess
import sys

import numpy as np
import pytest

from psformer._kernels import (ACTIVE_BACKEND, HAVE_NUMBA, _IDW_EPS,
                               ball_query, ball_query_numpy, fps_indices,
                               fps_numpy, three_nn, three_nn_numpy)

if HAVE_NUMBA:
    from psformer._kernels import (ball_query_numba, fps_numba,
                                   three_nn_numba)


def _fps_reference(coords, m):
    """Greedy max-min sampling, pure python: start at the point farthest from
    the centroid (computed over lexicographically sorted points), break ties
    lexicographically then by index."""
    pts = [tuple(p) for p in coords]
    order = sorted(range(len(pts)), key=lambda i: pts[i])
    centroid = np.zeros(3)
    for i in order:
        centroid += coords[i]
    centroid /= len(pts)

    def d2(p, q):
        dx, dy, dz = p[0] - q[0], p[1] - q[1], p[2] - q[2]
        return dx * dx + dy * dy + dz * dz

    dist = [d2(p, centroid) for p in coords]
    chosen = []
    for _ in range(m):
        best = max((dist[i], ) for i in range(len(pts)) if i not in set(chosen))[0]
        cands = [i for i in range(len(pts))
                 if i not in set(chosen) and dist[i] == best]
        pick = min(cands, key=lambda i: (pts[i], i))
        chosen.append(pick)
        dist = [min(dist[i], d2(coords[i], coords[pick])) for i in range(len(pts))]
    return np.array(chosen)


def _ball_reference(coords, centroid_idx, radius, k):
    r2 = radius * radius
    idx = np.zeros((len(centroid_idx), k), dtype=np.int64)
    counts = np.zeros(len(centroid_idx), dtype=np.int64)
    for row, c in enumerate(centroid_idx):
        cands = []
        for j in range(len(coords)):
            dx, dy, dz = coords[c] - coords[j]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 <= r2:
                cands.append((d2, j))
        cands.sort()
        take = cands[:k]
        counts[row] = len(take)
        for t in range(k):
            idx[row, t] = take[t][1] if t < len(take) else take[0][1]
    return idx, counts


def _three_nn_reference(dst, src):
    kk = min(3, len(src))
    idx = np.zeros((len(dst), kk), dtype=np.int64)
    w = np.zeros((len(dst), kk))
    for i, p in enumerate(dst):
        cands = sorted((float(((p - s) ** 2).sum()), j) for j, s in enumerate(src))
        near = cands[:kk]
        idx[i] = [j for _, j in near]
        if near[0][0] < 1e-12:
            w[i, 0] = 1.0
        else:
            raw = [1.0 / (d2 + _IDW_EPS) for d2, _ in near]
            w[i] = np.array(raw) / sum(raw)
    return idx, w


def test_fps_matches_reference():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(4, 40))
        m = int(rng.integers(1, n + 1))
        coords = rng.uniform(-1, 1, (n, 3))
        got = fps_indices(coords, m)
        want = _fps_reference(coords, m)
        assert np.array_equal(got, want), (got, want)


def test_fps_full_sample_is_permutation():
    rng = np.random.default_rng(1)
    coords = rng.uniform(0, 1, (23, 3))
    got = fps_indices(coords, 23)
    assert sorted(got.tolist()) == list(range(23))


def test_fps_set_level_permutation_invariance():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = int(rng.integers(8, 50))
        m = int(rng.integers(1, n // 2 + 1))
        coords = rng.uniform(-2, 2, (n, 3))
        perm = rng.permutation(n)
        base = coords[fps_indices(coords, m)]
        permuted = coords[perm][fps_indices(coords[perm], m)]
        a = sorted(map(tuple, base))
        b = sorted(map(tuple, permuted))
        assert a == b


def test_fps_spread_beats_random():
    # the greedy choice maximizes min pairwise distance vs a random subset
    rng = np.random.default_rng(3)
    coords = rng.uniform(0, 1, (200, 3))
    sel = coords[fps_indices(coords, 20)]

    def min_pair(pts):
        d = ((pts[:, None] - pts[None, :]) ** 2).sum(-1)
        return np.sqrt(d[np.triu_indices(len(pts), 1)].min())

    rand = coords[rng.choice(200, 20, replace=False)]
    assert min_pair(sel) > min_pair(rand)


def test_ball_query_matches_reference():
    rng = np.random.default_rng(4)
    for _ in range(50):
        n = int(rng.integers(5, 40))
        coords = rng.uniform(-1, 1, (n, 3))
        m = int(rng.integers(1, n + 1))
        centroid_idx = fps_indices(coords, m)
        radius = float(rng.uniform(0.2, 1.5))
        k = int(rng.integers(1, 9))
        gi, gc = ball_query(coords, centroid_idx, radius, k)
        wi, wc = _ball_reference(coords, centroid_idx, radius, k)
        assert np.array_equal(gi, wi)
        assert np.array_equal(gc, wc)


def test_ball_query_centroid_always_first():
    # the centroid is its own nearest in-radius point (distance 0)
    rng = np.random.default_rng(5)
    coords = rng.uniform(0, 1, (30, 3))
    centroid_idx = np.arange(30)
    idx, counts = ball_query(coords, centroid_idx, 0.3, 4)
    assert np.array_equal(idx[:, 0], centroid_idx)
    assert np.all(counts >= 1)


def test_ball_query_respects_radius_and_padding():
    rng = np.random.default_rng(6)
    coords = rng.uniform(0, 1, (40, 3))
    centroid_idx = fps_indices(coords, 10)
    idx, counts = ball_query(coords, centroid_idx, 0.25, 6)
    d2 = ((coords[centroid_idx][:, None] - coords[idx]) ** 2).sum(-1)
    for row in range(10):
        c = counts[row]
        assert np.all(d2[row, :c] <= 0.25 ** 2 + 1e-15)
        assert np.array_equal(idx[row, c:], np.full(6 - c, idx[row, 0]))


def test_three_nn_matches_reference():
    rng = np.random.default_rng(7)
    for _ in range(50):
        ns = int(rng.integers(1, 20))
        nd = int(rng.integers(1, 25))
        src = rng.uniform(-1, 1, (ns, 3))
        dst = rng.uniform(-1, 1, (nd, 3))
        gi, gw = three_nn(dst, src)
        wi, ww = _three_nn_reference(dst, src)
        assert np.array_equal(gi, wi)
        assert np.allclose(gw, ww, atol=1e-12, rtol=0)
        assert np.all(np.abs(gw.sum(axis=1) - 1.0) <= 1e-12)
        assert np.all(gw >= 0)


def test_three_nn_coincident_point_takes_all_weight():
    src = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    dst = np.array([[1.0, 0.0, 0.0], [0.5, 0.5, 0.0]])
    idx, w = three_nn(dst, src)
    assert idx[0, 0] == 1
    assert np.array_equal(w[0], [1.0, 0.0, 0.0])
    assert np.all(w[1] > 0)          # generic point mixes all three


def test_three_nn_fewer_than_three_sources():
    src = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    dst = np.array([[0.5, 0.0, 0.0]])
    idx, w = three_nn(dst, src)
    assert idx.shape == (1, 2) and w.shape == (1, 2)
    assert abs(w.sum() - 1.0) <= 1e-12
    assert w[0, 0] > w[0, 1]


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba backend not active")
def test_numba_and_numpy_backends_bit_identical():
    from psformer._kernels import _lex_centroid

    rng = np.random.default_rng(8)
    for _ in range(25):
        n = int(rng.integers(4, 60))
        coords = np.ascontiguousarray(rng.uniform(-3, 3, (n, 3)))
        m = int(rng.integers(1, n + 1))
        centroid = _lex_centroid(coords)
        assert np.array_equal(fps_numpy(coords, m, centroid),
                              fps_numba(coords, m, centroid))

        centroid_idx = fps_numpy(coords, min(m, 8), centroid)
        radius, k = float(rng.uniform(0.3, 2.0)), int(rng.integers(1, 7))
        ai, ac = ball_query_numpy(coords, centroid_idx, radius, k)
        bi, bc = ball_query_numba(coords, centroid_idx, radius, k)
        assert np.array_equal(ai, bi) and np.array_equal(ac, bc)

        src = np.ascontiguousarray(rng.uniform(-3, 3, (int(rng.integers(1, 12)), 3)))
        ai, aw = three_nn_numpy(coords, src)
        bi, bw = three_nn_numba(coords, src)
        assert np.array_equal(ai, bi)
        assert np.array_equal(aw, bw)      # bitwise, not allclose


def test_psf_numba_flag_selects_backend():
    code = ("from psformer._kernels import ACTIVE_BACKEND; print(ACTIVE_BACKEND)")
    out = subprocess.run([sys.executable, "-c", code],
                         env=dict(os.environ, PSF_NUMBA="0"),
                         capture_output=True, text=True)
    assert out.stdout.strip() == "numpy", out.stderr
    assert ACTIVE_BACKEND in ("numpy", "numba")
