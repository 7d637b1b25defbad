"""Component labeling, association, and size/diameter filters vs oracles."""

from collections import deque

import numpy as np
import pytest

from synseg.errors import DimensionMismatch
from synseg.geometry import feret_diameter
from synseg.imaging import BinaryMask, InstanceMask
from synseg.instances import (
    associate_components,
    combine_masks,
    filter_feret,
    label_components,
    remove_small,
)


def _flood_fill_labels(bits):
    """8-connected labeling by BFS in raster order (test oracle)."""
    h, w = bits.shape
    labels = np.zeros((h, w), dtype=np.int32)
    next_label = 0
    for sy in range(h):
        for sx in range(w):
            if bits[sy, sx] and labels[sy, sx] == 0:
                next_label += 1
                queue = deque([(sy, sx)])
                labels[sy, sx] = next_label
                while queue:
                    y, x = queue.popleft()
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            ny, nx = y + dy, x + dx
                            if (
                                0 <= ny < h
                                and 0 <= nx < w
                                and bits[ny, nx]
                                and labels[ny, nx] == 0
                            ):
                                labels[ny, nx] = next_label
                                queue.append((ny, nx))
    return labels


def _boundary_points_oracle(labels, lab):
    """4-boundary pixels of one component as (y, x) float coords."""
    mask = labels == lab
    h, w = mask.shape
    pts = []
    for y, x in np.argwhere(mask):
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if not (0 <= ny < h and 0 <= nx < w) or not mask[ny, nx]:
                pts.append((y, x))
                break
    return np.asarray(pts, dtype=float)


def _associate_oracle(inst, t_d):
    """All-pairs boundary distances plus union-find (test oracle)."""
    n = inst.n_components
    parent = list(range(n + 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    bounds = {lab: _boundary_points_oracle(inst.labels, lab) for lab in range(1, n + 1)}
    for a in range(1, n + 1):
        for b in range(a + 1, n + 1):
            d2 = ((bounds[a][:, None, :] - bounds[b][None, :, :]) ** 2).sum(-1)
            if d2.size and np.sqrt(d2.min()) <= t_d:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    groups = {}
    for lab in range(1, n + 1):
        groups.setdefault(find(lab), []).append(lab)
    return sorted(sorted(g) for g in groups.values())


def _rand_mask(rng, h=48, w=48, p=0.12):
    return rng.random((h, w)) < p


class TestLabelComponents:
    def test_matches_flood_fill_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(25):
            bits = _rand_mask(rng, p=float(rng.uniform(0.05, 0.5)))
            got = label_components(BinaryMask(bits=bits, provenance="combined"))
            oracle = _flood_fill_labels(bits)
            assert np.array_equal(got.labels, oracle)
            assert got.merged_counts == {k: 1 for k in range(1, oracle.max() + 1)}

    def test_labels_are_raster_canonical(self):
        bits = np.zeros((5, 7), dtype=bool)
        bits[4, 0:2] = True  # later in raster order
        bits[0, 5] = True  # first foreground pixel encountered
        bits[2, 2:4] = True
        got = label_components(BinaryMask(bits=bits, provenance="combined")).labels
        assert got[0, 5] == 1
        assert got[2, 2] == 2
        assert got[4, 0] == 3

    def test_diagonal_touch_is_one_component(self):
        bits = np.array([[1, 0], [0, 1]], dtype=bool)
        got = label_components(BinaryMask(bits=bits, provenance="combined"))
        assert got.n_components == 1

    def test_empty_mask(self):
        got = label_components(
            BinaryMask(bits=np.zeros((4, 4), dtype=bool), provenance="combined")
        )
        assert got.n_components == 0
        assert got.merged_counts == {}


class TestCombineMasks:
    def test_keeps_only_components_touching_alkaline(self):
        refined = np.zeros((8, 8), dtype=bool)
        refined[0:2, 0:2] = True  # no alkaline support
        refined[5:8, 5:8] = True  # one supporting pixel
        alkaline = np.zeros((8, 8), dtype=bool)
        alkaline[6, 6] = True
        out = combine_masks(
            BinaryMask(bits=refined, provenance="refined"),
            BinaryMask(bits=alkaline, provenance="alkaline"),
        )
        assert out.provenance == "combined"
        assert not out.bits[0:2, 0:2].any()
        assert out.bits[5:8, 5:8].all()

    def test_single_pixel_support_is_enough(self):
        refined = np.ones((3, 3), dtype=bool)
        alkaline = np.zeros((3, 3), dtype=bool)
        alkaline[1, 1] = True
        out = combine_masks(
            BinaryMask(bits=refined, provenance="refined"),
            BinaryMask(bits=alkaline, provenance="alkaline"),
        )
        assert out.bits.all()

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            combine_masks(
                BinaryMask(bits=np.zeros((4, 4), dtype=bool), provenance="refined"),
                BinaryMask(bits=np.zeros((4, 5), dtype=bool), provenance="alkaline"),
            )


class TestRemoveSmall:
    def test_strictly_smaller_removed_exact_kept(self):
        bits = np.zeros((10, 20), dtype=bool)
        bits[1, 1:5] = True  # area 4: dropped at t_s = 5
        bits[5, 1:6] = True  # area 5: kept (strict <)
        bits[8, 1:10] = True  # area 9: kept
        out = remove_small(BinaryMask(bits=bits, provenance="combined"), t_s=5)
        assert not out.bits[1].any()
        assert out.bits[5, 1:6].all()
        assert out.bits[8, 1:10].all()
        assert out.provenance == "combined"

    def test_zero_threshold_keeps_everything(self):
        rng = np.random.default_rng(0)
        bits = _rand_mask(rng)
        out = remove_small(BinaryMask(bits=bits, provenance="combined"), t_s=0)
        assert np.array_equal(out.bits, bits)

    def test_oracle_on_random_masks(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            bits = _rand_mask(rng, p=0.25)
            t_s = int(rng.integers(1, 10))
            out = remove_small(BinaryMask(bits=bits, provenance="combined"), t_s=t_s)
            oracle = _flood_fill_labels(bits)
            keep = np.zeros_like(bits)
            for lab in range(1, oracle.max() + 1):
                comp = oracle == lab
                if comp.sum() >= t_s:
                    keep |= comp
            assert np.array_equal(out.bits, keep)


class TestAssociateComponents:
    def _groups_of(self, before, after):
        """Map each merged label to the sorted originals it absorbed."""
        groups = {}
        for lab in range(1, after.n_components + 1):
            olds = sorted(set(before.labels[after.labels == lab]) - {0})
            groups[lab] = olds
        return sorted(groups.values())

    def test_matches_all_pairs_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(15):
            bits = _rand_mask(rng, h=40, w=40, p=0.08)
            inst = label_components(BinaryMask(bits=bits, provenance="combined"))
            t_d = float(rng.uniform(1.0, 6.0))
            merged = associate_components(inst, t_d=t_d)
            assert self._groups_of(inst, merged) == _associate_oracle(inst, t_d)

    def test_exact_distance_is_inclusive(self):
        bits = np.zeros((3, 10), dtype=bool)
        bits[1, 0] = True
        bits[1, 5] = True  # boundary distance exactly 5
        inst = label_components(BinaryMask(bits=bits, provenance="combined"))
        assert associate_components(inst, t_d=5.0).n_components == 1
        assert associate_components(inst, t_d=4.999).n_components == 2

    def test_transitive_chains_merge(self):
        bits = np.zeros((3, 30), dtype=bool)
        bits[1, 0] = bits[1, 4] = bits[1, 8] = True  # A-B and B-C within 4; A-C is 8
        inst = label_components(BinaryMask(bits=bits, provenance="combined"))
        merged = associate_components(inst, t_d=4.0)
        assert merged.n_components == 1
        assert merged.merged_counts == {1: 3}

    def test_component_count_bookkeeping(self):
        bits = np.zeros((10, 10), dtype=bool)
        bits[0, 0:2] = True
        bits[0, 4:6] = True  # merges with the first at t_d = 3
        bits[8, 8] = True  # stays alone
        inst = label_components(BinaryMask(bits=bits, provenance="combined"))
        merged = associate_components(inst, t_d=3.0)
        assert merged.n_components == 2
        assert merged.merged_counts == {1: 2, 2: 1}

    def test_labels_stay_raster_canonical(self):
        rng = np.random.default_rng(9)
        bits = _rand_mask(rng, p=0.1)
        inst = label_components(BinaryMask(bits=bits, provenance="combined"))
        merged = associate_components(inst, t_d=3.0)
        seen = []
        for val in merged.labels.ravel():
            if val and val not in seen:
                seen.append(val)
        assert seen == list(range(1, merged.n_components + 1))


class TestFilterFeret:
    def test_strictly_smaller_removed_exact_kept(self):
        bits = np.zeros((40, 40), dtype=bool)
        bits[1, 0:8] = True  # feret 7: dropped at t_f = 8
        bits[10, 0:9] = True  # feret 8: kept
        bits[20:36, 20] = True  # feret 15: kept
        inst = label_components(BinaryMask(bits=bits, provenance="combined"))
        out = filter_feret(inst, t_f=8.0)
        assert out.n_components == 2
        assert not (out.labels[1] > 0).any()
        assert (out.labels[10, 0:9] > 0).all()

    def test_feret_uses_merged_instances(self):
        # two short bars merged by association pass a cut neither passes alone
        bits = np.zeros((5, 30), dtype=bool)
        bits[2, 0:5] = True
        bits[2, 8:13] = True
        inst = associate_components(
            label_components(BinaryMask(bits=bits, provenance="combined")), t_d=4.0
        )
        assert inst.n_components == 1
        out = filter_feret(inst, t_f=10.0)
        assert out.n_components == 1
        assert out.merged_counts == {1: 2}

    def test_matches_direct_measurement(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            bits = _rand_mask(rng, p=0.2)
            inst = label_components(BinaryMask(bits=bits, provenance="combined"))
            t_f = float(rng.uniform(1.0, 8.0))
            out = filter_feret(inst, t_f=t_f)
            survivors = set(np.unique(out.labels)) - {0}
            expected = 0
            for lab in range(1, inst.n_components + 1):
                pts = np.argwhere(inst.labels == lab).astype(float)
                if feret_diameter(pts) >= t_f:
                    expected += 1
            assert len(survivors) == expected
