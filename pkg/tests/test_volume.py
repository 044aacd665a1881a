import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from petprompt.errors import BoundsError, ShapeMismatchError
from petprompt.volume import (
    BinaryMask,
    LabelMask,
    PointPrompt,
    PromptSet,
    VoxelGrid,
    empty_mask,
    extract_block,
    full_mask,
    linear_index,
    mask_difference,
    mask_intersection,
    mask_union,
    mask_volume,
    unravel_index,
    voxel_to_world,
)

dims_strategy = st.tuples(
    st.integers(1, 5), st.integers(1, 5), st.integers(1, 5)
)


class TestLinearIndex:
    def test_origin(self):
        assert linear_index(0, 0, 0, (4, 4, 4)) == 0

    def test_formula(self):
        assert linear_index(1, 2, 3, (4, 4, 4)) == 57

    def test_last_voxel(self):
        assert linear_index(3, 3, 3, (4, 4, 4)) == 63

    @pytest.mark.parametrize("bad", [(-1, 0, 0), (4, 0, 0), (0, 4, 0), (0, 0, 4)])
    def test_out_of_bounds(self, bad):
        with pytest.raises(BoundsError):
            linear_index(*bad, (4, 4, 4))

    @given(dims_strategy)
    def test_bijection_exhaustive(self, dims):
        nx, ny, nz = dims
        seen = set()
        for k in range(nz):
            for j in range(ny):
                for i in range(nx):
                    lin = linear_index(i, j, k, dims)
                    assert unravel_index(lin, dims) == (i, j, k)
                    seen.add(lin)
        assert seen == set(range(nx * ny * nz))

    def test_matches_fortran_ravel(self):
        dims = (3, 4, 5)
        arr = np.arange(60).reshape(dims, order="F")
        assert arr[1, 2, 3] == linear_index(1, 2, 3, dims)


class TestVoxelToWorld:
    def test_identity(self):
        assert voxel_to_world(np.eye(4), (5, 6, 7)) == (5.0, 6.0, 7.0)

    def test_scaling(self):
        aff = np.diag([2.0, 2.0, 3.0, 1.0])
        assert voxel_to_world(aff, (1, 1, 1)) == (2.0, 2.0, 3.0)

    def test_translation(self):
        aff = np.eye(4)
        aff[0, 3] = 10.0
        assert voxel_to_world(aff, (0, 0, 0)) == (10.0, 0.0, 0.0)


def _mask_from_voxels(dims, voxels):
    bits = np.zeros(dims, dtype=bool)
    for v in voxels:
        bits[v] = True
    return BinaryMask(bits)


class TestMaskAlgebra:
    def test_self_difference_empty(self):
        a = _mask_from_voxels((3, 3, 3), [(0, 0, 0), (1, 1, 1)])
        assert mask_volume(mask_difference(a, a)) == 0

    def test_difference_with_empty_is_identity(self):
        a = full_mask((3, 3, 3))
        b = empty_mask((3, 3, 3))
        assert mask_difference(a, b) == a

    def test_set_enumeration(self):
        a = _mask_from_voxels((3, 3, 3), [(0, 0, 0), (1, 1, 1)])
        b = _mask_from_voxels((3, 3, 3), [(1, 1, 1)])
        diff = mask_difference(a, b)
        assert diff == _mask_from_voxels((3, 3, 3), [(0, 0, 0)])

    def test_dims_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            mask_difference(empty_mask((2, 2, 2)), empty_mask((3, 3, 3)))

    def test_volume_counts(self):
        assert mask_volume(empty_mask((4, 4, 4))) == 0
        assert mask_volume(full_mask((4, 4, 4))) == 64
        bits = np.zeros((4, 4, 4), dtype=bool)
        bits[1:3, 1:3, 1:3] = True
        assert mask_volume(BinaryMask(bits)) == 8

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_algebra_properties(self, seed):
        rng = np.random.default_rng(seed)
        dims = tuple(rng.integers(2, 7, size=3))
        a = BinaryMask(rng.random(dims) < 0.5)
        b = BinaryMask(rng.random(dims) < 0.5)
        diff = mask_difference(a, b)
        # (A\B) and B are disjoint
        assert mask_volume(mask_intersection(diff, b)) == 0
        # (A\B) u (A n B) = A
        rebuilt = mask_union(diff, mask_intersection(a, b))
        assert rebuilt == a
        # volume arithmetic
        assert mask_volume(diff) + mask_volume(mask_intersection(a, b)) == mask_volume(a)


class TestTypes:
    def test_grid_validation(self):
        with pytest.raises(ValueError):
            VoxelGrid(np.zeros((2, 2)), (1, 1, 1))
        with pytest.raises(ValueError):
            VoxelGrid(np.zeros((2, 2, 2)), (0, 1, 1))
        with pytest.raises(ValueError):
            VoxelGrid(np.zeros((2, 2, 2)), (1, 1, 1), np.zeros((4, 4)))
        with pytest.raises(ValueError):  # singular affine
            VoxelGrid(np.zeros((2, 2, 2)), (1, 1, 1), np.zeros((4, 4)) * np.nan)

    def test_grid_immutable(self):
        grid = VoxelGrid(np.zeros((2, 2, 2)))
        with pytest.raises(ValueError):
            grid.data[0, 0, 0] = 1.0

    def test_label_mask_names(self):
        labels = np.zeros((2, 2, 2), dtype=np.int32)
        labels[0, 0, 0] = 3
        with pytest.raises(ValueError):
            LabelMask(labels, {1: "one"})
        lm = LabelMask(labels)
        assert lm.label_names == {3: "3"}
        assert mask_volume(lm.mask_for([3])) == 1

    def test_prompt_validation(self):
        with pytest.raises(ValueError):
            PointPrompt((0, 0, 0), "positive")
        with pytest.raises(ValueError):
            PointPrompt((0, 0, 0), "pos", -1)
        p = PointPrompt((1, 2, 3), "pos", 0)
        with pytest.raises(BoundsError):
            p.validate_within((2, 2, 2))

    def test_prompt_set_ordering_and_duplicates(self):
        p0 = PointPrompt((0, 0, 0), "pos", 0)
        p1 = PointPrompt((1, 0, 0), "neg", 1)
        ps = PromptSet((p0, p1))
        assert len(ps) == 2
        with pytest.raises(ValueError):  # non-decreasing iterations
            PromptSet((p1, p0))
        with pytest.raises(ValueError):  # duplicate (index, polarity)
            PromptSet((p0, PointPrompt((0, 0, 0), "pos", 1)))
        # same index, opposite polarity is allowed
        PromptSet((p0, PointPrompt((0, 0, 0), "neg", 1)))
        assert ps.contains((1, 0, 0), "neg")
        assert not ps.contains((1, 0, 0), "pos")


class TestExtractBlock:
    def test_interior(self):
        data = np.arange(4 * 4 * 4, dtype=np.float32).reshape(4, 4, 4)
        block = extract_block(data, (1, 1, 1), 2, -1.0)
        assert np.array_equal(block, data[1:3, 1:3, 1:3])

    def test_padding(self):
        data = np.ones((3, 3, 3), dtype=np.float32)
        block = extract_block(data, (-1, 0, 0), 3, 7.0)
        assert block[0, 0, 0] == 7.0
        assert block[1, 0, 0] == 1.0
        assert (block[0, :, :] == 7.0).all()

    def test_fully_outside(self):
        data = np.ones((3, 3, 3), dtype=np.float32)
        block = extract_block(data, (10, 10, 10), 2, 0.5)
        assert (block == 0.5).all()
