import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from fancl.partition import PartitionSpec, PatchMatrix, partition, unpartition


def test_shape_without_padding():
    p = partition(torch.randn(1, 8, 16, 16), 4, 4)
    assert p.data.shape == (1, 128, 16)
    assert (p.spec.pad_h, p.spec.pad_w) == (0, 0)


def test_shape_with_padding():
    p = partition(torch.randn(1, 2, 5, 5), 4, 4)
    assert p.data.shape == (1, 32, 4)
    assert (p.spec.pad_h, p.spec.pad_w) == (3, 3)


def test_zero_in_zero_out():
    assert not partition(torch.zeros(2, 3, 7, 9), 3, 4).data.any()


@pytest.mark.parametrize("shape", [(1, 8, 16, 16), (3, 2, 5, 7)])
def test_roundtrip_examples(shape):
    x = torch.randn(*shape, dtype=torch.float64)
    assert torch.equal(unpartition(partition(x, 4, 4), shape[1]), x)


def test_ones_patch_matrix_reassembles_to_ones():
    spec = PartitionSpec.for_shape(4, 4, 2, 2)
    out = unpartition(PatchMatrix(torch.ones(1, 4, 4), spec), d_out=1)
    assert torch.equal(out, torch.ones(1, 1, 4, 4))


def test_column_is_contiguous_patch():
    x = torch.arange(2 * 6 * 6, dtype=torch.float64).reshape(1, 2, 6, 6)
    p = partition(x, 3, 2)
    # patch at H-tile 1, W-tile 2 is column 1 * 3 + 2
    expected = x[0, :, 3:6, 4:6].reshape(-1)
    assert torch.equal(p.data[0, :, 5], expected)


def test_rejects_bad_patch_size():
    with pytest.raises(ValueError):
        partition(torch.zeros(1, 2, 4, 4), 0, 2)


def test_unpartition_rejects_inconsistent_columns():
    spec = PartitionSpec.for_shape(4, 4, 2, 2)
    with pytest.raises(ValueError):
        PatchMatrix(torch.ones(1, 4, 3), spec)


shapes = st.tuples(st.integers(1, 3), st.integers(1, 6), st.integers(1, 13), st.integers(1, 13))


@given(shapes, st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
@settings(max_examples=100, deadline=None)
def test_roundtrip_property(shape, a, b, seed):
    x = torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
    assert torch.equal(unpartition(partition(x, a, b), shape[1]), x)


@given(shapes, st.integers(1, 6), st.integers(1, 6), st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=50, deadline=None)
def test_linearity(shape, a, b, alpha, beta):
    g = torch.Generator().manual_seed(0)
    x = torch.randn(*shape, generator=g, dtype=torch.float64)
    y = torch.randn(*shape, generator=g, dtype=torch.float64)
    lhs = partition(alpha * x + beta * y, a, b).data
    rhs = alpha * partition(x, a, b).data + beta * partition(y, a, b).data
    assert torch.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_entries_preserved_without_padding():
    x = torch.randn(2, 3, 8, 12, dtype=torch.float64)
    p = partition(x, 4, 3).data
    assert torch.equal(torch.sort(p.reshape(-1)).values, torch.sort(x.reshape(-1)).values)
