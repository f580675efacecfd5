import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fancl.core import LabelError, compose_regions, one_hot


def test_one_hot_each_voxel_single_channel():
    mask = np.array([[0, 1], [2, 3]]).reshape(2, 2, 1)
    oh = one_hot(mask, 4)
    assert oh.shape == (4, 2, 2, 1)
    assert torch.equal(oh.sum(0), torch.ones(2, 2, 1, dtype=oh.dtype))
    for c in range(4):
        assert int(oh[c].sum()) == 1


def test_one_hot_background_only():
    oh = one_hot(np.zeros((3, 3, 3), dtype=np.int64), 2)
    assert bool((oh[0] == 1).all()) and bool((oh[1] == 0).all())


def test_one_hot_rejects_out_of_range_label():
    with pytest.raises(LabelError, match="4"):
        one_hot(np.array([[[0, 4]]]), 4)


def test_one_hot_batched_layout():
    mask = torch.randint(0, 3, (2, 4, 5, 6))
    assert one_hot(mask, 3).shape == (2, 3, 4, 5, 6)


label_masks = arrays(np.int64, st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5)),
                     elements=st.integers(0, 3))


@given(label_masks)
@settings(max_examples=60, deadline=None)
def test_one_hot_argmax_roundtrip(mask):
    oh = one_hot(mask, 4)
    assert np.array_equal(oh.argmax(0).numpy(), mask)
    assert bool((oh.sum(0) == 1).all())


@given(label_masks)
@settings(max_examples=60, deadline=None)
def test_regions_nested_and_wt_counts_foreground(mask):
    r = compose_regions(mask)
    assert not np.any(r.et & ~r.tc) and not np.any(r.tc & ~r.wt)
    assert r.wt.sum() == np.count_nonzero(mask)


def test_regions_one_voxel_per_label():
    mask = np.zeros((2, 2, 2), dtype=np.int64)
    mask[0, 0, 0], mask[0, 0, 1], mask[0, 1, 0] = 1, 2, 3
    r = compose_regions(mask)
    assert (r.et.sum(), r.tc.sum(), r.wt.sum()) == (1, 2, 3)


def test_regions_empty_and_edema_only():
    r = compose_regions(np.zeros((3, 3, 3), dtype=np.uint8))
    assert not (r.et.any() or r.tc.any() or r.wt.any())
    mask = np.zeros((4, 4, 4), dtype=np.uint8)
    mask.reshape(-1)[:10] = 2
    r = compose_regions(mask)
    assert (r.et.sum(), r.tc.sum(), r.wt.sum()) == (0, 0, 10)


def test_regions_reject_bad_label():
    with pytest.raises(LabelError):
        compose_regions(np.full((2, 2, 2), 5, dtype=np.uint8))
