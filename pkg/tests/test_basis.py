import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikemeta.basis import BasisSet, build_raised_cosine_basis


def test_degenerate_single_tap():
    b = build_raised_cosine_basis(1, 1, spacing=1.0)
    assert b.basis_matrix.shape == (1, 1)
    assert b.basis_matrix[0, 0] > 0


def test_peaks_strictly_increasing():
    b = build_raised_cosine_basis(8, 10)
    peaks = b.basis_matrix.argmax(axis=0)
    assert np.all(np.diff(peaks) > 0)


def test_entries_bounded():
    b = build_raised_cosine_basis(3, 10)
    m = b.basis_matrix
    assert m.shape == (10, 3)
    assert np.all(m >= 0) and np.all(m <= 1)


def test_rejects_zero_sizes():
    with pytest.raises(ValueError):
        build_raised_cosine_basis(0, 5)
    with pytest.raises(ValueError):
        build_raised_cosine_basis(3, 0)
    with pytest.raises(ValueError):
        build_raised_cosine_basis(6, 5)
    with pytest.raises(ValueError):
        build_raised_cosine_basis(2, 5, spacing=0.0)


@settings(max_examples=50, deadline=None)
@given(
    window_len=st.integers(min_value=1, max_value=40),
    data=st.data(),
)
def test_invariants_hold_for_any_sizes(window_len, data):
    num_basis = data.draw(st.integers(min_value=1, max_value=window_len))
    b = build_raised_cosine_basis(num_basis, window_len)
    m = b.basis_matrix
    assert np.all(np.isfinite(m)) and np.all(m >= 0)
    assert np.all(m.max(axis=0) > 0)
    peaks = m.argmax(axis=0)
    assert np.all(np.diff(peaks) > 0)
    for j in range(num_basis - 1):
        assert not np.array_equal(m[:, j], m[:, j + 1])


def test_validation_rejects_bad_matrices():
    with pytest.raises(ValueError):
        BasisSet(2, 2, np.array([[1.0, 1.0], [0.5, 0.5]]))  # equal columns
    with pytest.raises(ValueError):
        BasisSet(2, 1, np.array([[-0.1], [1.0]]))  # negative entry
    with pytest.raises(ValueError):
        BasisSet(2, 1, np.array([[0.0], [0.0]]))  # all-zero column


def test_round_trips_through_dict():
    b = build_raised_cosine_basis(4, 9)
    b2 = BasisSet.from_dict(b.to_dict())
    assert np.array_equal(b.basis_matrix, b2.basis_matrix)
