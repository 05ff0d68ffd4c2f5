"""Raised-cosine temporal basis functions for synaptic and feedback filters.

Each filter applied by a neuron is a linear combination of a small set of
raised-cosine bumps whose peaks are spaced evenly in log-time, so that the
basis covers short delays densely and long delays coarsely.
"""

from dataclasses import dataclass, field

import numpy as np

_LOG_SHIFT = 1.0


@dataclass(frozen=True)
class BasisSet:
    """A bank of temporal basis vectors over a spike-history window.

    basis_matrix has shape (window_len, num_basis); column j is the j-th
    basis vector, indexed by delay (row 0 = most recent spike).
    """

    window_len: int
    num_basis: int
    basis_matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = self.basis_matrix
        if m.shape != (self.window_len, self.num_basis):
            raise ValueError(
                f"basis matrix shape {m.shape} does not match "
                f"({self.window_len}, {self.num_basis})"
            )
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValueError("basis entries must be finite and non-negative")
        if not np.all(m.max(axis=0) > 0):
            raise ValueError("every basis column needs a strictly positive entry")
        peaks = m.argmax(axis=0)
        if self.num_basis > 1:
            if np.any(np.diff(peaks) <= 0):
                raise ValueError("basis peaks must be strictly increasing in delay")
            for j in range(self.num_basis - 1):
                if np.array_equal(m[:, j], m[:, j + 1]):
                    raise ValueError("basis columns must be pairwise distinct")

    def to_dict(self) -> dict:
        return {
            "window_len": self.window_len,
            "num_basis": self.num_basis,
            "basis_matrix": self.basis_matrix.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSet":
        return cls(
            window_len=int(d["window_len"]),
            num_basis=int(d["num_basis"]),
            basis_matrix=np.asarray(d["basis_matrix"], dtype=float),
        )


def build_raised_cosine_basis(
    num_basis: int, window_len: int, spacing: float | None = None
) -> BasisSet:
    """Build raised-cosine bumps with centers evenly spaced in log-time.

    Column j is b_j(t) = 0.5*cos(clamp(pi*(log(t+eps) - c_j)/spacing, -pi, pi)) + 0.5
    for delays t = 0..window_len-1, with centers c_j spread over the log-delay
    range. `spacing` controls bump width; the default ties it to the center
    separation so adjacent bumps overlap.
    """
    if num_basis < 1 or window_len < 1:
        raise ValueError("num_basis and window_len must be positive")
    if num_basis > window_len:
        raise ValueError("num_basis must not exceed window_len")

    log_t = np.log(np.arange(window_len) + _LOG_SHIFT)

    # Snap each evenly-log-spaced target to a distinct grid delay so every
    # column peaks exactly at its own delay index (strictly increasing peaks
    # even on coarse grids).
    targets = np.linspace(log_t[0], log_t[-1], num_basis)
    idx: list[int] = []
    for j, c in enumerate(targets):
        k = int(np.argmin(np.abs(log_t - c)))
        if idx:
            k = max(k, idx[-1] + 1)
        idx.append(min(k, window_len - num_basis + j))
    centers = log_t[np.array(idx)]

    if spacing is None:
        if num_basis == 1:
            spacing = max(log_t[-1] - log_t[0], 1.0)
        else:
            # 1.5x mean center separation gives overlapping but distinct bumps
            spacing = 1.5 * float(np.mean(np.diff(centers)))
    if spacing <= 0:
        raise ValueError("spacing must be positive")

    arg = np.clip(np.pi * (log_t[:, None] - centers[None, :]) / spacing, -np.pi, np.pi)
    mat = 0.5 * np.cos(arg) + 0.5
    # clip shoulder values that underflow to tiny negatives
    mat[mat < 1e-12] = 0.0
    return BasisSet(window_len=window_len, num_basis=num_basis, basis_matrix=mat)
