import numpy as np
import pytest
import scipy.fft as sfft

from kgflow.spectral import Grid, SpectralField


@pytest.fixture
def grid1d():
    return Grid(dim=1, n_per_axis=64, box_length=2 * np.pi)


@pytest.fixture
def grid2d():
    return Grid(dim=2, n_per_axis=32, box_length=2 * np.pi)


@pytest.fixture
def grid3d():
    return Grid(dim=3, n_per_axis=16, box_length=2 * np.pi)


def random_smooth_field(grid, rng, decay=2.0, amplitude=1.0):
    """Real field with randn coefficients shaped by (1+|xi|^2)^(-decay/2)."""
    white = rng.standard_normal(grid.shape)
    envelope = (1.0 + grid.xi_sq) ** (-decay / 2.0)
    coeffs = sfft.fftn(white.astype(complex)) * envelope
    coeffs[grid.nyquist_mask] = 0.0
    values = sfft.ifftn(coeffs).real
    peak = np.abs(values).max()
    if peak > 0:
        values *= amplitude / peak
    return values


def random_field(grid, rng, decay=2.0, amplitude=1.0):
    return SpectralField.from_physical(
        grid, random_smooth_field(grid, rng, decay, amplitude)
    )
