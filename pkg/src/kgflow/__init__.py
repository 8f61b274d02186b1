"""kgflow: pseudospectral cubic Klein-Gordon simulator and analysis toolkit."""

__version__ = "0.1.0"

from .spectral import (  # noqa: F401
    Grid,
    SpectralField,
    StateVec,
    apply_multiplier,
    free_propagate,
    gaussian_bump,
    half_wave,
    load_snapshot,
    save_snapshot,
    single_mode,
)
