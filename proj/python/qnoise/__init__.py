"""Qubit noise spectroscopy toolkit: spectra, filter functions and spectrum reconstruction."""

from ._core import (
    Config,
    ConfigError,
    QnoiseError,
    check,
    correlation,
    filter_abs2,
    plans,
    reconstruct,
    simulate,
    spectrum,
    window_integral,
    window_mfs,
)

__all__ = [
    "Config",
    "ConfigError",
    "QnoiseError",
    "check",
    "correlation",
    "filter_abs2",
    "plans",
    "reconstruct",
    "simulate",
    "spectrum",
    "window_integral",
    "window_mfs",
]
