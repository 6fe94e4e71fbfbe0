"""Shared scenario builders for the test suite."""

import dataclasses

from twolink import DemandModel, preset


def infinite_spec(d_lo=0.2, c_bar=0.5, demand=None):
    """The standard no-spillback scenario; optionally pin the demand support."""
    spec = preset("paper-infinite").network_spec(d_lo=d_lo, c_bar=c_bar)
    if demand is not None:
        spec = dataclasses.replace(spec, demand=DemandModel(*demand))
    return spec


def finite_spec(d_lo=0.2, c_bar=0.8, demand=None):
    """The standard spillback scenario with the upstream link."""
    spec = preset("paper-finite").network_spec(d_lo=d_lo, c_bar=c_bar)
    if demand is not None:
        spec = dataclasses.replace(spec, demand=DemandModel(*demand))
    return spec
