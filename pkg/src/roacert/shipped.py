"""Artifacts shipped with the package: the 2-D example system and its certificate."""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .dynamics import UncertainSystem
from .error_model import ErrorBound
from .geometry import Box, Polytope
from .relu_net import ReluNetwork

EXAMPLES = {"rational2d": Box(np.array([-0.05, -0.2]), np.array([0.05, 0.2]))}


def _read(name: str, part: str) -> dict:
    if name not in EXAMPLES:
        raise KeyError(f"no shipped example {name!r}")
    return json.loads(resources.files("roacert").joinpath("data", f"{name}_{part}.json").read_text())


def example_network(name: str = "rational2d") -> ReluNetwork:
    return ReluNetwork.from_dict(_read(name, "network"))


def example_system(name: str = "rational2d") -> UncertainSystem:
    A = np.array(_read(name, "system")["A"], dtype=float)
    return UncertainSystem(A, example_network(name), ErrorBound.from_dict(_read(name, "error_bound")),
                           Polytope.from_dict(_read(name, "roi")), EXAMPLES[name])


def example_certificate(name: str = "rational2d"):
    from .cegis import Certificate

    return Certificate.from_dict(_read(name, "certificate"))
