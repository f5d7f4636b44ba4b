"""Shipped reference data: lab datasets, dilation unitaries, analytic models.

The measured tables come from a trapped-ion qudit run certifying the
tetrahedral qubit SIC and the real-space qutrit IC POVMs (40000 shots per
probe state; fidelity lower bounds certified separately with 50000 shots).
Probability rows are shipped exactly as published including their rounding,
so they need a loose row-normalization tolerance.

The qutrit hardware enumerated outcomes in the dilation-unitary order, which
interleaves the plane pairs; state and outcome labels below follow that
order, with ``outcome_map`` tying dilation levels back to catalog effects.
"""

from __future__ import annotations

import importlib.resources
import json

import numpy as np

from .certify import ExperimentData, data_from_json
from .decompose import Decomposition, decomposition_from_json
from .povm import NaimarkDilation, _matrix_from_json
from .witness import Witness, witness_from_json


def _load(name: str) -> dict:
    ref = importlib.resources.files("povmsim") / "fixtures" / name
    with ref.open("r") as fh:
        return json.load(fh)


def fixture_path(name: str) -> str:
    return str(importlib.resources.files("povmsim") / "fixtures" / name)


def measured_qubit_dataset() -> ExperimentData:
    return data_from_json(_load("qubit_sic_measured.json"))


def measured_qutrit_dataset() -> ExperimentData:
    return data_from_json(_load("qutrit_ic3_measured.json"))


def dilation_u4() -> NaimarkDilation:
    data = _load("dilation_u4.json")
    u = _matrix_from_json(data["unitary"], data["levels"])
    return NaimarkDilation(u, int(data["source_dim"]), tuple(data["outcome_map"]))


def dilation_u6() -> NaimarkDilation:
    data = _load("dilation_u6.json")
    u = _matrix_from_json(data["unitary"], data["levels"])
    return NaimarkDilation(u, int(data["source_dim"]), tuple(data["outcome_map"]))


def sic2_witness_fixture() -> Witness:
    return witness_from_json(_load("witness_sic2.json"))


def ic3_witness_fixture() -> Witness:
    return witness_from_json(_load("witness_ic3.json"))


def sic2_decomposition_fixture() -> Decomposition:
    return decomposition_from_json(_load("decomposition_sic2.json"), 2)
