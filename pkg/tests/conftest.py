"""Shared fixtures: the shipped example programs and machine descriptions,
plus finished optimization runs (built once per session — the engine is
deterministic, so sharing results across tests is safe)."""

import os

import pytest

from parakern import dsl, engine
from parakern.machine import load_machine

DATA = os.path.join(
    os.path.dirname(__file__), os.pardir, "src", "parakern", "data"
)


def data_path(filename: str) -> str:
    return os.path.join(DATA, filename)


def load_example(stem: str) -> dsl.Program:
    with open(data_path(stem + ".mfk")) as fh:
        return dsl.parse(fh.read())


@pytest.fixture(scope="session")
def jacobi():
    return load_example("jacobi")


@pytest.fixture(scope="session")
def transpose():
    return load_example("transpose")


@pytest.fixture(scope="session")
def addition():
    return load_example("addition")


@pytest.fixture(scope="session")
def fermi_machine():
    return load_machine(data_path("fermi.machine"))


@pytest.fixture(scope="session")
def addition_machine():
    return load_machine(data_path("addition.machine"))


@pytest.fixture(scope="session")
def jacobi_run(jacobi, fermi_machine):
    return engine.optimize(jacobi, fermi_machine)


@pytest.fixture(scope="session")
def transpose_run(transpose, fermi_machine):
    return engine.optimize(transpose, fermi_machine)


@pytest.fixture(scope="session")
def addition_run(addition, addition_machine):
    return engine.optimize(addition, addition_machine)
