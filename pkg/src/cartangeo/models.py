"""Frames used throughout the package, tests and demos."""

from __future__ import annotations

from .vecfield import Chart, PolyVectorField

__all__ = [
    "engel_padded",
    "flat_plane",
    "free_nilpotent_235",
    "heisenberg",
    "hilbert_cartan",
    "involutive_r3",
    "involutive_r5",
    "line_r2",
    "monge_perturbed",
]


def free_nilpotent_235():
    """The free nilpotent (2,3,5) frame, the standard Cartan model.

    X1 = d/dx1, X2 = d/dx2 + x1 d/dx3 + x1^2/2 d/dx4 + x1 x2 d/dx5.
    """
    chart = Chart.standard(5)
    X1 = PolyVectorField.from_strings(["1", "0", "0", "0", "0"], chart)
    X2 = PolyVectorField.from_strings(["0", "1", "x1", "(1/2)*x1^2", "x1*x2"], chart)
    return chart, [X1, X2]


def hilbert_cartan():
    """Monge frame of z' = (y'')^2 in coordinates (x, y, p, q, z)."""
    chart = Chart(("x", "y", "p", "q", "z"))
    X1 = PolyVectorField.from_strings(["1", "p", "q", "0", "q^2"], chart)
    X2 = PolyVectorField.from_strings(["0", "0", "0", "1", "0"], chart)
    return chart, [X1, X2]


def heisenberg():
    """{d/dx, d/dy + x d/dz} on R^3."""
    chart = Chart(("x", "y", "z"))
    X1 = PolyVectorField.from_strings(["1", "0", "0"], chart)
    X2 = PolyVectorField.from_strings(["0", "1", "x"], chart)
    return chart, [X1, X2]


def flat_plane():
    chart = Chart.standard(2)
    return chart, [PolyVectorField.coordinate(0, 2), PolyVectorField.coordinate(1, 2)]


def line_r2():
    """span{d/dx1} on R^2: involutive and not bracket generating."""
    chart = Chart.standard(2)
    return chart, [PolyVectorField.coordinate(0, 2)]


def involutive_r3():
    chart = Chart.standard(3)
    return chart, [PolyVectorField.coordinate(0, 3), PolyVectorField.coordinate(1, 3)]


def involutive_r5():
    chart = Chart.standard(5)
    return chart, [PolyVectorField.coordinate(0, 5), PolyVectorField.coordinate(1, 5)]


def engel_padded():
    """Engel frame on the first four coordinates of R^5; growth (2, 3, 4, 4)."""
    chart = Chart.standard(5)
    X1 = PolyVectorField.from_strings(["1", "0", "0", "0", "0"], chart)
    X2 = PolyVectorField.from_strings(["0", "1", "x1", "x3", "0"], chart)
    return chart, [X1, X2]


def monge_perturbed():
    """Monge frame of z' = (y'')^2 + y; a Cartan frame whose prolongation has rho != 0."""
    chart = Chart(("x", "y", "p", "q", "z"))
    X1 = PolyVectorField.from_strings(["1", "p", "q", "0", "q^2 + y"], chart)
    X2 = PolyVectorField.from_strings(["0", "0", "0", "1", "0"], chart)
    return chart, [X1, X2]
