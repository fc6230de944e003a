import numpy as np
import pytest

from covadj.design import design_matrix, has_interactions, parse_term, term_covariates
from covadj.errors import ConfigError


@pytest.mark.parametrize("term,expected", [
    ("A", ("treatment", None)), ("x3", ("main", "x3")), ("x3^2", ("square", "x3")),
    ("A:x2", ("interaction", "x2")),
])
def test_parse_term(term, expected):
    assert parse_term(term) == expected


@pytest.mark.parametrize("bad", ["", "x1:x2", "A:x1^2", "x^3", "A:"])
def test_unsupported_terms(bad):
    with pytest.raises(ConfigError):
        parse_term(bad)


def test_design_matrix_columns():
    A = np.array([0.0, 1.0, 1.0])
    X = np.array([[1.0, 2.0], [0.0, -1.0], [1.0, 3.0]])
    D = design_matrix(("A", "x1", "x2^2", "A:x2"), A, X, ("x1", "x2"))
    assert np.array_equal(D, [[0, 1, 4, 0], [1, 0, 1, -1], [1, 1, 9, 3]])


def test_scalar_treatment_broadcasts():
    X = np.array([[2.0], [5.0]])
    assert np.array_equal(design_matrix(("A", "A:x"), 1.0, X, ("x",)), [[1, 2], [1, 5]])


def test_helpers_and_unknown_covariate():
    assert term_covariates(("x1", "x2^2", "A:x1")) == ["x1", "x2"]
    assert has_interactions(("x1", "A:x1")) and not has_interactions(("x1", "x1^2"))
    with pytest.raises(ConfigError):
        design_matrix(("z",), 0.0, np.zeros((2, 1)), ("x",))
