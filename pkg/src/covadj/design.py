"""Linear-predictor terms and design matrices.

Terms are small strings:

``"A"``
    treatment indicator
``"x3"``
    main effect of covariate ``x3``
``"x3^2"``
    square of covariate ``x3`` (never stored as a separate column)
``"A:x3"``
    treatment-covariate interaction
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigError

TREATMENT = "A"


def parse_term(term: str) -> tuple[str, str | None]:
    """Split a term into ``(kind, covariate)``.

    ``kind`` is one of ``"treatment"``, ``"main"``, ``"square"``, ``"interaction"``.
    """
    term = term.strip()
    if term == TREATMENT:
        return "treatment", None
    if term.startswith(TREATMENT + ":"):
        cov = term[len(TREATMENT) + 1:]
        if not cov or ":" in cov or "^" in cov:
            raise ConfigError(f"unsupported interaction term {term!r}")
        return "interaction", cov
    if term.endswith("^2"):
        cov = term[:-2]
        if not cov or ":" in cov:
            raise ConfigError(f"unsupported squared term {term!r}")
        return "square", cov
    if not term or ":" in term or "^" in term:
        raise ConfigError(f"unsupported term {term!r}")
    return "main", term


def term_covariates(terms: Sequence[str]) -> list[str]:
    """Covariate names referenced by ``terms``, in first-use order."""
    out: list[str] = []
    for t in terms:
        _, cov = parse_term(t)
        if cov is not None and cov not in out:
            out.append(cov)
    return out


def has_interactions(terms: Sequence[str]) -> bool:
    return any(parse_term(t)[0] == "interaction" for t in terms)


def design_matrix(terms: Sequence[str], A: np.ndarray, X: np.ndarray,
                  names: Sequence[str]) -> np.ndarray:
    """Build the ``(n, len(terms))`` design matrix (no intercept column).

    Parameters
    ----------
    terms : sequence of str
        Term strings, see module docstring.
    A : array of shape (n,)
        Treatment indicator. A scalar is broadcast, which is how the
        counterfactual "everyone treated" copies are built.
    X : array of shape (n, p)
        Covariate matrix whose columns are labelled by ``names``.
    names : sequence of str
        Column names of ``X``.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    A = np.broadcast_to(np.asarray(A, dtype=float), (n,))
    index = {name: j for j, name in enumerate(names)}
    D = np.empty((n, len(terms)))
    for k, term in enumerate(terms):
        kind, cov = parse_term(term)
        if kind == "treatment":
            D[:, k] = A
            continue
        if cov not in index:
            raise ConfigError(f"term {term!r} references unknown covariate {cov!r}")
        col = X[:, index[cov]]
        if kind == "main":
            D[:, k] = col
        elif kind == "square":
            D[:, k] = col * col
        else:
            D[:, k] = A * col
    return D
