import numpy as np
import pytest

from spokensyntax.core import make_rng
from spokensyntax.ingest import SyntheticGrammarConfig, synth_corpus


@pytest.fixture(scope="session")
def small_corpus():
    return synth_corpus(SyntheticGrammarConfig(), 24, make_rng(11))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def assert_grad_close(analytic, numeric, tol=1e-4, label=""):
    """Relative error below ``tol``; gradients that are zero in exact
    arithmetic (both sides below 1e-8) are compared absolutely instead."""
    from spokensyntax.nn import relative_error
    a, n = np.ravel(analytic), np.ravel(numeric)
    if np.linalg.norm(a) < 1e-8 and np.linalg.norm(n) < 1e-8:
        assert np.max(np.abs(a - n), initial=0.0) < 1e-8, label
        return
    err = relative_error(a, n)
    assert err < tol, f"{label}: relative error {err:.2e}"
