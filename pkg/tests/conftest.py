import numpy as np
import pytest

from hierdiff import GrammarParams, build_grammar, generate_datum


@pytest.fixture
def tiny_rules():
    """v=2, m=2, s=2, L=2: 16 derivations, enumerable in microseconds."""
    return build_grammar(GrammarParams(v=2, m=2, s=2, L=2), seed=11)


@pytest.fixture
def tiny_datum(tiny_rules):
    return generate_datum(tiny_rules, seed=5)


@pytest.fixture
def small_rules():
    """v=3, m=2, s=2, L=2: still enumerable, richer vocabulary."""
    return build_grammar(GrammarParams(v=3, m=2, s=2, L=2), seed=23)


def random_tiny_params(rng):
    """Random grammar parameters small enough for exhaustive enumeration."""
    while True:
        v = int(rng.integers(2, 4))
        m = int(rng.integers(1, 3))
        s = 2
        if m * v <= v**s:
            return GrammarParams(v=v, m=m, s=s, L=2)


def assert_close(actual, expected, atol, what=""):
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    err = np.abs(actual - expected).max()
    assert err <= atol, f"{what}: max deviation {err:.3e} > {atol:.1e}"
