import numpy as np
from hypothesis import given, strategies as st

from attn.lattice import SX, SY, SZ, LocalTerm
from attn.operators import ProductTerms, product_decompose


def _rebuild(products):
    out = 0
    for factors in products:
        m = np.eye(1)
        for f in factors:
            m = np.kron(m, f)
        out = out + m
    return out


@given(st.integers(1, 4), st.integers(0, 10_000))
def test_decomposition_reconstructs(nsites, seed):
    rng = np.random.default_rng(seed)
    d = 2 ** nsites
    op = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    assert np.allclose(_rebuild(product_decompose(op, nsites)), op, atol=1e-11)


def test_ranks():
    assert len(product_decompose(np.kron(SX, SX), 2)) == 1
    heis = np.kron(SX, SX) + np.kron(SY, SY) + np.kron(SZ, SZ)
    assert len(product_decompose(heis, 2)) == 3
    assert product_decompose(np.zeros((4, 4)), 2) == []


def test_product_terms_index():
    terms = [LocalTerm((0, 1), np.kron(SX, SX)), LocalTerm((1,), SZ)]
    pt = ProductTerms.from_terms(terms, 3)
    assert pt.n == 2
    assert list(pt.owner) == [0, 1]
    ids, ops = pt.by_site[1]
    assert list(ids) == [0, 1]
    assert len(pt.by_site[2][0]) == 0
