"""Index bookkeeping, state containers, RK4 propagation, checkpoints."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy import sparse
from scipy.linalg import expm

from quadheom import bath
from quadheom.hierarchy import (
    DDOState,
    Generator,
    HierarchyDivergenceError,
    IndexSpace,
    checkpoint_load,
    checkpoint_save,
    filter_state,
    pair_permutation,
    propagate,
    rescale,
)


def liouvillian(h: np.ndarray) -> np.ndarray:
    """-i [H, .] on row-major flattened density matrices."""
    d = h.shape[0]
    eye = np.eye(d)
    return -1j * (np.kron(h, eye) - np.kron(eye, h.T))


# ---------------------------------------------------------------------------
# index space
# ---------------------------------------------------------------------------


def test_index_space_size_is_binomial():
    s = IndexSpace(3, 4)
    assert len(s) == math.comb(7, 3)


def test_enumeration_graded_then_lexicographic():
    s = IndexSpace(2, 2)
    expected = [(0, 0), (0, 1), (1, 0), (0, 2), (1, 1), (2, 0)]
    assert [tuple(o) for o in s.occupations] == expected
    assert s.index((1, 1)) == 4
    assert s.index((3, 0)) == -1  # outside


@settings(max_examples=30)
@given(k=st.integers(1, 4), l=st.integers(0, 5))
def test_neighbor_tables_consistent(k, l):
    s = IndexSpace(k, l)
    assert len(s) == math.comb(k + l, k)
    for i in range(len(s)):
        occ = s.occupations[i]
        for slot in range(k):
            up = s.raise_table[i, slot]
            if s.tier[i] < l:
                assert up >= 0
                assert s.lower_table[up, slot] == i
                assert s.tier[up] == s.tier[i] + 1
            else:
                assert up == -1
            dn = s.lower_table[i, slot]
            assert (dn >= 0) == (occ[slot] > 0)
            if dn >= 0:
                assert s.raise_table[dn, slot] == i


def test_index_space_cap_refused():
    with pytest.raises(ValueError, match="cap"):
        IndexSpace(10, 30, cap=1000)
    with pytest.raises(ValueError):
        IndexSpace(0, 3)


# ---------------------------------------------------------------------------
# states, rescaling, filtering
# ---------------------------------------------------------------------------


def test_state_entry_access():
    s = IndexSpace(2, 2)
    st_ = DDOState.zeros(s, 2)
    st_.data[s.index((1, 1))] = np.array([[1.0, 0], [0, 0.5]])
    assert set(st_.entries) == {(1, 1)}
    assert st_.entry((1, 1))[0, 0] == 1.0
    with pytest.raises(KeyError):
        st_.entry((5, 5))
    with pytest.raises(ValueError):
        DDOState(s, np.zeros((3, 2, 2)))


def test_rescale_known_factor_and_roundtrip():
    s = IndexSpace(2, 3)
    decomp = bath.BathDecomposition(
        eta=np.array([2.0 + 0j, 0.5 + 0j]),
        gamma=np.array([1.0 + 0j, 2.0 + 0j]),
        conjugate_index=np.array([0, 1]),
        beta=1.0,
    )
    raw = DDOState.zeros(s, 2)
    raw.data[s.index((2, 1))] = np.eye(2)
    scaled = rescale(raw, decomp, to_scaled=True)
    # s_n = sqrt(2! * 2**2) * sqrt(1! * 0.5) = 2
    assert_allclose(scaled.entry((2, 1)), np.eye(2) / 2.0, rtol=1e-14)
    back = rescale(scaled, decomp, to_scaled=False)
    assert_allclose(back.data, raw.data, rtol=1e-14)
    assert rescale(raw, decomp, to_scaled=False).scaled is False


def test_filter_zeroes_small_blocks_but_not_tier0():
    s = IndexSpace(2, 1)
    st_ = DDOState.zeros(s, 2)
    st_.data[0] = 1e-12 * np.eye(2)  # tier 0, small, must survive
    st_.data[1] = 1e-12 * np.eye(2)
    st_.data[2] = np.eye(2)
    assert filter_state(st_, 0.0) == 0
    assert filter_state(st_, 1e-9) == 1
    assert np.all(st_.data[1] == 0)
    assert np.abs(st_.data[0]).max() == 1e-12  # tier 0 untouched
    assert np.abs(st_.data[2]).max() == 1.0
    with pytest.raises(ValueError):
        filter_state(st_, -1.0)


def test_pair_permutation_swaps_conjugate_slots():
    s = IndexSpace(2, 2)
    perm = pair_permutation(s, [1, 0])
    i = s.index((2, 0))
    assert perm[i] == s.index((0, 2))
    ident = pair_permutation(s, [0, 1])
    assert np.array_equal(ident, np.arange(len(s)))


# ---------------------------------------------------------------------------
# generator semantics
# ---------------------------------------------------------------------------


def test_generator_static_parts_merge():
    rng = np.random.default_rng(3)
    a = sparse.random(10, 10, density=0.4, random_state=1).astype(complex)
    b = sparse.random(10, 10, density=0.4, random_state=2).astype(complex)
    g = Generator([(None, a), (None, b)], dim=10)
    y = rng.standard_normal(10) + 1j * rng.standard_normal(10)
    assert_allclose(g(y, 0.0), (a + b) @ y, rtol=1e-13)
    assert g.is_static


def test_generator_time_dependent_and_columnwise():
    a = sparse.eye(4, format="csr", dtype=complex)
    g = Generator([(lambda t: 2.0 * t, a)], dim=4)
    y = np.arange(4.0) + 0j
    assert_allclose(g(y, 3.0), 6.0 * y, rtol=1e-14)
    # per-column coefficients broadcast over a batched state
    gcol = Generator([(lambda t: np.array([1.0, 10.0]), a)], dim=4)
    ymat = np.stack([y, y], axis=1)
    out = gcol(ymat, 0.0)
    assert_allclose(out[:, 1], 10.0 * y, rtol=1e-14)
    with pytest.raises(ValueError):
        gcol.to_matrix(0.0)


def test_generator_to_matrix():
    a = sparse.random(6, 6, density=0.5, random_state=7).astype(complex)
    g = Generator([(None, a), (lambda t: t, 2.0 * a)], dim=6)
    assert_allclose(g.to_matrix(0.5).toarray(), (2.0 * a).toarray(), rtol=1e-14)


# ---------------------------------------------------------------------------
# propagation
# ---------------------------------------------------------------------------


def _single_block_setup(h):
    space = IndexSpace(1, 0)
    gen = Generator([(None, sparse.csr_matrix(liouvillian(h)))], dim=4)
    state = DDOState.zeros(space, 2)
    state.data[0] = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)
    return gen, state


def test_propagation_matches_unitary_evolution():
    h = np.array([[0.0, 1.0], [1.0, 0.0]])
    gen, state = _single_block_setup(h)
    propagate(gen, state, 2.0, 1e-3)
    u = expm(-1j * h * 2.0)
    exact = u @ np.diag([1.0, 0.0]) @ u.conj().T
    assert_allclose(state.data[0], exact, atol=1e-11)
    assert state.time == pytest.approx(2.0, abs=1e-12)


def test_rk4_error_drops_sixteenfold_when_dt_halves():
    h = np.array([[1.0, 0.7], [0.7, -0.5]])
    u = expm(-1j * h * 1.0)
    exact = u @ np.diag([1.0, 0.0]) @ u.conj().T

    def err(dt):
        gen, state = _single_block_setup(h)
        propagate(gen, state, 1.0, dt)
        return np.abs(state.data[0] - exact).max()

    e1, e2 = err(0.02), err(0.01)
    order = math.log2(e1 / e2)
    assert order >= 3.9
    assert 12.0 < e1 / e2 < 20.0


def test_propagation_is_deterministic():
    h = np.array([[0.3, 0.9], [0.9, -0.3]])
    results = []
    for _ in range(2):
        gen, state = _single_block_setup(h)
        propagate(gen, state, 1.5, 0.01)
        results.append(state.data.copy())
    assert np.array_equal(results[0], results[1])


def test_partial_final_step_lands_exactly():
    gen, state = _single_block_setup(np.eye(2))
    times = []
    propagate(gen, state, 0.35, 0.1, observer=lambda s: times.append(s.time))
    assert times[-1] == pytest.approx(0.35, abs=1e-12)
    assert len(times) == 4  # 3 full + 1 partial


def test_divergence_raises_with_time_reached():
    space = IndexSpace(1, 0)
    gen = Generator([(None, 5.0 * sparse.eye(4, dtype=complex))], dim=4)
    state = DDOState.zeros(space, 2)
    state.data[0] = np.eye(2)
    with pytest.raises(HierarchyDivergenceError, match="t ="):
        propagate(gen, state, 10.0, 0.1, max_abs=1e3)


def test_paired_filtering_preserves_conjugate_partners():
    space = IndexSpace(2, 1)  # blocks (0,0), (0,1), (1,0); d = 1
    perm = pair_permutation(space, [1, 0])
    gen = Generator([(None, sparse.csr_matrix((3, 3), dtype=complex))], dim=3,
                    pair_perm=perm)
    state = DDOState.zeros(space, 1)
    state.data[space.index((0, 0))] = 1.0
    state.data[space.index((1, 0))] = 1e-12  # small ...
    state.data[space.index((0, 1))] = 1.0    # ... but its partner is large
    propagate(gen, state, 1.0, 0.1, filter_tol=1e-9, filter_interval=1)
    assert state.data[space.index((1, 0))][0, 0] == 1e-12  # survived pairing


def test_propagate_validation():
    gen, state = _single_block_setup(np.eye(2))
    with pytest.raises(ValueError):
        propagate(gen, state, 1.0, -0.1)
    state.time = 2.0
    with pytest.raises(ValueError):
        propagate(gen, state, 1.0, 0.1)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def test_checkpoint_bitexact_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    space = IndexSpace(3, 3)
    state = DDOState.zeros(space, 2, scaled=True)
    live = rng.choice(len(space), size=7, replace=False)
    state.data[live] = rng.standard_normal((7, 2, 2)) + 1j * rng.standard_normal(
        (7, 2, 2)
    )
    state.time = 0.625
    p = tmp_path / "state.ckpt"
    checkpoint_save(state, p)
    loaded = checkpoint_load(p, space)
    assert np.array_equal(loaded.data, state.data)
    assert loaded.time == state.time
    assert loaded.scaled is True
    # space can be reconstructed from the header alone
    loaded2 = checkpoint_load(p)
    assert np.array_equal(loaded2.data, state.data)


def test_checkpoint_space_mismatch_rejected(tmp_path):
    space = IndexSpace(2, 2)
    state = DDOState.zeros(space, 2)
    p = tmp_path / "state.ckpt"
    checkpoint_save(state, p)
    with pytest.raises(ValueError):
        checkpoint_load(p, IndexSpace(2, 3))
    with open(tmp_path / "junk.ckpt", "wb") as fh:
        fh.write(b'{"format": "something-else"}\n')
    with pytest.raises(ValueError):
        checkpoint_load(tmp_path / "junk.ckpt")
