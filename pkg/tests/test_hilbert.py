import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gate_lab import hilbert as hb


def test_layout_dims_and_ordering():
    lay = hb.BasisLayout(2, (2, 3))
    assert lay.dims == (4, 4, 3, 4)
    assert lay.total_dim == 4**2 * 3 * 4
    s = hb.product_state(("0'", "+1"), (1, 2), lay)
    # ion1 is the slowest index, the last mode the fastest
    idx = ((1 * 4 + 3) * 3 + 1) * 4 + 2
    assert s.amplitudes[idx] == 1


def test_layout_sparse_switch():
    assert not hb.BasisLayout(2, (2, 2)).sparse
    assert hb.BasisLayout(2, (40,)).sparse
    assert not hb.BasisLayout(2, (40,), sparse_threshold=10**6).sparse


def test_layout_rejects_bad_cutoff():
    with pytest.raises(hb.LayoutError):
        hb.BasisLayout(2, (0,))


def test_ladder_product_in_ion_subspace():
    lay = hb.BasisLayout(2, ())
    sp = hb.operator_factory("S_plus", 0, lay)
    sm = hb.operator_factory("S_minus", 0, lay)
    expected = hb.operator_factory("proj", 0, lay, levels=("u", "u")) + hb.operator_factory("proj", 0, lay, levels=("D", "D"))
    assert (sp @ sm).allclose(expected)


def test_s_commutator():
    lay = hb.BasisLayout(2, (1,))
    sp = hb.operator_factory("S_plus", 1, lay)
    sm = hb.operator_factory("S_minus", 1, lay)
    sz = hb.operator_factory("S_z", 1, lay)
    assert (sp @ sm - sm @ sp).allclose(sz)


def test_annihilation_on_fock_two():
    lay = hb.BasisLayout(1, (3,))
    a = hb.operator_factory("a", 0, lay)
    out = a @ hb.product_state(("0",), (2,), lay)
    ref = hb.product_state(("0",), (1,), lay)
    assert np.allclose(out.amplitudes, math.sqrt(2) * ref.amplitudes)


@pytest.mark.parametrize("n_max", [1, 3, 8])
def test_boson_commutator_below_cutoff(n_max):
    lay = hb.BasisLayout(1, (n_max,))
    a = hb.mode_op("a", 0, lay).dense()
    ad = hb.mode_op("adag", 0, lay).dense()
    c = (a @ ad - ad @ a).reshape(4, n_max + 1, 4, n_max + 1)
    block = c[:, :n_max, :, :n_max].reshape(4 * n_max, 4 * n_max)
    assert np.allclose(block, np.eye(4 * n_max))


def test_dressed_hamiltonian_spectrum():
    omega = 2 * math.pi * 20e3
    lay = hb.BasisLayout(1, ())
    h = omega / 2 * (hb.operator_factory("proj", 0, lay, levels=("+1", "0")) + hb.operator_factory("proj", 0, lay, levels=("-1", "0")))
    h = h + h.dag()
    hd = hb.dressed_transform(h).dense()
    assert np.allclose(hd, np.diag(np.diag(hd)), atol=1e-9)
    e = dict(zip(hb.DRESSED_LEVELS, np.real(np.diag(hd))))
    assert e["u"] == pytest.approx(omega / math.sqrt(2))
    assert e["d"] == pytest.approx(-omega / math.sqrt(2))
    assert e["D"] == pytest.approx(0, abs=1e-9) and e["0'"] == pytest.approx(0, abs=1e-9)


def test_dressed_kets():
    assert np.allclose(hb.bare_ket("0"), (hb.dressed_ket("u") - hb.dressed_ket("d")) / math.sqrt(2))
    assert np.allclose(hb.dressed_ket("D"), (hb.bare_ket("+1") - hb.bare_ket("-1")) / math.sqrt(2))


def test_transform_state_of_bare_zero():
    lay = hb.BasisLayout(1, ())
    s = hb.product_state(("0",), (), lay)
    t = hb.dressed_transform(s)
    want = np.zeros(4)
    want[hb.DRESSED_LEVELS.index("u")] = 1 / math.sqrt(2)
    want[hb.DRESSED_LEVELS.index("d")] = -1 / math.sqrt(2)
    assert np.allclose(t.amplitudes, want)


def test_transform_unitary():
    W = hb.DRESSED_MATRIX
    assert np.allclose(W @ W.T, np.eye(4), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_transform_involution(seed):
    rng = np.random.default_rng(seed)
    lay = hb.BasisLayout(2, (1,))
    m = rng.normal(size=(lay.total_dim,) * 2) + 1j * rng.normal(size=(lay.total_dim,) * 2)
    op = hb.Operator(m, lay)
    back = hb.dressed_transform(hb.dressed_transform(op), inverse=True)
    assert np.allclose(back.dense(), m, atol=1e-12)


def test_transform_commutes_with_embedding():
    rng = np.random.default_rng(3)
    local = rng.normal(size=(4, 4))
    lay = hb.BasisLayout(2, (2,))
    big = hb.dressed_transform(hb.spin_op(local, 1, lay))
    small = hb.dressed_transform(hb.spin_op(local, 0, hb.BasisLayout(1, ()))).dense()
    assert np.allclose(big.dense(), hb.spin_op(small, 1, lay).dense(), atol=1e-12)


def test_factory_errors():
    lay = hb.BasisLayout(2, (2,))
    with pytest.raises(hb.LayoutError):
        hb.operator_factory("bogus", 0, lay)
    with pytest.raises(hb.LayoutError):
        hb.operator_factory("a", 1, lay)
    with pytest.raises(hb.LayoutError):
        hb.operator_factory("S_z", 2, lay)


def test_layout_mismatch_rejected():
    a = hb.identity(hb.BasisLayout(2, (1,)))
    b = hb.identity(hb.BasisLayout(2, (2,)))
    with pytest.raises(hb.LayoutError):
        a + b


def test_thermal_ground():
    p, tail = hb.thermal_distribution(0.0, 5)
    assert p[0] == 1 and p[1:].sum() == 0 and tail == 0


def test_thermal_one():
    p, _ = hb.thermal_distribution(1.0, 5)
    assert p[0] == pytest.approx(0.5) and p[1] == pytest.approx(0.25)


def test_thermal_tail_at_doppler_limit():
    p, tail = hb.thermal_distribution(70.0, 250)
    assert p.sum() >= 0.95
    assert p.sum() + tail == pytest.approx(1.0, abs=1e-12)
    assert p.sum() == pytest.approx(0.9715, abs=5e-4)


def test_spin_density_and_fock_populations():
    lay = hb.BasisLayout(2, (3,))
    s = (hb.product_state(("D", "D"), (0,), lay).amplitudes + hb.product_state(("u", "d"), (2,), lay).amplitudes) / math.sqrt(2)
    s = hb.StateVector(s, lay)
    rho = s.spin_density()
    assert np.trace(rho) == pytest.approx(1)
    assert np.allclose(s.fock_populations(0), [0.5, 0, 0.5, 0])
    # mixed: motion carries which-path information
    assert np.trace(rho @ rho).real == pytest.approx(0.5)


def test_truncation_guard():
    lay = hb.BasisLayout(2, (5,))
    ok = hb.product_state(("0", "0"), (3,), lay)
    hb.check_truncation(ok)
    bad = hb.product_state(("0", "0"), (5,), lay)
    with pytest.raises(hb.TruncationError):
        hb.check_truncation(bad)


def test_state_snapshot_roundtrip(tmp_path):
    lay = hb.BasisLayout(2, (2,))
    rng = np.random.default_rng(1)
    s = hb.StateVector(rng.normal(size=lay.total_dim) + 1j * rng.normal(size=lay.total_dim), lay).normalized()
    hb.dump_state(tmp_path / "s.bin", s, t=1.5)
    back, meta = hb.load_state(tmp_path / "s.bin")
    assert np.array_equal(back.amplitudes, s.amplitudes)
    assert back.layout == lay and meta["t"] == 1.5


def test_operator_algebra_hermitian():
    lay = hb.BasisLayout(2, (2, 2))
    x = hb.mode_op("a", 0, lay) + hb.mode_op("adag", 0, lay)
    assert x.is_hermitian()
    assert not hb.mode_op("a", 1, lay).is_hermitian()
