import math

import numpy as np
import pytest

from gate_lab import hamiltonians as hm
from gate_lab import hilbert as hb
from gate_lab.noise import NoiseTrace
from gate_lab.physics import TWO_PI, SystemParams, couplings, gate_time, mode_spectrum, sensitivities
from gate_lab.propagator import PropagationSpec, bell_state, propagate, spin_observables


def _dense(m):
    return m.toarray() if hasattr(m, "toarray") else np.asarray(m)


def _const_trace(value, span, dt=1e-5):
    return NoiseTrace(np.full(int(math.ceil(span / dt)) + 1, float(value)), dt)


def test_exact_without_gradient_has_no_sidebands():
    p = SystemParams.from_hz(0.0, 140e3, 20e3)
    model = hm.build_exact(p)
    labels = {t.label for t in model.terms}
    assert labels == {"J", "carrier0", "carrier1"}
    ref = sum(_dense(model.term(l).operator.matrix) for l in labels)
    assert np.allclose(_dense(model.matrix(1.3e-3)), ref)


@pytest.mark.parametrize("frame", ["interaction", "lab"])
def test_exact_hermitian(baseline, frame):
    model = hm.build_exact(baseline, motional_frame=frame)
    for t in (0.0, 1.7e-6, 3.3e-3):
        assert model.hermiticity_residual(t) < 1e-10


def test_approx_and_magnus_hermitian(baseline):
    for model in (hm.build_approx(baseline), hm.build_magnus_effective(baseline)):
        assert model.hermiticity_residual(0.0) < 1e-10


def test_exact_needs_a_mode(baseline):
    with pytest.raises(Exception):
        hm.build_exact(baseline, layout=hb.BasisLayout(2, ()))


def test_approx_without_coupling_keeps_dd():
    p = SystemParams.from_hz(0.0, 140e3, 20e3)
    model = hm.build_approx(p)
    assert {t.label for t in model.terms if np.any(_dense(t.operator.matrix))} <= {"shift0", "shift1", "single0", "single1"}
    dd = hb.product_state(("D", "D"), (), model.layout)
    (s,) = propagate(model, dd, PropagationSpec((0.0, 5e-3)))
    assert abs(dd.overlap(s)) ** 2 == pytest.approx(1.0, abs=1e-12)


def test_gate_commutes_with_shift(baseline):
    m = hm.build_approx(baseline)
    G = _dense(m.term("gate_J0").operator.matrix) + _dense(m.term("gate_Jeff").operator.matrix)
    S = _dense(m.term("shift0").operator.matrix) + _dense(m.term("shift1").operator.matrix)
    comm = G @ S - S @ G
    assert np.linalg.norm(comm) <= 1e-12 * np.linalg.norm(G) * np.linalg.norm(S)


def test_ideal_gate_evolution(baseline):
    m = hm.build_approx(baseline)
    c = couplings(baseline)
    gate = m.with_terms([m.term("gate_J0"), m.term("gate_Jeff")])
    lay = m.layout
    dd = hb.product_state(("D", "D"), (), lay)
    ud = hb.product_state(("u", "d"), (), lay).amplitudes
    du = hb.product_state(("d", "u"), (), lay).amplitudes
    times = np.linspace(0, 10e-3, 7)
    states = propagate(gate, dd, PropagationSpec((0.0, times[-1]), tuple(times)))
    J = c.J_tot
    for t, s in zip(times, states):
        want = math.cos(math.sqrt(2) * J * t) * dd.amplitudes + 1j / math.sqrt(2) * math.sin(math.sqrt(2) * J * t) * (ud + du)
        assert np.max(np.abs(s.amplitudes - want)) < 1e-8


def test_magnus_vanishes_without_drive():
    p = SystemParams.from_hz(20.0, 140e3, 0.0)
    m = hm.build_magnus_effective(p)
    assert all(np.abs(_dense(t.operator.matrix)).max() == 0 for t in m.terms)


def test_magnus_pair_coefficient(baseline):
    c = couplings(baseline)
    m = hm.build_magnus_effective(baseline)
    lay = m.layout
    pair = _dense(m.term("pair").operator.matrix)
    ud = hb.product_state(("u", "d"), (0, 0), lay).amplitudes
    dd = hb.product_state(("D", "D"), (0, 0), lay).amplitudes
    # each ordered pair (j, k) contributes sum_n G1[j, k, n] = J_eff / 2
    assert np.real(ud.conj() @ pair @ dd) == pytest.approx(-(c.G1[0, 1].sum() + c.G1[1, 0].sum()), rel=1e-12)
    assert c.G1[0, 1].sum() == pytest.approx(c.J_eff / 2, rel=1e-12)


def test_magnus_matches_first_order_dynamics(baseline):
    """Carrier plus sideband terms (no J) against the static effective Hamiltonian."""
    exact = hm.build_exact(baseline)
    drive_only = exact.with_terms([t for t in exact.terms if t.label != "J"])
    eff = hm.build_magnus_effective(baseline)
    lay = exact.layout
    dd = hb.product_state(("D", "D"), (0, 0), lay)
    t = 1e-3
    (a,) = propagate(drive_only, dd, PropagationSpec((0.0, t)))
    (b,) = propagate(eff, dd, PropagationSpec((0.0, t)))
    assert abs(abs(dd.overlap(a)) ** 2 - abs(dd.overlap(b)) ** 2) < 1e-3


def test_zero_noise_leaves_model_unchanged(baseline):
    model = hm.build_exact(baseline, motional_frame="lab")
    span = 1e-3
    z = _const_trace(0.0, span)
    noisy = hm.attach_noise(model, {"+1": z, "-1": z, "0'": z}, z)
    for t in (0.0, 2.5e-4, 9.9e-4):
        assert np.array_equal(_dense(noisy.matrix(t)), _dense(model.matrix(t)))


def test_constant_field_shift_weights(baseline):
    s = sensitivities(baseline, 7.5e-4)
    dB = 1e-9
    dw = {"+1": s.dBw_p1 * dB, "-1": s.dBw_m1 * dB, "0'": s.dBw_0p * dB}
    base = hm.build_approx(baseline)
    noisy = hm.attach_noise(base, [{k: _const_trace(v, 1e-3) for k, v in dw.items()}, {}])
    noise_op = hb.Operator(_dense(noisy.matrix(0.0)) - _dense(base.matrix(0.0)), base.layout)
    d = hb.dressed_transform(noise_op).dense()
    lay = base.layout
    weights = {"0'": 4, "D": 2, "d": -3, "u": -3}
    for level, w in weights.items():
        k = hb.DRESSED_LEVELS.index(level) * 4 + hb.DRESSED_LEVELS.index("0'")
        assert d[k, k].real == pytest.approx(w / 8 * dw["0'"], rel=1e-6)


def test_leak_couplings_of_field_noise(baseline):
    s = sensitivities(baseline, 7.5e-4)
    dw = {"+1": s.dBw_p1, "-1": s.dBw_m1, "0'": s.dBw_0p}
    base = hm.build_approx(baseline)
    noisy = hm.attach_noise(base, [{k: _const_trace(v, 1e-3) for k, v in dw.items()}, {}])
    op = _dense(noisy.matrix(0.0)) - _dense(base.matrix(0.0))
    lay = base.layout

    def elem(a, b):
        x = hb.product_state((a, "0'"), (), lay).amplitudes
        y = hb.product_state((b, "0'"), (), lay).amplitudes
        return x.conj() @ op @ y

    assert elem("u", "D").real == pytest.approx((dw["+1"] - dw["-1"]) / (4 * math.sqrt(2)), rel=1e-12)
    assert elem("D", "d").real == pytest.approx((dw["+1"] - dw["-1"]) / (4 * math.sqrt(2)), rel=1e-12)
    assert elem("u", "d").real == pytest.approx(5 / 8 * dw["0'"], rel=1e-6)
    assert abs(elem("0'", "D")) < 1e-12 * abs(dw["+1"])


def test_constant_amplitude_offset_barely_matters(baseline):
    model = hm.build_exact(baseline, motional_frame="lab")
    tau = gate_time(couplings(baseline))
    psi0 = bell_state(+1, model.layout)
    noisy = hm.attach_noise(model, amplitude=_const_trace(0.005 * baseline.drive, tau, dt=tau / 10))
    (a,) = propagate(model, psi0, PropagationSpec((0.0, tau)))
    (b,) = propagate(noisy, psi0, PropagationSpec((0.0, tau)))
    fa = spin_observables(a)["fidelity"]
    fb = spin_observables(b)["fidelity"]
    assert abs(fa - fb) < 1e-5


def test_noise_window_underrun(baseline):
    model = hm.build_approx(baseline)
    short = _const_trace(1.0, 1e-4)
    noisy = hm.attach_noise(model, {"+1": short})
    with pytest.raises(hm.WindowError):
        propagate(noisy, bell_state(+1, model.layout), PropagationSpec((0.0, 1e-3)))


def test_detuned_drives_disable_pair_interaction():
    p = SystemParams.from_hz(20.0, 140e3, (20e3, 22e3))
    m = hm.build_approx(p)
    tau = gate_time(couplings(SystemParams.from_hz(20.0, 140e3, 20e3)))
    times = np.linspace(0, tau, 201)
    states = propagate(m, hb.product_state(("D", "D"), (), m.layout), PropagationSpec((0.0, tau), tuple(times)))
    transfer = max(spin_observables(s)["P_ud_du"] for s in states)
    assert transfer < 1e-2


def test_phase_flip_contract(baseline):
    m = hm.build_exact(baseline)
    flipped = hm.phase_flip(m, 1e-3)
    assert flipped.phase_flip_time == pytest.approx(5e-4)
    with pytest.raises(hm.ScheduleError):
        hm.phase_flip(flipped, 1e-3)
    no_drive = m.with_terms([m.term("J")])
    with pytest.raises(hm.ScheduleError):
        hm.phase_flip(no_drive, 1e-3)


def test_phase_flip_signs(baseline):
    m = hm.phase_flip(hm.build_exact(baseline, motional_frame="lab"), 1e-3)
    carrier = m.term("carrier0")
    assert carrier.envelope(1e-4) == 1 and carrier.envelope(6e-4) == -1
    assert m.term("J").envelope(6e-4) == 1
