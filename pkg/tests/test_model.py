import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings, strategies as st

from qtraj import hilbert as hb
from qtraj import model as m
from qtraj.errors import NonUnitaryError, NotCompletelyPositiveError, TruncationError

SM = hb.sigma_minus()
EE = np.diag([0.0, 1.0]).astype(complex)


def random_density(rng, d):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = A @ A.conj().T
    return rho / np.trace(rho)


def random_system(rng, d, n_ch):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    H = 0.5 * (A + A.conj().T)
    chans = [
        m.JumpChannel(f"c{j}", rng.uniform(0.2, 2.0), rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))
        for j in range(n_ch)
    ]
    return m.OpenSystem(H, chans)


def random_unitary(rng, n):
    return scipy.stats.unitary_group.rvs(n, random_state=rng)


# -- effective Hamiltonian ---------------------------------------------------------


def test_heff_pure_decay():
    sys = m.OpenSystem(np.zeros((2, 2)), [m.JumpChannel("s", 1.7, SM)])
    assert np.allclose(m.effective_hamiltonian(sys), -0.5j * 1.7 * EE, atol=0, rtol=0)


def test_heff_additive_channels():
    one = m.OpenSystem(np.zeros((2, 2)), [m.JumpChannel("s", 2.0, SM)])
    two = m.OpenSystem(np.zeros((2, 2)), [m.JumpChannel("a", 1.0, SM), m.JumpChannel("b", 1.0, SM)])
    assert np.max(np.abs(m.effective_hamiltonian(one) - m.effective_hamiltonian(two))) < 1e-15


def test_heff_driven_two_level_entries():
    om, de, ga = 0.7, -1.3, 1.1
    heff = m.effective_hamiltonian(m.build_two_level(om, de, ga))
    # (-delta - i gamma/2)|e><e| - (omega/2)(sigma_plus + sigma_minus)
    expected = np.array([[0, -om / 2], [-om / 2, -de - 0.5j * ga]])
    assert np.allclose(heff, expected, atol=1e-15)


# -- Liouvillian ---------------------------------------------------------------------


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_liouvillian_trace_preserving_and_hermiticity(seed):
    rng = np.random.default_rng(seed)
    sys = random_system(rng, 3, 2)
    L = m.liouvillian(sys)
    rho = random_density(rng, 3)
    out = hb.apply_super(L, rho)
    assert abs(np.trace(out)) < 1e-10
    assert np.max(np.abs(out - out.conj().T)) < 1e-10


def test_liouvillian_pure_decay_excited():
    g = 0.9
    sys = m.build_two_level(0.0, 0.0, g)
    out = hb.apply_super(m.liouvillian(sys), hb.projector(hb.basis(2, 1)))
    assert np.allclose(out, g * np.diag([1.0, -1.0]), atol=1e-15)


def test_liouvillian_two_term_form():
    rng = np.random.default_rng(5)
    sys = random_system(rng, 3, 2)
    L = m.liouvillian(sys)
    heff = m.effective_hamiltonian(sys)
    for _ in range(20):
        rho = random_density(rng, 3)
        direct = -1j * (heff @ rho - rho @ heff.conj().T)
        for ch in sys.channels:
            direct += ch.rate * ch.op @ rho @ ch.op.conj().T
        assert np.max(np.abs(hb.apply_super(L, rho) - direct)) < 1e-12


@pytest.mark.parametrize("s", [0.5, 2.0, 10.0])
def test_rate_operator_rescaling(s):
    rng = np.random.default_rng(6)
    sys = random_system(rng, 3, 2)
    scaled = sys.with_channels([m.JumpChannel(c.label, c.rate / s**2, s * c.op) for c in sys.channels])
    assert np.max(np.abs(m.liouvillian(sys) - m.liouvillian(scaled))) < 1e-12


def test_rescaling_quarter_rate_double_op():
    sys = m.build_two_level(1.0, 0.3, 1.0)
    alt = sys.with_channels([m.JumpChannel("s", 0.25, 2 * SM)])
    assert np.max(np.abs(m.liouvillian(sys) - m.liouvillian(alt))) < 1e-12


def test_recycling_superoperator_sum():
    rng = np.random.default_rng(7)
    sys = random_system(rng, 3, 3)
    total = m.recycling_superoperator(sys)
    parts = sum(m.recycling_superoperator(sys, [j]) for j in range(3))
    assert np.allclose(total, parts, atol=1e-13)


def test_closed_system_and_validation():
    sys = m.OpenSystem(np.diag([0.0, 1.0]), [])
    assert sys.n_channels == 0
    with pytest.raises(ValueError):
        m.OpenSystem(np.array([[0, 1], [0, 0]]), [])
    with pytest.raises(ValueError):
        m.JumpChannel("x", -1.0, SM)
    with pytest.raises(ValueError):
        m.OpenSystem(np.zeros((2, 2)), [m.JumpChannel("x", 1.0, np.eye(3))])


# -- canonicalization -----------------------------------------------------------------


def test_canonicalize_diagonal_gamma():
    rng = np.random.default_rng(8)
    ops = [rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)) for _ in range(2)]
    H = np.diag([0.0, 0.4, 1.0])
    form = m.LindbladMatrixForm(np.diag([0.7, 1.9]), ops)
    sys = m.OpenSystem(H, m.canonicalize_lindblad(form))
    assert np.max(np.abs(m.liouvillian(sys) - m.matrix_form_liouvillian(H, form))) < 1e-12


def test_canonicalize_rank_one_gamma():
    rng = np.random.default_rng(9)
    c1, c2 = (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)) for _ in range(2))
    chans = m.canonicalize_lindblad(m.LindbladMatrixForm(np.ones((2, 2)), [c1, c2]))
    assert len(chans) == 1
    assert chans[0].rate == 1.0
    op = chans[0].op
    # eigenvector fixed only up to sign
    phase = np.vdot(c1 + c2, op) / np.vdot(c1 + c2, c1 + c2)
    assert abs(abs(phase) - 1) < 1e-12
    assert np.max(np.abs(op - phase * (c1 + c2))) < 1e-12


def test_canonicalize_rejects_negative():
    with pytest.raises(NotCompletelyPositiveError):
        m.canonicalize_lindblad(m.LindbladMatrixForm(np.diag([1.0, -0.1]), [SM, EE]))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_canonicalize_reproduces_matrix_form(seed):
    rng = np.random.default_rng(seed)
    ops = [rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)) for _ in range(3)]
    A = rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2))
    gamma = A @ A.conj().T
    H = np.diag([0.0, 0.5, -0.2])
    form = m.LindbladMatrixForm(gamma, ops)
    sys = m.OpenSystem(H, m.canonicalize_lindblad(form))
    assert sys.n_channels == 2
    assert np.max(np.abs(m.liouvillian(sys) - m.matrix_form_liouvillian(H, form))) < 1e-10


# -- mixing and displacement -------------------------------------------------------------


def test_mix_identity_and_permutation():
    rng = np.random.default_rng(10)
    sys = random_system(rng, 3, 3)
    same = m.mix_channels(sys, np.eye(3))
    for a, b in zip(sys.jump_operators(), same.jump_operators()):
        assert np.allclose(a, b, atol=1e-15)
    P = np.eye(3)[[2, 0, 1]]
    perm = m.mix_channels(sys, P)
    assert np.array_equal(perm.jump_operators()[0], sys.jump_operators()[2])
    assert np.max(np.abs(m.liouvillian(perm) - m.liouvillian(sys))) < 1e-12


def test_mix_hadamard():
    rng = np.random.default_rng(11)
    sys = random_system(rng, 3, 2)
    mixed = m.mix_channels(sys, np.array([[1, 1], [1, -1]]) / np.sqrt(2))
    assert np.max(np.abs(m.liouvillian(mixed) - m.liouvillian(sys))) < 1e-12
    assert np.array_equal(mixed.hamiltonian, sys.hamiltonian)


def test_mix_rejects_non_unitary():
    sys = random_system(np.random.default_rng(12), 2, 2)
    with pytest.raises(NonUnitaryError):
        m.mix_channels(sys, np.array([[1, 1], [0, 1]]))


@given(st.integers(0, 2**32 - 1), st.integers(2, 4))
@settings(max_examples=20, deadline=None)
def test_mix_random_unitaries(seed, n):
    rng = np.random.default_rng(seed)
    sys = random_system(rng, 3, n)
    mixed = m.mix_channels(sys, random_unitary(rng, n))
    assert np.max(np.abs(m.liouvillian(mixed) - m.liouvillian(sys))) < 1e-10


def test_displace_zero_is_identity():
    sys = m.build_two_level(1.0, -1.0, 1.0)
    d = m.displace_channel(sys, 0, 0.0)
    assert np.array_equal(d.hamiltonian, sys.hamiltonian)
    assert np.array_equal(d.jump_operators()[0], sys.jump_operators()[0])


@pytest.mark.parametrize("amp", [2.0, 1 + 1j])
def test_displace_two_level(amp):
    sys = m.build_two_level(1.0, -1.0, 1.0)
    d = m.displace_channel(sys, 0, amp)
    assert np.max(np.abs(m.liouvillian(d) - m.liouvillian(sys))) < 1e-12


@given(st.integers(0, 2**32 - 1), st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
@settings(max_examples=20, deadline=None)
def test_displace_random(seed, amp):
    rng = np.random.default_rng(seed)
    sys = random_system(rng, 3, 2)
    d = m.displace_channel(sys, 1, amp)
    assert np.max(np.abs(m.liouvillian(d) - m.liouvillian(sys))) < 1e-10


# -- catalog ---------------------------------------------------------------------------


def test_two_level_structure():
    sys = m.build_two_level(0.0, 0.0, 1.0)
    assert sys.dim == 2 and sys.labels == ("g", "e")
    assert np.array_equal(sys.hamiltonian, np.zeros((2, 2)))
    assert np.array_equal(sys.channels[0].op, SM)


def test_two_level_stationary_population_closed_form():
    from qtraj.analysis import steady_state

    for om, de, ga in [(1.0, -1.0, 1.0), (2.0, 0.5, 1.0), (0.3, 0.0, 2.0)]:
        rho = steady_state(m.build_two_level(om, de, ga))
        expected = (om**2 / 4) / (de**2 + ga**2 / 4 + om**2 / 2)
        assert abs(rho[1, 1].real - expected) < 1e-10
    rho = steady_state(m.build_two_level(1.0, -1.0, 1.0))
    assert abs(rho[1, 1].real - 1 / 7) < 1e-10


def test_three_level_reduction():
    two = m.build_two_level(0.8, -0.4, 1.2)
    three = m.build_three_level(0.8, 0.0, -0.4, 0.7, 1.2, 0.0)
    assert np.allclose(three.hamiltonian[:2, :2], two.hamiltonian, atol=1e-15)
    assert np.allclose(three.channels[0].absorbed[:2, :2], two.channels[0].absorbed, atol=1e-15)
    assert [c.label for c in three.channels] == ["s", "w"]


def test_three_level_recycling():
    gs, gw = 1.3, 0.02
    sys = m.build_three_level(1.0, 0.1, 0.0, 0.0, gs, gw)
    rng = np.random.default_rng(13)
    gg = np.diag([1.0, 0.0, 0.0])
    for _ in range(5):
        rho = random_density(rng, 3)
        Js = hb.apply_super(m.recycling_superoperator(sys, [0]), rho)
        Jw = hb.apply_super(m.recycling_superoperator(sys, [1]), rho)
        assert np.max(np.abs(Js - gs * rho[1, 1] * gg)) < 1e-12
        assert np.max(np.abs(Jw - gw * rho[2, 2] * gg)) < 1e-12


def test_jcm_decoupled_when_eta_zero():
    sys = m.build_jcm_ion(1.0, 0.3, 2.0, 0.0, 0.1, 4)
    H = sys.hamiltonian
    assert sys.dim == 10
    for n in range(5):
        block = slice(2 * n, 2 * n + 2)
        off = H[block].copy()
        off[:, block] = 0
        assert np.all(off == 0)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_jcm_rwa_dressed_splitting(n):
    nu, omega, eta = 1.0, 0.5, 0.1
    sys = m.build_jcm_ion(nu, -nu, omega, eta, 0.0, 8, rwa=True)
    g = eta * omega / 2
    # the RWA coupling leaves {|n-1,e>, |n,g>} invariant
    idx = [2 * (n - 1) + 1, 2 * n]
    H = sys.hamiltonian
    rest = np.delete(H[idx], idx, axis=1)
    assert np.all(rest == 0)
    w = np.linalg.eigvalsh(H[np.ix_(idx, idx)])
    centre = nu * (n - 0.5)
    assert np.max(np.abs(w - (centre + np.array([-1, 1]) * g * np.sqrt(n)))) < 1e-10


def test_jcm_full_minus_rwa_is_counter_rotating():
    full = m.build_jcm_ion(1.0, -1.0, 0.5, 0.2, 0.1, 5)
    rwa = m.build_jcm_ion(1.0, -1.0, 0.5, 0.2, 0.1, 5, rwa=True)
    a = hb.destroy(6)
    counter = np.kron(a.conj().T, hb.sigma_plus()) + np.kron(a, SM)
    assert np.allclose(full.hamiltonian - rwa.hamiltonian, -0.5 * 0.5 * 0.2 * counter, atol=1e-15)


def test_jcm_validation():
    with pytest.raises(ValueError):
        m.build_jcm_ion(1.0, 0.0, 1.0, 0.1, 0.1, 0)
    with pytest.raises(ValueError):
        m.build_jcm_ion(1.0, 0.0, 1.0, -0.1, 0.1, 3)


def test_decaying_qubit_equals_two_level():
    q = m.build_decaying_qubit(0.6)
    t = m.build_two_level(0.0, 0.0, 0.6)
    assert q.labels == ("0", "1")
    assert np.allclose(m.liouvillian(q), m.liouvillian(t), atol=0)


@pytest.mark.parametrize("name", sorted(m.CATALOG))
def test_catalog_heff_dissipative(name):
    params = {
        "two_level": dict(omega=1.0, delta=-1.0, gamma=1.0),
        "three_level": dict(omega_s=1.0, omega_w=0.1, delta_s=0.0, delta_w=0.2, gamma_s=1.0, gamma_w=0.01),
        "jcm_ion": dict(nu=1.0, delta=-1.0, omega=0.5, eta=0.1, gamma=0.1, n_max=6),
        "decaying_qubit": dict(gamma=1.0),
    }[name]
    heff = m.effective_hamiltonian(m.build_model(name, params))
    # H_eff - H_eff^+ = i * (negative semidefinite)
    anti = (heff - heff.conj().T) / 2j
    assert np.max(np.linalg.eigvalsh(anti)) <= 1e-12


def test_build_model_unknown():
    with pytest.raises(KeyError):
        m.build_model("nope", {})


def test_fock_guard():
    sys = m.build_jcm_ion(1.0, -1.0, 0.5, 0.1, 0.1, 4)
    ground = hb.projector(hb.basis(sys.dim, 0))
    assert m.check_fock_truncation(sys, ground) == 0.0
    rho = np.zeros((10, 10), dtype=complex)
    rho[0, 0] = 1 - 2e-4
    rho[2 * 4, 2 * 4] = 2e-4
    with pytest.raises(TruncationError):
        m.check_fock_truncation(sys, rho)
    rho[0, 0], rho[8, 8] = 1 - 5e-5, 5e-5
    assert m.check_fock_truncation(sys, rho) == pytest.approx(5e-5)
    # the level below the cutoff does not count
    rho[0, 0], rho[8, 8], rho[7, 7] = 1 - 5e-5 - 1e-2, 5e-5, 1e-2
    assert m.check_fock_truncation(sys, rho) == pytest.approx(5e-5)
