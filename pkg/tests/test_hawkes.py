import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from hotrod.hawkes import (
    BasisSpec,
    EventSequence,
    EventTypeMap,
    HawkesModel,
    compensator,
    extract_events,
    fit_mle,
    granger_graph,
    infectivity,
    intensity,
    loglik,
    simulate,
)


def bump(t, c, s):
    """Gaussian density at t renormalised to unit mass on [0, inf)."""
    if t < 0:
        return 0.0
    return np.exp(-0.5 * ((t - c) / s) ** 2) / (np.sqrt(2 * np.pi) * s * stats.norm.cdf(c / s))


def random_model(U, basis, seed, scale=0.3):
    rng = np.random.default_rng(seed)
    coeffs = rng.uniform(0, 1, size=(U, U, basis.M))
    coeffs *= scale / max(coeffs.sum(axis=-1).sum(axis=0).max(), 1e-12)
    return HawkesModel(rng.uniform(0.01, 0.05, size=U), coeffs, basis)


def seq_of(times, types, U, horizon):
    return EventSequence(float(horizon), np.asarray(times, float), np.asarray(types), U)


# ---- event types and extraction ----------------------------------------------

def test_type_map_size_and_bijection():
    for C in (1, 2, 3, 5):
        tmap = EventTypeMap(C)
        assert tmap.U == C * (C - 1)
        assert [tmap.type_of(*tmap.pair_of(u)) for u in range(tmap.U)] == list(range(tmap.U))


def test_extract_events_example():
    tmap = EventTypeMap(4)
    seq = extract_events([1, 1, 2, 2, 3], tmap)
    assert seq.times.tolist() == [2.0, 4.0]
    assert seq.types.tolist() == [tmap.type_of(1, 2), tmap.type_of(2, 3)]


def test_extract_constant_is_empty():
    assert len(extract_events([2] * 10, EventTypeMap(3))) == 0


def test_extract_ignores_missing():
    assert len(extract_events([1, 3, 2], EventTypeMap(3))) == 0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.lists(st.integers(0, 4), min_size=2, max_size=60))
def test_extracted_types_inside_map(C, labels):
    tmap = EventTypeMap(C)
    seq = extract_events(labels, tmap)
    lab = np.array(labels)
    expected = np.count_nonzero((lab[:-1] != lab[1:]) & (lab[:-1] < C) & (lab[1:] < C))
    assert len(seq) == expected
    assert np.all((seq.types >= 0) & (seq.types < tmap.U))


# ---- basis, intensity, compensator -------------------------------------------

def test_basis_unit_integral():
    basis = BasisSpec((0.0, 5.0, 40.0), 7.0)
    for m, c in enumerate(basis.centers):
        mass, _ = integrate.quad(bump, 0, np.inf, args=(c, 7.0))
        assert mass == pytest.approx(1.0, abs=1e-9)
        assert basis.integral(1e6)[m] == pytest.approx(1.0, abs=1e-12)


def test_intensity_empty_history_is_base():
    mdl = random_model(3, BasisSpec(), 0)
    empty = seq_of([], [], 3, 100)
    assert intensity(mdl, empty, 50.0, 1) == mdl.base[1]


def test_intensity_single_event_by_hand():
    basis = BasisSpec((1.0,), 1.0)
    coeffs = np.zeros((2, 2, 1))
    coeffs[0, 1, 0] = 0.5
    mdl = HawkesModel(np.array([0.1, 0.2]), coeffs, basis)
    hist = seq_of([3.0], [1], 2, 10)
    assert intensity(mdl, hist, 4.5, 0) == pytest.approx(0.1 + 0.5 * bump(1.5, 1.0, 1.0), abs=1e-14)


def test_intensity_additive():
    mdl = random_model(2, BasisSpec(), 1)
    both = seq_of([10.0, 25.0], [0, 1], 2, 100)
    one = seq_of([10.0], [0], 2, 100)
    two = seq_of([25.0], [1], 2, 100)
    for u in (0, 1):
        lhs = intensity(mdl, both, 40.0, u) - mdl.base[u]
        rhs = intensity(mdl, one, 40.0, u) + intensity(mdl, two, 40.0, u) - 2 * mdl.base[u]
        assert lhs == pytest.approx(rhs, abs=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 200))
def test_intensity_at_least_base(seed, t):
    mdl = random_model(2, BasisSpec(), seed)
    hist = simulate(mdl, 200.0, seed=seed)
    for u in range(2):
        assert intensity(mdl, hist, t, u) >= mdl.base[u]


def test_compensator_matches_quadrature():
    mdl = random_model(2, BasisSpec(), 2)
    seq = seq_of([3.0, 17.5, 40.0, 41.0, 90.0], [0, 1, 1, 0, 1], 2, 150)
    brk = np.sort(np.concatenate([seq.times] + [c + seq.times for c in mdl.basis.centers]))
    brk = brk[brk < 150].tolist()
    for u in range(2):
        ref, _ = integrate.quad(lambda s: intensity(mdl, seq, s, u), 0, 150, points=brk,
                                limit=500, epsabs=1e-11, epsrel=1e-11)
        assert compensator(mdl, seq)[u] == pytest.approx(ref, abs=1e-6)


def test_infectivity_matches_quadrature():
    basis = BasisSpec()
    mdl = random_model(3, basis, 3)
    A = infectivity(mdl).A
    upper = 10 * basis.sigma + basis.centers[-1]
    for u in range(3):
        for v in range(3):
            phi = lambda s: float(np.dot(mdl.coeffs[u, v], basis.kernel(s)))  # noqa: E731
            ref, _ = integrate.quad(phi, 0, upper, points=basis.centers, epsabs=1e-12)
            assert A[u, v] == pytest.approx(ref, abs=1e-6)


def test_infectivity_simple_cases():
    basis = BasisSpec((5.0,), 2.0)
    coeffs = np.zeros((2, 2, 1))
    assert np.all(infectivity(HawkesModel(np.ones(2), coeffs, basis)).A == 0)
    coeffs[0, 1, 0] = 0.4
    assert infectivity(HawkesModel(np.ones(2), coeffs, basis)).A[0, 1] == 0.4


# ---- log-likelihood ----------------------------------------------------------

def test_poisson_loglik_closed_form():
    mu = np.array([0.02, 0.05])
    mdl = HawkesModel(mu, np.zeros((2, 2, 3)))
    seq = seq_of([1.0, 5.0, 9.0], [0, 1, 1], 2, 100)
    expected = 1 * np.log(0.02) + 2 * np.log(0.05) - 100 * mu.sum()
    assert loglik(mdl, seq) == pytest.approx(expected, abs=1e-12)


def test_empty_sequence_loglik():
    mdl = random_model(2, BasisSpec(), 4)
    assert loglik(mdl, seq_of([], [], 2, 300)) == pytest.approx(-300 * mdl.base.sum(), abs=1e-12)


def test_zero_intensity_gives_minus_inf():
    mdl = HawkesModel(np.array([0.0, 0.1]), np.zeros((2, 2, 3)))
    assert loglik(mdl, seq_of([5.0], [0], 2, 10)) == -np.inf


# ---- simulation --------------------------------------------------------------

def test_poisson_counts_match_law():
    mu = np.array([0.02, 0.05])
    mdl = HawkesModel(mu, np.zeros((2, 2, 3)))
    counts = np.array([simulate(mdl, 1000.0, seed=s).counts() for s in range(200)])
    se = np.sqrt(mu * 1000 / 200)
    assert np.all(np.abs(counts.mean(axis=0) - mu * 1000) <= 3 * se)


def test_zero_base_is_empty():
    mdl = HawkesModel(np.zeros(2), np.full((2, 2, 3), 0.05))
    assert len(simulate(mdl, 1000.0, seed=0)) == 0


def test_simulation_deterministic():
    mdl = random_model(3, BasisSpec(), 5)
    a, b = simulate(mdl, 1440.0, seed=11), simulate(mdl, 1440.0, seed=11)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.types, b.types)


def test_non_stationary_rejected():
    with pytest.raises(ValueError, match="non-stationary model"):
        simulate(HawkesModel(np.ones(1), np.full((1, 1, 3), 0.4)), 10.0)


def test_gate_blocks_types():
    mdl = HawkesModel(np.array([0.05, 0.05]), np.zeros((2, 2, 3)))
    seq = simulate(mdl, 2000.0, seed=1, gate=lambda t, r, ts, us: np.array([1.0, 0.0]))
    assert len(seq) > 0 and np.all(seq.types == 0)


# ---- fitting -----------------------------------------------------------------

def test_single_event_fit():
    seq = seq_of([10.0], [0], 2, 100)
    mdl, trace = fit_mle([seq], return_trace=True)
    assert np.all(np.diff(trace) >= -1e-9)
    assert mdl.base[0] > 0


def test_fit_trace_monotone():
    truth = random_model(2, BasisSpec(), 6, scale=0.4)
    seqs = [simulate(truth, 1440.0, seed=s) for s in range(20)]
    _, trace = fit_mle(seqs, return_trace=True)
    assert np.all(np.diff(trace) >= -1e-9)


def test_fit_needs_events():
    with pytest.raises(ValueError):
        fit_mle([seq_of([], [], 2, 100)])


def test_fit_deterministic():
    truth = random_model(2, BasisSpec(), 7)
    seqs = [simulate(truth, 1440.0, seed=s) for s in range(10)]
    a, b = fit_mle(seqs, seed=3), fit_mle(seqs, seed=3)
    assert np.array_equal(a.coeffs, b.coeffs) and np.array_equal(a.base, b.base)


# ---- Granger graph -----------------------------------------------------------

def test_granger_examples():
    assert granger_graph(np.zeros((3, 3)), 0.0).edges == ()
    A = np.zeros((3, 3))
    A[2, 0] = 0.2
    g = granger_graph(A, 0.0)
    assert g.edges == ((0, 2),) and g.adjacency()[2, 0]
    assert granger_graph(A, 0.3).edges == ()


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.floats(0, 1))
def test_granger_edges_consistent(seed, eps):
    A = np.random.default_rng(seed).uniform(size=(4, 4))
    assert np.array_equal(granger_graph(A, eps).adjacency(), A > eps)
