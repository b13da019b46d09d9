import math

import numpy as np
import pytest

from finsler.calculus import ScalarField
from finsler.connections import (
    AnisotropicTensorField, ConnectionField, NonlinearConnectionField, berwald_connection,
    chern_connection, connection_difference, connection_from_nonlinear, covariant_derivative_tensor,
    delta_derivative, directional_covariant_derivative, formal_christoffels, geodesic_spray,
    lagrangian_field, metric_nonlinear_connection, metric_tensor_field, nonlinear_connection,
    nonlinear_connection_cartan, nonlinear_from_connection, torsion, vertical_derivative,
)
from finsler.expr import parse
from finsler.geometry import cartan_tensor, fundamental_tensor

RANDERS_PT = (np.array([0.2, -0.4]), np.array([0.7, -0.3]))
BOGO_PT = (np.array([0.1, 0.0, 0.3, -0.2]), np.array([1.0, 0.3, -0.2, 0.1]))


def constant_tensor(n, rank, array, degree=0):
    array = np.asarray(array, float)
    zeros = np.zeros(array.shape + (n,))
    return AnisotropicTensorField(n, rank, lambda x, y: array, lambda x, y: zeros, lambda x, y: zeros, degree)


def test_expdiag_closed_forms(expdiag):
    for x0 in (0.0, 0.4, -0.7):
        pd = (np.array([x0, 0.3]), np.array([1.0, 1.0]))
        gamma = formal_christoffels(expdiag, pd)
        expect = np.zeros((2, 2, 2))
        expect[1, 0, 1] = expect[1, 1, 0] = 1.0
        expect[0, 1, 1] = -math.exp(2 * x0)
        assert np.allclose(gamma, expect, atol=1e-13)
        for conn in (chern_connection(expdiag), berwald_connection(expdiag)):
            assert np.allclose(conn(*pd), expect, atol=1e-12)
    G = geodesic_spray(expdiag, (np.zeros(2), np.array([1.0, 1.0])))
    assert np.allclose(G, [-0.5, 1.0], atol=1e-14)


def test_sphere_christoffels(sphere):
    theta = 0.9
    pd = (np.array([theta, 0.2]), np.array([0.3, -1.1]))
    expect = np.zeros((2, 2, 2))
    expect[0, 1, 1] = -math.sin(theta) * math.cos(theta)
    expect[1, 0, 1] = expect[1, 1, 0] = math.cos(theta) / math.sin(theta)
    assert np.allclose(chern_connection(sphere)(*pd), expect, atol=1e-12)
    assert np.allclose(berwald_connection(sphere)(*pd), expect, atol=1e-12)


def test_flat_connections_vanish(flat2, minkowski):
    pd = (np.array([0.3, -0.5]), np.array([0.2, 0.9]))
    for fn in (formal_christoffels, geodesic_spray, nonlinear_connection):
        assert np.max(np.abs(fn(flat2, pd))) < 1e-12
    pd4 = (np.zeros(4), np.array([2.0, 1.0, 0.0, 0.3]))
    assert np.max(np.abs(chern_connection(minkowski)(*pd4))) < 1e-12


def test_randers_against_frozen(randers, frozen):
    chern, berwald = chern_connection(randers), berwald_connection(randers)
    for point in frozen["randers2"]["points"]:
        pd = (np.array(point["x"]), np.array(point["y"]))
        assert np.allclose(formal_christoffels(randers, pd), point["gamma"], rtol=1e-10, atol=1e-12)
        assert np.allclose(geodesic_spray(randers, pd), point["spray"], rtol=1e-10, atol=1e-12)
        assert np.allclose(nonlinear_connection(randers, pd), point["N"], rtol=1e-10, atol=1e-12)
        assert np.allclose(berwald(*pd), point["berwald"], rtol=1e-9, atol=1e-11)
        assert np.allclose(chern(*pd), point["chern"], rtol=1e-9, atol=1e-11)


@pytest.mark.parametrize("name", ["expdiag", "bogoslovsky3"])
def test_other_families_against_frozen(name, frozen):
    from conftest import bogoslovsky_metric, expdiag_metric
    m = expdiag_metric() if name == "expdiag" else bogoslovsky_metric(3)
    for point in frozen[name]["points"]:
        pd = (np.array(point["x"]), np.array(point["y"]))
        assert np.allclose(fundamental_tensor(m, pd).g, point["g"], rtol=1e-12, atol=1e-13)
        assert np.allclose(nonlinear_connection(m, pd), point["N"], rtol=1e-10, atol=1e-12)
        assert np.allclose(chern_connection(m)(*pd), point["chern"], rtol=1e-9, atol=1e-11)
        assert np.allclose(berwald_connection(m)(*pd), point["berwald"], rtol=1e-9, atol=1e-11)


@pytest.mark.parametrize("metric, pd", [("randers", RANDERS_PT), ("bogoslovsky", BOGO_PT)])
def test_canonical_connection_identities(metric, pd, request):
    m = request.getfixturevalue(metric)
    chern, berwald = chern_connection(m), berwald_connection(m)
    N = nonlinear_connection(m, pd)
    y = pd[1]
    for conn in (chern, berwald):
        G = conn(*pd)
        assert np.max(np.abs(torsion(conn, pd))) < 1e-10
        assert np.max(np.abs(np.einsum("aij,j->ai", G, y) - N)) < 1e-9 * max(1.0, np.max(np.abs(N)))
        assert np.allclose(conn(pd[0], 2.5 * y), G, rtol=1e-9, atol=1e-12)
    assert np.allclose(nonlinear_connection(m, (pd[0], 3 * y)), 3 * N, rtol=1e-9, atol=1e-12)
    assert np.allclose(N, nonlinear_connection_cartan(m, pd), rtol=1e-8, atol=1e-12)
    assert np.allclose(np.einsum("ai,i->a", N, y), 2 * geodesic_spray(m, pd), atol=1e-12)


@pytest.mark.parametrize("metric, pd", [("randers", RANDERS_PT), ("bogoslovsky", BOGO_PT)])
def test_chern_is_metric_compatible(metric, pd, request):
    m = request.getfixturevalue(metric)
    g = metric_tensor_field(m)
    scale = np.max(np.abs(fundamental_tensor(m, pd).g))
    assert np.max(np.abs(covariant_derivative_tensor(chern_connection(m), g, pd))) < 1e-8 * scale


def test_berwald_nabla_g_is_the_landsberg_contraction(randers):
    pd = RANDERS_PT
    g = fundamental_tensor(randers, pd).g
    Q = connection_difference(berwald_connection(randers), chern_connection(randers))(*pd)
    nabla = covariant_derivative_tensor(berwald_connection(randers), metric_tensor_field(randers), pd)
    # (nabla^B g)_{ij|k} = -Q^l_{ki} g_{lj} - Q^l_{kj} g_{il}
    expect = -np.einsum("lki,lj->ijk", Q, g) - np.einsum("lkj,il->ijk", Q, g)
    assert np.max(np.abs(nabla)) > 1e-4
    assert np.allclose(nabla, expect, atol=1e-9)
    assert np.max(np.abs(Q @ pd[1])) < 1e-9


def test_uniqueness_probe(randers):
    rng = np.random.default_rng(11)
    chern = chern_connection(randers)
    g = metric_tensor_field(randers)
    for _ in range(5):
        P = rng.normal(size=(2, 2, 2))
        P = 0.5 * (P + P.transpose(0, 2, 1))
        assert np.max(np.abs(P @ RANDERS_PT[1])) > 0
        perturbed = chern.plus(constant_tensor(2, (1, 2), 0.1 * P))
        assert np.max(np.abs(covariant_derivative_tensor(perturbed, g, RANDERS_PT))) > 1e-4


def test_torsion_of_asymmetric_perturbation(randers):
    P = np.zeros((2, 2, 2))
    P[0, 0, 1] = 0.25
    c = chern_connection(randers).plus(constant_tensor(2, (1, 2), P))
    assert np.allclose(torsion(c, RANDERS_PT), P - P.transpose(0, 2, 1), atol=1e-12)


def test_pseudo_riemannian_reductions(expdiag):
    pd = (np.array([0.3, 0.1]), np.array([0.5, -1.2]))
    gamma = formal_christoffels(expdiag, pd)
    assert np.allclose(nonlinear_connection(expdiag, pd), np.einsum("aij,j->ai", gamma, pd[1]), atol=1e-13)
    Q = connection_difference(chern_connection(expdiag), berwald_connection(expdiag))
    assert np.max(np.abs(Q(*pd))) < 1e-12


def test_delta_derivative(randers, flat2):
    f = ScalarField(parse("sin(x0) * x1", 2), 2)
    pd = (np.array([0.4, 2.0]), np.array([1.0, 0.5]))
    assert math.isclose(delta_derivative(f, flat2, pd, 0), math.cos(0.4) * 2.0, rel_tol=1e-13)
    assert delta_derivative(ScalarField(parse("y0", 2), 2), flat2, pd, 1) == 0
    for i in range(2):
        assert abs(delta_derivative(randers.lagrangian, randers, RANDERS_PT, i)) < 1e-10


def test_vertical_derivative(randers, expdiag):
    g = metric_tensor_field(randers)
    C = cartan_tensor(randers, RANDERS_PT).lower
    assert np.allclose(vertical_derivative(g, RANDERS_PT), 2 * C, atol=1e-13)
    assert np.max(np.abs(vertical_derivative(metric_tensor_field(expdiag), RANDERS_PT))) < 1e-13
    L = lagrangian_field(randers)
    dL = vertical_derivative(L, RANDERS_PT)
    assert math.isclose(dL @ RANDERS_PT[1], 2 * randers.L(*RANDERS_PT), rel_tol=1e-13)


def test_isotropic_vector_on_flat_metric(flat2):
    T = AnisotropicTensorField.from_expressions(2, (1, 0), ["x0 * x1", "exp(x1)"])
    pd = (np.array([0.5, 0.2]), np.array([1.0, 0.0]))
    got = covariant_derivative_tensor(chern_connection(flat2), T, pd)
    assert np.allclose(got, [[0.2, 0.5], [0.0, math.exp(0.2)]])
    assert np.allclose(directional_covariant_derivative(chern_connection(flat2), T, pd, [1, 1]),
                       [0.7, math.exp(0.2)])


def test_gamma_n_round_trips(randers):
    chern, berwald = chern_connection(randers), berwald_connection(randers)
    N = nonlinear_connection(randers, RANDERS_PT)
    assert np.allclose(nonlinear_from_connection(chern)(*RANDERS_PT), N, atol=1e-9)
    assert np.allclose(nonlinear_from_connection(berwald)(*RANDERS_PT), N, atol=1e-9)
    nc = metric_nonlinear_connection(randers)
    from_n = connection_from_nonlinear(nc)
    assert np.allclose(from_n(*RANDERS_PT), berwald(*RANDERS_PT), atol=1e-12)
    assert np.allclose(nonlinear_from_connection(from_n)(*RANDERS_PT), nc(*RANDERS_PT), atol=1e-9)


def test_custom_connection_from_expressions():
    comps = [[["y0 * y1 / (y0^2 + y1^2)", "0"], ["0", "x0"]], [["0", "1"], ["1", "0"]]]
    c = ConnectionField.from_expressions(2, comps)
    pd = (np.array([2.0, 0.0]), np.array([1.0, 1.0]))
    G = c(*pd)
    assert G.shape == (2, 2, 2)
    assert G[0, 0, 0] == 0.5 and G[0, 1, 1] == 2.0 and G[1, 0, 1] == 1.0
    nl = NonlinearConnectionField.from_expressions(2, [["y0", "0"], ["0", "y1"]])
    assert np.allclose(nonlinear_from_connection(connection_from_nonlinear(nl))(*pd), nl(*pd))
    assert np.allclose(c.dy(*pd)[0, 0, 0], [0.0, 0.0])
