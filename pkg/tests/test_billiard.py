import json
import math

import numpy as np
import pytest

from pistonsim.billiard import (
    NONRETURN,
    OK,
    CrossSectionPoint,
    VerificationRecord,
    _cos_out,
    _jacobian,
    _map_batch,
    collision_map,
    df_norm_diagnostic,
    induce_on_piston,
    involution_check,
    invariance_ks,
    kac_check,
    momentum_expectation,
    pressure_target,
    run_verification,
    sample_nu,
    sample_nu_hat,
    santalo_check,
    santalo_target,
    singularity_neighborhood_measure,
    write_report,
)
from pistonsim.geometry import Arc, PackedBoundary

# the unit square is side 1 of the rectangle tube with the piston at Q = 1;
# pieces: 0 bottom, 1 piston (right), 2 top, 3 left
SQ = 1.0


def test_collision_map_examples(square):
    x2, zeta = collision_map(square, 1, SQ, 0.5, CrossSectionPoint(0, (0.5, 0.0)))
    assert x2.piece == 2 and zeta == pytest.approx(1.0, abs=1e-14)
    assert x2.coords == pytest.approx((0.5, 0.0), abs=1e-14)

    x2, zeta = collision_map(square, 1, SQ, 0.5, CrossSectionPoint(0, (0.5, math.pi / 4)))
    assert x2.piece == 1 and zeta == pytest.approx(math.sqrt(2) / 2, abs=1e-14)
    assert x2.coords == pytest.approx((0.5, math.pi / 4), abs=1e-14)


def test_collision_map_corner_raises(square):
    with pytest.raises(ValueError):
        collision_map(square, 1, SQ, 0.5, CrossSectionPoint(0, (0.0, math.pi / 4)))


def test_flight_time_scales_with_speed(square):
    _, z1 = collision_map(square, 1, SQ, 0.5, CrossSectionPoint(0, (0.3, 0.2)))
    _, z2 = collision_map(square, 1, SQ, 2.0, CrossSectionPoint(0, (0.3, 0.2)))
    assert z2 == pytest.approx(z1 / 2, rel=1e-15)


def test_santalo_target_closed_forms(square, cube):
    assert santalo_target(square, 1, SQ, 0.5) == pytest.approx(math.pi / 4, abs=1e-15)
    assert santalo_target(cube, 1, SQ, 0.5) == pytest.approx(2 / 3, abs=1e-15)
    assert santalo_target(square, 1, SQ, 1.0) == pytest.approx(santalo_target(square, 1, SQ, 0.5) / math.sqrt(2), rel=1e-15)


def test_pressure_target(stadium):
    assert stadium.subdomain_measure(1, 0.5) == pytest.approx(0.892699, abs=1e-6)
    assert pressure_target(stadium, 1, 0.5, 0.5) == pytest.approx(0.5 / (2 * (math.pi / 8 + 0.5)), rel=1e-14)
    assert pressure_target(stadium, 1, 0.5, 0.5) == pytest.approx(0.280049, abs=1e-6)
    assert pressure_target(stadium, 1, 0.5, 1.0) == 2 * pressure_target(stadium, 1, 0.5, 0.5)


def test_sample_nu_angle_moments(stadium, domes, rng):
    _, C = sample_nu(stadium, 1, 0.5, 200_000, rng)
    phi = C[:, 1]
    assert abs(phi.mean()) < 3 * phi.std() / math.sqrt(phi.size)
    cos = np.cos(phi)
    assert abs(cos.mean() - math.pi / 4) < 3 * cos.std() / math.sqrt(cos.size)
    _, C = sample_nu(domes, 1, 0.5, 200_000, rng)
    cos = np.array([_cos_out(c, 3) for c in C])
    assert abs(cos.mean() - 2 / 3) < 3 * cos.std() / math.sqrt(cos.size)
    assert momentum_expectation(2) == math.pi / 4 and momentum_expectation(3) == 2 / 3


@pytest.mark.parametrize("name,q", [("square", SQ), ("stadium", 0.5), ("cube", SQ), ("domes", 0.4)])
def test_santalo_small(name, q, request):
    c = request.getfixturevalue(name)
    rec, nsing = santalo_check(c, 1, q, 0.5, 100_000, np.random.default_rng(3))
    assert abs(rec.z) < 3.5
    assert nsing < 100


def test_flight_times_bounded(stadium, domes, rng):
    for c in (stadium, domes):
        tb = c.table(1, 0.5)
        pieces, C = sample_nu(c, 1, 0.5, 20_000, rng)
        _, _, chord, st = _map_batch(*tb.arrays(), pieces, C)
        ok = chord[st == OK]
        assert ok.min() > 0.0
        assert ok.max() <= c.diameter + 1e-12


def test_kac_identities_square(square):
    res = kac_check(square, 1, SQ, 0.5, 100_000, np.random.default_rng(4))
    assert res.returns.target == 4.0
    for rec in (res.returns, res.flight, res.momentum):
        assert abs(rec.z) < 3.5, rec
    assert res.nonreturn == 0


def test_induced_point_accumulates_flights(stadium):
    tb = stadium.table(1, 0.5)
    x = CrossSectionPoint(tb.piston, (0.37, 0.41), 1.0)
    ind = induce_on_piston(stadium, 1, 0.5, 0.5, x)
    assert ind.status == OK and ind.returns >= 1
    total, cur = 0.0, x
    for _ in range(ind.returns):
        cur, z = collision_map(stadium, 1, 0.5, 0.5, cur)
        total += z
    assert cur.piece == tb.piston
    assert cur.coords == pytest.approx(ind.point.coords, abs=1e-9)
    assert ind.flight_time == pytest.approx(total, rel=1e-12)


def test_nonreturn_flag(square):
    x = CrossSectionPoint(1, (0.5, 0.3), 1.0)
    assert induce_on_piston(square, 1, SQ, 0.5, x, cap=1).status == NONRETURN
    with pytest.raises(ValueError):
        induce_on_piston(square, 1, SQ, 0.5, CrossSectionPoint(0, (0.5, 0.3)))


def test_nu_hat_sampling_on_piston(stadium, rng):
    pieces, C = sample_nu_hat(stadium, 1, 0.5, 1000, rng)
    tb = stadium.table(1, 0.5)
    assert np.all(pieces == tb.piston)
    assert C[:, 0].min() >= 0.0 and C[:, 0].max() <= stadium.ell


def test_invariance_small(stadium, domes):
    for c in (stadium, domes):
        ks = invariance_ks(c, 1, 0.5, 100_000, np.random.default_rng(5))
        assert max(ks.values()) < 0.01


@pytest.mark.parametrize("name", ["square", "stadium", "cube", "domes"])
def test_involution(name, request):
    c = request.getfixturevalue(name)
    q = SQ if name in ("square", "cube") else 0.5
    err, n = involution_check(c, 1, q, 10_000, np.random.default_rng(6))
    assert n > 9_000
    assert err <= 1e-9


def _square_jacobian(s, phi):
    """Analytic Jacobian of the square's map from the bottom wall in (s, phi)."""
    if phi > 0 and s + math.tan(phi) > 1.0:  # right wall
        return np.array([[-1.0 / math.tan(phi), -(1.0 - s) / math.sin(phi) ** 2], [0.0, -1.0]])
    if phi < 0 and s + math.tan(phi) < 0.0:  # left wall
        return np.array([[-1.0 / math.tan(-phi), -s / math.sin(phi) ** 2], [0.0, -1.0]])
    return np.array([[-1.0, -1.0 / math.cos(phi) ** 2], [0.0, -1.0]])


def test_square_jacobian_oracle(square, rng):
    tb = square.table(1, SQ)
    checked = 0
    for s, phi in zip(rng.uniform(0.05, 0.95, 400), rng.uniform(-1.2, 1.2, 400)):
        c = np.array([s, phi])
        p, _, _, st = _map_batch(*tb.arrays(), np.array([0]), c[None, :])
        if st[0] != OK:
            continue
        J = _jacobian(tb, 0, c, int(p[0]), 1e-7)
        if J is None:
            continue
        np.testing.assert_allclose(J, _square_jacobian(s, phi), atol=1e-5 * max(1.0, np.abs(J).max()))
        checked += 1
    assert checked > 350


def test_circle_jacobian_oracle():
    R = 0.7
    tb = PackedBoundary.from_pieces([Arc((0.0, 0.0), R, 0.0, 2 * math.pi)])
    r = np.random.default_rng(8)
    C = np.column_stack([r.uniform(0.5, 3.5, 50), r.uniform(-1.3, 1.3, 50)])
    p, c2, chord, st = _map_batch(*tb.arrays(), np.zeros(50, dtype=np.int64), C)
    assert np.all(st == OK)
    L = 2 * math.pi * R
    np.testing.assert_allclose(np.mod(c2[:, 0] - C[:, 0], L), np.mod(R * (math.pi - 2 * C[:, 1]), L), atol=1e-12)
    np.testing.assert_allclose(c2[:, 1], C[:, 1], atol=1e-12)
    np.testing.assert_allclose(chord, 2 * R * np.cos(C[:, 1]), atol=1e-12)
    oracle = np.array([[1.0, -2 * R], [0.0, 1.0]])
    for c in C:
        if abs(np.mod(c[0] + R * (math.pi - 2 * c[1]), L) - L / 2) > L / 2 - 1e-3:
            continue  # image straddles the chart seam
        J = _jacobian(tb, 0, c, 0, 1e-7)
        np.testing.assert_allclose(J, oracle, atol=1e-5)


def test_df_norm_diagnostic_finite(stadium, domes):
    for c in (stadium, domes):
        out = df_norm_diagnostic(c, 1, 0.5, 0.5, 2_000, np.random.default_rng(9))
        assert out["samples"] > 1_000
        assert math.isfinite(out["max"]) and out["median"] <= out["q99"] <= out["max"]


def _square_neighborhood_quadrature(gamma, n):
    """Grid quadrature of the same set for the unit square, one wall times four by symmetry."""
    h = 1.0 / n
    s = (np.arange(n) + 0.5) * h
    total = 0.0
    phis = (np.arange(n) + 0.5) * (math.pi / n) - math.pi / 2
    for phi in phis:
        d0 = np.minimum(np.minimum(s, 1 - s), math.pi / 2 - abs(phi))
        t = math.tan(phi)
        x1 = s + t
        top = (x1 >= 0) & (x1 <= 1)
        d1 = np.empty(n)
        s1 = 1 - x1[top]
        d1[top] = np.minimum(np.minimum(s1, 1 - s1), math.pi / 2 - abs(phi))
        side = ~top
        with np.errstate(divide="ignore"):
            y1 = (1 - s[side]) / t if phi > 0 else s[side] / -t
        d1[side] = np.minimum(np.minimum(y1, 1 - y1), abs(phi))
        inside = (d0 < gamma) | (d1 < gamma)
        total += inside.sum() * math.cos(phi)
    # nu = ds cos(phi) dphi / (2 * perimeter); four identical walls
    return 4 * total * h * (math.pi / n) / 8


def test_neighborhood_matches_quadrature(square):
    gamma = 0.01
    est, se = singularity_neighborhood_measure(square, 1, SQ, gamma, 1_000_000, np.random.default_rng(10))
    fine = _square_neighborhood_quadrature(gamma, 3000)
    coarse = _square_neighborhood_quadrature(gamma, 1500)
    qerr = abs(fine - coarse)
    assert abs(est - fine) < 3 * math.hypot(se, qerr)


def test_neighborhood_limits(stadium):
    p0, _ = singularity_neighborhood_measure(stadium, 1, 0.5, 0.0, 50_000, np.random.default_rng(11))
    assert p0 == 0.0
    vals = [singularity_neighborhood_measure(stadium, 1, 0.5, g, 100_000, np.random.default_rng(12)) for g in (0.1, 0.05, 0.01)]
    for (a, sa), (b, sb) in zip(vals, vals[1:]):
        assert b <= a + 3 * math.hypot(sa, sb)
    with pytest.raises(ValueError):
        singularity_neighborhood_measure(stadium, 1, 0.5, 0.7, 10, np.random.default_rng(0))


def test_report_roundtrip(square, tmp_path):
    recs = run_verification(square, np.random.default_rng(13), Q=SQ, samples=5_000, horizon=200.0, orbits=4)
    path = write_report(recs, tmp_path / "r.json")
    body = json.loads(path.read_text())
    assert [r["check"] for r in body][:2] == ["santalo_2d", "kac_return_time"]
    assert set(body[0]) == {"check", "target", "estimate", "stderr", "z"}
    rec = VerificationRecord.from_samples("x", 1.0, [1.0, 1.0, 1.0])
    assert rec.z == 0.0
