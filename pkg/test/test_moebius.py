import numpy as np
import pytest
from pydantic import ValidationError

from errors import CenterOnSurface, PoleHit
from geometry import conformal_factor, willmore_energy
from model_surfaces import rotation_to
from moebius import (MoebiusMap, apply, apply_surface, choose_inversion_center, compose, conformal_invariance_check,
                     identity, inversion, normalizing_map, reflection, rescaled_inversion_limit, similarity,
                     simplify)
from .utils import *


def _random_points(n=50):
    return rng().uniform(-2.0, 2.0, size=(n, 3)) + np.array([0.0, 0.0, 5.0])


def test_atom_examples():
    assert np.allclose(apply(inversion(), np.array([2.0, 0.0, 0.0])), [0.5, 0.0, 0.0])
    assert np.allclose(apply(reflection((0, 0, 1)), np.array([1.0, 2.0, 3.0])), [1.0, 2.0, -3.0])
    x = _random_points()
    twice = compose(inversion(), inversion())
    assert np.allclose(twice.apply(x), x, rtol=1e-12)
    assert simplify(twice).word == []


def test_translated_inversion_formula():
    p = np.array([1.0, -2.0, 0.5])
    x = _random_points()
    y = x - p
    expected = y / np.sum(y * y, axis=1, keepdims=True)
    assert np.allclose(inversion(p).apply(x), expected, rtol=1e-12)


def test_group_law():
    a = compose(inversion((0.3, 0.1, -0.2)), reflection((1, 1, 0)))
    b = similarity(2.5, rotation_to((0, 1, 1)), (1.0, 0.0, -1.0))
    x = _random_points()
    lhs = compose(a, b).apply(x)
    rhs = a.apply(b.apply(x))
    assert np.allclose(lhs, rhs, rtol=1e-10)
    assert np.allclose((a @ b).apply(x), rhs, rtol=1e-10)


def test_inverse_word():
    m = compose(inversion((0.2, 0.0, 0.0)), similarity(3.0, translation=(0.0, 1.0, 0.0)))
    x = _random_points()
    assert np.allclose(m.inverse().apply(m.apply(x)), x, rtol=1e-10)
    assert simplify(compose(m.inverse(), m)).word == []


def test_simplify_drops_identity_similarities():
    m = compose(similarity(), reflection((0, 1, 0)))
    assert len(simplify(m).word) == 1
    assert simplify(identity()).word == []


def test_similarity_rejects_improper_rotation():
    with pytest.raises(ValidationError):
        similarity(1.0, np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValidationError):
        similarity(-1.0)


def test_pole_hit():
    with pytest.raises(PoleHit):
        inversion((1.0, 0.0, 0.0)).apply(np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]))


def test_word_serializes():
    m = compose(inversion((0.1, 0.2, 0.3)), reflection((0, 0, 1)))
    again = MoebiusMap.model_validate_json(m.model_dump_json())
    x = _random_points()
    assert np.allclose(again.apply(x), m.apply(x))


def test_willmore_is_conformally_invariant(unit_sphere):
    assert conformal_invariance_check(unit_sphere, identity()) == 0.0
    centers = rng().uniform(-0.5, 0.5, size=(3, 3))
    for c in centers:
        assert abs(np.linalg.norm(c) - 1) > 0.1
        assert conformal_invariance_check(unit_sphere, inversion(c)) < 1e-2


def test_inverted_sphere_stays_round(unit_sphere):
    image = apply_surface(inversion((0.2, 0.0, 0.1)), unit_sphere)
    assert willmore_energy(image) == pytest.approx(FOUR_PI, rel=1e-3)


def test_inverted_catenoid_jump(catenoid, ic2):
    assert willmore_energy(catenoid) < 1e-6
    assert willmore_energy(ic2) == pytest.approx(EIGHT_PI, rel=5e-3)
    # chain-rule jets keep the image chart conformal
    conformal_factor(ic2)


def test_rescaled_inversion_tends_to_reflection():
    ball = rng().uniform(-1.0, 1.0, size=(200, 3))
    ball = ball[np.linalg.norm(ball, axis=1) <= 1]
    limit = rescaled_inversion_limit([(k, 0.0, 0.0) for k in (10, 20, 40, 80, 160)], ball)
    assert all(b < a for a, b in zip(limit.defects, limit.defects[1:]))
    assert limit.order == pytest.approx(1.0, abs=0.1)

    at_origin = rescaled_inversion_limit([(0.0, 0.0, 7.0)], np.zeros((1, 3)))
    assert at_origin.defects[0] == pytest.approx(0.0, abs=1e-12)
    far = rescaled_inversion_limit([(0.0, 0.0, 1e6)], np.array([[1.0, 0.0, 0.0]]))
    assert far.defects[0] < 1e-5


def test_choose_inversion_center(unit_sphere):
    samples = np.concatenate([c.immersion.positions.reshape(-1, 3) for c in unit_sphere.charts])
    center = choose_inversion_center(1.0, (0, 0, 0), (0.01, 0, 0), samples)
    assert np.allclose(center, [0.01, 0, 0])
    with pytest.raises(CenterOnSurface):
        choose_inversion_center(1.0, (0, 0, 0), tuple(samples[0]), samples)


def test_normalizing_map_is_seeded(unit_sphere):
    samples = np.concatenate([c.immersion.positions.reshape(-1, 3) for c in unit_sphere.charts])
    first = normalizing_map(samples, 1.0, (0, 0, 0), (0.01, 0, 0), seed=3)
    again = normalizing_map(samples, 1.0, (0, 0, 0), (0.01, 0, 0), seed=3)
    assert np.allclose(first.second_center, again.second_center)
    assert np.allclose(first.first_center, [0.01, 0, 0])
    assert len(first.map.word) == 4
    image = first.map.apply(samples)
    assert np.all(np.isfinite(image))
