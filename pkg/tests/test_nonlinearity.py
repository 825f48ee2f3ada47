import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nlsinverse.errors import DomainError, RangeError
from nlsinverse.nonlinearity import (
    HTable,
    admissibility_constant,
    eval_F,
    eval_G,
    eval_G_prime,
    eval_H,
    from_spec,
    load_spec,
    polynomial,
    power_law,
    reconstruct_from_H,
    saturating,
    tabulate_H,
    zero,
)

BUILTINS = {
    "cubic": power_law(1, 2),
    "quintic": power_law(1, 4),
    "mixture": polynomial([(1, 2), (0.5, 4)]),
    "saturating": saturating(),
    "complex_sat": saturating(1 - 0.3j),
    "fractional": power_law(0.7, 3),
}


def test_eval_F_examples():
    cubic = BUILTINS["cubic"]
    assert eval_F(cubic, 1 + 0j) == 1
    assert eval_F(cubic, 2j) == pytest.approx(8j)
    for nl in BUILTINS.values():
        assert eval_F(nl, 0j) == 0


def test_G_and_G_prime_examples():
    assert eval_G(BUILTINS["cubic"], 3.0) == pytest.approx(9.0)
    assert eval_G_prime(BUILTINS["cubic"], 3.0) == pytest.approx(6.0)
    assert eval_G_prime(BUILTINS["quintic"], 2.0) == pytest.approx(12.0)
    for nl in BUILTINS.values():
        assert eval_G(nl, 0.0) == 0 and eval_G_prime(nl, 0.0) == 0


def test_H_examples():
    k = np.linspace(-3, 5, 17)
    assert np.allclose(eval_H(BUILTINS["cubic"], k), 2 * np.exp(-2 * k), rtol=1e-14)
    assert eval_H(BUILTINS["cubic"], 0.0) == pytest.approx(2.0)
    assert np.allclose(eval_H(BUILTINS["quintic"], k), 3 * np.exp(-3 * k), rtol=1e-14)
    assert np.allclose(eval_H(BUILTINS["mixture"], k), 2 * np.exp(-2 * k) + 1.5 * np.exp(-3 * k), rtol=1e-14)


def test_H_range_guard():
    with pytest.raises(RangeError):
        eval_H(BUILTINS["cubic"], -500.0)


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_G_prime_finite_difference(name, rng):
    nl = BUILTINS[name]
    lam = np.exp(rng.uniform(np.log(1e-3), np.log(50), 1000))
    d = 1e-5 * np.maximum(lam, 1)
    fd = (nl.G(lam + d) - nl.G(lam - d)) / (2 * d)
    gp = nl.G_prime(lam)
    assert np.all(np.abs(gp - fd) <= 1e-6 * (1 + np.abs(gp)))


@given(a=st.floats(0.1, 5), p=st.sampled_from([2, 3, 4, 6]))
def test_power_law_admissible(a, p):
    nl = power_law(a, p)
    C = admissibility_constant(nl)
    assert C <= a * p / 2 * (1 + 1e-9)
    assert nl.s_p == pytest.approx(1 - 2 / p)


def test_admissibility_constant_saturating():
    assert admissibility_constant(saturating()) <= 1.0


def test_rejects_low_power():
    with pytest.raises(DomainError):
        power_law(1, 1.5)


def test_spec_round_trip(tmp_path):
    for nl in BUILTINS.values():
        again = from_spec(json.loads(nl.to_json()))
        lam = np.linspace(0, 3, 7)
        assert np.allclose(again.h(lam), nl.h(lam))
    path = tmp_path / "nl.json"
    path.write_text('{"type":"polynomial","terms":[{"a":1.0,"p":2}]}')
    assert load_spec(path).h(np.array([2.0]))[0] == 2.0


def test_unknown_spec():
    with pytest.raises(ValueError):
        from_spec({"type": "nope"})


class TestReconstruct:
    def test_cubic_round_trip(self):
        k = np.linspace(-1, 8, 901)
        nl = reconstruct_from_H(tabulate_H(BUILTINS["cubic"], k))
        lam = np.exp(-np.linspace(-1, 8, 200))
        assert np.max(np.abs(nl.h(lam) - lam) / lam) <= 1e-6
        assert nl.amplitude_disc == pytest.approx(math.exp(0.5))

    def test_zero_table(self):
        k = np.linspace(0, 5, 50)
        nl = reconstruct_from_H(HTable(k, np.zeros(50)))
        assert np.all(nl.h(np.linspace(0, 1, 9)) == 0)

    def test_mixture_coefficients(self):
        k = np.linspace(-1, 8, 901)
        nl = reconstruct_from_H(tabulate_H(BUILTINS["mixture"], k))
        lam = np.exp(-np.linspace(-1, 8, 300))
        X = np.column_stack([lam, lam**2])
        a, b = np.linalg.lstsq(X, nl.h(lam).real, rcond=None)[0]
        assert abs(a - 1) <= 1e-6 and abs(b - 0.5) <= 1e-6

    def test_saturating_round_trip(self):
        k = np.linspace(-1, 8, 901)
        ref = BUILTINS["saturating"]
        nl = reconstruct_from_H(tabulate_H(ref, k))
        lam = np.exp(-np.linspace(-1, 8, 200))
        assert np.max(np.abs(nl.h(lam) - ref.h(lam)) / np.abs(ref.h(lam))) <= 1e-3

    def test_outside_window_rejected(self):
        nl = reconstruct_from_H(tabulate_H(BUILTINS["cubic"], np.linspace(0, 5, 100)))
        with pytest.raises(RangeError):
            nl.F(np.array([1.5]))

    def test_narrow_window(self):
        with pytest.raises(DomainError):
            reconstruct_from_H(HTable(np.array([0.0]), np.array([1.0])))

    def test_serialises_through_spec(self):
        nl = reconstruct_from_H(tabulate_H(BUILTINS["cubic"], np.linspace(0, 6, 200)))
        again = from_spec(json.loads(nl.to_json()))
        lam = np.linspace(0.01, 1, 20)
        assert np.allclose(again.h(lam), nl.h(lam), rtol=1e-14)


def test_htable_csv_round_trip(tmp_path):
    t = tabulate_H(BUILTINS["complex_sat"], np.linspace(0, 3, 31))
    t.to_csv(tmp_path / "h.csv")
    back = HTable.from_csv(tmp_path / "h.csv")
    assert np.array_equal(back.k_grid, t.k_grid) and np.array_equal(back.values, t.values)


def test_htable_rejects_unsorted():
    with pytest.raises(ValueError):
        HTable(np.array([0.0, 0.0]), np.array([1.0, 2.0]))
