import math

import numpy as np
import pytest

from nlsinverse.errors import DomainError, SimulationGuardError
from nlsinverse.gaussian import GaussianDatum, free_evolution
from nlsinverse.nls import (
    EvolutionConfig,
    Field,
    Grid2D,
    free_propagate,
    free_tail,
    grid_for_gaussian,
    picard_iterate,
    scattering_map,
    splitstep_evolve,
    strichartz_norms,
    wave_operator,
)
from nlsinverse.nonlinearity import power_law, saturating, zero
from nlsinverse.pairing import born_functional, extract_m, exact_m

CUBIC = power_law(1, 2)


def periodized_gaussian(grid, A, sigma, t, images=3):
    """Exact free evolution on the torus [-L, L)^2 by summing periodic images."""
    s = t / sigma**2
    q = 1 + 1j * s
    x = grid.x
    prof = np.zeros_like(x, dtype=complex)
    for n in range(-images, images + 1):
        prof += np.exp(-((x + 2 * grid.L * n) ** 2) / (4 * sigma**2 * q))
    return A / q * prof[:, None] * prof[None, :]


class TestGrid:
    def test_power_of_two(self):
        with pytest.raises(DomainError):
            Grid2D(10.0, 100)
        with pytest.raises(DomainError):
            Grid2D(-1.0, 64)

    def test_spacing_and_nyquist(self):
        g = Grid2D(40.0, 512)
        assert g.spacing == pytest.approx(80 / 512)
        assert g.nyquist == pytest.approx(math.pi * 512 / 80)

    def test_gaussian_box(self):
        g = grid_for_gaussian(1.0, 5.0, 128, margin=7.0)
        assert g.L == pytest.approx(14 * math.sqrt(26))


class TestFreePropagate:
    grid = Grid2D(40.0, 512)

    def test_identity_at_zero(self):
        f = Field.gaussian(self.grid, 1.0, 1.0)
        assert np.array_equal(free_propagate(f, 0.0).samples, f.samples)

    @pytest.mark.parametrize("t", [0.5, 1.0, 2.5, 5.0])
    def test_against_periodized_exact(self, t):
        A = 0.8
        f = Field.gaussian(self.grid, A, 1.0)
        got = free_propagate(f, t).samples
        ref = periodized_gaussian(self.grid, A, 1.0, t)
        assert np.max(np.abs(got - ref)) <= 1e-8 * A

    @pytest.mark.parametrize("t", [1.0, 5.0])
    def test_against_formula_in_interior(self, t):
        A = 0.8
        f = Field.gaussian(self.grid, A, 1.0)
        got = free_propagate(f, t).samples
        r = np.sqrt(self.grid.r2)
        inner = r < self.grid.L / 2
        ref = free_evolution(GaussianDatum(A, 1.0), t, r)
        assert np.max(np.abs(got - ref)[inner]) <= 1e-8 * A

    def test_group_law(self):
        f = Field.gaussian(self.grid, 1.0, 1.0)
        a = free_propagate(free_propagate(f, 0.7), 1.9)
        b = free_propagate(f, 2.6)
        assert np.max(np.abs(a.samples - b.samples)) <= 1e-12

    @pytest.mark.parametrize("t", [-3.0, 0.1, 1e3])
    def test_unitary(self, t, rng):
        g = Grid2D(10.0, 64)
        f = Field(g, rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64)))
        assert abs(free_propagate(f, t).norm() - f.norm()) <= 1e-12 * f.norm()


class TestSplitStep:
    def test_zero_nonlinearity_is_free(self):
        g = Grid2D(20.0, 128)
        f = Field.gaussian(g, 1.0, 1.0)
        cfg = EvolutionConfig(2.0, 0.05, zero())
        a = splitstep_evolve(cfg, f)
        b = free_propagate(f, 2.0)
        assert np.max(np.abs(a.samples - b.samples)) <= 1e-12

    def test_mass_conservation_real_h(self):
        g = grid_for_gaussian(1.0, 10.0, 128)
        f = Field.gaussian(g, 0.5, 1.0)
        cfg = EvolutionConfig(10.0, 0.05, saturating())
        out, traj = splitstep_evolve(cfg, f, capture=True, capture_stride=10**6)
        m = traj.l2**2
        assert np.max(np.abs(m - f.mass())) <= 1e-10 * f.mass()

    def test_complex_h_loses_mass(self):
        g = Grid2D(20.0, 64)
        f = Field.gaussian(g, 0.5, 1.0)
        out = splitstep_evolve(EvolutionConfig(1.0, 0.05, saturating(-1j)), f)
        # i u_t = -i h u  ->  |u| decays
        assert out.mass() < f.mass()

    def test_second_order(self):
        g = Grid2D(16.0, 128)
        f = Field.gaussian(g, 1.0, 1.0)
        runs = [splitstep_evolve(EvolutionConfig(1.0, dt, CUBIC), f) for dt in (0.02, 0.01, 0.005)]
        e1 = (runs[0] - runs[1]).norm()
        e2 = (runs[1] - runs[2]).norm()
        assert math.log2(e1 / e2) == pytest.approx(2.0, abs=0.2)

    def test_guard_trips(self):
        g = Grid2D(8.0, 64)
        f = Field.gaussian(g, 3.0, 0.5)
        cfg = EvolutionConfig(0.5, 0.01, power_law(-1, 2), guard_factor=1.05)
        with pytest.raises(SimulationGuardError) as exc:
            splitstep_evolve(cfg, f)
        assert exc.value.diagnostics["linf"] > 1.05 * 3.0

    def test_boundary_flag(self):
        g = Grid2D(4.0, 64)
        out = splitstep_evolve(EvolutionConfig(4.0, 0.05, zero()), Field.gaussian(g, 1.0, 1.0))
        assert not out.meta["valid"] and out.meta["boundary_mass"] > 1e-8

    def test_span_too_short(self):
        g = Grid2D(4.0, 16)
        cfg = EvolutionConfig(1.0, 0.1, zero())
        with pytest.raises(DomainError):
            splitstep_evolve(cfg, Field.zeros(g), 0.0, 0.05)

    def test_config_validation(self):
        with pytest.raises(DomainError):
            EvolutionConfig(1.0, 2.0, zero())


class TestWaveOperator:
    def test_zero_is_identity(self):
        g = Grid2D(20.0, 64)
        f = Field.gaussian(g, 1.0, 1.0)
        om = wave_operator(EvolutionConfig(2.0, 0.1, zero()), f)
        assert np.max(np.abs(om.samples - f.samples)) <= 1e-14

    def test_free_tail_matches_born_tail(self):
        # int_T^inf <e^{-it Lap} F(e^{it Lap} u0), u0> dt = pi A^4 (pi/2 - atan T) for the cubic
        g = grid_for_gaussian(1.0, 0.0, 256)
        A, T = 0.3, 2.0
        u0 = Field.gaussian(g, A, 1.0)
        val = free_tail(u0, CUBIC, T).inner(u0)
        assert val.real == pytest.approx(math.pi * A**4 * (math.pi / 2 - math.atan(T)), rel=1e-6)

    def test_born_small_amplitude(self):
        sigma = 1.0
        g = grid_for_gaussian(sigma, 5.0, 128)
        A = 0.1
        u0 = Field.gaussian(g, A, sigma)
        om = wave_operator(EvolutionConfig(5.0, 0.02, CUBIC), u0)
        m = extract_m(born_functional(om, u0), sigma)
        ref = exact_m(CUBIC, 2 * math.log(A))
        assert abs(m - ref) <= 0.01 * abs(ref)
        # pairing is -i times a real integral at leading order
        assert abs(born_functional(om, u0).real) <= 0.05 * abs(born_functional(om, u0))

    def test_doubling_T_within_tail_bound(self):
        g = grid_for_gaussian(1.0, 8.0, 128)
        u0 = Field.gaussian(g, 0.3, 1.0)
        a = wave_operator(EvolutionConfig(4.0, 0.02, CUBIC), u0)
        b = wave_operator(EvolutionConfig(8.0, 0.02, CUBIC), u0)
        assert (a - b).norm() <= a.meta["tail_bound"]
        assert (a - b).norm() <= 10 * a.meta["tail_residual"] + 1e-9

    def test_no_tail_option(self):
        g = Grid2D(20.0, 64)
        f = Field.gaussian(g, 0.2, 1.0)
        om = wave_operator(EvolutionConfig(2.0, 0.1, CUBIC), f, tail="none")
        assert om.meta["tail"] == "none"
        with pytest.raises(ValueError):
            wave_operator(EvolutionConfig(2.0, 0.1, CUBIC), f, tail="bogus")


class TestScatteringMap:
    def test_zero_is_identity(self):
        g = Grid2D(20.0, 64)
        f = Field.gaussian(g, 1.0, 1.0)
        s = scattering_map(EvolutionConfig(2.0, 0.1, zero()), f)
        assert np.max(np.abs(s.samples - f.samples)) <= 1e-13

    def test_doubling(self):
        sigma = 1.0
        g = grid_for_gaussian(sigma, 5.0, 128)
        u0 = Field.gaussian(g, 0.1, sigma)
        cfg = EvolutionConfig(5.0, 0.02, CUBIC)
        half = born_functional(wave_operator(cfg, u0), u0)
        full = born_functional(scattering_map(cfg, u0), u0)
        assert abs(full - 2 * half) <= 0.01 * abs(full)
        assert extract_m(full, sigma, "full") == pytest.approx(extract_m(half, sigma), rel=0.01)

    def test_quartic_scaling_in_amplitude(self):
        g = grid_for_gaussian(1.0, 4.0, 128)
        cfg = EvolutionConfig(4.0, 0.02, CUBIC)
        amps = np.array([0.02, 0.04, 0.08])
        d = []
        for A in amps:
            u = Field.gaussian(g, A, 1.0)
            d.append((scattering_map(cfg, u) - u).norm())
        # ||S(u) - u|| ~ A^3 in norm; the pairing with u ~ A^4
        slope = np.polyfit(np.log(amps), np.log(d), 1)[0]
        assert slope == pytest.approx(3.0, abs=0.05)


class TestPicard:
    def test_zero_data(self):
        g = Grid2D(10.0, 32)
        res = picard_iterate(EvolutionConfig(1.0, 0.1, CUBIC), Field.zeros(g), 4)
        assert np.all(res.distances == 0)

    def test_small_data_contracts(self):
        g = grid_for_gaussian(1.0, 1.0, 64)
        u0 = Field.gaussian(g, 0.05, 1.0)
        cfg = EvolutionConfig(1.0, 0.02, CUBIC)
        res = picard_iterate(cfg, u0, 5)
        assert res.contracting and np.all(res.ratios <= 0.5)
        ref = splitstep_evolve(cfg, u0)
        assert (res.iterates[-1] - ref).norm() <= 1e-4 * u0.norm()

    def test_large_data_refused(self):
        g = Grid2D(8.0, 64)
        u0 = Field.gaussian(g, 6.0, 0.5)
        with pytest.raises(SimulationGuardError):
            picard_iterate(EvolutionConfig(0.5, 0.01, power_law(-1, 2)), u0, 8)


class TestStrichartz:
    def _traj(self, N, A=0.05):
        g = grid_for_gaussian(1.0, 4.0, N)
        u0 = Field.gaussian(g, A, 1.0)
        _, traj = splitstep_evolve(EvolutionConfig(4.0, 0.02, CUBIC), u0, capture=True,
                                   capture_stride=10**6, lp_exponents=(6.0, 3.0 * 2))
        return traj, g, u0

    def test_refinement_stable(self):
        a = strichartz_norms(*self._traj(128)[:2])["L3L6"]
        b = strichartz_norms(*self._traj(256)[:2])["L3L6"]
        assert b == pytest.approx(a, rel=0.01)

    def test_ratio_bounded_in_amplitude(self):
        ratios = []
        for A in (0.02, 0.05, 0.1):
            traj, g, u0 = self._traj(64, A)
            ratios.append(strichartz_norms(traj, g)["L3L6"] / u0.norm())
        assert max(ratios) / min(ratios) <= 1.5

    def test_zero_field(self):
        g = Grid2D(10.0, 32)
        _, traj = splitstep_evolve(EvolutionConfig(1.0, 0.1, CUBIC), Field.zeros(g), capture=True)
        assert strichartz_norms(traj, g)["L3L6"] == 0
