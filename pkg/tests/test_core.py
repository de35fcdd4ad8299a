import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eqkit import core
from eqkit.core import (
    MU0,
    QE,
    Boundary,
    EquilibriumProfiles,
    KineticProfiles,
    MachineScalars,
    PsiMap,
    RadialGrid,
    compose_pressure,
    compute_zeff,
    denormalize,
    normalize,
    pressure_gradient,
)
from eqkit.errors import (
    AlreadyNormalized,
    DegeneratePsiScale,
    MissingSpecies,
    NotNormalized,
    QuasineutralityViolation,
    ZeroElectronDensity,
)


def grid(n=33):
    return RadialGrid(psin=np.linspace(0.0, 1.0, n))


def scalars():
    return MachineScalars(B0=2.0, R0=1.7, I_target=1.0e6)


def equilibrium(n=33, **kwargs):
    g = grid(n)
    psin = g.psin
    fields = dict(
        pressure=4.0e4 * (1.02 - psin),
        pprime=np.full(n, -9.0e4),
        ffprime=-1.2 * (1.0 - 0.5 * psin),
        fpol=3.4 + 0.2 * (1 - psin),
        Istr=2.0e6 * (1.0 - psin ** 2) + 1e5,
        Iprl=2.2e6 * (1.0 - psin ** 2) + 1e5,
        Jprl=1.5e6 * (1.0 - psin) + 1e4,
        q=1.0 + 2.5 * psin ** 2,
    )
    fields.update(kwargs)
    return EquilibriumProfiles(grid=g, scalars=scalars(), **fields)


class TestTypes:
    def test_machine_scalars_validation(self):
        with pytest.raises(Exception):
            MachineScalars(B0=0.0, R0=1.7)
        with pytest.raises(Exception):
            MachineScalars(B0=2.0, R0=-1.0)
        with pytest.raises(Exception):
            MachineScalars(B0=2.0, R0=1.7, mu0=1.0)

    def test_radial_grid_endpoints(self):
        with pytest.raises(ValueError):
            RadialGrid(psin=np.linspace(0.1, 1.0, 11))
        with pytest.raises(ValueError):
            RadialGrid(psin=np.linspace(0.0, 0.9, 11))

    def test_radial_grid_monotone(self):
        x = np.linspace(0, 1, 11)
        x[5] = x[4]
        with pytest.raises(ValueError):
            RadialGrid(psin=x)

    def test_rho_columns_are_square_roots(self):
        g = RadialGrid(psin=np.linspace(0, 1, 17),
                       phin=np.linspace(0, 1, 17) ** 2)
        assert np.allclose(g.rhopsi ** 2, g.psin)
        assert np.allclose(g.rhotor ** 2, g.phin)

    def test_quasineutrality_guard(self):
        g = grid(11)
        with pytest.raises(QuasineutralityViolation):
            KineticProfiles(grid=g, ne=np.full(11, 1e19),
                            ni=np.full(11, 0.5e19), nz=np.full(11, 1e15))

    def test_boundary_validation(self):
        theta = np.linspace(0, 2 * np.pi, 33)
        r = 1.7 + 0.5 * np.cos(theta)
        z = 0.5 * np.sin(theta)
        r[-1], z[-1] = r[0], z[0]
        b = Boundary(r=r, z=z, closed=True)
        assert b.size == 33
        with pytest.raises(ValueError):
            Boundary(r=r[:10], z=z[:10], closed=False)
        # figure-eight self-intersection
        t = np.linspace(0, 2 * np.pi, 65)
        r8 = 1.7 + 0.5 * np.sin(2 * t) * np.cos(t)
        z8 = 0.5 * np.sin(t)
        r8[-1], z8[-1] = r8[0], z8[0]
        with pytest.raises(ValueError):
            Boundary(r=r8, z=z8, closed=True)

    def test_psimap_validation(self):
        R = np.linspace(1.0, 2.4, 9)
        Z = np.linspace(-0.7, 0.7, 9)
        psi = np.zeros((9, 9))
        with pytest.raises(ValueError):
            PsiMap(R=R, Z=Z, psi=psi, psi_axis=0.0, psi_bnd=0.0,
                   axis_R=1.7, axis_Z=0.0)
        with pytest.raises(ValueError):
            PsiMap(R=R, Z=Z, psi=psi, psi_axis=-1.0, psi_bnd=0.0,
                   axis_R=5.0, axis_Z=0.0)


class TestNormalize:
    def test_unit_pressure(self):
        s = scalars()
        eq = equilibrium(pressure=np.full(33, s.B0 ** 2 / MU0))
        assert normalize(eq).pressure == pytest.approx(1.0)

    def test_current_scale_value(self):
        # 1 MA with B0=2 T, R0=1.7 m
        eq = equilibrium(Iprl=np.full(33, 1.0e6))
        expected = MU0 * 1.0e6 / (2.0 * 1.7)
        assert normalize(eq).Iprl[0] == pytest.approx(expected, rel=1e-12)
        assert normalize(eq).Iprl[0] == pytest.approx(0.369599135716, rel=1e-9)

    def test_ttprime_scale(self):
        eq = equilibrium(ffprime=np.full(33, 0.5 * 2.0))
        assert normalize(eq).ffprime[0] == pytest.approx(0.5)

    def test_round_trip(self):
        eq = equilibrium()
        back = denormalize(normalize(eq))
        for name in eq._array_fields:
            a, b = getattr(eq, name), getattr(back, name)
            assert np.allclose(a, b, rtol=1e-14)

    def test_state_errors(self):
        eq = equilibrium()
        with pytest.raises(AlreadyNormalized):
            normalize(normalize(eq))
        with pytest.raises(NotNormalized):
            denormalize(eq)

    def test_grid_untouched(self):
        eq = equilibrium()
        assert normalize(eq).grid is eq.grid

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.5, 8.0), st.floats(0.6, 6.0),
           st.integers(0, 2 ** 31 - 1))
    def test_round_trip_property(self, b0, r0, seed):
        rng = np.random.default_rng(seed)
        g = grid(17)
        s = MachineScalars(B0=b0, R0=r0)
        fields = {name: rng.normal(size=17) for name in
                  ("pressure", "pprime", "ffprime", "fpol", "Istr",
                   "Iprl", "Jprl")}
        eq = EquilibriumProfiles(grid=g, scalars=s, **fields)
        back = denormalize(normalize(eq))
        forward = normalize(denormalize(
            eq.with_updates(normalized=True)))
        for name in fields:
            assert np.allclose(getattr(back, name), getattr(eq, name),
                               rtol=1e-14, atol=1e-300)
            assert np.allclose(getattr(forward, name), getattr(eq, name),
                               rtol=1e-14, atol=1e-300)


class TestZeff:
    def test_pure_deuterium(self):
        g = grid(11)
        kin = KineticProfiles(grid=g, ne=np.full(11, 1e19),
                              ni=np.full(11, 1e19))
        assert np.all(compute_zeff(kin) == 1.0)

    def test_two_species_hand_case(self):
        g = grid(11)
        kin = KineticProfiles(grid=g, ne=np.full(11, 1e19),
                              ni=np.full(11, 0.9e19),
                              nz=np.full(11, 1e19 / 60.0))
        assert compute_zeff(kin) == pytest.approx(1.5, rel=1e-12)

    def test_flatten_mode(self):
        g = grid(11)
        ne = np.full(11, 1e19)
        nz = np.linspace(0, 1, 11) * 1e17
        ni = ne - 6.0 * nz
        kin = KineticProfiles(grid=g, ne=ne, ni=ni, nz=nz)
        flat = compute_zeff(kin, flatten=True)
        assert np.all(flat == flat[0])
        assert flat[0] == pytest.approx(compute_zeff(kin).mean())

    def test_zeff_at_least_one_under_quasineutrality(self, rng):
        g = grid(21)
        ne = np.full(21, 1e19)
        nz = rng.uniform(0, 1e19 / 6.0, 21)
        ni = ne - 6.0 * nz
        kin = KineticProfiles(grid=g, ne=ne, ni=ni, nz=nz)
        assert np.all(compute_zeff(kin) >= 1.0 - 1e-12)

    def test_errors(self):
        g = grid(11)
        with pytest.raises(MissingSpecies):
            compute_zeff(KineticProfiles(grid=g, ne=np.full(11, 1e19)))
        with pytest.raises(ZeroElectronDensity):
            compute_zeff(KineticProfiles(
                grid=g, ne=np.zeros(11), ni=np.full(11, 1e19)))


class TestComposePressure:
    def test_zero_densities(self):
        g = grid(11)
        kin = KineticProfiles(grid=g, ne=np.zeros(11), ni=np.zeros(11),
                              Te=np.full(11, 1e3), Ti=np.full(11, 1e3))
        assert np.all(compose_pressure(kin) == 0.0)

    def test_hand_case(self):
        g = grid(11)
        kin = KineticProfiles(grid=g, ne=np.full(11, 1e19),
                              ni=np.full(11, 1e19), Te=np.full(11, 1e3),
                              Ti=np.full(11, 1e3))
        assert compose_pressure(kin)[0] == pytest.approx(
            2.0 * 1e19 * 1e3 * QE, rel=1e-12)
        assert compose_pressure(kin)[0] == pytest.approx(3204.353268,
                                                         rel=1e-9)

    def test_fast_ion_switch(self):
        g = grid(11)
        base = dict(grid=g, ne=np.full(11, 1e19), ni=np.full(11, 1e19),
                    Te=np.full(11, 1e3), Ti=np.full(11, 1e3),
                    nb=np.full(11, 1e18), Tb=np.full(11, 5e3))
        kin = KineticProfiles(**base)
        without = compose_pressure(kin, include_fast=False)
        with_fast = compose_pressure(kin, include_fast=True)
        assert np.all(with_fast > without)
        assert with_fast[0] - without[0] == pytest.approx(
            QE * 1e18 * 5e3, rel=1e-12)

    def test_impurity_temperature_falls_back_to_ti(self):
        g = grid(11)
        nz = np.full(11, 1e17)
        kin = KineticProfiles(grid=g, ne=np.full(11, 1e19),
                              ni=np.full(11, 1e19 - 6e17), nz=nz,
                              Te=np.full(11, 1e3), Ti=np.full(11, 2e3))
        explicit = KineticProfiles(grid=g, ne=np.full(11, 1e19),
                                   ni=np.full(11, 1e19 - 6e17), nz=nz,
                                   Te=np.full(11, 1e3),
                                   Ti=np.full(11, 2e3),
                                   Tz=np.full(11, 2e3))
        assert np.allclose(compose_pressure(kin), compose_pressure(explicit))

    def test_linearity_superposition(self, rng):
        g = grid(17)
        ne1, ne2 = rng.uniform(1e18, 1e19, (2, 17))
        te = rng.uniform(100, 5e3, 17)
        ni = rng.uniform(1e18, 1e19, 17)
        ti = rng.uniform(100, 5e3, 17)

        def make(ne):
            return KineticProfiles(grid=g, ne=ne, ni=ni, Te=te, Ti=ti)

        combined = compose_pressure(make(ne1 + ne2))
        split = compose_pressure(make(ne1)) + compose_pressure(make(ne2)) \
            - compose_pressure(KineticProfiles(grid=g, ne=np.zeros(17),
                                               ni=ni, Te=te, Ti=ti))
        assert np.allclose(combined, split, rtol=1e-12)

    def test_missing_species(self):
        g = grid(11)
        with pytest.raises(MissingSpecies):
            compose_pressure(KineticProfiles(grid=g, ne=np.full(11, 1e19),
                                             Te=np.full(11, 1e3)))


class TestPressureGradient:
    def test_constant_pressure(self):
        g = grid(33)
        assert np.allclose(pressure_gradient(np.full(33, 5.0), g, 0.7), 0.0)

    def test_linear_profile_exact(self):
        g = grid(33)
        a, s = 3.0e4, -0.42
        p = a * (1.0 - g.psin)
        assert np.allclose(pressure_gradient(p, g, s), -a / s, rtol=1e-12)

    def test_quadratic_richardson(self):
        # centered differences on a quadratic are exact inside; endpoint
        # stencils are second order, so refinement contracts at ~4x
        s = 0.5
        errs = []
        for n in (17, 33, 65):
            g = grid(n)
            psi = g.psin * s
            p = 1e4 * (1 - g.psin) ** 3
            exact = -3e4 * (1 - g.psin) ** 2 / s
            errs.append(np.max(np.abs(pressure_gradient(p, g, s) - exact)))
        assert errs[0] / errs[1] > 3.0
        assert errs[1] / errs[2] > 3.0

    def test_degenerate_scale(self):
        with pytest.raises(DegeneratePsiScale):
            pressure_gradient(np.ones(33), grid(33), 0.0)

    def test_gradient_of_composed_pressure_matches_species_sum(self, rng):
        g = grid(129)
        s = 0.61
        ne = 1e19 * (1.1 - g.psin) ** 2
        te = 2e3 * (1.05 - g.psin)
        ni = 0.9e19 * (1.1 - g.psin) ** 2
        ti = 1.8e3 * (1.05 - g.psin)
        kin = KineticProfiles(grid=g, ne=ne, Te=te, ni=ni, Ti=ti)
        total = pressure_gradient(compose_pressure(kin), g, s)
        parts = (pressure_gradient(QE * ne * te, g, s)
                 + pressure_gradient(QE * ni * ti, g, s))
        assert np.allclose(total, parts, rtol=1e-10)
