import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsdissolve.config import GridSpec, ParticleSpec, ScenarioConfig
from lsdissolve.dynamics import (
    BulkState,
    ParticleState,
    Regime,
    SimState,
    check_regime,
    initial_state,
    mass_residual,
    run,
    speed_field,
    step_dissolution,
    step_recrystallization,
)
from lsdissolve.geometry import Circle, Rectangle, field_area, reinitialize, sdf_init
from lsdissolve.levelset import Grid2D
from lsdissolve.oracle import solve_circle
from lsdissolve.physchem import get_preset, solubility

UM = 1e-6


def small_config(particles, v_plus=300.0, t_end=60.0, drug="theophylline-37", dx=1.0, **kw):
    return ScenarioConfig(
        name="small", drug=drug, v_plus=v_plus, t_end=t_end, particles=tuple(particles),
        grid=GridSpec(dx=dx * UM, domain_factor=1.25), **kw,
    )


def circle(R_um, mult=1, center=(0.0, 0.0)):
    return ParticleSpec(Circle(R_um * UM, center=center), mult)


@pytest.fixture(scope="module")
def saturating_run():
    # a small volume saturates quickly and switches to recrystallization
    return run(small_config([circle(12.0)], v_plus=40.0, t_end=200.0, dx=0.5))


def dissolving_config(dx=1.0):
    parts = [circle(12.0), ParticleSpec(Rectangle(14 * UM, 8 * UM))]
    return small_config(parts, v_plus=400.0, t_end=120.0, dx=dx)


@pytest.fixture(scope="module")
def dissolving_run():
    return run(dissolving_config())


class TestRun:
    def test_mass_closure(self, saturating_run):
        assert saturating_run.max_mass_residual <= 5e-3

    def test_mass_drift_is_first_order(self, dissolving_run):
        # full dissolution of small particles drifts by about dx / R0; halving dx halves it
        fine = run(dissolving_config(dx=0.5))
        ratio = dissolving_run.max_mass_residual / fine.max_mass_residual
        assert dissolving_run.max_mass_residual <= 1 * UM / (4 * UM)
        assert 1.6 <= ratio <= 2.6

    def test_bulk_rises_while_dissolving(self, dissolving_run):
        C = dissolving_run.column("C_b")
        assert np.all(np.diff(C) >= 0)
        assert np.all(C <= dissolving_run.column("C_s"))

    def test_areas_non_increasing(self, dissolving_run):
        rows = np.array([r[:5] for r in dissolving_run.particles], dtype=float)
        for pid in (0, 1):
            A = rows[rows[:, 0] == pid, 4]
            assert np.all(np.diff(A) <= 0)

    def test_particles_vanish(self, dissolving_run):
        alive = dissolving_run.column("alive_count")
        assert alive[0] == 2 and alive[-1] == 0
        assert dissolving_run.column("total_A")[-1] == 0.0

    def test_switch_and_recrystallization(self, saturating_run):
        res = saturating_run
        assert [s[1] for s in res.switches][:1] == ["recrystallization"]
        t_star = res.switches[0][0]
        t = res.column("t")
        after = t > t_star
        M_c = res.column("M_c")
        assert np.all(M_c[after] > 0)
        assert np.all(np.diff(res.column("C_b")[after]) <= 0)
        # particle shape is frozen once dissolution stops
        A = res.column("total_A")
        assert np.all(A[after] == A[after][0])

    def test_records_cover_interval(self, saturating_run):
        t = saturating_run.column("t")
        assert t[0] == 0.0 and t[-1] == pytest.approx(200.0)
        assert len(t) == 201

    def test_matches_oracle(self):
        cfg = small_config([circle(20.0)], v_plus=300.0, t_end=400.0, drug="theophylline-25", output_every=1.0)
        res = run(cfg)
        traj = np.array([r[:2] for r in res.trajectory])
        oracle = solve_circle(20 * UM, get_preset("theophylline-25"), res.V_ext, 400.0, 0.02)
        R_o = oracle.radius_at(traj[:, 0])
        window = R_o >= 5 * UM
        assert np.max(np.abs(traj[window, 1] - R_o[window])) <= 2 * UM

    def test_multiplicity_equivalence(self):
        one = run(small_config([circle(8.0, mult=3)], t_end=40.0))
        three = run(small_config([circle(8.0), circle(8.0), circle(8.0)], t_end=40.0))
        assert one.V_ext == three.V_ext
        c1, c3 = one.column("C_b"), three.column("C_b")
        assert np.max(np.abs(c1 - c3)) <= 1e-10 * np.max(c3)
        assert np.array_equal(one.column("alive_count"), three.column("alive_count"))

    def test_zero_particles(self):
        res = run(ScenarioConfig(t_end=10.0, drug="griseofulvin-37", v_ext=1e-9))
        assert np.all(res.column("C_b") == 0.0)
        assert res.initial_mass == 0.0 and res.max_mass_residual == 0.0

    def test_jobs_do_not_change_results(self):
        parts = [circle(6.0, center=(0.0, 0.0)), circle(6.0, center=(1e-4, 0.0)), circle(4.0)]
        a = run(small_config(parts, t_end=20.0), jobs=1)
        b = run(small_config(parts, t_end=20.0), jobs=2)
        assert a.timeseries == b.timeseries

    def test_reinit_hook(self):
        calls = []

        def hook(field):
            calls.append(field_area(field))
            return reinitialize(field)

        res = run(small_config([circle(10.0)], t_end=5.0), reinit=hook, reinit_every=400)
        assert len(calls) == res.steps // 400
        # without a period the hook is never called
        run(small_config([circle(10.0)], t_end=5.0), reinit=hook)
        assert len(calls) == res.steps // 400


def single_state(R_um=15.0, drug="theophylline-37", v_plus=300.0):
    return initial_state(small_config([circle(R_um)], v_plus=v_plus))


class TestOperations:
    def test_speed_field_sign_and_linearity(self):
        s = single_state()
        p, drug = s.particles[0], s.drug
        Cs = solubility(0.0, drug)
        v0 = speed_field(p, BulkState(1.0, C_b=0.0), 0.0, drug)
        v1 = speed_field(p, BulkState(1.0, C_b=0.5 * Cs), 0.0, drug)
        assert np.all(v0 <= 0) and v0.min() < 0
        assert np.allclose(v1, 0.5 * v0, rtol=1e-12, atol=0.0)
        assert np.all(speed_field(p, BulkState(1.0, C_b=Cs), 0.0, drug) == 0.0)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.0, 0.99))
    def test_speed_field_linear_in_drive(self, frac):
        s = single_state(8.0)
        p, drug = s.particles[0], s.drug
        Cs = solubility(0.0, drug)
        v0 = speed_field(p, BulkState(1.0), 0.0, drug)
        v = speed_field(p, BulkState(1.0, C_b=frac * Cs), 0.0, drug)
        assert np.allclose(v, (1 - frac) * v0, rtol=1e-9, atol=1e-30)

    def test_dead_particle_has_no_speed(self):
        g = Grid2D.centered(20, 1 * UM)
        p = ParticleState(0, sdf_init(Circle(3 * UM), g), alive=False)
        assert np.all(speed_field(p, BulkState(1.0), 0.0, get_preset("theophylline-37")) == 0.0)

    def test_step_conserves_mass(self):
        s = single_state()
        m0 = s.drug.rho_s * s.solid_area()
        for _ in range(20):
            step_dissolution(s, 0.9, dt_max=0.5)
        assert s.t > 0 and s.bulk.C_b > 0
        assert mass_residual(s, m0) <= 5e-3

    def test_step_respects_caps(self):
        s = single_state()
        step_dissolution(s, 0.9, dt_max=1e-3)
        assert s.t == pytest.approx(1e-3)
        step_dissolution(s, 0.9, dt_max=1.0, dt_cap=2e-4)
        assert s.t == pytest.approx(1.2e-3)

    def test_step_rejects_bad_input(self):
        s = single_state()
        with pytest.raises(ValueError):
            step_dissolution(s, 1.5)
        s.bulk.C_b = 2 * solubility(0.0, s.drug)
        with pytest.raises(ValueError, match="exceeds"):
            step_dissolution(s, 0.9)

    def test_regime_switch_and_back(self):
        s = single_state()
        Cs = solubility(0.0, s.drug)
        s.bulk.C_b = 1.01 * Cs
        check_regime(s)
        assert s.bulk.regime is Regime.RECRYSTALLIZATION and s.bulk.t_star == 0.0
        with pytest.raises(ValueError):
            step_dissolution(s, 0.9)
        m0 = s.bulk.C_b * s.bulk.V_ext
        step_recrystallization(s, 30.0)
        assert s.bulk.C_b < 1.01 * Cs
        assert s.bulk.C_b * s.bulk.V_ext + s.bulk.M_c == pytest.approx(m0, rel=1e-12)
        s.bulk.C_b = 0.5 * solubility(s.t, s.drug)
        check_regime(s)
        assert s.bulk.regime is Regime.DISSOLUTION

    def test_recrystallization_guards(self):
        s = single_state()
        with pytest.raises(ValueError):
            step_recrystallization(s, 1.0)
        s.bulk.C_b = 2 * solubility(0.0, s.drug)
        check_regime(s)
        with pytest.raises(ValueError):
            step_recrystallization(s, -1.0)

    def test_state_validation(self):
        with pytest.raises(ValueError):
            BulkState(0.0)
        g = Grid2D.centered(20, 1 * UM)
        with pytest.raises(ValueError):
            ParticleState(0, sdf_init(Circle(3 * UM), g), multiplicity=0)

    def test_tiny_particle_released(self):
        # a particle below one cell of area is dissolved at once and its mass moves to the bulk
        g = Grid2D.centered(16, 1 * UM)
        drug = get_preset("theophylline-37")
        s = SimState([ParticleState(0, sdf_init(Circle(0.5 * UM), g))], BulkState(1e-9), drug)
        assert not s.particles[0].alive
        assert s.bulk.C_b > 0
        assert s.solid_area() == 0.0

    def test_initial_state_volume(self):
        s = initial_state(small_config([circle(10.0, mult=2)], v_plus=150.0))
        assert s.bulk.V_ext == pytest.approx(150.0 * 2 * math.pi * (10 * UM) ** 2, rel=1e-12)
        assert s.particles[0].area == pytest.approx(math.pi * (10 * UM) ** 2, rel=2e-2)
