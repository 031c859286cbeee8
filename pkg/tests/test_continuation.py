import numpy as np
import pytest

from sigmaric.continuation_solver import (
    ContinuationFailure,
    HomotopyState,
    SolveConfig,
    SubsolutionParams,
    complete_grading,
    initial_guess_complete,
    newton_step,
    solve_complete,
    solve_dirichlet,
)
from sigmaric.domains import (
    ScalarField,
    background_ricci,
    boundary_distance,
    make_box_grid,
    make_radial_grid,
)
from sigmaric.radial_oracle import bvp_solve, einstein_exact_radial
from sigmaric.symfun import sigma_all_batch


def flat_config(grid, k, **kw):
    return SolveConfig(grid=grid, background=background_ricci(grid, "flat"),
                       k=k, **kw)


class TestConfig:
    def test_validation(self):
        grid = make_radial_grid(0.5, 1.0, 33, m=3)
        bg = background_ricci(grid, "flat")
        with pytest.raises(ValueError):
            SolveConfig(grid=grid, background=bg, k=4)
        with pytest.raises(ValueError):
            SolveConfig(grid=grid, background=bg, k=2, mode="robin")
        with pytest.raises(ValueError):
            SolveConfig(grid=grid, background=bg, k=2, t_step_init=0.0)
        with pytest.raises(ValueError):
            SubsolutionParams(A=-1.0)

    def test_boundary_data_length(self):
        grid = make_radial_grid(0.5, 1.0, 33, m=3)
        cfg = flat_config(grid, 2, boundary_data=np.zeros(5))
        with pytest.raises(ValueError):
            solve_dirichlet(cfg)

    def test_rhs_factor_positive(self):
        grid = make_radial_grid(0.5, 1.0, 33, m=3)
        cfg = flat_config(grid, 2, rhs_factor=np.zeros(grid.n))
        with pytest.raises(ValueError):
            solve_dirichlet(cfg)

    def test_conformal_background_rejected(self):
        # conformally flat backgrounds reduce exactly to flat solves of
        # u + phi, so the discretizations refuse them outright
        grid = make_radial_grid(0.5, 1.0, 33, m=3)
        bg = background_ricci(
            grid, "conformal",
            phi=lambda x: 0.1 * x[0],
            dphi=lambda x: np.array([0.1, 0.0, 0.0]),
            d2phi=lambda x: np.zeros((3, 3)),
        )
        cfg = SolveConfig(grid=grid, background=bg, k=2)
        with pytest.raises(TypeError):
            solve_dirichlet(cfg)


class TestDirichletRadial:
    def test_zero_data_nonpositive(self):
        # sigma_k(W) = e^{2ku} with zero data forces u < 0 inside
        grid = make_radial_grid(0.0, 1.0, 65, m=3)
        state = solve_dirichlet(flat_config(grid, 2))
        assert state.u.values.max() <= 1e-10
        assert state.u.values.min() < -1e-3
        assert state.cone_margin > 0
        assert state.residual_norm <= 1e-10

    def test_oracle_agreement_second_order(self):
        # independent spectral-collocation solve of the same radial BVP
        prof = bvp_solve(0.5, 1.0, m=3, k=3, j1=1.0, j0=0.5, n=80)
        errs = {}
        for n in (65, 129):
            grid = make_radial_grid(0.5, 1.0, n, m=3)
            data = np.where(grid.nodes > 0.75, 1.0, 0.5)
            state = solve_dirichlet(flat_config(grid, 3, boundary_data=data))
            errs[n] = np.max(np.abs(state.u.values - prof.interp(grid.nodes)))
        assert errs[129] < 5e-6
        assert 3.0 < errs[65] / errs[129] < 5.0

    def test_data_monotonicity(self):
        # comparison principle: larger boundary data, larger solution
        grid = make_radial_grid(0.5, 1.0, 65, m=3)
        lo = solve_dirichlet(flat_config(grid, 2, boundary_data=0.5))
        hi = solve_dirichlet(flat_config(grid, 2, boundary_data=1.0))
        assert np.all(hi.u.values >= lo.u.values - 1e-12)

    def test_warped_background(self):
        # hyperbolic warped annulus: rho has top eigenvalue m - 1, so the
        # background is pre-scaled by 2 before continuation
        grid = make_radial_grid(0.5, 1.0, 129, m=3)
        bg = background_ricci(grid, "warped",
                              profile=(np.sinh, np.cosh, np.sinh))
        cfg = SolveConfig(grid=grid, background=bg, k=2, boundary_data=0.5)
        state = solve_dirichlet(cfg)
        assert state.background_scale == pytest.approx(2.0, rel=1e-12)
        assert state.residual_norm <= 1e-10
        assert state.cone_margin > 0


class TestNewtonStep:
    def test_fast_local_convergence(self):
        grid = make_radial_grid(0.5, 1.0, 129, m=3)
        cfg = flat_config(grid, 2, boundary_data=1.0)
        state = solve_dirichlet(cfg)
        pert = state.u.values + 1e-3 * np.sin(
            np.pi * (grid.nodes - 0.5) / 0.5
        )
        s0 = HomotopyState(t=1.0, u=ScalarField(grid, pert),
                           cone_margin=state.cone_margin, residual_norm=0.0,
                           background_scale=state.background_scale)
        s1 = newton_step(s0, cfg)
        s2 = newton_step(s1, cfg)
        assert s2.residual_norm < 1e-4 * s1.residual_norm

    def test_inadmissible_state_rejected(self):
        grid = make_radial_grid(0.5, 1.0, 65, m=3)
        cfg = flat_config(grid, 2, boundary_data=0.0)
        bad = HomotopyState(t=1.0,
                            u=ScalarField(grid, -5.0 * grid.nodes**2),
                            cone_margin=1.0, residual_norm=0.0)
        with pytest.raises(ContinuationFailure):
            newton_step(bad, cfg)


class TestDirichletBox:
    def test_zero_data_nonpositive(self):
        grid = make_box_grid([0, 0, 0], [1, 1, 1], [9, 9, 9])
        state = solve_dirichlet(flat_config(grid, 2))
        assert state.u.values.max() <= 1e-10
        assert state.u.values.min() < -1e-3
        assert state.cone_margin > 0

    def test_manufactured_recovery(self):
        grid = make_box_grid([0, 0, 0], [1, 1, 1], [17, 17, 17])
        pts = grid.points
        phase = 2 * pts[:, 0] + pts[:, 1] - pts[:, 2]
        um = 0.2 * np.sum((pts - 0.4) ** 2, axis=1) + 0.05 * np.sin(phase)
        gm = 0.4 * (pts - 0.4)
        c = np.array([2.0, 1.0, -1.0])
        gm += 0.05 * np.cos(phase)[:, None] * c
        hm = -0.05 * np.sin(phase)[:, None, None] * np.outer(c, c)
        hm = hm + 0.4 * np.eye(3)
        m, k = 3, 2
        lap = np.trace(hm, axis1=1, axis2=2)
        g2 = np.sum(gm * gm, axis=1)
        W = (m - 2) * hm - (m - 2) * np.einsum("ia,ib->iab", gm, gm)
        W = W + ((m - 2) * g2 + lap)[:, None, None] * np.eye(m)
        esp = sigma_all_batch(np.linalg.eigvalsh(W))
        assert esp[:, 1:k + 1].min() > 0  # manufactured state is admissible
        f = esp[:, k] * np.exp(-2 * k * um)
        cfg = flat_config(grid, k, boundary_data=um, rhs_factor=f)
        state = solve_dirichlet(cfg)
        assert np.max(np.abs(state.u.values - um)) < 5e-5
        assert state.residual_norm <= 1e-10


class TestCompleteGuess:
    def test_boundary_and_bound(self):
        grid = make_radial_grid(0.0, 1.0, 257, m=3)
        guess = initial_guess_complete(grid, 6.0, SubsolutionParams(), m=3)
        assert np.all(guess.values[grid.boundary_mask()] == 6.0)
        assert np.all(guess.values <= 6.0 + 1e-12)

    def test_collar_blowup_dominates(self):
        # near the boundary the guess follows -ln(distance) up to O(1)
        grid = make_radial_grid(0.0, 1.0, 1025, m=3,
                                grading=complete_grading(1025))
        guess = initial_guess_complete(grid, 50.0, SubsolutionParams(), m=3)
        d = boundary_distance(grid).values
        sel = (d >= 1e-3) & (d <= 1e-2)
        assert np.all(np.abs(guess.values[sel] + np.log(d[sel])) < 2.0)
        # strict subsolution: the guess stays below the exact complete
        # solution of the k = m ball
        exact = einstein_exact_radial(3, 3, grid.nodes[:-1])
        assert np.all(guess.values[:-1] < exact)

    def test_grading_halves_with_doubling(self):
        g1 = make_radial_grid(0.0, 1.0, 257, m=3,
                              grading=complete_grading(257))
        g2 = make_radial_grid(0.0, 1.0, 513, m=3,
                              grading=complete_grading(513))
        h1 = np.diff(g1.nodes).min()
        h2 = np.diff(g2.nodes).min()
        assert h1 / h2 == pytest.approx(2.0, rel=0.02)


class TestComplete:
    def test_ball_matches_exact(self):
        # k = m ball: the complete solution is the hyperbolic metric scaled
        # to sigma_k = binom(m, k), known in closed form
        n = 512
        grid = make_radial_grid(0.0, 1.0, n, m=3,
                                grading=complete_grading(n))
        cfg = flat_config(grid, 3, mode="complete-exhaustion")
        state = solve_complete(cfg)
        core = grid.nodes <= 0.9
        exact = einstein_exact_radial(3, 3, grid.nodes[core])
        assert np.max(np.abs(state.u.values[core] - exact)) < 5e-4
        rep = state.asymptotics
        assert rep["tail_extrapolated"]
        assert rep["matches_half_log"]
        assert abs(rep["constant"] - rep["einstein_reference"]) < 1e-2
        assert rep["j_final"] <= rep["j_cap"]

    def test_mode_guard(self):
        grid = make_radial_grid(0.0, 1.0, 65, m=3)
        with pytest.raises(ValueError):
            solve_complete(flat_config(grid, 2))
