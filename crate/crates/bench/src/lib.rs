//! Fixtures shared by the benchmarks.

use vpfft_core::driver::{LoadProgram, Preset};
use vpfft_core::material::{Integrator, MaterialParams, PointState};
use vpfft_core::microstructure::{synth_inclusion, InclusionShape};
use vpfft_core::spectral::{GuessMode, SolverConfig, SpectralSolver};
use vpfft_core::SymTensor2;

/// Ferrite point with prior flow, loaded to an overstress of about 1.1.
pub fn plastic_point() -> (MaterialParams, PointState, SymTensor2) {
    let params = Preset::Hardening.catalog().get(0).expect("ferrite").params;
    let n = SymTensor2::diag(1.0, -0.5, -0.5);
    let state = PointState {
        eps_p: n * 0.01,
        gamma: 0.01,
        gamma_dot: 0.01,
        n,
        kappa: 1.0,
    };
    let sigma_s = params.sigma0 + params.h * state.gamma;
    let eps = state.eps_p + n * (1.1 * sigma_s / (3.0 * params.g));
    (params, state, eps)
}

/// Disc solver on an `n×n` grid advanced `warm` increments into plastic flow.
pub fn warmed_solver(
    n: usize,
    integrator: Integrator,
    mode: GuessMode,
    warm: usize,
) -> (SpectralSolver, LoadProgram) {
    let grid = synth_inclusion(n, n, 0.17, InclusionShape::Disc).expect("valid grid");
    let config = SolverConfig {
        ig_mode: mode,
        ..SolverConfig::default()
    };
    let mut solver =
        SpectralSolver::new(grid, &Preset::Hardening.catalog(), integrator, config, None)
            .expect("valid solver");
    let load = Preset::Hardening.load_program();
    for k in 1..=warm {
        solver
            .newton_increment(load.macro_strain(k), load.dt())
            .expect("warm-up converges");
    }
    (solver, load)
}
