use vpfft_core::driver::{LoadProgram, Preset, FERRITE, MARTENSITE};
use vpfft_core::material::{Integrator, MaterialParams, PointState};
use vpfft_core::microstructure::{synth_inclusion, InclusionShape, PhaseCatalog, PhaseGrid};
use vpfft_core::spectral::{
    build_projection, in_plane, GuessMode, InPlane, Krylov, SolverConfig, SpectralSolver,
};
use vpfft_core::{Error, SymTensor2};

fn disc(n: usize) -> PhaseGrid {
    synth_inclusion(n, n, 0.17, InclusionShape::Disc).unwrap()
}

fn solver(
    grid: PhaseGrid,
    preset: Preset,
    integrator: Integrator,
    mode: GuessMode,
) -> SpectralSolver {
    let config = SolverConfig {
        ig_mode: mode,
        ..SolverConfig::default()
    };
    SpectralSolver::new(grid, &preset.catalog(), integrator, config, None).unwrap()
}

fn drive(s: &mut SpectralSolver, load: &LoadProgram) -> Vec<Vec<f64>> {
    (1..=load.n_steps)
        .map(|k| {
            s.newton_increment(load.macro_strain(k), load.dt())
                .unwrap()
                .residuals
        })
        .collect()
}

#[test]
fn homogeneous_grid_matches_point_response() {
    let grid = PhaseGrid::uniform(6, 5, FERRITE).unwrap();
    let params = Preset::Hardening.catalog().get(FERRITE).unwrap().params;
    let mut s = solver(
        grid,
        Preset::Hardening,
        Integrator::BackwardEuler,
        GuessMode::Classical,
    );
    let load = LoadProgram::new(0.01, 0.01, 5);
    let mut state = PointState::virgin();
    for k in 1..=load.n_steps {
        let e = load.macro_strain(k);
        let log = s.newton_increment(e, load.dt()).unwrap();
        assert_eq!(log.nr_iters(), 1);
        assert!(log.residual_i0() < 1e-13);
        let point = Integrator::BackwardEuler
            .return_map(&params, &state, &e, load.dt())
            .unwrap();
        state = point.new_state;
        for (eps, sig) in s.fields().strain.iter().zip(&s.fields().stress) {
            assert!((*eps - e).max_abs() < 1e-14);
            assert!((*sig - point.sigma).max_abs() < 1e-6 * params.sigma0);
        }
    }
}

#[test]
fn equal_moduli_elastic_step_is_linear() {
    let mut s = solver(
        disc(15),
        Preset::Hardening,
        Integrator::BackwardEuler,
        GuessMode::Classical,
    );
    let log = s
        .newton_increment(LoadProgram::pure_shear() * 1e-5, 1e-3)
        .unwrap();
    assert_eq!(log.nr_iters(), 1);
    assert!(log.residual_final() <= 1e-8);
}

#[test]
fn mean_strain_is_pinned() {
    let mut s = solver(
        disc(12),
        Preset::Perfect,
        Integrator::BackwardEuler,
        GuessMode::Improved,
    );
    let load = LoadProgram::new(0.01, 0.01, 10);
    for k in 1..=load.n_steps {
        s.newton_increment(load.macro_strain(k), load.dt()).unwrap();
        let mean = s.fields().mean_strain();
        assert!((mean - load.macro_strain(k)).norm() <= 1e-12);
    }
}

#[test]
fn both_guesses_reach_the_same_state() {
    let load = LoadProgram::new(0.02, 0.01, 10);
    let mut a = solver(
        disc(13),
        Preset::Hardening,
        Integrator::BackwardEuler,
        GuessMode::Classical,
    );
    let mut b = solver(
        disc(13),
        Preset::Hardening,
        Integrator::BackwardEuler,
        GuessMode::Improved,
    );
    drive(&mut a, &load);
    drive(&mut b, &load);
    let bound = 10.0 * 1e-8 * 1180e6;
    for (x, y) in a.fields().stress.iter().zip(&b.fields().stress) {
        assert!((*x - *y).max_abs() <= bound);
    }
}

#[test]
fn residuals_decay_in_plastic_regime() {
    let load = LoadProgram::new(0.02, 0.01, 10);
    for integrator in [
        Integrator::BackwardEuler,
        Integrator::Trapezoidal { theta: 0.5 },
    ] {
        let mut s = solver(
            disc(15),
            Preset::Hardening,
            integrator,
            GuessMode::Classical,
        );
        for res in drive(&mut s, &load) {
            assert!(res.windows(2).all(|w| w[1] < w[0]), "{res:?}");
        }
    }
}

#[test]
fn improved_guess_cuts_initial_residual() {
    let load = LoadProgram::new(0.03, 0.01, 15);
    let mut a = solver(
        disc(15),
        Preset::Perfect,
        Integrator::BackwardEuler,
        GuessMode::Classical,
    );
    let mut b = solver(
        disc(15),
        Preset::Perfect,
        Integrator::BackwardEuler,
        GuessMode::Improved,
    );
    let ra = drive(&mut a, &load);
    let rb = drive(&mut b, &load);
    assert!(rb.last().unwrap()[0] <= 1e-3 * ra.last().unwrap()[0]);
}

#[test]
fn projected_tangent_operator_is_self_adjoint() {
    let n = 11;
    let mut s = solver(
        disc(n),
        Preset::Hardening,
        Integrator::BackwardEuler,
        GuessMode::Classical,
    );
    let load = LoadProgram::new(0.01, 0.01, 4);
    drive(&mut s, &load);
    let blocks: Vec<[f64; 9]> = s
        .fields()
        .tangents
        .iter()
        .map(|t| t.c_vp.in_plane_block())
        .collect();
    let mut g = build_projection(n, n);
    let mut seed = 17u64;
    let mut rand_field = || -> Vec<InPlane> {
        (0..n * n)
            .map(|_| {
                let mut v = [0.0; 3];
                for c in &mut v {
                    seed = seed
                        .wrapping_mul(6364136223846793005)
                        .wrapping_add(1442695040888963407);
                    *c = (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                }
                v
            })
            .collect()
    };
    let (a, b) = (rand_field(), rand_field());
    let (mut u, mut v) = (vec![[0.0; 3]; n * n], vec![[0.0; 3]; n * n]);
    g.apply(&a, &mut u);
    g.apply(&b, &mut v);
    let mut op = |x: &[InPlane]| {
        let cx: Vec<InPlane> = x
            .iter()
            .zip(&blocks)
            .map(|(e, c)| {
                [
                    c[0] * e[0] + c[1] * e[1] + c[2] * e[2],
                    c[3] * e[0] + c[4] * e[1] + c[5] * e[2],
                    c[6] * e[0] + c[7] * e[1] + c[8] * e[2],
                ]
            })
            .collect();
        let mut out = vec![[0.0; 3]; x.len()];
        g.apply(&cx, &mut out);
        out
    };
    let dot = |p: &[InPlane], q: &[InPlane]| -> f64 {
        p.iter()
            .zip(q)
            .map(|(x, y)| x[0] * y[0] + x[1] * y[1] + x[2] * y[2])
            .sum()
    };
    let (gcv, gcu) = (op(&v), op(&u));
    let (uv, vu) = (dot(&u, &gcv), dot(&v, &gcu));
    assert!((uv - vu).abs() <= 1e-9 * uv.abs().max(vu.abs()));
    assert!(dot(&u, &gcu) > 0.0);
}

#[test]
fn krylov_choice_follows_symmetry() {
    let be = solver(
        disc(5),
        Preset::Perfect,
        Integrator::BackwardEuler,
        GuessMode::Classical,
    );
    let t1 = solver(
        disc(5),
        Preset::Perfect,
        Integrator::Trapezoidal { theta: 1.0 },
        GuessMode::Classical,
    );
    let th = solver(
        disc(5),
        Preset::Perfect,
        Integrator::Trapezoidal { theta: 0.5 },
        GuessMode::Classical,
    );
    assert_eq!(be.krylov(), Krylov::ConjugateGradient);
    assert_eq!(t1.krylov(), Krylov::ConjugateGradient);
    assert_eq!(th.krylov(), Krylov::BiCgStab);
}

#[test]
fn constitutive_failure_reports_pixel() {
    let weak = MaterialParams::new(206.824e9, 0.3, 1e-3, 0.05, 425e6, -40e9).unwrap();
    let strong = Preset::Hardening.catalog().get(MARTENSITE).unwrap().params;
    let catalog = PhaseCatalog::new()
        .with_phase(FERRITE, "weak", weak)
        .with_phase(MARTENSITE, "strong", strong);
    let mut phases = vec![MARTENSITE; 16];
    phases[6] = FERRITE;
    let grid = PhaseGrid::new(4, 4, phases).unwrap();
    let mut s = SpectralSolver::new(
        grid,
        &catalog,
        Integrator::BackwardEuler,
        SolverConfig::default(),
        None,
    )
    .unwrap();
    let err = s
        .newton_increment(LoadProgram::pure_shear() * 0.5, 50.0)
        .unwrap_err();
    match &err {
        Error::AtPixel { x, y, source } => {
            assert_eq!((*x, *y), (2, 1));
            assert!(matches!(**source, Error::NonPositiveYield { .. }));
        }
        other => panic!("unexpected {other:?}"),
    }
    // nothing was committed
    assert!(s.fields().stress.iter().all(|t| t.is_zero()));
}

#[test]
fn thread_count_does_not_change_results() {
    let load = LoadProgram::new(0.01, 0.01, 5);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let mut s = solver(
                    disc(11),
                    Preset::Hardening,
                    Integrator::BackwardEuler,
                    GuessMode::Improved,
                );
                drive(&mut s, &load);
                s.fields().stress.clone()
            })
    };
    let (a, b) = (run(1), run(3));
    for (x, y) in a.iter().zip(&b) {
        assert!((*x - *y).max_abs() <= 1e-12 * 1180e6);
    }
}

#[test]
fn residual_of_uniform_field_vanishes() {
    let mut g = build_projection(7, 4);
    let field = vec![SymTensor2::diag(1e8, 2e8, 3e8); 28];
    assert!(vpfft_core::spectral::residual_norm(&mut g, &field, 1180e6) < 1e-16);
    assert_eq!(
        in_plane(&SymTensor2([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])),
        [1.0, 2.0, 6.0]
    );
}

#[test]
fn config_errors_are_rejected() {
    let bad = SolverConfig {
        newton_tol: 0.0,
        ..SolverConfig::default()
    };
    let r = SpectralSolver::new(
        disc(4),
        &Preset::Perfect.catalog(),
        Integrator::BackwardEuler,
        bad,
        None,
    );
    assert!(matches!(r, Err(Error::Config(_))));
    let grid = PhaseGrid::uniform(3, 3, 7).unwrap();
    let r = SpectralSolver::new(
        grid,
        &Preset::Perfect.catalog(),
        Integrator::BackwardEuler,
        SolverConfig::default(),
        None,
    );
    assert!(matches!(r, Err(Error::UnknownPhase(7))));
}
