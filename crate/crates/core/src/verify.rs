//! Independent oracles for the constitutive update and its tangents.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::material::{
    alpha, beta_be, kappa_scalar, Integrator, MaterialParams, PointState, UpdateResult,
};
use crate::tensors::{deviator, equivalent_strain, equivalent_stress, SymTensor2, SymTensor4};

pub const DEFAULT_SEED: u64 = 0x5eed_2024;
pub const FD_STEP: f64 = 1e-7;
/// Roundoff allowance for "non-decreasing" once the plateau is flat.
pub const MONOTONE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Elastic,
    Hardening,
    Perfect,
    Softening,
}

impl Regime {
    pub const PLASTIC: [Regime; 3] = [Regime::Hardening, Regime::Perfect, Regime::Softening];

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Elastic => "elastic",
            Regime::Hardening => "hardening",
            Regime::Perfect => "perfect",
            Regime::Softening => "softening",
        }
    }
}

/// A material point with history, a total strain and a step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeState {
    pub regime: Regime,
    pub params: MaterialParams,
    pub state: PointState,
    pub eps: SymTensor2,
    pub dt: f64,
}

/// Random deviatoric direction with unit equivalent strain.
fn random_direction(rng: &mut ChaCha8Rng) -> SymTensor2 {
    loop {
        let mut v = [0.0; 6];
        v.iter_mut().for_each(|c| *c = rng.random_range(-1.0..1.0));
        let d = deviator(&SymTensor2(v));
        let eq = equivalent_strain(&d);
        if eq > 1e-3 {
            return d * (1.0 / eq);
        }
    }
}

fn phase_params(rng: &mut ChaCha8Rng, regime: Regime) -> MaterialParams {
    use crate::driver::{Preset, FERRITE, MARTENSITE};
    let preset = match regime {
        Regime::Softening => Preset::Softening,
        Regime::Perfect => Preset::Perfect,
        Regime::Hardening | Regime::Elastic => Preset::Hardening,
    };
    let id = if rng.random_bool(0.5) {
        FERRITE
    } else {
        MARTENSITE
    };
    preset.catalog().get(id).expect("preset phases").params
}

/// Draws one probe.
///
/// Plastic regimes: trial overstress in `[0.2, 1.5]`, `γ ∈ [0, 0.1]`,
/// `Δt γ̇₀ ∈ [1e-6, 1e-3]` (log-uniform), prior rate from an independent
/// overstress in the same range along a random prior direction. The elastic
/// regime uses virgin points loaded to an overstress below 0.05.
pub fn sample_probe(rng: &mut ChaCha8Rng, regime: Regime) -> ProbeState {
    let params = phase_params(rng, regime);
    let dt = 10f64.powf(rng.random_range(-6.0..-3.0)) / params.gamma0_dot;
    let volumetric = SymTensor2::identity() * rng.random_range(-1e-3..1e-3);
    if regime == Regime::Elastic {
        let ratio = rng.random_range(0.0..0.05);
        let eps = random_direction(rng) * (ratio * params.sigma0 / (3.0 * params.g)) + volumetric;
        return ProbeState {
            regime,
            params,
            state: PointState::virgin(),
            eps,
            dt,
        };
    }
    let gamma = rng.random_range(0.0..0.1);
    let sigma_s = params.sigma0 + params.h * gamma;
    let eps_p = random_direction(rng) * gamma * rng.random_range(0.0..1.0);
    let prior = rng.random_range(0.2..1.5f64);
    let state = PointState {
        eps_p,
        gamma,
        gamma_dot: params.gamma0_dot * prior.powf(1.0 / params.m),
        n: random_direction(rng),
        kappa: 1.0,
    };
    let ratio = rng.random_range(0.2..1.5);
    let eps = eps_p + random_direction(rng) * (ratio * sigma_s / (3.0 * params.g)) + volumetric;
    ProbeState {
        regime,
        params,
        state,
        eps,
        dt,
    }
}

/// `count` probes cycling through `regimes`, skipping draws whose return map
/// fails under `integrators` (e.g. softening exhausted within the step).
pub fn sample_probes(
    seed: u64,
    count: usize,
    regimes: &[Regime],
    integrators: &[Integrator],
) -> Vec<ProbeState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut k = 0;
    while out.len() < count {
        let regime = regimes[k % regimes.len()];
        k += 1;
        let probe = sample_probe(&mut rng, regime);
        if integrators.iter().all(|i| {
            i.return_map(&probe.params, &probe.state, &probe.eps, probe.dt)
                .is_ok()
        }) {
            out.push(probe);
        }
    }
    out
}

/// Max over entries of `|C_fd − C|` relative to `‖C‖`, with central
/// differences of step `FD_STEP` on the strain normalized by
/// `max(‖ε‖, σ₀/E)`.
pub fn fd_tangent_check(
    params: &MaterialParams,
    state: &PointState,
    eps: &SymTensor2,
    dt: f64,
    integrator: Integrator,
) -> Result<f64> {
    let base = integrator.return_map(params, state, eps, dt)?;
    let analytic = integrator.tangent(params, &base.reference, dt)?;
    let fd = fd_tangent(params, state, eps, dt, integrator)?;
    Ok((fd - analytic).0.abs().max() / analytic.norm())
}

pub fn fd_tangent(
    params: &MaterialParams,
    state: &PointState,
    eps: &SymTensor2,
    dt: f64,
    integrator: Integrator,
) -> Result<SymTensor4> {
    let scale = eps.norm().max(params.sigma0 / params.e);
    let h = FD_STEP * scale;
    let mut c = SymTensor4::zeros();
    for j in 0..6 {
        let mut plus = *eps;
        let mut minus = *eps;
        plus[j] += h;
        minus[j] -= h;
        let sp = integrator.return_map(params, state, &plus, dt)?.sigma;
        let sm = integrator.return_map(params, state, &minus, dt)?.sigma;
        for i in 0..6 {
            c.0[(i, j)] = (sp[i] - sm[i]) / (2.0 * h);
        }
    }
    Ok(c)
}

/// Max relative error of `Gβ/α = κ(2G − 3Gβ)` over backward Euler updates
/// with active flow.
pub fn footnote_identity_check(probes: &[ProbeState]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for p in probes {
        let up = Integrator::BackwardEuler.return_map(&p.params, &p.state, &p.eps, p.dt)?;
        let a = alpha(&p.params, &up.reference, p.dt);
        if a == 0.0 {
            continue;
        }
        let b = beta_be(&p.params, &up.reference, p.dt);
        let k = kappa_scalar(&p.params, &up.reference, p.dt, 1.0);
        let g = p.params.g;
        let lhs = g * b / a;
        let rhs = k * (2.0 * g - 3.0 * g * b);
        worst = worst.max((lhs - rhs).abs() / lhs.abs());
    }
    Ok(worst)
}

fn rel(a: &SymTensor2, b: &SymTensor2, floor: f64) -> f64 {
    (*a - *b).norm() / a.norm().max(b.norm()).max(floor)
}

fn rel_scalar(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative deviation between two updates and their tangents.
pub fn update_deviation(
    params: &MaterialParams,
    a: &UpdateResult,
    ta: &SymTensor4,
    b: &UpdateResult,
    tb: &SymTensor4,
) -> f64 {
    let (sa, sb) = (&a.new_state, &b.new_state);
    let stress_floor = params.sigma0 * 1e-12;
    [
        rel(&a.sigma, &b.sigma, stress_floor),
        rel(&sa.eps_p, &sb.eps_p, 1e-300),
        rel(&sa.n, &sb.n, 1e-300),
        rel_scalar(sa.gamma, sb.gamma, 1e-300),
        rel_scalar(sa.gamma_dot, sb.gamma_dot, 1e-300),
        rel_scalar(sa.kappa, sb.kappa, 1e-300),
        (*ta - *tb).norm() / ta.norm(),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Max deviation between the trapezoidal rule at `θ = 1` and backward Euler.
pub fn theta_degeneration_check(probes: &[ProbeState]) -> Result<f64> {
    let be = Integrator::BackwardEuler;
    let tr = Integrator::Trapezoidal { theta: 1.0 };
    let mut worst: f64 = 0.0;
    for p in probes {
        let a = be.return_map(&p.params, &p.state, &p.eps, p.dt)?;
        let b = tr.return_map(&p.params, &p.state, &p.eps, p.dt)?;
        let ta = be.tangent(&p.params, &a.reference, p.dt)?;
        let tb = tr.tangent(&p.params, &b.reference, p.dt)?;
        worst = worst.max(update_deviation(&p.params, &a, &ta, &b, &tb));
    }
    Ok(worst)
}

/// Single material point driven along a fixed strain direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointDriver {
    pub params: MaterialParams,
    /// Rescaled internally to unit equivalent strain.
    pub direction: SymTensor2,
    /// Equivalent strain rate, 1/s.
    pub rate: f64,
    pub duration: f64,
    pub steps: usize,
    pub integrator: Integrator,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSample {
    pub time: f64,
    pub eps_eq: f64,
    pub sigma_eq: f64,
    pub sigma_s: f64,
    pub gamma: f64,
    pub gamma_dot: f64,
}

impl PointDriver {
    /// Isochoric uniaxial direction `diag(1, −½, −½)`.
    pub fn uniaxial(params: MaterialParams, rate: f64, duration: f64, steps: usize) -> Self {
        PointDriver {
            params,
            direction: SymTensor2::diag(1.0, -0.5, -0.5),
            rate,
            duration,
            steps,
            integrator: Integrator::BackwardEuler,
        }
    }

    pub fn run(&self) -> Result<Vec<PointSample>> {
        if self.steps == 0 || !(self.duration > 0.0) || !(self.rate > 0.0) {
            return Err(Error::Config(
                "point driver needs positive steps, duration and rate".into(),
            ));
        }
        let dir = self.direction * (1.0 / equivalent_strain(&self.direction));
        let dt = self.duration / self.steps as f64;
        let mut state = PointState::virgin();
        let mut out = Vec::with_capacity(self.steps);
        for k in 1..=self.steps {
            let t = dt * k as f64;
            let up =
                self.integrator
                    .return_map(&self.params, &state, &(dir * (self.rate * t)), dt)?;
            state = up.new_state;
            out.push(PointSample {
                time: t,
                eps_eq: self.rate * t,
                sigma_eq: equivalent_stress(&up.sigma),
                sigma_s: self.params.sigma0 + self.params.h * state.gamma,
                gamma: state.gamma,
                gamma_dot: state.gamma_dot,
            });
        }
        Ok(out)
    }
}

/// Drives perfect plasticity at `ε̇_eq = rate_ratio·γ̇₀` until the plastic
/// rate matches the applied one within 1e-6; returns
/// `(simulated σ_eq/σ_s, rate_ratio^m)`.
pub fn steady_state_check(params: &MaterialParams, rate_ratio: f64) -> Result<(f64, f64)> {
    if params.h != 0.0 {
        return Err(Error::Config("steady-state check requires h = 0".into()));
    }
    let rate = rate_ratio * params.gamma0_dot;
    // strain to reach the plateau is of order σ₀/E; run well past it
    let strain = 200.0 * params.sigma0 * rate_ratio.powf(params.m) / params.e;
    let mut steps = 2000;
    for _ in 0..4 {
        let driver = PointDriver::uniaxial(*params, rate, strain / rate, steps);
        let samples = driver.run()?;
        let last = samples.last().expect("steps > 0");
        let mismatch = (last.gamma_dot - rate).abs() / rate;
        if mismatch <= 1e-6 {
            return Ok((last.sigma_eq / last.sigma_s, rate_ratio.powf(params.m)));
        }
        steps *= 2;
    }
    Err(Error::NoConvergence {
        what: "steady-state drive",
        iterations: steps,
        residual: f64::NAN,
    })
}

/// Secant slope of `σ_eq(ε_eq)` between 2% and 5% strain at `ε̇_eq = γ̇₀`,
/// and the expected slope `h` (viscous factor 1 at unit rate ratio).
pub fn hardening_slope_check(params: &MaterialParams) -> Result<(f64, f64)> {
    let driver = PointDriver::uniaxial(*params, params.gamma0_dot, 0.05 / params.gamma0_dot, 1000);
    let s = driver.run()?;
    let at = |e: f64| {
        s.iter()
            .min_by(|a, b| (a.eps_eq - e).abs().total_cmp(&(b.eps_eq - e).abs()))
            .copied()
            .expect("non-empty")
    };
    let (a, b) = (at(0.02), at(0.05));
    Ok(((b.sigma_eq - a.sigma_eq) / (b.eps_eq - a.eps_eq), params.h))
}

/// Largest relative drop of `σ_eq` between consecutive samples of a
/// perfectly plastic drive; zero for a monotone curve.
pub fn monotonicity_check(params: &MaterialParams, rate_ratio: f64) -> Result<f64> {
    let rate = rate_ratio * params.gamma0_dot;
    let strain = 20.0 * params.sigma0 / params.e;
    let s = PointDriver::uniaxial(*params, rate, strain / rate, 400).run()?;
    Ok(s.windows(2)
        .map(|w| (w[0].sigma_eq - w[1].sigma_eq) / w[0].sigma_eq.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn at_most(name: &str, value: f64, limit: f64, detail: String) -> Self {
        CheckResult {
            name: name.into(),
            value,
            limit,
            passed: value <= limit,
            detail,
        }
    }
}

fn perfect(m: f64) -> MaterialParams {
    use crate::driver::{FERRITE_SIGMA0, POISSON, REFERENCE_RATE, YOUNG};
    MaterialParams::new(YOUNG, POISSON, REFERENCE_RATE, m, FERRITE_SIGMA0, 0.0).expect("valid")
}

fn fd_suite(probes: &[ProbeState], integrator: Integrator) -> Result<f64> {
    probes.iter().try_fold(0.0f64, |acc, p| {
        Ok(acc.max(fd_tangent_check(
            &p.params, &p.state, &p.eps, p.dt, integrator,
        )?))
    })
}

/// Runs every oracle with fixed seeds.
pub fn run_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let be = Integrator::BackwardEuler;
    let tr = Integrator::Trapezoidal { theta: 0.5 };
    let mut out = Vec::new();

    let elastic = sample_probes(seed, 20, &[Regime::Elastic], &[be]);
    out.push(CheckResult::at_most(
        "fd_tangent_elastic",
        fd_suite(&elastic, be)?,
        1e-9,
        "20 virgin states, backward Euler".into(),
    ));
    let plastic_be = sample_probes(seed + 1, 100, &Regime::PLASTIC, &[be]);
    out.push(CheckResult::at_most(
        "fd_tangent_be",
        fd_suite(&plastic_be, be)?,
        1e-5,
        "100 plastic states".into(),
    ));
    let plastic_tr = sample_probes(seed + 2, 100, &Regime::PLASTIC, &[tr]);
    out.push(CheckResult::at_most(
        "fd_tangent_trapz_0.5",
        fd_suite(&plastic_tr, tr)?,
        1e-5,
        "100 plastic states".into(),
    ));

    let foot = sample_probes(seed + 3, 1000, &Regime::PLASTIC, &[be]);
    out.push(CheckResult::at_most(
        "footnote_identity",
        footnote_identity_check(&foot)?,
        1e-12,
        "1000 plastic states".into(),
    ));

    for (label, regimes) in [
        ("elastic", &[Regime::Elastic][..]),
        ("hardening", &[Regime::Hardening][..]),
        ("softening", &[Regime::Softening][..]),
        ("perfect", &[Regime::Perfect][..]),
    ] {
        let probes = sample_probes(
            seed + 4,
            100,
            regimes,
            &[be, Integrator::Trapezoidal { theta: 1.0 }],
        );
        let dev = theta_degeneration_check(&probes)?;
        out.push(CheckResult::at_most(
            &format!("theta_one_matches_be_{label}"),
            dev,
            if label == "elastic" { 0.0 } else { 1e-9 },
            "100 states: stress, state and tangent".into(),
        ));
    }

    for (m, ratio) in [
        (0.05, 10.0),
        (0.1, 10.0),
        (0.3, 10.0),
        (0.05, 1.0),
        (0.3, 1.0),
    ] {
        let (sim, exact) = steady_state_check(&perfect(m), ratio)?;
        out.push(CheckResult::at_most(
            &format!("plateau_m{m}_rate{ratio}"),
            (sim / exact - 1.0).abs(),
            5e-3,
            format!("simulated {sim:.6} analytic {exact:.6}"),
        ));
    }

    let hard = perfect(0.05).with_hardening(940e6);
    let (slope, h) = hardening_slope_check(&hard)?;
    out.push(CheckResult::at_most(
        "hardening_slope",
        (slope / h - 1.0).abs(),
        0.05,
        format!("secant {slope:.4e} vs h {h:.4e}"),
    ));
    out.push(CheckResult::at_most(
        "perfect_monotone",
        monotonicity_check(&perfect(0.05), 10.0)?,
        MONOTONE_SLACK,
        "largest relative drop of sigma_eq".into(),
    ));
    Ok(out)
}

pub const SUITE_CSV_HEADER: &str = "check,value,limit,passed,detail";

pub fn write_suite_csv<W: Write>(mut out: W, results: &[CheckResult]) -> std::io::Result<()> {
    writeln!(out, "{SUITE_CSV_HEADER}")?;
    for r in results {
        writeln!(
            out,
            "{},{:e},{:e},{},\"{}\"",
            r.name, r.value, r.limit, r.passed, r.detail
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_is_deterministic_and_in_range() {
        let a = sample_probes(7, 30, &Regime::PLASTIC, &[Integrator::BackwardEuler]);
        let b = sample_probes(7, 30, &Regime::PLASTIC, &[Integrator::BackwardEuler]);
        assert_eq!(a, b);
        for p in &a {
            let x = p.dt * p.params.gamma0_dot;
            assert!((1e-6..=1e-3).contains(&x));
            assert!((0.0..0.1).contains(&p.state.gamma));
            assert!(deviator(&p.state.eps_p).norm() <= p.state.eps_p.norm() + 1e-18);
        }
        assert_eq!(a[0].regime, Regime::Hardening);
        assert_eq!(a[2].regime, Regime::Softening);
    }

    #[test]
    fn elastic_probe_tangent_is_exact() {
        let probes = sample_probes(1, 5, &[Regime::Elastic], &[Integrator::BackwardEuler]);
        for p in &probes {
            let err =
                fd_tangent_check(&p.params, &p.state, &p.eps, p.dt, Integrator::BackwardEuler)
                    .unwrap();
            assert!(err <= 1e-9, "{err}");
        }
    }

    #[test]
    fn plateau_unit_rate_is_one() {
        for m in [0.05, 0.3] {
            let (sim, exact) = steady_state_check(&perfect(m), 1.0).unwrap();
            assert_eq!(exact, 1.0);
            assert!((sim - 1.0).abs() < 5e-3);
        }
        assert!(steady_state_check(&perfect(0.05).with_hardening(1e8), 1.0).is_err());
    }

    #[test]
    fn point_driver_rejects_empty_program() {
        let d = PointDriver::uniaxial(perfect(0.05), 1e-3, 1.0, 0);
        assert!(matches!(d.run(), Err(Error::Config(_))));
    }

    #[test]
    fn suite_csv_schema() {
        let r = vec![CheckResult::at_most("x", 1.0, 2.0, "d".into())];
        let mut buf = Vec::new();
        write_suite_csv(&mut buf, &r).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next().unwrap(), SUITE_CSV_HEADER);
        assert!(s.contains("x,1e0,2e0,true,\"d\""));
    }
}
