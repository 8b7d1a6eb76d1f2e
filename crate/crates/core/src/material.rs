//! Small-strain visco-plastic material with Norton flow and linear hardening.
//!
//! Stress follows Hooke's law on the elastic strain, plastic flow is
//! deviatoric along `N = 3/2 σᵈ/σ_eq` at rate `γ̇ = γ̇₀ (σ_eq/σ_s)^{1/m}`,
//! and the yield stress evolves as `σ_s = σ₀ + h γ`.
//!
//! Two time integrators are provided: backward Euler (radial return) and the
//! generalised trapezoidal rule with parameter `θ`. Both return the
//! reference quantities needed for the consistent tangent and for the
//! initial-guess correction `Δt γ̇ᵗ κᵗ Nᵗ` applied at the start of the next
//! increment.

use crate::error::{Error, Result};
use crate::tensors::{deviator, equivalent_stress, invert4, SymTensor2, SymTensor4};

/// Default cap on `(σ_eq/σ_s)^{1/m}` in [`norton_rate`].
pub const DEFAULT_RATE_CAP: f64 = 1e30;

const FLOW_RTOL: f64 = 1e-12;
const FLOW_MAX_ITERS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialParams {
    /// Young's modulus [Pa].
    pub e: f64,
    pub nu: f64,
    /// Bulk modulus [Pa].
    pub k: f64,
    /// Shear modulus [Pa].
    pub g: f64,
    /// Reference strain rate [1/s].
    pub gamma0_dot: f64,
    /// Rate-sensitivity exponent.
    pub m: f64,
    /// Initial yield stress [Pa].
    pub sigma0: f64,
    /// Hardening modulus [Pa]; negative values soften.
    pub h: f64,
}

impl MaterialParams {
    pub fn new(e: f64, nu: f64, gamma0_dot: f64, m: f64, sigma0: f64, h: f64) -> Result<Self> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(e > 0.0) {
            return bad("Young's modulus must be positive");
        }
        if !(nu > -1.0 && nu < 0.5) {
            return bad("Poisson ratio must lie in (-1, 0.5)");
        }
        if !(gamma0_dot > 0.0) {
            return bad("reference strain rate must be positive");
        }
        if !(m > 0.0 && m <= 1.0) {
            return bad("rate-sensitivity exponent must lie in (0, 1]");
        }
        if !(sigma0 > 0.0) {
            return bad("initial yield stress must be positive");
        }
        if !h.is_finite() {
            return bad("hardening modulus must be finite");
        }
        Ok(MaterialParams {
            e,
            nu,
            k: e / (3.0 * (1.0 - 2.0 * nu)),
            g: e / (2.0 * (1.0 + nu)),
            gamma0_dot,
            m,
            sigma0,
            h,
        })
    }

    pub fn with_hardening(&self, h: f64) -> Self {
        MaterialParams { h, ..*self }
    }

    /// `K I⊗I + 2G ⁴Iᵈ`.
    pub fn elastic_tangent(&self) -> SymTensor4 {
        SymTensor4::ii() * self.k + SymTensor4::deviatoric() * (2.0 * self.g)
    }
}

/// History carried by a material point between accepted time steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointState {
    pub eps_p: SymTensor2,
    /// Accumulated plastic strain.
    pub gamma: f64,
    /// Plastic rate at the last converged time.
    pub gamma_dot: f64,
    /// Flow direction at the last converged time; zero for virgin material.
    pub n: SymTensor2,
    pub kappa: f64,
}

impl PointState {
    pub fn virgin() -> Self {
        PointState {
            eps_p: SymTensor2::ZERO,
            gamma: 0.0,
            gamma_dot: 0.0,
            n: SymTensor2::ZERO,
            kappa: 1.0,
        }
    }
}

impl Default for PointState {
    fn default() -> Self {
        Self::virgin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialState {
    pub sigma_tr: SymTensor2,
    pub sigma_eq_tr: f64,
    pub n_tr: SymTensor2,
}

/// Quantities at which the consistent tangent is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceState {
    pub sigma_eq: f64,
    /// Trial equivalent stress; used by the backward Euler tangent.
    pub trial_sigma_eq: f64,
    pub sigma_s: f64,
    pub delta_gamma: f64,
    pub n: SymTensor2,
    /// Flow direction at the start of the step (trapezoidal rule only).
    pub n_prev: SymTensor2,
}

impl ReferenceState {
    /// Reference state of an unloaded virgin point.
    pub fn elastic(params: &MaterialParams) -> Self {
        ReferenceState {
            sigma_eq: 0.0,
            trial_sigma_eq: 0.0,
            sigma_s: params.sigma0,
            delta_gamma: 0.0,
            n: SymTensor2::ZERO,
            n_prev: SymTensor2::ZERO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateResult {
    pub sigma: SymTensor2,
    pub new_state: PointState,
    pub delta_gamma: f64,
    pub scalar_newton_iters: usize,
    pub reference: ReferenceState,
}

/// Consistent tangent plus the strain correction of the improved guess.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentOperator {
    pub c_vp: SymTensor4,
    pub ig_correction: SymTensor2,
}

/// Time integration scheme of the flow rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integrator {
    BackwardEuler,
    Trapezoidal { theta: f64 },
}

impl Integrator {
    pub fn theta(&self) -> f64 {
        match *self {
            Integrator::BackwardEuler => 1.0,
            Integrator::Trapezoidal { theta } => theta,
        }
    }

    pub fn return_map(
        &self,
        params: &MaterialParams,
        state_t: &PointState,
        eps_total: &SymTensor2,
        dt: f64,
    ) -> Result<UpdateResult> {
        match *self {
            Integrator::BackwardEuler => be_return_map(params, state_t, eps_total, dt),
            Integrator::Trapezoidal { theta } => {
                trapz_return_map(params, state_t, eps_total, dt, theta)
            }
        }
    }

    pub fn tangent(
        &self,
        params: &MaterialParams,
        reference: &ReferenceState,
        dt: f64,
    ) -> Result<SymTensor4> {
        match *self {
            Integrator::BackwardEuler => Ok(be_tangent(params, reference, dt)),
            Integrator::Trapezoidal { theta } => trapz_tangent(params, reference, dt, theta),
        }
    }

    /// Tangent at a converged update together with the guess correction for
    /// the following increment of size `dt`.
    pub fn linearize(
        &self,
        params: &MaterialParams,
        update: &UpdateResult,
        dt: f64,
    ) -> Result<TangentOperator> {
        Ok(TangentOperator {
            c_vp: self.tangent(params, &update.reference, dt)?,
            ig_correction: improved_guess_correction(&update.new_state, dt),
        })
    }
}

/// `K tr(εₑ) I + 2G dev(εₑ)`.
pub fn hooke(params: &MaterialParams, eps_e: &SymTensor2) -> SymTensor2 {
    SymTensor2::identity() * (params.k * eps_e.trace()) + deviator(eps_e) * (2.0 * params.g)
}

pub fn norton_rate(params: &MaterialParams, sigma_eq: f64, sigma_s: f64) -> Result<f64> {
    norton_rate_capped(params, sigma_eq, sigma_s, DEFAULT_RATE_CAP)
}

pub fn norton_rate_capped(
    params: &MaterialParams,
    sigma_eq: f64,
    sigma_s: f64,
    cap: f64,
) -> Result<f64> {
    if !(sigma_s > 0.0) {
        return Err(Error::NonPositiveYield {
            gamma: f64::NAN,
            yield_stress: sigma_s,
        });
    }
    if sigma_eq <= 0.0 {
        return Ok(0.0);
    }
    let ratio = sigma_eq / sigma_s;
    let exponent = 1.0 / params.m;
    if exponent * ratio.ln() > cap.ln() {
        return Err(Error::RateOverflow { ratio, exponent });
    }
    Ok(params.gamma0_dot * ratio.powf(exponent))
}

pub fn yield_stress(params: &MaterialParams, gamma: f64) -> Result<f64> {
    let yield_stress = params.sigma0 + params.h * gamma;
    if yield_stress > 0.0 {
        Ok(yield_stress)
    } else {
        Err(Error::NonPositiveYield {
            gamma,
            yield_stress,
        })
    }
}

pub fn trial_state(
    params: &MaterialParams,
    state_t: &PointState,
    eps_total: &SymTensor2,
) -> TrialState {
    let sigma_tr = hooke(params, &(*eps_total - state_t.eps_p));
    let sigma_eq_tr = equivalent_stress(&sigma_tr);
    let n_tr = if sigma_eq_tr > 0.0 {
        deviator(&sigma_tr) * (1.5 / sigma_eq_tr)
    } else {
        SymTensor2::ZERO
    };
    TrialState {
        sigma_tr,
        sigma_eq_tr,
        n_tr,
    }
}

/// `α* = γ̇₀ G Δt / (m σ_s*) · (σ_eq*/σ_s*)^{1/m − 1}`.
pub fn alpha(params: &MaterialParams, reference: &ReferenceState, dt: f64) -> f64 {
    if reference.sigma_eq <= 0.0 {
        return 0.0;
    }
    let ratio = reference.sigma_eq / reference.sigma_s;
    params.gamma0_dot * params.g * dt / (params.m * reference.sigma_s)
        * ratio.powf(1.0 / params.m - 1.0)
}

/// `σ_eq* h / (σ_s* G)`.
fn hardening_ratio(params: &MaterialParams, reference: &ReferenceState) -> f64 {
    reference.sigma_eq * params.h / (reference.sigma_s * params.g)
}

/// `β*` of the backward Euler tangent.
pub fn beta_be(params: &MaterialParams, reference: &ReferenceState, dt: f64) -> f64 {
    let a = alpha(params, reference, dt);
    2.0 * a / (1.0 + 3.0 * a + hardening_ratio(params, reference) * a)
}

/// `κ* = 1 / (1 + σ_eq* h θ α* / (σ_s* G))`; `θ = 1` is backward Euler.
pub fn kappa_scalar(
    params: &MaterialParams,
    reference: &ReferenceState,
    dt: f64,
    theta: f64,
) -> f64 {
    let a = alpha(params, reference, dt);
    1.0 / (1.0 + hardening_ratio(params, reference) * theta * a)
}

/// Predicted plastic strain over the next step, `Δt γ̇ᵗ κᵗ Nᵗ`.
pub fn improved_guess_correction(state_t: &PointState, dt: f64) -> SymTensor2 {
    if state_t.gamma_dot == 0.0 {
        return SymTensor2::ZERO;
    }
    state_t.n * (dt * state_t.gamma_dot * state_t.kappa)
}

/// Scalar flow equation `Δγ = Δγ_min + c (σ_eq(Δγ)/σ_s(Δγ))^{1/m}`, solved for
/// `u = Δγ − Δγ_min ∈ [0, u_hi)` in the log variable `z = ln u`, where it is
/// monotone and well scaled even for `1/m = 20`.
struct FlowEquation<'a, F: Fn(f64) -> (f64, f64)> {
    params: &'a MaterialParams,
    gamma_t: f64,
    dgamma_min: f64,
    c: f64,
    u_hi: f64,
    tol_scale: f64,
    /// `Δγ ↦ (σ_eq, dσ_eq/dΔγ)`.
    sigma_eq: F,
}

impl<F: Fn(f64) -> (f64, f64)> FlowEquation<'_, F> {
    /// `(f, df/dz)`; `f = −∞` flags the inadmissible side (σ_eq ≤ 0 or σ_s ≤ 0).
    fn eval(&self, z: f64) -> (f64, f64, f64) {
        let u = z.exp();
        let dg = self.dgamma_min + u;
        let (seq, dseq) = (self.sigma_eq)(dg);
        let ss = self.params.sigma0 + self.params.h * (self.gamma_t + dg);
        if !(seq > 0.0) || !(ss > 0.0) {
            return (f64::NEG_INFINITY, f64::NAN, u);
        }
        let f = seq.ln() - ss.ln() - self.params.m * (z - self.c.ln());
        let df = u * (dseq / seq - self.params.h / ss) - self.params.m;
        (f, df, u)
    }

    fn solve(&self) -> Result<(f64, usize)> {
        let p = self.params;
        let ss0 = yield_stress(p, self.gamma_t + self.dgamma_min)?;
        let (seq0, _) = (self.sigma_eq)(self.dgamma_min);
        if self.c == 0.0 || !(seq0 > 0.0) {
            return Ok((0.0, 0));
        }
        // explicit estimate: lies right of the root whenever σ_eq/σ_s decreases with Δγ
        let mut z = self.c.ln() + (seq0 / ss0).ln() / p.m;
        if z < f64::MIN_POSITIVE.ln() {
            return Ok((z.exp(), 0));
        }
        let mut lo = f64::NEG_INFINITY;
        let mut hi = self.u_hi.ln();
        if z >= hi {
            z = hi - std::f64::consts::LN_2;
        }
        let mut polished = false;
        let mut last = f64::NAN;
        for it in 1..=FLOW_MAX_ITERS {
            let (f, df, u) = self.eval(z);
            if f > 0.0 {
                lo = z;
            } else {
                hi = z;
            }
            let mut next = f64::NAN;
            if f.is_finite() {
                let residual = u * -(f / p.m).exp_m1();
                last = residual;
                let tol = FLOW_RTOL * (self.dgamma_min + u).max(self.tol_scale);
                let step = -f / df;
                if residual.abs() <= tol {
                    if polished || f == 0.0 || !(step.abs() > 1e-15 * (1.0 + z.abs())) {
                        return Ok((u, it));
                    }
                    polished = true;
                }
                next = z + step;
            }
            if !(next > lo && next < hi) {
                next = if lo.is_finite() {
                    0.5 * (lo + hi)
                } else {
                    hi - 1.0
                };
            }
            if polished && (hi - lo) <= 1e-15 * (1.0 + z.abs()) {
                return Ok((z.exp(), it));
            }
            z = next;
        }
        // a collapsed bracket against σ_s → 0 means softening has exhausted the yield stress
        if self.params.h < 0.0 {
            let gamma = self.gamma_t + self.dgamma_min + self.u_hi;
            if self.params.sigma0 + self.params.h * gamma <= 0.0 {
                return Err(Error::NonPositiveYield {
                    gamma,
                    yield_stress: self.params.sigma0 + self.params.h * gamma,
                });
            }
        }
        Err(Error::NoConvergence {
            what: "return map",
            iterations: FLOW_MAX_ITERS,
            residual: last,
        })
    }
}

/// Upper bound on `u` beyond which the yield stress would turn non-positive.
fn softening_limit(params: &MaterialParams, gamma_t: f64, dgamma_min: f64) -> f64 {
    if params.h < 0.0 {
        (params.sigma0 + params.h * (gamma_t + dgamma_min)) / -params.h
    } else {
        f64::INFINITY
    }
}

/// Backward Euler radial return.
pub fn be_return_map(
    params: &MaterialParams,
    state_t: &PointState,
    eps_total: &SymTensor2,
    dt: f64,
) -> Result<UpdateResult> {
    if !(dt > 0.0) {
        return Err(Error::Config("time step must be positive".into()));
    }
    yield_stress(params, state_t.gamma)?;
    let trial = trial_state(params, state_t, eps_total);
    let three_g = 3.0 * params.g;
    let flow = FlowEquation {
        params,
        gamma_t: state_t.gamma,
        dgamma_min: 0.0,
        c: dt * params.gamma0_dot,
        u_hi: (trial.sigma_eq_tr / three_g).min(softening_limit(params, state_t.gamma, 0.0)),
        tol_scale: dt * params.gamma0_dot,
        sigma_eq: |dg: f64| (trial.sigma_eq_tr - three_g * dg, -three_g),
    };
    let (delta_gamma, iters) = flow.solve()?;

    let eps_p = state_t.eps_p + trial.n_tr * delta_gamma;
    let gamma = state_t.gamma + delta_gamma;
    let sigma_s = yield_stress(params, gamma)?;
    let sigma = hooke(params, &(*eps_total - eps_p));
    let reference = ReferenceState {
        sigma_eq: (trial.sigma_eq_tr - three_g * delta_gamma).max(0.0),
        trial_sigma_eq: trial.sigma_eq_tr,
        sigma_s,
        delta_gamma,
        n: trial.n_tr,
        n_prev: state_t.n,
    };
    let new_state = PointState {
        eps_p,
        gamma,
        gamma_dot: delta_gamma / dt,
        n: trial.n_tr,
        kappa: kappa_scalar(params, &reference, dt, 1.0),
    };
    Ok(UpdateResult {
        sigma,
        new_state,
        delta_gamma,
        scalar_newton_iters: iters,
        reference,
    })
}

/// Consistent tangent of [`be_return_map`] around `reference`.
pub fn be_tangent(params: &MaterialParams, reference: &ReferenceState, dt: f64) -> SymTensor4 {
    let ce = params.elastic_tangent();
    if !(reference.trial_sigma_eq > 0.0) || reference.n.is_zero() {
        return ce;
    }
    let g = params.g;
    let beta = beta_be(params, reference, dt);
    let nn = reference.n.outer(&reference.n);
    let bracket = SymTensor4::deviatoric() * 1.5 - nn;
    ce - nn * (2.0 * g * beta)
        - bracket * (reference.delta_gamma * 4.0 * g * g / reference.trial_sigma_eq)
}

/// Generalised trapezoidal return map.
///
/// The coupled system for the elastic strain and `Δγ` collapses to one scalar
/// equation: the deviatoric stress is parallel to
/// `a(Δγ) = s_tr − 2G(1−θ) Δγ Nᵗ` with magnitude `σ_eq = σ_eq(a) − 3Gθ Δγ`.
pub fn trapz_return_map(
    params: &MaterialParams,
    state_t: &PointState,
    eps_total: &SymTensor2,
    dt: f64,
    theta: f64,
) -> Result<UpdateResult> {
    if !(dt > 0.0) {
        return Err(Error::Config("time step must be positive".into()));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Config(format!("theta = {theta} is outside [0, 1]")));
    }
    yield_stress(params, state_t.gamma)?;
    let g = params.g;
    let trial = trial_state(params, state_t, eps_total);
    let s_tr = deviator(&trial.sigma_tr);
    let n_t = state_t.n;
    let k = 2.0 * g * (1.0 - theta);
    let dgamma_min = (1.0 - theta) * dt * state_t.gamma_dot;

    let a_of = |dg: f64| s_tr - n_t * (k * dg);
    let sigma_eq_of = |dg: f64| {
        let a = a_of(dg);
        let q = (1.5 * a.ddot(&a)).sqrt();
        let dq = if q > 0.0 {
            -1.5 * k * a.ddot(&n_t) / q
        } else {
            0.0
        };
        (q - 3.0 * g * theta * dg, dq - 3.0 * g * theta)
    };

    // first Δγ ≥ Δγ_min where σ_eq(a) = 3GθΔγ
    let s2 = s_tr.ddot(&s_tr);
    let p = s_tr.ddot(&n_t);
    let n2 = n_t.ddot(&n_t);
    let qa = 1.5 * k * k * n2 - 9.0 * g * g * theta * theta;
    let qb = -3.0 * k * p;
    let qc = 1.5 * s2;
    let zero_at = smallest_root_above(qa, qb, qc, dgamma_min);
    let u_hi = (zero_at - dgamma_min).min(softening_limit(params, state_t.gamma, dgamma_min));

    let flow = FlowEquation {
        params,
        gamma_t: state_t.gamma,
        dgamma_min,
        c: theta * dt * params.gamma0_dot,
        u_hi,
        tol_scale: dt * params.gamma0_dot,
        sigma_eq: sigma_eq_of,
    };
    let (u, iters) = flow.solve()?;
    let delta_gamma = dgamma_min + u;

    let a = a_of(delta_gamma);
    let q = (1.5 * a.ddot(&a)).sqrt();
    let sigma_eq = (q - 3.0 * g * theta * delta_gamma).max(0.0);
    let n_new = if sigma_eq > 0.0 {
        a * (1.5 / q)
    } else {
        SymTensor2::ZERO
    };
    let n_theta = n_t * (1.0 - theta) + n_new * theta;
    let eps_p = state_t.eps_p + n_theta * delta_gamma;
    let gamma = state_t.gamma + delta_gamma;
    let sigma_s = yield_stress(params, gamma)?;
    let sigma = hooke(params, &(*eps_total - eps_p));
    let gamma_dot = if theta > 0.0 {
        u / (theta * dt)
    } else {
        norton_rate(params, sigma_eq, sigma_s)?
    };
    let reference = ReferenceState {
        sigma_eq,
        trial_sigma_eq: trial.sigma_eq_tr,
        sigma_s,
        delta_gamma,
        n: n_new,
        n_prev: n_t,
    };
    let new_state = PointState {
        eps_p,
        gamma,
        gamma_dot,
        n: n_new,
        kappa: kappa_scalar(params, &reference, dt, theta),
    };
    Ok(UpdateResult {
        sigma,
        new_state,
        delta_gamma,
        scalar_newton_iters: iters,
        reference,
    })
}

/// Smallest root `x > floor` of `a x² + b x + c`, or `+∞`.
fn smallest_root_above(a: f64, b: f64, c: f64, floor: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return f64::INFINITY;
    }
    let mut roots = Vec::with_capacity(2);
    if a.abs() <= 1e-14 * scale {
        if b != 0.0 {
            roots.push(-c / b);
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let qq = -0.5 * (b + b.signum() * sq);
            if qq != 0.0 {
                roots.push(qq / a);
                roots.push(c / qq);
            } else {
                roots.push(0.0);
            }
        }
    }
    roots
        .into_iter()
        .filter(|&r| r > floor)
        .fold(f64::INFINITY, f64::min)
}

/// Consistent tangent of [`trapz_return_map`] around `reference`.
pub fn trapz_tangent(
    params: &MaterialParams,
    reference: &ReferenceState,
    dt: f64,
    theta: f64,
) -> Result<SymTensor4> {
    let ce = params.elastic_tangent();
    if theta == 0.0 || !(reference.sigma_eq > 0.0) || reference.n.is_zero() {
        return Ok(ce);
    }
    let g = params.g;
    let n = reference.n;
    let n_theta = reference.n_prev * (1.0 - theta) + n * theta;
    let nn = n.outer(&n);
    let id = SymTensor4::deviatoric();
    let c = g * theta * reference.delta_gamma / reference.sigma_eq;
    // Iˢ in place of Iᵈ keeps the operator invertible; both agree on deviators
    let p = SymTensor4::identity() + id * (3.0 * c) - nn * (2.0 * c);
    let p_inv = invert4(&p)?;

    let a = alpha(params, reference, dt);
    let beta = 2.0 * a
        / (1.0
            + 2.0 * a * theta * n_theta.ddot(&n)
            + hardening_ratio(params, reference) * theta * a);
    let bracket = id * 1.5 - nn;
    Ok(ce
        - p_inv.apply(&n_theta).outer(&n) * (2.0 * g * theta * beta)
        - p_inv.compose(&bracket)
            * (reference.delta_gamma * 4.0 * g * g * theta / reference.sigma_eq))
}
