//! Galerkin FFT solver for periodic plane-strain pixel grids.
//!
//! Strain fields are compatible fluctuations around a prescribed macroscopic
//! strain. Equilibrium is enforced through the projection `G` onto
//! symmetrized gradients of periodic displacement fields, applied per
//! frequency in Fourier space. Each Newton iteration solves
//! `G C δε = −G σ` with a Krylov method on the projected subspace.
//!
//! Only the in-plane components `(xx, yy, √2·xy)` carry unknowns; the
//! out-of-plane strains stay zero while `σ_zz` is free.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::material::{Integrator, MaterialParams, PointState, TangentOperator, UpdateResult};
use crate::microstructure::{PhaseCatalog, PhaseGrid};
use crate::tensors::SymTensor2;

/// In-plane Mandel components of a strain or stress tensor.
pub type InPlane = [f64; 3];

/// Mandel slots of the in-plane components.
pub const IN_PLANE: [usize; 3] = [0, 1, 5];

pub fn in_plane(t: &SymTensor2) -> InPlane {
    [t.0[0], t.0[1], t.0[5]]
}

pub fn from_in_plane(v: &InPlane) -> SymTensor2 {
    SymTensor2([v[0], v[1], 0.0, 0.0, 0.0, v[2]])
}

/// Integer frequency of index `i` on an `n`-point periodic axis.
fn frequency(i: usize, n: usize) -> f64 {
    if i <= (n - 1) / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// 2-D complex FFT. Forward maps row-major `[y][x]` data to a transposed
/// `[x][y]` spectrum; inverse maps back and normalizes by `1/(nx·ny)`.
#[derive(Clone)]
struct Fft2 {
    nx: usize,
    ny: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    work: Vec<Complex64>,
}

impl Fft2 {
    fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        let row_fwd = planner.plan_fft_forward(nx);
        let row_inv = planner.plan_fft_inverse(nx);
        let col_fwd = planner.plan_fft_forward(ny);
        let col_inv = planner.plan_fft_inverse(ny);
        let scratch_len = [&row_fwd, &row_inv, &col_fwd, &col_inv]
            .iter()
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Fft2 {
            nx,
            ny,
            row_fwd,
            row_inv,
            col_fwd,
            col_inv,
            scratch: vec![Complex64::default(); scratch_len],
            work: vec![Complex64::default(); nx * ny],
        }
    }

    fn forward(&mut self, data: &mut Vec<Complex64>) {
        self.row_fwd.process_with_scratch(data, &mut self.scratch);
        transpose(data, &mut self.work, self.ny, self.nx);
        self.col_fwd
            .process_with_scratch(&mut self.work, &mut self.scratch);
        std::mem::swap(data, &mut self.work);
    }

    fn inverse(&mut self, data: &mut Vec<Complex64>) {
        self.col_inv.process_with_scratch(data, &mut self.scratch);
        transpose(data, &mut self.work, self.nx, self.ny);
        self.row_inv
            .process_with_scratch(&mut self.work, &mut self.scratch);
        let scale = 1.0 / (self.nx * self.ny) as f64;
        self.work.iter_mut().for_each(|v| *v *= scale);
        std::mem::swap(data, &mut self.work);
    }
}

/// `src` has `rows × cols` row-major; `dst` receives `cols × rows`.
fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const BLOCK: usize = 16;
    for r0 in (0..rows).step_by(BLOCK) {
        for c0 in (0..cols).step_by(BLOCK) {
            for r in r0..(r0 + BLOCK).min(rows) {
                for c in c0..(c0 + BLOCK).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Fourier-space projection onto compatible (symmetrized-gradient) fields.
#[derive(Clone)]
pub struct ProjectionOperator {
    nx: usize,
    ny: usize,
    /// Per spectral index (`[x][y]` layout): symmetric 3×3 block
    /// `(m00, m01, m02, m11, m12, m22)` in the in-plane Mandel basis.
    blocks: Vec<[f64; 6]>,
    /// Spectral index of the negated frequency.
    mirror: Vec<usize>,
    fft: Fft2,
    z1: Vec<Complex64>,
    z2: Vec<Complex64>,
    w1: Vec<Complex64>,
}

/// Projection block for unit wave direction `n`, in the in-plane Mandel basis.
///
/// `P(A) = sym(n ⊗ w)` with `w = 2 A n − n (n·A·n)`.
fn projection_block(n: [f64; 2]) -> [f64; 6] {
    let apply = |a: InPlane| -> InPlane {
        let (axx, ayy, axy) = (a[0], a[1], a[2] / std::f64::consts::SQRT_2);
        let an = [axx * n[0] + axy * n[1], axy * n[0] + ayy * n[1]];
        let nan = n[0] * an[0] + n[1] * an[1];
        let w = [2.0 * an[0] - n[0] * nan, 2.0 * an[1] - n[1] * nan];
        [
            n[0] * w[0],
            n[1] * w[1],
            std::f64::consts::SQRT_2 * 0.5 * (n[0] * w[1] + n[1] * w[0]),
        ]
    };
    let c0 = apply([1.0, 0.0, 0.0]);
    let c1 = apply([0.0, 1.0, 0.0]);
    let c2 = apply([0.0, 0.0, 1.0]);
    [c0[0], c1[0], c2[0], c1[1], c2[1], c2[2]]
}

#[inline]
fn apply_block<T>(b: &[f64; 6], v: [T; 3]) -> [T; 3]
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
{
    [
        v[0] * b[0] + v[1] * b[1] + v[2] * b[2],
        v[0] * b[1] + v[1] * b[3] + v[2] * b[4],
        v[0] * b[2] + v[1] * b[4] + v[2] * b[5],
    ]
}

pub fn build_projection(nx: usize, ny: usize) -> ProjectionOperator {
    ProjectionOperator::new(nx, ny)
}

impl ProjectionOperator {
    pub fn new(nx: usize, ny: usize) -> Self {
        assert!(nx >= 1 && ny >= 1, "grid must be non-empty");
        let n = nx * ny;
        let mut blocks = vec![[0.0; 6]; n];
        let mut mirror = vec![0; n];
        for ix in 0..nx {
            for iy in 0..ny {
                let s = ix * ny + iy;
                mirror[s] = ((nx - ix) % nx) * ny + (ny - iy) % ny;
                // pixel-unit wave vector; only its direction matters
                let mut xi = [frequency(ix, nx) / nx as f64, frequency(iy, ny) / ny as f64];
                // A Nyquist component has no sign, so mixed modes would break
                // Hermitian symmetry; drop it there to keep G real.
                let nyq_x = nx % 2 == 0 && ix == nx / 2;
                let nyq_y = ny % 2 == 0 && iy == ny / 2;
                if nyq_x && !nyq_y && iy != 0 {
                    xi[0] = 0.0;
                }
                if nyq_y && !nyq_x && ix != 0 {
                    xi[1] = 0.0;
                }
                let len = xi[0].hypot(xi[1]);
                if len > 0.0 {
                    blocks[s] = projection_block([xi[0] / len, xi[1] / len]);
                }
            }
        }
        ProjectionOperator {
            nx,
            ny,
            blocks,
            mirror,
            fft: Fft2::new(nx, ny),
            z1: vec![Complex64::default(); n],
            z2: vec![Complex64::default(); n],
            w1: vec![Complex64::default(); n],
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `out = G field` for an in-plane tensor field.
    ///
    /// Components `xx` and `yy` share one complex transform and are separated
    /// by Hermitian symmetry.
    pub fn apply(&mut self, field: &[InPlane], out: &mut [InPlane]) {
        let n = self.len();
        assert_eq!(field.len(), n);
        assert_eq!(out.len(), n);
        for (k, v) in field.iter().enumerate() {
            self.z1[k] = Complex64::new(v[0], v[1]);
            self.z2[k] = Complex64::new(v[2], 0.0);
        }
        self.fft.forward(&mut self.z1);
        self.fft.forward(&mut self.z2);
        let half = Complex64::new(0.5, 0.0);
        let neg_half_i = Complex64::new(0.0, -0.5);
        for s in 0..n {
            let b = &self.blocks[s];
            if b.iter().all(|&v| v == 0.0) {
                self.w1[s] = Complex64::default();
                self.z2[s] = Complex64::default();
                continue;
            }
            let zs = self.z1[s];
            let zm = self.z1[self.mirror[s]].conj();
            let a0 = (zs + zm) * half;
            let a1 = (zs - zm) * neg_half_i;
            let r = apply_block(b, [a0, a1, self.z2[s]]);
            self.w1[s] = r[0] + Complex64::new(0.0, 1.0) * r[1];
            self.z2[s] = r[2];
        }
        self.fft.inverse(&mut self.w1);
        self.fft.inverse(&mut self.z2);
        for (k, o) in out.iter_mut().enumerate() {
            *o = [self.w1[k].re, self.w1[k].im, self.z2[k].re];
        }
    }
}

fn dot(a: &[InPlane], b: &[InPlane]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x[0] * y[0] + x[1] * y[1] + x[2] * y[2])
        .sum()
}

fn axpy(alpha: f64, x: &[InPlane], y: &mut [InPlane]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        for c in 0..3 {
            yi[c] += alpha * xi[c];
        }
    }
}

/// `‖G σ‖₂ / (normalizer · √(nx·ny))`.
pub fn residual_norm(
    projection: &mut ProjectionOperator,
    stress: &[SymTensor2],
    normalizer: f64,
) -> f64 {
    let field: Vec<InPlane> = stress.iter().map(in_plane).collect();
    let mut out = vec![[0.0; 3]; field.len()];
    projection.apply(&field, &mut out);
    rms(&out) / normalizer
}

fn rms(field: &[InPlane]) -> f64 {
    (dot(field, field) / field.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuessMode {
    Classical,
    Improved,
}

impl GuessMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            GuessMode::Classical => "classical",
            GuessMode::Improved => "improved",
        }
    }
}

impl std::str::FromStr for GuessMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(GuessMode::Classical),
            "improved" => Ok(GuessMode::Improved),
            other => Err(Error::Config(format!(
                "unknown initial-guess mode '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub newton_tol: f64,
    pub newton_max: usize,
    pub cg_tol: f64,
    /// `None` means `10·nx·ny`.
    pub cg_max: Option<usize>,
    pub ig_mode: GuessMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            newton_tol: 1e-8,
            newton_max: 25,
            cg_tol: 1e-10,
            cg_max: None,
            ig_mode: GuessMode::Classical,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0) || !(self.cg_tol > 0.0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        if self.newton_max == 0 || self.cg_max == Some(0) {
            return Err(Error::Config("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

/// Per-increment convergence record. Entry `i` of `residuals` is the
/// normalized residual after the `i`-th linear solve, `i = 0` being the
/// initial-guess solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationLog {
    pub residuals: Vec<f64>,
    pub krylov_iters: Vec<usize>,
    pub wall: Duration,
}

impl IterationLog {
    pub fn nr_iters(&self) -> usize {
        self.residuals.len()
    }

    pub fn total_krylov_iters(&self) -> usize {
        self.krylov_iters.iter().sum()
    }

    pub fn residual_i0(&self) -> f64 {
        self.residuals.first().copied().unwrap_or(f64::NAN)
    }

    pub fn residual_final(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::NAN)
    }
}

/// Krylov method for the projected tangent system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Krylov {
    /// Symmetric tangents (backward Euler).
    ConjugateGradient,
    /// Non-symmetric tangents (trapezoidal rule with `θ < 1`).
    BiCgStab,
}

/// Solves `A x = b` from `x = 0`; returns the iteration count.
fn conjugate_gradient<F>(
    mut apply: F,
    b: &[InPlane],
    x: &mut [InPlane],
    tol: f64,
    max_iter: usize,
) -> Result<usize>
where
    F: FnMut(&[InPlane], &mut [InPlane]),
{
    x.iter_mut().for_each(|v| *v = [0.0; 3]);
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok(0);
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![[0.0; 3]; b.len()];
    let mut rr = dot(&r, &r);
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::KrylovStagnation {
                iterations: it,
                residual: rr.sqrt() / b_norm,
            });
        }
        let alpha = rr / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= tol * b_norm {
            return Ok(it);
        }
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            for c in 0..3 {
                pi[c] = ri[c] + beta * pi[c];
            }
        }
        rr = rr_new;
    }
    Err(Error::KrylovStagnation {
        iterations: max_iter,
        residual: rr.sqrt() / b_norm,
    })
}

fn bicgstab<F>(
    mut apply: F,
    b: &[InPlane],
    x: &mut [InPlane],
    tol: f64,
    max_iter: usize,
) -> Result<usize>
where
    F: FnMut(&[InPlane], &mut [InPlane]),
{
    x.iter_mut().for_each(|v| *v = [0.0; 3]);
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok(0);
    }
    let n = b.len();
    let mut r = b.to_vec();
    let r_hat = b.to_vec();
    let mut p = vec![[0.0; 3]; n];
    let mut v = vec![[0.0; 3]; n];
    let mut s = vec![[0.0; 3]; n];
    let mut t = vec![[0.0; 3]; n];
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(Error::KrylovStagnation {
                iterations: it,
                residual: dot(&r, &r).sqrt() / b_norm,
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for k in 0..n {
            for c in 0..3 {
                p[k][c] = r[k][c] + beta * (p[k][c] - omega * v[k][c]);
            }
        }
        apply(&p, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for k in 0..n {
            for c in 0..3 {
                s[k][c] = r[k][c] - alpha * v[k][c];
            }
        }
        if dot(&s, &s).sqrt() <= tol * b_norm {
            axpy(alpha, &p, x);
            return Ok(it);
        }
        apply(&s, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for k in 0..n {
            for c in 0..3 {
                x[k][c] += alpha * p[k][c] + omega * s[k][c];
                r[k][c] = s[k][c] - omega * t[k][c];
            }
        }
        if dot(&r, &r).sqrt() <= tol * b_norm {
            return Ok(it);
        }
    }
    Err(Error::KrylovStagnation {
        iterations: max_iter,
        residual: dot(&r, &r).sqrt() / b_norm,
    })
}

/// Current fields of a spectral simulation.
#[derive(Debug, Clone)]
pub struct FieldGrid {
    pub nx: usize,
    pub ny: usize,
    pub strain: Vec<SymTensor2>,
    pub stress: Vec<SymTensor2>,
    pub states: Vec<PointState>,
    /// Tangent and guess correction at the last converged state.
    pub tangents: Vec<TangentOperator>,
    /// Macroscopic strain of the last converged state.
    pub macro_strain: SymTensor2,
}

impl FieldGrid {
    pub fn mean_strain(&self) -> SymTensor2 {
        mean(&self.strain)
    }

    pub fn mean_stress(&self) -> SymTensor2 {
        mean(&self.stress)
    }
}

fn mean(field: &[SymTensor2]) -> SymTensor2 {
    let sum = field.iter().fold(SymTensor2::ZERO, |acc, t| acc + *t);
    sum * (1.0 / field.len() as f64)
}

/// Newton-Raphson driver over a phase grid.
#[derive(Clone)]
pub struct SpectralSolver {
    grid: PhaseGrid,
    materials: Vec<MaterialParams>,
    material_of: Vec<usize>,
    projection: ProjectionOperator,
    integrator: Integrator,
    config: SolverConfig,
    normalizer: f64,
    fields: FieldGrid,
}

impl SpectralSolver {
    pub fn new(
        grid: PhaseGrid,
        catalog: &PhaseCatalog,
        integrator: Integrator,
        config: SolverConfig,
        normalizer: Option<f64>,
    ) -> Result<Self> {
        config.validate()?;
        catalog.check(&grid)?;
        let ids: Vec<u32> = catalog.iter().map(|(id, _)| id).collect();
        let materials: Vec<MaterialParams> = catalog.iter().map(|(_, p)| p.params).collect();
        let material_of = grid
            .phases()
            .iter()
            .map(|id| ids.iter().position(|x| x == id).expect("checked above"))
            .collect::<Vec<_>>();
        let normalizer = normalizer.unwrap_or_else(|| catalog.default_normalizer());
        if !(normalizer > 0.0) {
            return Err(Error::Config("residual normalizer must be positive".into()));
        }
        let n = grid.len();
        let tangents = material_of
            .iter()
            .map(|&m| TangentOperator {
                c_vp: materials[m].elastic_tangent(),
                ig_correction: SymTensor2::ZERO,
            })
            .collect();
        let fields = FieldGrid {
            nx: grid.nx(),
            ny: grid.ny(),
            strain: vec![SymTensor2::ZERO; n],
            stress: vec![SymTensor2::ZERO; n],
            states: vec![PointState::virgin(); n],
            tangents,
            macro_strain: SymTensor2::ZERO,
        };
        Ok(SpectralSolver {
            projection: ProjectionOperator::new(grid.nx(), grid.ny()),
            grid,
            materials,
            material_of,
            integrator,
            config,
            normalizer,
            fields,
        })
    }

    pub fn fields(&self) -> &FieldGrid {
        &self.fields
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn set_guess_mode(&mut self, mode: GuessMode) {
        self.config.ig_mode = mode;
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn krylov(&self) -> Krylov {
        if self.integrator.theta() < 1.0 {
            Krylov::BiCgStab
        } else {
            Krylov::ConjugateGradient
        }
    }

    fn params(&self, k: usize) -> &MaterialParams {
        &self.materials[self.material_of[k]]
    }

    /// Normalized residual of the current stress field.
    pub fn residual(&mut self) -> f64 {
        residual_norm(&mut self.projection, &self.fields.stress, self.normalizer)
    }

    fn return_map_all(&self, strain: &[SymTensor2], dt: f64) -> Result<Vec<UpdateResult>> {
        let integrator = self.integrator;
        (0..strain.len())
            .into_par_iter()
            .map(|k| {
                integrator
                    .return_map(self.params(k), &self.fields.states[k], &strain[k], dt)
                    .map_err(|e| {
                        let (x, y) = self.grid.coords(k);
                        e.at_pixel(x, y)
                    })
            })
            .collect()
    }

    fn tangent_blocks(&self, updates: &[UpdateResult], dt: f64) -> Result<Vec<[f64; 9]>> {
        let integrator = self.integrator;
        (0..updates.len())
            .into_par_iter()
            .map(|k| {
                integrator
                    .tangent(self.params(k), &updates[k].reference, dt)
                    .map(|c| c.in_plane_block())
                    .map_err(|e| {
                        let (x, y) = self.grid.coords(k);
                        e.at_pixel(x, y)
                    })
            })
            .collect()
    }

    /// Solves `G C x = b` for per-pixel in-plane tangent blocks.
    fn solve_linear(
        &mut self,
        blocks: &[[f64; 9]],
        b: &[InPlane],
        x: &mut [InPlane],
    ) -> Result<usize> {
        let max_iter = self.config.cg_max.unwrap_or(10 * self.grid.len());
        let tol = self.config.cg_tol;
        let krylov = self.krylov();
        let projection = &mut self.projection;
        // b = −Gσ cancels stresses far larger than itself; projecting again
        // removes the roundoff left outside the compatible subspace, which
        // would otherwise floor the attainable Krylov residual.
        let mut b_clean = vec![[0.0; 3]; b.len()];
        projection.apply(b, &mut b_clean);
        let b = &b_clean;
        let mut stress = vec![[0.0; 3]; b.len()];
        let apply = |v: &[InPlane], out: &mut [InPlane]| {
            for ((s, c), e) in stress.iter_mut().zip(blocks).zip(v) {
                *s = [
                    c[0] * e[0] + c[1] * e[1] + c[2] * e[2],
                    c[3] * e[0] + c[4] * e[1] + c[5] * e[2],
                    c[6] * e[0] + c[7] * e[1] + c[8] * e[2],
                ];
            }
            projection.apply(&stress, out);
        };
        match krylov {
            Krylov::ConjugateGradient => conjugate_gradient(apply, b, x, tol, max_iter),
            Krylov::BiCgStab => bicgstab(apply, b, x, tol, max_iter),
        }
    }

    /// `(−G σ, ‖G σ‖ / (normalizer √N))` for the stresses in `updates`.
    fn projected_residual(&mut self, updates: &[UpdateResult]) -> (Vec<InPlane>, f64) {
        let field: Vec<InPlane> = updates.iter().map(|u| in_plane(&u.sigma)).collect();
        let mut g = vec![[0.0; 3]; field.len()];
        self.projection.apply(&field, &mut g);
        let norm = rms(&g) / self.normalizer;
        g.iter_mut()
            .for_each(|v| v.iter_mut().for_each(|c| *c = -*c));
        (g, norm)
    }

    /// Advances from the converged state to macroscopic strain `e_new`.
    ///
    /// Iteration 0 solves `G Cᵗ δε = −G (σᵗ + Cᵗ (ΔE − c))` where `c` is zero in
    /// classical mode and `Δt γ̇ᵗ κᵗ Nᵗ` per pixel in improved mode. Later
    /// iterations solve `G Cⁱ δε = −G σⁱ` until the normalized residual
    /// drops below `newton_tol`. Fields are committed only on success.
    pub fn newton_increment(&mut self, e_new: SymTensor2, dt: f64) -> Result<IterationLog> {
        if !(dt > 0.0) {
            return Err(Error::Config("time step must be positive".into()));
        }
        let start = Instant::now();
        let n = self.grid.len();
        let delta_e = e_new - self.fields.macro_strain;
        let improved = self.config.ig_mode == GuessMode::Improved;

        let mut blocks: Vec<[f64; 9]> = Vec::with_capacity(n);
        let mut rhs: Vec<InPlane> = Vec::with_capacity(n);
        for (t, sigma) in self.fields.tangents.iter().zip(&self.fields.stress) {
            let drive = if improved {
                delta_e - t.ig_correction
            } else {
                delta_e
            };
            rhs.push(in_plane(&(*sigma + t.c_vp.apply(&drive))));
            blocks.push(t.c_vp.in_plane_block());
        }
        let mut b = vec![[0.0; 3]; n];
        self.projection.apply(&rhs, &mut b);
        b.iter_mut()
            .for_each(|v| v.iter_mut().for_each(|c| *c = -*c));

        let mut x = vec![[0.0; 3]; n];
        let mut log = IterationLog::default();
        let its = self.solve_linear(&blocks, &b, &mut x)?;
        let mut strain: Vec<SymTensor2> = self
            .fields
            .strain
            .iter()
            .zip(&x)
            .map(|(e, d)| *e + delta_e + from_in_plane(d))
            .collect();
        let mut updates = self.return_map_all(&strain, dt)?;
        let (mut b, mut res) = self.projected_residual(&updates);
        log.residuals.push(res);
        log.krylov_iters.push(its);

        while !(res <= self.config.newton_tol) {
            if !res.is_finite() || log.nr_iters() >= self.config.newton_max {
                return Err(Error::NewtonDivergence {
                    iterations: log.nr_iters(),
                    residual: res,
                });
            }
            let blocks = self.tangent_blocks(&updates, dt)?;
            let its = self.solve_linear(&blocks, &b, &mut x)?;
            for (e, d) in strain.iter_mut().zip(&x) {
                *e += from_in_plane(d);
            }
            updates = self.return_map_all(&strain, dt)?;
            (b, res) = self.projected_residual(&updates);
            log.residuals.push(res);
            log.krylov_iters.push(its);
        }

        let integrator = self.integrator;
        let tangents = (0..n)
            .into_par_iter()
            .map(|k| integrator.linearize(self.params(k), &updates[k], dt))
            .collect::<Result<Vec<_>>>()?;
        self.fields.tangents = tangents;
        self.fields.stress = updates.iter().map(|u| u.sigma).collect();
        self.fields.states = updates.iter().map(|u| u.new_state).collect();
        self.fields.strain = strain;
        self.fields.macro_strain = e_new;
        log.wall = start.elapsed();
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Lcg(u64);
    impl Lcg {
        fn next(&mut self) -> f64 {
            self.0 = self
                .0
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((self.0 >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
        fn field(&mut self, n: usize) -> Vec<InPlane> {
            (0..n)
                .map(|_| [self.next(), self.next(), self.next()])
                .collect()
        }
    }

    fn max_diff(a: &[InPlane], b: &[InPlane]) -> f64 {
        a.iter()
            .zip(b)
            .flat_map(|(x, y)| (0..3).map(move |c| (x[c] - y[c]).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn constant_field_is_annihilated() {
        for (nx, ny) in [(1, 1), (4, 6), (7, 5)] {
            let mut g = build_projection(nx, ny);
            let field = vec![[1.5, -0.3, 2.0]; nx * ny];
            let mut out = vec![[9.0; 3]; nx * ny];
            g.apply(&field, &mut out);
            assert!(out.iter().flatten().all(|v| v.abs() < 1e-14), "{nx}x{ny}");
        }
    }

    #[test]
    fn projection_is_idempotent_and_self_adjoint() {
        let mut rng = Lcg(7);
        for (nx, ny) in [(8, 8), (9, 7), (6, 11), (1, 5)] {
            let mut g = build_projection(nx, ny);
            let n = nx * ny;
            let a = rng.field(n);
            let b = rng.field(n);
            let (mut ga, mut gga, mut gb) =
                (vec![[0.0; 3]; n], vec![[0.0; 3]; n], vec![[0.0; 3]; n]);
            g.apply(&a, &mut ga);
            g.apply(&ga, &mut gga);
            g.apply(&b, &mut gb);
            assert!(max_diff(&ga, &gga) < 1e-10, "{nx}x{ny}");
            let lhs = dot(&ga, &b);
            let rhs = dot(&a, &gb);
            assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
            // range has zero mean
            let mean: f64 = ga.iter().map(|v| v[0] + v[1] + v[2]).sum::<f64>() / n as f64;
            assert!(mean.abs() < 1e-13);
        }
    }

    #[test]
    fn symmetric_gradient_is_reproduced() {
        // u = (sin(2πx/nx + 2πy/ny), cos(4πy/ny)), differentiated spectrally
        let (nx, ny) = (12, 10);
        let tau = std::f64::consts::TAU;
        let mut field = Vec::new();
        for y in 0..ny {
            for x in 0..nx {
                let ph = tau * (x as f64 / nx as f64 + y as f64 / ny as f64);
                let dux_dx = tau / nx as f64 * ph.cos();
                let dux_dy = tau / ny as f64 * ph.cos();
                let duy_dy = -2.0 * tau / ny as f64 * (2.0 * tau * y as f64 / ny as f64).sin();
                field.push([dux_dx, duy_dy, std::f64::consts::SQRT_2 * 0.5 * dux_dy]);
            }
        }
        let mut g = build_projection(nx, ny);
        let mut out = vec![[0.0; 3]; nx * ny];
        g.apply(&field, &mut out);
        assert!(max_diff(&field, &out) < 1e-10);
    }

    #[test]
    fn residual_norm_properties() {
        let mut g = build_projection(6, 5);
        let uniform = vec![SymTensor2::diag(3e8, -1e8, 5e7); 30];
        assert!(residual_norm(&mut g, &uniform, 1e9) < 1e-15);
        let mut rng = Lcg(3);
        let field: Vec<SymTensor2> = (0..30)
            .map(|_| SymTensor2([rng.next(), rng.next(), rng.next(), 0.0, 0.0, rng.next()]) * 1e8)
            .collect();
        let r1 = residual_norm(&mut g, &field, 1e9);
        let scaled: Vec<SymTensor2> = field.iter().map(|t| *t * -2.5).collect();
        let r2 = residual_norm(&mut g, &scaled, 1e9);
        assert!(r1 > 0.0);
        assert!((r2 - 2.5 * r1).abs() < 1e-12 * r2);
    }

    #[test]
    fn krylov_solvers_agree_on_spd_system() {
        let (nx, ny) = (9, 8);
        let n = nx * ny;
        let mut g = build_projection(nx, ny);
        let mut rng = Lcg(11);
        let stiff: Vec<f64> = (0..n).map(|_| 2.0 + rng.next()).collect();
        let raw = rng.field(n);
        let mut b = vec![[0.0; 3]; n];
        g.apply(&raw, &mut b);
        let mut tmp = vec![[0.0; 3]; n];
        let mut op = |v: &[InPlane], out: &mut [InPlane]| {
            for ((t, s), e) in tmp.iter_mut().zip(&stiff).zip(v) {
                *t = [s * e[0], s * e[1], s * e[2]];
            }
            g.apply(&tmp, out);
        };
        let mut x_cg = vec![[0.0; 3]; n];
        let its = conjugate_gradient(&mut op, &b, &mut x_cg, 1e-12, 500).unwrap();
        assert!(its > 0);
        let mut x_bi = vec![[0.0; 3]; n];
        bicgstab(&mut op, &b, &mut x_bi, 1e-12, 500).unwrap();
        assert!(max_diff(&x_cg, &x_bi) < 1e-9);
        let mut ax = vec![[0.0; 3]; n];
        op(&x_cg, &mut ax);
        assert!(max_diff(&ax, &b) < 1e-10);
        let mut z = vec![[1.0; 3]; n];
        assert_eq!(
            conjugate_gradient(&mut op, &vec![[0.0; 3]; n], &mut z, 1e-12, 5).unwrap(),
            0
        );
        assert!(z.iter().flatten().all(|v| *v == 0.0));
        assert!(matches!(
            conjugate_gradient(&mut op, &b, &mut x_cg, 1e-14, 1),
            Err(Error::KrylovStagnation { .. })
        ));
    }

    #[test]
    fn frequencies_follow_fft_convention() {
        assert_eq!(
            (0..5).map(|i| frequency(i, 5)).collect::<Vec<_>>(),
            [0.0, 1.0, 2.0, -2.0, -1.0]
        );
        assert_eq!(
            (0..4).map(|i| frequency(i, 4)).collect::<Vec<_>>(),
            [0.0, 1.0, -2.0, -1.0]
        );
    }
}
