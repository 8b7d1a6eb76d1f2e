//! Time stepping, load programs, comparison campaigns and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::material::{Integrator, MaterialParams};
use crate::microstructure::{load_grid, GridFormat, InclusionShape, PhaseCatalog, PhaseGrid};
use crate::spectral::{GuessMode, IterationLog, SolverConfig, SpectralSolver};
use crate::tensors::SymTensor2;

pub const YOUNG: f64 = 206.824e9;
pub const POISSON: f64 = 0.3;
pub const REFERENCE_RATE: f64 = 0.001;
pub const RATE_EXPONENT: f64 = 0.05;
pub const FERRITE_SIGMA0: f64 = 425e6;
pub const MARTENSITE_SIGMA0: f64 = 1180e6;
pub const FERRITE: u32 = 0;
pub const MARTENSITE: u32 = 1;

/// Hardening regime bundling phase parameters with its load program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Hardening,
    Perfect,
    Softening,
}

impl Preset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::Hardening => "hardening",
            Preset::Perfect => "perfect",
            Preset::Softening => "softening",
        }
    }

    /// `(h_ferrite, h_martensite)` in Pa.
    pub fn hardening_moduli(&self) -> (f64, f64) {
        match self {
            Preset::Hardening => (940e6, 1740e6),
            Preset::Perfect => (0.0, 0.0),
            Preset::Softening => (-940e6, -1740e6),
        }
    }

    pub fn catalog(&self) -> PhaseCatalog {
        let (hf, hm) = self.hardening_moduli();
        let phase = |sigma0, h| {
            MaterialParams::new(YOUNG, POISSON, REFERENCE_RATE, RATE_EXPONENT, sigma0, h)
                .expect("preset parameters are valid")
        };
        PhaseCatalog::new()
            .with_phase(FERRITE, "ferrite", phase(FERRITE_SIGMA0, hf))
            .with_phase(MARTENSITE, "martensite", phase(MARTENSITE_SIGMA0, hm))
    }

    pub fn load_program(&self) -> LoadProgram {
        let eps_final = match self {
            Preset::Softening => 0.01,
            _ => 0.05,
        };
        LoadProgram::new(eps_final, 0.01, 100)
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hardening" => Ok(Preset::Hardening),
            "perfect" => Ok(Preset::Perfect),
            "softening" => Ok(Preset::Softening),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }
}

/// Linear ramp of the applied strain `Ē(t) = ε_appl(t)·direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadProgram {
    pub eps_appl_final: f64,
    pub strain_rate: f64,
    pub n_steps: usize,
    pub direction: SymTensor2,
}

impl LoadProgram {
    /// Pure shear `(√3/2)(eₓ⊗eₓ − e_y⊗e_y)`, unit equivalent strain.
    pub fn pure_shear() -> SymTensor2 {
        let a = 3f64.sqrt() / 2.0;
        SymTensor2::diag(a, -a, 0.0)
    }

    pub fn new(eps_appl_final: f64, strain_rate: f64, n_steps: usize) -> Self {
        LoadProgram {
            eps_appl_final,
            strain_rate,
            n_steps,
            direction: Self::pure_shear(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_appl_final > 0.0) || !self.eps_appl_final.is_finite() {
            return Err(Error::Config(
                "final applied strain must be positive".into(),
            ));
        }
        if !(self.strain_rate > 0.0) || !self.strain_rate.is_finite() {
            return Err(Error::Config("strain rate must be positive".into()));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("number of steps must be positive".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.eps_appl_final / (self.strain_rate * self.n_steps as f64)
    }

    pub fn eps_appl(&self, step: usize) -> f64 {
        self.eps_appl_final * step as f64 / self.n_steps as f64
    }

    pub fn macro_strain(&self, step: usize) -> SymTensor2 {
        self.direction * self.eps_appl(step)
    }
}

/// Where the phase grid comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum MicroSource {
    File {
        path: PathBuf,
        format: GridFormat,
    },
    Synthetic {
        nx: usize,
        ny: usize,
        volume_fraction: f64,
        shape: InclusionShape,
    },
    Grid(PhaseGrid),
}

impl MicroSource {
    pub fn load(&self) -> Result<PhaseGrid> {
        match self {
            MicroSource::File { path, format } => {
                let file = File::open(path).map_err(|e| Error::io(path, e))?;
                load_grid(std::io::BufReader::new(file), *format)
            }
            MicroSource::Synthetic {
                nx,
                ny,
                volume_fraction,
                shape,
            } => crate::microstructure::synth_inclusion(*nx, *ny, *volume_fraction, *shape),
            MicroSource::Grid(g) => Ok(g.clone()),
        }
    }

    fn describe(&self) -> String {
        match self {
            MicroSource::File { path, format } => {
                format!("{} ({})", path.display(), format.as_str())
            }
            MicroSource::Synthetic {
                nx,
                ny,
                volume_fraction,
                shape,
            } => {
                format!(
                    "synthetic {nx}x{ny} {} vf={volume_fraction}",
                    shape.as_str()
                )
            }
            MicroSource::Grid(g) => format!("in-memory {}x{}", g.nx(), g.ny()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub micro: MicroSource,
    /// Top-left `(width, height)` crop applied after loading.
    pub crop: Option<(usize, usize)>,
    pub preset: Preset,
    pub catalog: PhaseCatalog,
    pub load: LoadProgram,
    pub solver: SolverConfig,
    pub integrator: Integrator,
    /// Residual normalizer in Pa; `None` uses the catalog default.
    pub normalizer: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub repetitions: usize,
    /// Worker threads for per-pixel work; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn new(micro: MicroSource, preset: Preset) -> Self {
        RunConfig {
            micro,
            crop: None,
            preset,
            catalog: preset.catalog(),
            load: preset.load_program(),
            solver: SolverConfig::default(),
            integrator: Integrator::BackwardEuler,
            normalizer: None,
            out_dir: None,
            repetitions: 1,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.load.validate()?;
        self.solver.validate()?;
        if let Integrator::Trapezoidal { theta } = self.integrator {
            if !(0.0..=1.0).contains(&theta) {
                return Err(Error::Config(format!(
                    "theta must lie in [0, 1], got {theta}"
                )));
            }
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if let Some(n) = self.normalizer {
            if !(n > 0.0) {
                return Err(Error::Config("normalizer must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn with_guess(&self, mode: GuessMode) -> Self {
        let mut c = self.clone();
        c.solver.ig_mode = mode;
        c
    }

    /// Builds a config from flat key-value settings. Keys mirror the CLI
    /// long flags with `-` or `_` accepted interchangeably.
    pub fn from_settings(settings: &Settings) -> Result<Self> {
        let get = |k: &str| settings.get(k);
        let parse =
            |k: &str| -> Result<Option<f64>> { get(k).map(|v| parse_num(k, v)).transpose() };
        let parse_count =
            |k: &str| -> Result<Option<usize>> { get(k).map(|v| parse_usize(k, v)).transpose() };

        let preset: Preset = get("preset").unwrap_or("hardening").parse()?;
        let micro = match get("micro") {
            Some(path) => MicroSource::File {
                path: PathBuf::from(path),
                format: get("format").unwrap_or("ascii-grid").parse()?,
            },
            None => {
                let nx = parse_count("nx")?.unwrap_or(101);
                let ny = parse_count("ny")?.unwrap_or(nx);
                MicroSource::Synthetic {
                    nx,
                    ny,
                    volume_fraction: parse("vf")?.unwrap_or(0.17),
                    shape: get("shape").unwrap_or("disc").parse()?,
                }
            }
        };
        let mut cfg = RunConfig::new(micro, preset);
        if let Some(c) = get("crop") {
            cfg.crop = Some(parse_dims(c)?);
        }
        if let Some(v) = parse("eps-final")? {
            cfg.load.eps_appl_final = v;
        }
        if let Some(v) = parse("rate")? {
            cfg.load.strain_rate = v;
        }
        if let Some(v) = parse_count("steps")? {
            cfg.load.n_steps = v;
        }
        let theta = parse("theta")?;
        cfg.integrator = match get("scheme").unwrap_or("be") {
            "be" => {
                if theta.is_some_and(|t| t != 1.0) {
                    return Err(Error::Config("theta requires scheme = trapz".into()));
                }
                Integrator::BackwardEuler
            }
            "trapz" => Integrator::Trapezoidal {
                theta: theta.unwrap_or(0.5),
            },
            other => return Err(Error::Config(format!("unknown scheme '{other}'"))),
        };
        if let Some(v) = get("ig") {
            cfg.solver.ig_mode = v.parse()?;
        }
        if let Some(v) = parse("newton-tol")? {
            cfg.solver.newton_tol = v;
        }
        if let Some(v) = parse_count("newton-max")? {
            cfg.solver.newton_max = v;
        }
        if let Some(v) = parse("cg-tol")? {
            cfg.solver.cg_tol = v;
        }
        if let Some(v) = parse_count("cg-max")? {
            cfg.solver.cg_max = Some(v);
        }
        cfg.normalizer = parse("normalizer")?;
        cfg.out_dir = get("out").map(PathBuf::from);
        if let Some(v) = parse_count("repetitions")? {
            cfg.repetitions = v;
        }
        cfg.threads = parse_count("threads")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Key-value echo of the effective configuration.
    pub fn echo(&self) -> Vec<(String, String)> {
        let mut v = vec![
            ("micro".to_string(), self.micro.describe()),
            (
                "crop".to_string(),
                self.crop.map_or("none".into(), |(w, h)| format!("{w}x{h}")),
            ),
            ("preset".to_string(), self.preset.as_str().into()),
        ];
        for (id, phase) in self.catalog.iter() {
            let p = &phase.params;
            v.push((
                format!("phase.{id}"),
                format!(
                    "{} E={} nu={} gamma0_dot={} m={} sigma0={} h={}",
                    phase.label, p.e, p.nu, p.gamma0_dot, p.m, p.sigma0, p.h
                ),
            ));
        }
        let (scheme, theta) = match self.integrator {
            Integrator::BackwardEuler => ("be", 1.0),
            Integrator::Trapezoidal { theta } => ("trapz", theta),
        };
        v.extend([
            ("scheme".to_string(), scheme.to_string()),
            ("theta".to_string(), theta.to_string()),
            (
                "eps_final".to_string(),
                self.load.eps_appl_final.to_string(),
            ),
            ("rate".to_string(), self.load.strain_rate.to_string()),
            ("steps".to_string(), self.load.n_steps.to_string()),
            ("dt".to_string(), self.load.dt().to_string()),
            ("newton_tol".to_string(), self.solver.newton_tol.to_string()),
            ("newton_max".to_string(), self.solver.newton_max.to_string()),
            ("cg_tol".to_string(), self.solver.cg_tol.to_string()),
            (
                "cg_max".to_string(),
                self.solver.cg_max.map_or("10*N".into(), |n| n.to_string()),
            ),
            (
                "normalizer".to_string(),
                self.normalizer
                    .unwrap_or_else(|| self.catalog.default_normalizer())
                    .to_string(),
            ),
            ("repetitions".to_string(), self.repetitions.to_string()),
            (
                "threads".to_string(),
                self.threads.map_or("default".into(), |n| n.to_string()),
            ),
        ]);
        v
    }
}

fn parse_num(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::Config(format!("{key}: expected a number, got '{v}'")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got '{v}'")))
}

fn parse_dims(v: &str) -> Result<(usize, usize)> {
    let (w, h) = v
        .split_once('x')
        .ok_or_else(|| Error::Config(format!("crop: expected WxH, got '{v}'")))?;
    Ok((parse_usize("crop", w)?, parse_usize("crop", h)?))
}

/// Flat key-value settings (config file contents overlaid by CLI flags).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let key = normalize_key(k);
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "line {}: unknown key '{}'",
                    lineno + 1,
                    k.trim()
                )));
            }
            map.insert(key, v.trim().to_string());
        }
        Ok(Settings(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(normalize_key(key), value.into());
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.0.remove(&normalize_key(key))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(&normalize_key(key)).map(String::as_str)
    }

    /// Later settings win.
    pub fn overlay(&mut self, other: &Settings) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }
}

pub const KNOWN_KEYS: &[&str] = &[
    "micro",
    "format",
    "crop",
    "nx",
    "ny",
    "vf",
    "shape",
    "preset",
    "scheme",
    "theta",
    "ig",
    "steps",
    "eps-final",
    "rate",
    "out",
    "newton-tol",
    "newton-max",
    "cg-tol",
    "cg-max",
    "normalizer",
    "repetitions",
    "threads",
];

fn normalize_key(k: &str) -> String {
    k.trim().replace('_', "-")
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub time_s: f64,
    pub eps_appl: f64,
    pub ig_mode: GuessMode,
    pub nr_iters: usize,
    pub cg_iters: usize,
    pub res_i0: f64,
    pub res_final: f64,
    pub wall_ms: f64,
    pub residuals: Vec<f64>,
}

impl StepRecord {
    fn from_log(step: usize, load: &LoadProgram, mode: GuessMode, log: &IterationLog) -> Self {
        StepRecord {
            step,
            time_s: load.dt() * step as f64,
            eps_appl: load.eps_appl(step),
            ig_mode: mode,
            nr_iters: log.nr_iters(),
            cg_iters: log.total_krylov_iters(),
            res_i0: log.residual_i0(),
            res_final: log.residual_final(),
            wall_ms: log.wall.as_secs_f64() * 1e3,
            residuals: log.residuals.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub ig_mode: GuessMode,
    pub steps: Vec<StepRecord>,
    /// False when the run stopped early on exhausted softening.
    pub complete: bool,
    pub failure: Option<String>,
    pub final_stress: Vec<SymTensor2>,
    pub mean_stress: SymTensor2,
    pub mean_strain: SymTensor2,
    /// Solver wall time of each repetition, ms.
    pub repetition_wall_ms: Vec<f64>,
    pub config: Vec<(String, String)>,
}

impl RunReport {
    pub fn total_nr_iters(&self) -> usize {
        self.steps.iter().map(|s| s.nr_iters).sum()
    }

    pub fn total_cg_iters(&self) -> usize {
        self.steps.iter().map(|s| s.cg_iters).sum()
    }

    pub fn avg_nr_iters(&self) -> f64 {
        if self.steps.is_empty() {
            0.0
        } else {
            self.total_nr_iters() as f64 / self.steps.len() as f64
        }
    }

    pub fn cumulative_nr_iters(&self) -> Vec<usize> {
        self.steps
            .iter()
            .scan(0, |acc, s| {
                *acc += s.nr_iters;
                Some(*acc)
            })
            .collect()
    }

    /// Mean solver wall time over repetitions, ms.
    pub fn wall_ms(&self) -> f64 {
        if self.repetition_wall_ms.is_empty() {
            0.0
        } else {
            self.repetition_wall_ms.iter().sum::<f64>() / self.repetition_wall_ms.len() as f64
        }
    }

    pub fn last_step(&self) -> Option<&StepRecord> {
        self.steps.last()
    }
}

/// Runs the load program `repetitions` times and reports the first
/// trajectory with wall times averaged over repetitions.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| run_inner(config)),
        None => run_inner(config),
    }
}

fn load_micro(config: &RunConfig) -> Result<PhaseGrid> {
    let grid = config.micro.load()?;
    match config.crop {
        Some((w, h)) => grid.crop(0, 0, w, h),
        None => Ok(grid),
    }
}

fn run_inner(config: &RunConfig) -> Result<RunReport> {
    let grid = load_micro(config)?;
    let mut report: Option<RunReport> = None;
    for _ in 0..config.repetitions {
        let rep = run_once(config, grid.clone())?;
        match report.as_mut() {
            None => report = Some(rep),
            Some(first) => {
                for (a, b) in first.steps.iter_mut().zip(&rep.steps) {
                    a.wall_ms += b.wall_ms;
                }
                first.repetition_wall_ms.extend(rep.repetition_wall_ms);
            }
        }
    }
    let mut report = report.expect("at least one repetition");
    let reps = config.repetitions as f64;
    report.steps.iter_mut().for_each(|s| s.wall_ms /= reps);
    Ok(report)
}

fn run_once(config: &RunConfig, grid: PhaseGrid) -> Result<RunReport> {
    let mode = config.solver.ig_mode;
    let mut solver = SpectralSolver::new(
        grid,
        &config.catalog,
        config.integrator,
        config.solver,
        config.normalizer,
    )?;
    let dt = config.load.dt();
    let mut steps = Vec::with_capacity(config.load.n_steps);
    let mut failure = None;
    for step in 1..=config.load.n_steps {
        match solver.newton_increment(config.load.macro_strain(step), dt) {
            Ok(log) => steps.push(StepRecord::from_log(step, &config.load, mode, &log)),
            Err(e) if matches!(e.root(), Error::NonPositiveYield { .. }) => {
                failure = Some(e.at_step(step).to_string());
                break;
            }
            Err(e) => return Err(e.at_step(step)),
        }
    }
    let fields = solver.fields();
    let wall = steps.iter().map(|s| s.wall_ms).sum();
    Ok(RunReport {
        ig_mode: mode,
        steps,
        complete: failure.is_none(),
        failure,
        final_stress: fields.stress.clone(),
        mean_stress: fields.mean_stress(),
        mean_strain: fields.mean_strain(),
        repetition_wall_ms: vec![wall],
        config: config.echo(),
    })
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub classical: RunReport,
    pub improved: RunReport,
}

impl CompareReport {
    /// `1 − improved/classical` total Newton iterations.
    pub fn iteration_reduction(&self) -> f64 {
        1.0 - self.improved.total_nr_iters() as f64 / self.classical.total_nr_iters().max(1) as f64
    }

    pub fn time_reduction(&self) -> f64 {
        let c = self.classical.wall_ms();
        if c > 0.0 {
            1.0 - self.improved.wall_ms() / c
        } else {
            0.0
        }
    }

    /// Largest absolute difference of any Cartesian stress component over
    /// all pixels of the final fields.
    pub fn max_stress_difference(&self) -> f64 {
        self.stress_differences(|d| {
            d.to_matrix()
                .iter()
                .flatten()
                .fold(0.0, |m, v| f64::max(m, v.abs()))
        })
    }

    /// Largest per-pixel Mandel norm of the final stress difference.
    pub fn max_stress_difference_norm(&self) -> f64 {
        self.stress_differences(|d| d.norm())
    }

    fn stress_differences(&self, metric: impl Fn(&SymTensor2) -> f64) -> f64 {
        self.classical
            .final_stress
            .iter()
            .zip(&self.improved.final_stress)
            .map(|(a, b)| metric(&(*a - *b)))
            .fold(0.0, f64::max)
    }
}

/// Runs classical and improved guesses on otherwise identical configs.
pub fn compare(config: &RunConfig) -> Result<CompareReport> {
    Ok(CompareReport {
        classical: run(&config.with_guess(GuessMode::Classical))?,
        improved: run(&config.with_guess(GuessMode::Improved))?,
    })
}

pub const CSV_HEADER: &str =
    "step,time_s,eps_appl,ig_mode,nr_iters,cg_iters,res_i0,res_final,wall_ms";
pub const RESIDUAL_CSV_HEADER: &str = "step,ig_mode,iter,residual";

pub fn write_steps_csv<W: Write>(mut out: W, reports: &[&RunReport]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in reports {
        for s in &r.steps {
            writeln!(
                out,
                "{},{},{},{},{},{},{:e},{:e},{:.3}",
                s.step,
                s.time_s,
                s.eps_appl,
                s.ig_mode.as_str(),
                s.nr_iters,
                s.cg_iters,
                s.res_i0,
                s.res_final,
                s.wall_ms
            )?;
        }
    }
    Ok(())
}

pub fn write_residuals_csv<W: Write>(mut out: W, reports: &[&RunReport]) -> std::io::Result<()> {
    writeln!(out, "{RESIDUAL_CSV_HEADER}")?;
    for r in reports {
        for s in &r.steps {
            for (i, res) in s.residuals.iter().enumerate() {
                writeln!(out, "{},{},{},{:e}", s.step, s.ig_mode.as_str(), i, res)?;
            }
        }
    }
    Ok(())
}

fn run_summary(prefix: &str, r: &RunReport, doc: &mut String) {
    let p = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    let s = r.mean_stress;
    let _ = writeln!(doc, "{} = {}", p("ig_mode"), r.ig_mode.as_str());
    let _ = writeln!(doc, "{} = {}", p("complete"), r.complete);
    if let Some(f) = &r.failure {
        let _ = writeln!(doc, "{} = {}", p("failure"), f);
    }
    let _ = writeln!(doc, "{} = {}", p("steps"), r.steps.len());
    let _ = writeln!(doc, "{} = {}", p("total_nr_iters"), r.total_nr_iters());
    let _ = writeln!(doc, "{} = {:.4}", p("avg_nr_iters"), r.avg_nr_iters());
    let _ = writeln!(doc, "{} = {}", p("total_cg_iters"), r.total_cg_iters());
    let _ = writeln!(doc, "{} = {:.3}", p("wall_ms"), r.wall_ms());
    let _ = writeln!(
        doc,
        "{} = {:e} {:e} {:e} {:e} {:e} {:e}",
        p("mean_stress"),
        s[0],
        s[1],
        s[2],
        s[3],
        s[4],
        s[5]
    );
    if let Some(last) = r.last_step() {
        let _ = writeln!(doc, "{} = {:e}", p("final_res_i0"), last.res_i0);
    }
}

fn config_summary(config: &[(String, String)], doc: &mut String) {
    for (k, v) in config {
        let _ = writeln!(doc, "config.{k} = {v}");
    }
}

pub fn summary_text(report: &RunReport) -> String {
    let mut doc = String::new();
    run_summary("", report, &mut doc);
    config_summary(&report.config, &mut doc);
    doc
}

pub fn compare_summary_text(report: &CompareReport) -> String {
    let mut doc = String::new();
    let _ = writeln!(
        doc,
        "iteration_reduction = {:.4}",
        report.iteration_reduction()
    );
    let _ = writeln!(doc, "time_reduction = {:.4}", report.time_reduction());
    let _ = writeln!(
        doc,
        "max_stress_difference = {:e}",
        report.max_stress_difference()
    );
    let _ = writeln!(
        doc,
        "max_stress_difference_norm = {:e}",
        report.max_stress_difference_norm()
    );
    run_summary("classical", &report.classical, &mut doc);
    run_summary("improved", &report.improved, &mut doc);
    config_summary(&report.classical.config, &mut doc);
    doc
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Writes `steps.csv`, `residuals.csv` and `summary.txt` into `dir`.
pub fn emit_reports(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    emit(dir, &[report], summary_text(report))
}

pub fn emit_compare_reports(report: &CompareReport, dir: &Path) -> Result<Vec<PathBuf>> {
    emit(
        dir,
        &[&report.classical, &report.improved],
        compare_summary_text(report),
    )
}

fn emit(dir: &Path, reports: &[&RunReport], summary: String) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let steps = dir.join("steps.csv");
    let residuals = dir.join("residuals.csv");
    let summary_path = dir.join("summary.txt");
    write_file(&steps, |w| write_steps_csv(w, reports))?;
    write_file(&residuals, |w| write_residuals_csv(w, reports))?;
    write_file(&summary_path, |w| w.write_all(summary.as_bytes()))?;
    Ok(vec![steps, residuals, summary_path])
}
