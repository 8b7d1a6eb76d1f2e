use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vpfft_core::driver::{self, RunConfig, Settings};
use vpfft_core::microstructure::{synth_inclusion, InclusionShape};
use vpfft_core::verify;
use vpfft_core::{Error, ErrorKind};

const EXIT_CHECK_FAILED: u8 = 1;

#[derive(Parser)]
#[command(
    name = "vpfft",
    version,
    about = "Visco-plastic FFT micromechanics on pixel grids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one load program and write per-step reports.
    Solve {
        #[command(flatten)]
        run: RunArgs,
        /// Initial guess: classical or improved.
        #[arg(long)]
        ig: Option<String>,
    },
    /// Run classical and improved guesses side by side.
    Compare {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Emit a centered-inclusion microstructure as an ascii grid.
    Synth {
        #[arg(long)]
        nx: usize,
        #[arg(long)]
        ny: usize,
        #[arg(long, default_value_t = 0.17)]
        vf: f64,
        #[arg(long, default_value = "disc")]
        shape: String,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the constitutive oracle suite.
    Verify {
        #[arg(long, default_value_t = verify::DEFAULT_SEED)]
        seed: u64,
        /// CSV of per-check results; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Flags shared by `solve` and `compare`. Each overrides the same key of
/// the `--config` file.
#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` file with any of the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Microstructure file; a synthetic inclusion is used when omitted.
    #[arg(long)]
    micro: Option<PathBuf>,
    /// ascii-grid or pgm.
    #[arg(long)]
    format: Option<String>,
    /// Top-left crop, WxH.
    #[arg(long)]
    crop: Option<String>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    #[arg(long)]
    vf: Option<f64>,
    #[arg(long)]
    shape: Option<String>,
    /// hardening, perfect or softening.
    #[arg(long)]
    preset: Option<String>,
    /// be or trapz.
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    eps_final: Option<f64>,
    #[arg(long)]
    rate: Option<f64>,
    /// Report directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    newton_tol: Option<f64>,
    #[arg(long)]
    newton_max: Option<usize>,
    #[arg(long)]
    cg_tol: Option<f64>,
    #[arg(long)]
    cg_max: Option<usize>,
    /// Residual normalizer in Pa.
    #[arg(long)]
    normalizer: Option<f64>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

impl RunArgs {
    fn settings(&self, ig: Option<&str>) -> Result<Settings, Error> {
        let mut s = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        let mut cli = Settings::default();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                cli.set(k, v);
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let num = |v: Option<f64>| v.map(|x| x.to_string());
        let count = |v: Option<usize>| v.map(|x| x.to_string());
        put("micro", path(&self.micro));
        put("format", self.format.clone());
        put("crop", self.crop.clone());
        put("nx", count(self.nx));
        put("ny", count(self.ny));
        put("vf", num(self.vf));
        put("shape", self.shape.clone());
        put("preset", self.preset.clone());
        put("scheme", self.scheme.clone());
        put("theta", num(self.theta));
        put("steps", count(self.steps));
        put("eps-final", num(self.eps_final));
        put("rate", num(self.rate));
        put("out", path(&self.out));
        put("newton-tol", num(self.newton_tol));
        put("newton-max", count(self.newton_max));
        put("cg-tol", num(self.cg_tol));
        put("cg-max", count(self.cg_max));
        put("normalizer", num(self.normalizer));
        put("repetitions", count(self.repetitions));
        put("threads", count(self.threads));
        put("ig", ig.map(str::to_string));
        s.overlay(&cli);
        Ok(s)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Solver => 3,
        ErrorKind::Io => 4,
    }
}

fn write_to(
    out: Option<&Path>,
    f: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), Error> {
    match out {
        Some(path) => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            f(&mut w)
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(path, e))
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            f(&mut w).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn solve(run: &RunArgs, ig: Option<&str>) -> Result<(), Error> {
    let config = RunConfig::from_settings(&run.settings(ig)?)?;
    let report = driver::run(&config)?;
    if let Some(dir) = &config.out_dir {
        driver::emit_reports(&report, dir)?;
    }
    print!("{}", driver::summary_text(&report));
    if let Some(f) = &report.failure {
        eprintln!("warning: run stopped early: {f}");
    }
    Ok(())
}

fn compare(run: &RunArgs) -> Result<(), Error> {
    let settings = run.settings(None)?;
    if settings.get("ig").is_some() {
        return Err(Error::Config(
            "compare runs both guesses; remove 'ig'".into(),
        ));
    }
    let config = RunConfig::from_settings(&settings)?;
    let report = driver::compare(&config)?;
    if let Some(dir) = &config.out_dir {
        driver::emit_compare_reports(&report, dir)?;
    }
    print!("{}", driver::compare_summary_text(&report));
    Ok(())
}

fn synth(nx: usize, ny: usize, vf: f64, shape: &str, out: Option<&Path>) -> Result<(), Error> {
    let shape: InclusionShape = shape.parse()?;
    let grid = synth_inclusion(nx, ny, vf, shape)?;
    write_to(out, |w| grid.emit_ascii(w))
}

fn run_verify(seed: u64, out: Option<&Path>) -> Result<bool, Error> {
    let results = verify::run_suite(seed)?;
    write_to(out, |w| verify::write_suite_csv(w, &results))?;
    for r in results.iter().filter(|r| !r.passed) {
        eprintln!(
            "FAIL {}: {:e} > {:e} ({})",
            r.name, r.value, r.limit, r.detail
        );
    }
    Ok(results.iter().all(|r| r.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Solve { run, ig } => solve(run, ig.as_deref()).map(|_| true),
        Command::Compare { run } => compare(run).map(|_| true),
        Command::Synth {
            nx,
            ny,
            vf,
            shape,
            out,
        } => synth(*nx, *ny, *vf, shape, out.as_deref()).map(|_| true),
        Command::Verify { seed, out } => run_verify(*seed, out.as_deref()),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
