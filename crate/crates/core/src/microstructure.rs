//! Periodic pixel microstructures and the phase catalog.
//!
//! Grids are row-major with `y` as the outer index and the origin at the
//! top-left pixel, matching image conventions. Two file formats are read:
//!
//! * `ascii-grid`: a first line `nx ny`, then `ny` lines of `nx` integer ids;
//! * PGM (`P2` ascii or `P5` binary): gray value `>= 128` is phase 1
//!   (bright, martensite), anything darker is phase 0.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::material::MaterialParams;

/// Gray level at or above which a PGM pixel is phase 1.
pub const PGM_THRESHOLD: u32 = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseGrid {
    nx: usize,
    ny: usize,
    phases: Vec<u32>,
}

impl PhaseGrid {
    pub fn new(nx: usize, ny: usize, phases: Vec<u32>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::MalformedHeader(format!(
                "grid size {nx}x{ny} is empty"
            )));
        }
        if phases.len() != nx * ny {
            return Err(Error::DimensionMismatch {
                expected: nx * ny,
                found: phases.len(),
            });
        }
        Ok(PhaseGrid { nx, ny, phases })
    }

    pub fn uniform(nx: usize, ny: usize, phase: u32) -> Result<Self> {
        Self::new(nx, ny, vec![phase; nx * ny])
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn phases(&self) -> &[u32] {
        &self.phases
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.phases[y * self.nx + x]
    }

    /// Pixel coordinates `(x, y)` of a flat index.
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.nx, index / self.nx)
    }

    /// `count(phase 1) / (nx·ny)`.
    pub fn phase_fraction(&self) -> f64 {
        self.count(1) as f64 / self.len() as f64
    }

    pub fn count(&self, phase: u32) -> usize {
        self.phases.iter().filter(|&&p| p == phase).count()
    }

    /// Sub-grid of size `w × h` whose top-left pixel is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.nx || y0 + h > self.ny {
            return Err(Error::Config(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds grid {}x{}",
                self.nx, self.ny
            )));
        }
        let mut phases = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            phases.extend_from_slice(&self.phases[y * self.nx + x0..y * self.nx + x0 + w]);
        }
        Self::new(w, h, phases)
    }

    /// Writes the `ascii-grid` format.
    pub fn emit_ascii<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.nx, self.ny)?;
        for row in self.phases.chunks(self.nx) {
            let line: Vec<String> = row.iter().map(u32::to_string).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridFormat {
    AsciiGrid,
    Pgm,
}

impl FromStr for GridFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ascii-grid" => Ok(GridFormat::AsciiGrid),
            "pgm" => Ok(GridFormat::Pgm),
            other => Err(Error::Config(format!("unknown grid format '{other}'"))),
        }
    }
}

impl GridFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            GridFormat::AsciiGrid => "ascii-grid",
            GridFormat::Pgm => "pgm",
        }
    }
}

pub fn load_grid<R: Read>(mut source: R, format: GridFormat) -> Result<PhaseGrid> {
    let mut bytes = Vec::new();
    source
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<grid stream>", e))?;
    match format {
        GridFormat::AsciiGrid => parse_ascii_grid(&bytes),
        GridFormat::Pgm => parse_pgm(&bytes),
    }
}

fn parse_ascii_grid(bytes: &[u8]) -> Result<PhaseGrid> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::MalformedHeader("ascii grid is not valid UTF-8".into()))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::MalformedHeader("empty input".into()))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    let parse_dim = |s: &str| {
        s.parse::<usize>().map_err(|_| {
            Error::MalformedHeader(format!("bad dimension '{s}' in header '{header}'"))
        })
    };
    if dims.len() != 2 {
        return Err(Error::MalformedHeader(format!(
            "expected 'nx ny', found '{header}'"
        )));
    }
    let (nx, ny) = (parse_dim(dims[0])?, parse_dim(dims[1])?);
    if nx == 0 || ny == 0 {
        return Err(Error::MalformedHeader(format!(
            "grid size {nx}x{ny} is empty"
        )));
    }

    let rows: Vec<&str> = lines.filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != ny {
        return Err(Error::DimensionMismatch {
            expected: nx * ny,
            found: rows.iter().map(|r| r.split_whitespace().count()).sum(),
        });
    }
    let mut phases = Vec::with_capacity(nx * ny);
    for row in rows {
        let before = phases.len();
        for tok in row.split_whitespace() {
            let id = tok
                .parse::<u32>()
                .map_err(|_| Error::MalformedBody(format!("'{tok}' is not a phase id")))?;
            phases.push(id);
        }
        if phases.len() - before != nx {
            return Err(Error::DimensionMismatch {
                expected: nx,
                found: phases.len() - before,
            });
        }
    }
    PhaseGrid::new(nx, ny, phases)
}

fn parse_pgm(bytes: &[u8]) -> Result<PhaseGrid> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)
        .ok_or_else(|| Error::MalformedHeader("missing PGM magic".into()))?;
    let binary = match magic.as_str() {
        "P2" => false,
        "P5" => true,
        other => {
            return Err(Error::MalformedHeader(format!(
                "unsupported magic '{other}'"
            )))
        }
    };
    let mut header_num = |what: &str| -> Result<usize> {
        let tok = next_token(bytes, &mut pos)
            .ok_or_else(|| Error::MalformedHeader(format!("missing {what}")))?;
        tok.parse()
            .map_err(|_| Error::MalformedHeader(format!("bad {what} '{tok}'")))
    };
    let nx = header_num("width")?;
    let ny = header_num("height")?;
    let maxval = header_num("maxval")?;
    if nx == 0 || ny == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::MalformedHeader(format!(
            "invalid PGM header {nx}x{ny} maxval {maxval}"
        )));
    }
    let n = nx * ny;
    let mut values = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates maxval from the raster
        pos += 1;
        let width = if maxval < 256 { 1 } else { 2 };
        let raster = bytes.get(pos..).unwrap_or(&[]);
        if raster.len() < n * width {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: raster.len() / width,
            });
        }
        for k in 0..n {
            let v = if width == 1 {
                raster[k] as u32
            } else {
                u32::from(raster[2 * k]) << 8 | u32::from(raster[2 * k + 1])
            };
            values.push(v);
        }
    } else {
        while let Some(tok) = next_token(bytes, &mut pos) {
            let v = tok
                .parse::<u32>()
                .map_err(|_| Error::MalformedBody(format!("'{tok}' is not a gray value")))?;
            values.push(v);
        }
        if values.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: values.len(),
            });
        }
    }
    let phases = values
        .into_iter()
        .map(|v| u32::from(v >= PGM_THRESHOLD))
        .collect();
    PhaseGrid::new(nx, ny, phases)
}

/// Next whitespace-delimited token, skipping `#` comments.
fn next_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InclusionShape {
    Disc,
    Square,
}

impl InclusionShape {
    pub fn as_str(&self) -> &'static str {
        match self {
            InclusionShape::Disc => "disc",
            InclusionShape::Square => "square",
        }
    }
}

impl FromStr for InclusionShape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disc" => Ok(InclusionShape::Disc),
            "square" => Ok(InclusionShape::Square),
            other => Err(Error::Config(format!("unknown inclusion shape '{other}'"))),
        }
    }
}

/// Centered phase-1 inclusion with `round(vf·nx·ny)` pixels.
///
/// Pixels are taken in order of distance from the cell center (Euclidean for
/// a disc, Chebyshev for a square), ties broken by flat index.
pub fn synth_inclusion(
    nx: usize,
    ny: usize,
    volume_fraction: f64,
    shape: InclusionShape,
) -> Result<PhaseGrid> {
    if !(0.0..=1.0).contains(&volume_fraction) {
        return Err(Error::Config(format!(
            "volume fraction {volume_fraction} is outside [0, 1]"
        )));
    }
    let n = nx * ny;
    let target = (volume_fraction * n as f64).round() as usize;
    let (cx, cy) = ((nx as f64 - 1.0) / 2.0, (ny as f64 - 1.0) / 2.0);
    let mut order: Vec<(f64, usize)> = (0..n)
        .map(|k| {
            let dx = (k % nx) as f64 - cx;
            let dy = (k / nx) as f64 - cy;
            let d = match shape {
                InclusionShape::Disc => dx.hypot(dy),
                InclusionShape::Square => dx.abs().max(dy.abs()),
            };
            (d, k)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut phases = vec![0u32; n];
    for &(_, k) in order.iter().take(target) {
        phases[k] = 1;
    }
    PhaseGrid::new(nx, ny, phases)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub label: String,
    pub params: MaterialParams,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhaseCatalog {
    phases: BTreeMap<u32, Phase>,
}

impl PhaseCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_phase(mut self, id: u32, label: impl Into<String>, params: MaterialParams) -> Self {
        self.insert(id, label, params);
        self
    }

    pub fn insert(&mut self, id: u32, label: impl Into<String>, params: MaterialParams) {
        self.phases.insert(
            id,
            Phase {
                label: label.into(),
                params,
            },
        );
    }

    pub fn get(&self, id: u32) -> Result<&Phase> {
        self.phases.get(&id).ok_or(Error::UnknownPhase(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &Phase)> {
        self.phases.iter().map(|(&id, p)| (id, p))
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    /// Checks that every id in `grid` has an entry.
    pub fn check(&self, grid: &PhaseGrid) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::Config("phase catalog is empty".into()));
        }
        for &id in grid.phases() {
            self.get(id)?;
        }
        Ok(())
    }

    /// Per-pixel material parameters.
    pub fn params_for(&self, grid: &PhaseGrid) -> Result<Vec<MaterialParams>> {
        self.check(grid)?;
        Ok(grid
            .phases()
            .iter()
            .map(|&id| self.phases[&id].params)
            .collect())
    }

    /// Default residual normalizer: `σ₀` of phase 1 when present, else the
    /// largest `σ₀` in the catalog.
    pub fn default_normalizer(&self) -> f64 {
        match self.phases.get(&1) {
            Some(p) => p.params.sigma0,
            None => self
                .phases
                .values()
                .map(|p| p.params.sigma0)
                .fold(0.0, f64::max),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ascii_examples() {
        let g = load_grid("1 1\n0\n".as_bytes(), GridFormat::AsciiGrid).unwrap();
        assert_eq!((g.nx(), g.ny(), g.phases()), (1, 1, &[0][..]));
        let g = load_grid("2 2\n0 1\n1 0\n".as_bytes(), GridFormat::AsciiGrid).unwrap();
        assert_eq!(g.phases(), &[0, 1, 1, 0]);
        assert_eq!(g.get(1, 0), 1);
        assert_eq!(g.phase_fraction(), 0.5);
    }

    #[test]
    fn ascii_errors() {
        let bad = |s: &str| load_grid(s.as_bytes(), GridFormat::AsciiGrid).unwrap_err();
        assert!(matches!(bad(""), Error::MalformedHeader(_)));
        assert!(matches!(bad("2\n0 1\n"), Error::MalformedHeader(_)));
        assert!(matches!(bad("a 2\n0 1\n"), Error::MalformedHeader(_)));
        assert!(matches!(bad("2 2\n0 1\n"), Error::DimensionMismatch { .. }));
        assert!(matches!(
            bad("2 2\n0 1 1\n0 1\n"),
            Error::DimensionMismatch { .. }
        ));
        assert!(matches!(bad("2 1\n0 x\n"), Error::MalformedBody(_)));
    }

    #[test]
    fn unknown_phase_is_rejected_by_catalog() {
        let g = load_grid("2 1\n0 7\n".as_bytes(), GridFormat::AsciiGrid).unwrap();
        let p = MaterialParams::new(1e9, 0.3, 1e-3, 0.1, 1e6, 0.0).unwrap();
        let cat = PhaseCatalog::new()
            .with_phase(0, "matrix", p)
            .with_phase(1, "inclusion", p);
        assert!(matches!(cat.check(&g), Err(Error::UnknownPhase(7))));
        assert!(matches!(
            PhaseCatalog::new().check(&g),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn pgm_ascii_and_binary() {
        let p2 = "P2\n# comment\n3 2\n255\n0 127 128\n255 10 200\n";
        let g = load_grid(p2.as_bytes(), GridFormat::Pgm).unwrap();
        assert_eq!(g.phases(), &[0, 0, 1, 1, 0, 1]);

        let mut p5 = b"P5\n3 2\n255\n".to_vec();
        p5.extend_from_slice(&[0, 127, 128, 255, 10, 200]);
        assert_eq!(load_grid(&p5[..], GridFormat::Pgm).unwrap(), g);

        let mut p5_16 = b"P5 2 1 65535 ".to_vec();
        p5_16.extend_from_slice(&[0x00, 0x7f, 0x00, 0x80]);
        assert_eq!(
            load_grid(&p5_16[..], GridFormat::Pgm).unwrap().phases(),
            &[0, 1]
        );

        assert!(matches!(
            load_grid("P3\n1 1\n255\n0\n".as_bytes(), GridFormat::Pgm),
            Err(Error::MalformedHeader(_))
        ));
        assert!(matches!(
            load_grid("P2\n2 2\n255\n0 0 0\n".as_bytes(), GridFormat::Pgm),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            load_grid(&b"P5\n2 2\n255\n\x00\x01"[..], GridFormat::Pgm),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn synth_examples() {
        let g = synth_inclusion(8, 5, 0.0, InclusionShape::Disc).unwrap();
        assert_eq!(g.count(1), 0);
        let g = synth_inclusion(8, 5, 1.0, InclusionShape::Square).unwrap();
        assert_eq!(g.count(0), 0);
        let g = synth_inclusion(31, 31, 0.17, InclusionShape::Disc).unwrap();
        assert!((g.phase_fraction() - 0.17).abs() <= 1.0 / 31.0);
        assert_eq!(g.count(1), (0.17f64 * 961.0).round() as usize);
        // the center pixel is inside and the corner is outside
        assert_eq!(g.get(15, 15), 1);
        assert_eq!(g.get(0, 0), 0);
        assert_eq!(
            g,
            synth_inclusion(31, 31, 0.17, InclusionShape::Disc).unwrap()
        );
        assert!(synth_inclusion(4, 4, 1.5, InclusionShape::Disc).is_err());
    }

    #[test]
    fn crop_takes_top_left_window() {
        let g = load_grid(
            "3 3\n0 1 0\n1 1 0\n0 0 1\n".as_bytes(),
            GridFormat::AsciiGrid,
        )
        .unwrap();
        let c = g.crop(0, 0, 2, 2).unwrap();
        assert_eq!(c.phases(), &[0, 1, 1, 1]);
        let c = g.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.phases(), &[1, 0, 0, 1]);
        assert!(g.crop(2, 2, 2, 2).is_err());
    }

    proptest! {
        #[test]
        fn ascii_round_trip(nx in 1usize..12, ny in 1usize..12, seed in proptest::collection::vec(0u32..3, 144)) {
            let phases: Vec<u32> = seed.into_iter().take(nx * ny).collect();
            let g = PhaseGrid::new(nx, ny, phases).unwrap();
            let mut buf = Vec::new();
            g.emit_ascii(&mut buf).unwrap();
            let back = load_grid(&buf[..], GridFormat::AsciiGrid).unwrap();
            prop_assert_eq!(&back, &g);
            prop_assert_eq!(back.phase_fraction(), g.count(1) as f64 / (nx * ny) as f64);
        }
    }
}
