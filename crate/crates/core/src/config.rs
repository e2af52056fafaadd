//! `key=value` configuration files for the `converge` and `lemma-check` commands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::besov::Stride;
use crate::error::{Error, Result};
use crate::experiments::{convergence_grid, ChainInputs, ConvergenceParams, FieldSource, Threshold};
use crate::generators::{validate_hurst, HurstFunctionSpec, HurstPair};
use crate::grid::{Grid2D, Seed};
use crate::kernel::HurstWindow;
use crate::lemma::LemmaLattice;

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parses `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_key_values(text: &str, valid: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("line {}: expected key=value, got {line:?}", lineno + 1)))?;
        let key = key.trim();
        if !valid.contains(&key) {
            return Err(config_err(format!("line {}: unknown key {key:?}; valid keys: {}", lineno + 1, valid.join(", "))));
        }
        if out.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(config_err(format!("line {}: duplicate key {key:?}", lineno + 1)));
        }
    }
    Ok(out)
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| config_err(format!("invalid value {value:?} for key {key:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Fbs,
    Mbs,
    Bilinear,
}

impl FromStr for FieldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fbs" => Ok(FieldKind::Fbs),
            "mbs" => Ok(FieldKind::Mbs),
            "bilinear" => Ok(FieldKind::Bilinear),
            other => Err(config_err(format!("unknown field {other:?}, expected fbs, mbs or bilinear"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HurstPreset {
    Constant,
    Bilinear,
}

impl FromStr for HurstPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(HurstPreset::Constant),
            "bilinear" => Ok(HurstPreset::Bilinear),
            other => Err(config_err(format!("unknown hurst preset {other:?}, expected constant or bilinear"))),
        }
    }
}

/// Amplitude of the bilinear Hurst preset over the padded domain.
pub const BILINEAR_HURST_AMPLITUDE: f64 = 0.1;

/// Builds a Hurst function preset over the given extent.
pub fn hurst_preset(preset: HurstPreset, h: (f64, f64), extent: (f64, f64), mu: f64, nu: f64) -> Result<HurstFunctionSpec> {
    match preset {
        HurstPreset::Constant => HurstFunctionSpec::constant(h.0, h.1, mu, nu),
        HurstPreset::Bilinear => HurstFunctionSpec::bilinear(h, BILINEAR_HURST_AMPLITUDE, extent, mu, nu),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergeConfig {
    pub field: FieldKind,
    pub h1: f64,
    pub h2: f64,
    pub hurst: HurstPreset,
    pub mu: f64,
    pub nu: f64,
    pub t1: f64,
    pub t2: f64,
    pub nmin_exponent: u32,
    pub nmax_exponent: u32,
    pub margin: u32,
    pub beta1: f64,
    pub beta2: f64,
    pub delta: Option<f64>,
    pub theta_frac: f64,
    pub gamma: f64,
    pub replicas: usize,
    pub a_mode: Threshold,
    pub seed: u64,
    pub stride: Stride,
    pub out: PathBuf,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self {
            field: FieldKind::Fbs,
            h1: 0.7,
            h2: 0.7,
            hurst: HurstPreset::Constant,
            mu: 0.55,
            nu: 0.85,
            t1: 1.0,
            t2: 1.0,
            nmin_exponent: 1,
            nmax_exponent: 5,
            margin: 2,
            beta1: 0.3,
            beta2: 0.3,
            delta: None,
            theta_frac: 0.5,
            gamma: 1.0,
            replicas: 50,
            a_mode: Threshold::AutoMedian,
            seed: 20240601,
            stride: Stride::Auto,
            out: PathBuf::from("out"),
        }
    }
}

impl ConvergeConfig {
    pub const KEYS: [&'static str; 21] = [
        "field",
        "H1",
        "H2",
        "hurst",
        "mu",
        "nu",
        "T1",
        "T2",
        "nmin_exponent",
        "nmax_exponent",
        "margin",
        "beta1",
        "beta2",
        "delta",
        "theta_frac",
        "gamma",
        "replicas",
        "a_mode",
        "seed",
        "stride",
        "out",
    ];

    pub fn parse(text: &str) -> Result<Self> {
        let kv = parse_key_values(text, &Self::KEYS)?;
        let mut c = Self::default();
        for (k, v) in &kv {
            match k.as_str() {
                "field" => c.field = v.parse()?,
                "H1" => c.h1 = parse_value(k, v)?,
                "H2" => c.h2 = parse_value(k, v)?,
                "hurst" => c.hurst = v.parse()?,
                "mu" => c.mu = parse_value(k, v)?,
                "nu" => c.nu = parse_value(k, v)?,
                "T1" => c.t1 = parse_value(k, v)?,
                "T2" => c.t2 = parse_value(k, v)?,
                "nmin_exponent" => c.nmin_exponent = parse_value(k, v)?,
                "nmax_exponent" => c.nmax_exponent = parse_value(k, v)?,
                "margin" => c.margin = parse_value(k, v)?,
                "beta1" => c.beta1 = parse_value(k, v)?,
                "beta2" => c.beta2 = parse_value(k, v)?,
                "delta" => c.delta = if v == "auto" { None } else { Some(parse_value(k, v)?) },
                "theta_frac" => c.theta_frac = parse_value(k, v)?,
                "gamma" => c.gamma = parse_value(k, v)?,
                "replicas" => c.replicas = parse_value(k, v)?,
                "a_mode" => {
                    c.a_mode = if v == "auto-median" { Threshold::AutoMedian } else { Threshold::Fixed(parse_value(k, v)?) }
                }
                "seed" => c.seed = parse_value(k, v)?,
                "stride" => {
                    c.stride = if v == "auto" { Stride::Auto } else { Stride::Fixed(parse_value(k, v)?) };
                    if c.stride == Stride::Fixed(0) {
                        return Err(config_err("stride must be at least 1"));
                    }
                }
                "out" => c.out = PathBuf::from(v),
                _ => unreachable!("key list and match arms agree"),
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Grid, field source and parameter chain described by the config.
    pub fn build(&self) -> Result<(ConvergenceParams, FieldSource, Grid2D)> {
        let grid = convergence_grid((self.t1, self.t2), self.nmin_exponent, self.nmax_exponent, self.margin)?;
        let source = match self.field {
            FieldKind::Fbs => FieldSource::Fbs(HurstPair::new(self.h1, self.h2)?),
            FieldKind::Bilinear => FieldSource::Bilinear,
            FieldKind::Mbs => {
                let spec = hurst_preset(self.hurst, (self.h1, self.h2), grid.padded_extent(), self.mu, self.nu)?;
                let report = validate_hurst(&spec, &grid)?;
                if !report.passed() {
                    return Err(Error::InvalidHurst(format!("{} fails validation: {report:?}", spec.label())));
                }
                FieldSource::Mbs(spec, 1)
            }
        };
        let chain = ChainInputs {
            lambda: source.lambda(),
            beta1: self.beta1,
            beta2: self.beta2,
            delta: self.delta,
            theta_frac: self.theta_frac,
            gamma: self.gamma,
        };
        let mut cp = ConvergenceParams::derive(
            chain,
            self.nmin_exponent,
            self.nmax_exponent,
            self.replicas,
            self.a_mode,
            self.seed,
        )?;
        cp.stride = self.stride;
        Ok((cp, source, grid))
    }
}

/// Lattice and seed for `lemma-check`.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaConfig {
    pub lattice: LemmaLattice,
    pub seed: u64,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        Self { lattice: LemmaLattice::default(), seed: 20240601 }
    }
}

impl LemmaConfig {
    pub const KEYS: [&'static str; 7] = ["ts", "hs", "mu", "nu", "h_min", "h_max", "seed"];

    pub fn parse(text: &str) -> Result<Self> {
        let kv = parse_key_values(text, &Self::KEYS)?;
        let mut c = Self::default();
        let w = c.lattice.window;
        let (mut mu, mut nu, mut lo, mut hi) = (w.mu, w.nu, w.h_min, w.h_max);
        for (k, v) in &kv {
            match k.as_str() {
                "ts" => c.lattice.ts = parse_list(k, v)?,
                "hs" => c.lattice.hs = parse_list(k, v)?,
                "mu" => mu = parse_value(k, v)?,
                "nu" => nu = parse_value(k, v)?,
                "h_min" => lo = parse_value(k, v)?,
                "h_max" => hi = parse_value(k, v)?,
                "seed" => c.seed = parse_value(k, v)?,
                _ => unreachable!("key list and match arms agree"),
            }
        }
        c.lattice.window = HurstWindow::new(mu, nu, lo, hi).map_err(|e| config_err(e.to_string()))?;
        if c.lattice.ts.iter().any(|&t| !(t > 0.0)) {
            return Err(config_err("lattice times must be positive"));
        }
        if c.lattice.hs.iter().any(|&h| !c.lattice.window.contains(h)) {
            return Err(config_err(format!("lattice Hurst values must lie in [{lo}, {hi}]")));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn seed(&self) -> Seed {
        Seed::new(self.seed, 0)
    }
}
