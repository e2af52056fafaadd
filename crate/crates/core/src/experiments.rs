//! Monte Carlo convergence of the smoothed sheet along `eps_n = 2^{-n}`.

use std::io::Write;

use rayon::prelude::*;

use crate::besov::{w1_norm, BesovParams, Stride};
use crate::error::{invalid, Error, Result};
use crate::generators::{sample_mbs, sample_wiener, FbsSampler, HurstFunctionSpec, HurstPair, WienerGrid};
use crate::grid::{make_grid, FieldSample, Grid2D, Seed};
use crate::smoothing::{difference_field, smooth, SmoothingParams};

/// Slack allowed below the reference slope when judging the fitted decay rate.
pub const SLOPE_SLACK: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// Median norm at `n_min` across replicas.
    AutoMedian,
    Fixed(f64),
}

/// Parameter chain `beta < lambda/2`, `delta < lambda - 2 max beta`,
/// `theta < (lambda - 2 max beta - delta)/2`, `p = 2/theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceParams {
    pub lambda: f64,
    /// Constant of the increment bound when known in closed form.
    pub c: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub delta: f64,
    pub theta: f64,
    pub p: f64,
    pub gamma: f64,
    pub n_min: u32,
    pub n_max: u32,
    pub replicas: usize,
    pub threshold: Threshold,
    pub seed: u64,
    pub stride: Stride,
}

/// Inputs of [`ConvergenceParams::derive`]; `delta = None` picks the midpoint of its range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainInputs {
    pub lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub delta: Option<f64>,
    pub theta_frac: f64,
    pub gamma: f64,
}

impl ConvergenceParams {
    pub fn derive(chain: ChainInputs, n_min: u32, n_max: u32, replicas: usize, threshold: Threshold, seed: u64) -> Result<Self> {
        let ChainInputs { lambda, beta1, beta2, delta, theta_frac, gamma } = chain;
        if !(lambda > 1.0) {
            return Err(invalid(format!("increment exponent lambda = {lambda} must exceed 1")));
        }
        for b in [beta1, beta2] {
            if !(0.0 < b && b < lambda / 2.0) {
                return Err(invalid(format!(
                    "beta = ({beta1}, {beta2}) must lie in (0, lambda/2) = (0, {}) for lambda = {lambda}",
                    lambda / 2.0
                )));
            }
        }
        let room = lambda - 2.0 * beta1.max(beta2);
        let delta = delta.unwrap_or(room / 2.0);
        if !(0.0 < delta && delta < room) {
            return Err(invalid(format!("delta = {delta} must lie in (0, {room})")));
        }
        if !(0.0 < theta_frac && theta_frac < 1.0) {
            return Err(invalid(format!("theta_frac = {theta_frac} must lie in (0, 1)")));
        }
        if !(gamma > 0.0) {
            return Err(invalid(format!("gamma = {gamma} must be positive")));
        }
        if n_min < 1 || n_max < n_min {
            return Err(invalid(format!("schedule needs 1 <= n_min <= n_max, got {n_min}..{n_max}")));
        }
        if replicas == 0 {
            return Err(invalid("need at least one replica"));
        }
        if let Threshold::Fixed(a) = threshold {
            if !(a > 0.0) {
                return Err(invalid(format!("threshold a = {a} must be positive")));
            }
        }
        let theta = theta_frac * (room - delta) / 2.0;
        let out = Self {
            lambda,
            c: None,
            beta1,
            beta2,
            delta,
            theta,
            p: 2.0 / theta,
            gamma,
            n_min,
            n_max,
            replicas,
            threshold,
            seed,
            stride: Stride::Auto,
        };
        let (h1, h2) = out.h_exponents();
        if !(h1 > 0.0 && h2 > 0.0) {
            return Err(Error::Numerical(format!("derived exponents ({h1}, {h2}) are not positive")));
        }
        Ok(out)
    }

    /// `h_i = (lambda - delta)/2 - beta_i - theta`.
    pub fn h_exponents(&self) -> (f64, f64) {
        let base = (self.lambda - self.delta) / 2.0 - self.theta;
        (base - self.beta1, base - self.beta2)
    }

    pub fn schedule(&self) -> Vec<u32> {
        (self.n_min..=self.n_max).collect()
    }

    pub fn eps(n: u32) -> f64 {
        (-(n as f64)).exp2()
    }

    pub fn reference_slope(&self) -> f64 {
        self.delta / 2.0
    }

    /// `eps^{delta/2} |ln eps|^{(1+gamma)/p}`.
    pub fn rate(&self, n: u32) -> f64 {
        let eps = Self::eps(n);
        eps.powf(self.delta / 2.0) * eps.ln().abs().powf((1.0 + self.gamma) / self.p)
    }

    fn besov(&self) -> Result<BesovParams> {
        let mut b = BesovParams::new(self.beta1, self.beta2)?;
        b.stride = self.stride;
        Ok(b)
    }
}

#[derive(Debug, Clone)]
pub enum FieldSource {
    Fbs(HurstPair),
    /// Multifractional sheet on a Wiener mesh of the given density.
    Mbs(HurstFunctionSpec, usize),
    /// Deterministic `t1 t2`, identical for every replica.
    Bilinear,
}

impl FieldSource {
    /// Exponent of the increment bound: `2 min H` for fBs, `2 mu` for mBs, 2 for the bilinear field.
    pub fn lambda(&self) -> f64 {
        match self {
            FieldSource::Fbs(h) => h.lambda(),
            FieldSource::Mbs(spec, _) => 2.0 * spec.mu,
            FieldSource::Bilinear => 2.0,
        }
    }

    /// `C` with `E (Delta_s B_t)^2 <= C (|t1-s1||t2-s2|)^lambda` on `[0, T]`, when closed form.
    pub fn constant(&self, extent: (f64, f64)) -> Option<f64> {
        match self {
            FieldSource::Fbs(h) => {
                let l = h.lambda();
                Some(extent.0.powf(2.0 * h.h1 - l) * extent.1.powf(2.0 * h.h2 - l))
            }
            _ => None,
        }
    }
}

/// Uniform grid of mesh `2^{-(n_max + margin)}` over `[0, T]`, padded to cover `eps_{n_min}`.
pub fn convergence_grid(extent: (f64, f64), n_min: u32, n_max: u32, margin: u32) -> Result<Grid2D> {
    if margin < 2 {
        return Err(invalid(format!("mesh margin must be at least 2, got {margin}")));
    }
    let per_unit = 2f64.powi((n_max + margin) as i32);
    let nodes = |t: f64| -> Result<usize> {
        let cells = t * per_unit;
        if !(cells >= 1.0) || (cells - cells.round()).abs() > 1e-9 {
            return Err(invalid(format!("extent {t} is not a multiple of the mesh 2^-{}", n_max + margin)));
        }
        Ok(cells.round() as usize + 1)
    };
    let pad = 1usize << (n_max + margin - n_min);
    make_grid(extent.0, extent.1, nodes(extent.0)?, nodes(extent.1)?, pad, pad)
}

/// One row of `report.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormRecord {
    pub n: u32,
    pub replica: usize,
    pub norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSummary {
    pub n: u32,
    pub eps: f64,
    pub median: f64,
    pub q90: f64,
    pub p_exceed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    /// `None` when some median is not positive.
    pub slope: Option<f64>,
    pub reference: f64,
}

impl RateFit {
    pub fn passed(&self) -> bool {
        self.slope.is_some_and(|s| s >= self.reference - SLOPE_SLACK)
    }
}

/// Per-replica maximum of `norm_n / rate(n)` and the level where it is attained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsRate {
    pub replica: usize,
    pub argmax_n: u32,
    pub max_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub params: ConvergenceParams,
    pub schedule: Vec<u32>,
    /// `norms[replica][k]` at level `schedule[k]`.
    pub norms: Vec<Vec<f64>>,
    pub threshold: f64,
    pub levels: Vec<LevelSummary>,
    pub fit: RateFit,
}

/// Type-7 sample quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Least-squares slope of `log2(median)` against `-n`.
pub fn fit_rate(schedule: &[u32], medians: &[f64], delta: f64) -> Result<RateFit> {
    if schedule.len() < 3 || schedule.len() != medians.len() {
        return Err(invalid(format!("rate fit needs at least 3 levels, got {}", schedule.len())));
    }
    let reference = delta / 2.0;
    if medians.iter().any(|&m| !(m > 0.0)) {
        return Ok(RateFit { slope: None, reference });
    }
    let xs: Vec<f64> = schedule.iter().map(|&n| -(n as f64)).collect();
    let ys: Vec<f64> = medians.iter().map(|m| m.log2()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(RateFit { slope: Some(sxy / sxx), reference })
}

fn check_alignment(grid: &Grid2D, cp: &ConvergenceParams) -> Result<Vec<SmoothingParams>> {
    let (pad1, pad2) = grid.pad();
    cp.schedule()
        .iter()
        .map(|&n| {
            let eps = ConvergenceParams::eps(n);
            let cells = |h: f64| -> Result<usize> {
                let k = eps / h;
                if (k - k.round()).abs() > 1e-9 || k.round() < 1.0 {
                    return Err(invalid(format!("eps = 2^-{n} is not a whole number of mesh cells (h = {h})")));
                }
                Ok(k.round() as usize)
            };
            let (k1, k2) = (cells(grid.h1())?, cells(grid.h2())?);
            if k1 > pad1 || k2 > pad2 {
                return Err(invalid(format!(
                    "eps = 2^-{n} needs padding of ({k1}, {k2}) cells, grid has ({pad1}, {pad2})"
                )));
            }
            SmoothingParams::per_axis(k1, k2)
        })
        .collect()
}

/// Samples one field per replica and evaluates `||B^eps - B||_1` at every level.
pub fn run_convergence(cp: &ConvergenceParams, field: &FieldSource, grid: &Grid2D) -> Result<ConvergenceReport> {
    let windows = check_alignment(grid, cp)?;
    let schedule = cp.schedule();
    let besov = cp.besov()?;
    let fbs = match field {
        FieldSource::Fbs(h) => Some(FbsSampler::new(*grid, *h)?),
        _ => None,
    };
    let wiener = match field {
        FieldSource::Mbs(spec, density) => Some(WienerGrid::for_grid(grid, spec.nu, *density)?),
        _ => None,
    };
    let base = Seed::new(cp.seed, 0);
    let sample = |r: usize| -> Result<FieldSample> {
        let seed = base.with_stream(r as u64);
        match field {
            FieldSource::Fbs(_) => Ok(fbs.as_ref().unwrap().sample(seed)),
            FieldSource::Mbs(spec, _) => sample_mbs(grid, spec, &sample_wiener(wiener.as_ref().unwrap(), seed)),
            FieldSource::Bilinear => FieldSample::from_fn(*grid, |x, y| x * y),
        }
    };
    let norms: Vec<Vec<f64>> = (0..cp.replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let f = sample(r)?;
            windows
                .iter()
                .map(|&w| Ok(w1_norm(&difference_field(&f, &smooth(&f, w)?)?, &besov).value))
                .collect()
        })
        .collect::<Result<_>>()?;
    let columns: Vec<Vec<f64>> = (0..schedule.len())
        .map(|k| {
            let mut col: Vec<f64> = norms.iter().map(|row| row[k]).collect();
            col.sort_by(f64::total_cmp);
            col
        })
        .collect();
    let threshold = match cp.threshold {
        Threshold::AutoMedian => quantile(&columns[0], 0.5),
        Threshold::Fixed(a) => a,
    };
    let levels: Vec<LevelSummary> = schedule
        .iter()
        .zip(&columns)
        .map(|(&n, col)| LevelSummary {
            n,
            eps: ConvergenceParams::eps(n),
            median: quantile(col, 0.5),
            q90: quantile(col, 0.9),
            p_exceed: if threshold > 0.0 {
                col.iter().filter(|&&v| v >= threshold).count() as f64 / col.len() as f64
            } else {
                0.0
            },
        })
        .collect();
    let medians: Vec<f64> = levels.iter().map(|l| l.median).collect();
    let fit = if schedule.len() >= 3 {
        fit_rate(&schedule, &medians, cp.delta)?
    } else {
        RateFit { slope: None, reference: cp.reference_slope() }
    };
    let mut params = *cp;
    params.c = field.constant((grid.t1(), grid.t2()));
    Ok(ConvergenceReport { params, schedule, norms, threshold, levels, fit })
}

impl ConvergenceReport {
    pub fn records(&self) -> Vec<NormRecord> {
        let mut out = Vec::with_capacity(self.schedule.len() * self.norms.len());
        for (k, &n) in self.schedule.iter().enumerate() {
            for (replica, row) in self.norms.iter().enumerate() {
                out.push(NormRecord { n, replica, norm: row[k] });
            }
        }
        out
    }

    pub fn as_rates(&self) -> Vec<AsRate> {
        self.norms
            .iter()
            .enumerate()
            .map(|(replica, row)| {
                let mut best = AsRate { replica, argmax_n: self.schedule[0], max_ratio: f64::NEG_INFINITY };
                for (&n, &v) in self.schedule.iter().zip(row) {
                    let q = v / self.params.rate(n);
                    if q > best.max_ratio {
                        best = AsRate { replica, argmax_n: n, max_ratio: q };
                    }
                }
                best
            })
            .collect()
    }

    pub fn medians_strictly_decreasing(&self) -> bool {
        self.levels.windows(2).all(|w| w[1].median < w[0].median)
    }

    pub fn exceedance_vanishes(&self) -> bool {
        self.levels.windows(2).all(|w| w[1].p_exceed <= w[0].p_exceed)
            && self.levels.last().is_some_and(|l| l.p_exceed == 0.0)
    }

    /// Every replica's rate ratio peaks within the first `levels` schedule points.
    pub fn rate_bounded_within(&self, levels: u32) -> bool {
        let last = self.params.n_min + levels - 1;
        self.as_rates().iter().all(|r| r.argmax_n <= last)
    }

    pub fn write_report_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n", "eps", "replica", "norm"])?;
        for r in self.records() {
            w.write_record([
                r.n.to_string(),
                ConvergenceParams::eps(r.n).to_string(),
                r.replica.to_string(),
                r.norm.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n", "eps", "median", "q90", "p_exceed", "slope", "ref_slope"])?;
        let slope = self.fit.slope.map_or_else(|| "nan".to_string(), |s| s.to_string());
        for l in &self.levels {
            w.write_record([
                l.n.to_string(),
                l.eps.to_string(),
                l.median.to_string(),
                l.q90.to_string(),
                l.p_exceed.to_string(),
                slope.clone(),
                self.fit.reference.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
