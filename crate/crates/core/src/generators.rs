//! Fractional and multifractional Brownian sheet generators.
//!
//! The anisotropic fBs covariance is a product of per-axis fBm covariances, so an exact
//! sample on a tensor grid is `L1 G L2^T` with `L_i` the Cholesky factors of the per-axis
//! covariance matrices and `G` a matrix of iid standard normals.
//!
//! The multifractional sheet is the Volterra integral of a product kernel against a
//! Wiener field, discretized on a fixed cell mesh: `sum_cells k1(u1) k2(u2) dW(cell)`.
//! The same increments are used for every node so the field is consistent across `t`.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::grid::{FieldSample, Grid2D, Seed};
use crate::kernel::{eval, required_truncation, CellMesh, Order, TAIL_TOLERANCE};

/// `(t^{2H} + s^{2H} - |t - s|^{2H}) / 2`.
pub fn fbm_covariance(t: f64, s: f64, h: f64) -> f64 {
    let p = 2.0 * h;
    0.5 * (t.powf(p) + s.powf(p) - (t - s).abs().powf(p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HurstPair {
    pub h1: f64,
    pub h2: f64,
}

impl HurstPair {
    pub fn new(h1: f64, h2: f64) -> Result<Self> {
        for h in [h1, h2] {
            if !(0.0 < h && h < 1.0) {
                return Err(invalid(format!("Hurst indices must lie in (0, 1), got ({h1}, {h2})")));
            }
        }
        Ok(Self { h1, h2 })
    }

    /// Increment exponent `2 min(H1, H2)`.
    pub fn lambda(&self) -> f64 {
        2.0 * self.h1.min(self.h2)
    }
}

/// Point in the plane.
pub type Point = (f64, f64);

pub fn fbs_covariance(t: Point, s: Point, h: HurstPair) -> f64 {
    fbm_covariance(t.0, s.0, h.h1) * fbm_covariance(t.1, s.1, h.h2)
}

/// `E(Delta_s B_t)^2 = |t1 - s1|^{2H1} |t2 - s2|^{2H2}`.
pub fn fbs_increment_variance(s: Point, t: Point, h: HurstPair) -> f64 {
    (t.0 - s.0).abs().powf(2.0 * h.h1) * (t.1 - s.1).abs().powf(2.0 * h.h2)
}

fn fbm_covariance_matrix(coords: &[f64], h: f64) -> DMatrix<f64> {
    let n = coords.len();
    DMatrix::from_fn(n, n, |i, j| fbm_covariance(coords[i], coords[j], h))
}

/// Lower Cholesky factor with one jitter retry of `1e-12 * max diagonal`.
fn cholesky_with_jitter(a: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = a.clone().cholesky() {
        return Ok(c.l());
    }
    let jitter = 1e-12 * a.diagonal().max();
    let mut b = a;
    for k in 0..b.nrows() {
        b[(k, k)] += jitter;
    }
    b.cholesky().map(|c| c.l()).ok_or_else(|| {
        Error::Numerical(format!(
            "fBm covariance is not positive definite even with jitter {jitter:.3e}; add more diagonal jitter or coarsen the grid"
        ))
    })
}

/// Cholesky factor over coordinates whose first entry is the origin: the origin row
/// has zero variance, so it is factored over the positive nodes and embedded with a
/// zero first row and column.
fn axis_factor(coords: &[f64], h: f64) -> Result<DMatrix<f64>> {
    debug_assert_eq!(coords[0], 0.0);
    let n = coords.len();
    let inner = cholesky_with_jitter(fbm_covariance_matrix(&coords[1..], h))?;
    let mut l = DMatrix::zeros(n, n);
    l.view_mut((1, 1), (n - 1, n - 1)).copy_from(&inner);
    Ok(l)
}

/// Exact fBs sampler on a fixed grid; factors are computed once and reused per replica.
#[derive(Debug, Clone)]
pub struct FbsSampler {
    grid: Grid2D,
    hurst: HurstPair,
    l1: DMatrix<f64>,
    l2: DMatrix<f64>,
}

impl FbsSampler {
    pub fn new(grid: Grid2D, hurst: HurstPair) -> Result<Self> {
        let l1 = axis_factor(&grid.xs(), hurst.h1)?;
        let l2 = axis_factor(&grid.ys(), hurst.h2)?;
        Ok(Self { grid, hurst, l1, l2 })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn hurst(&self) -> HurstPair {
        self.hurst
    }

    pub fn factors(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.l1, &self.l2)
    }

    pub fn sample(&self, seed: Seed) -> FieldSample {
        let (m1, m2) = self.grid.shape();
        let mut rng = seed.rng();
        let normals: Vec<f64> = (0..m1 * m2).map(|_| rng.sample(StandardNormal)).collect();
        let g = DMatrix::from_row_slice(m1, m2, &normals);
        let x = &self.l1 * g * self.l2.transpose();
        let mut values = Vec::with_capacity(m1 * m2);
        for i in 0..m1 {
            for j in 0..m2 {
                values.push(x[(i, j)]);
            }
        }
        FieldSample::new_unchecked(self.grid, values)
    }
}

pub fn sample_fbs(grid: &Grid2D, hurst: HurstPair, seed: Seed) -> Result<FieldSample> {
    Ok(FbsSampler::new(*grid, hurst)?.sample(seed))
}

type HurstFn = dyn Fn(f64, f64) -> (f64, f64) + Send + Sync;

/// Point-dependent Hurst pair `H(t)` with window `(mu, nu)` and Hölder-type constants.
#[derive(Clone)]
pub struct HurstFunctionSpec {
    eval: Arc<HurstFn>,
    pub mu: f64,
    pub nu: f64,
    pub c1: f64,
    pub c2: f64,
    label: String,
}

impl fmt::Debug for HurstFunctionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HurstFunctionSpec")
            .field("label", &self.label)
            .field("mu", &self.mu)
            .field("nu", &self.nu)
            .field("c1", &self.c1)
            .field("c2", &self.c2)
            .finish()
    }
}

impl HurstFunctionSpec {
    pub fn new(
        label: impl Into<String>,
        mu: f64,
        nu: f64,
        c1: f64,
        c2: f64,
        eval: impl Fn(f64, f64) -> (f64, f64) + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(0.5 < mu && mu < nu && nu < 1.0) {
            return Err(invalid(format!("need 1/2 < mu < nu < 1, got mu={mu}, nu={nu}")));
        }
        if !(c1 > 0.0 && c2 > 0.0) {
            return Err(invalid(format!("Hölder constants must be positive, got c1={c1}, c2={c2}")));
        }
        Ok(Self { eval: Arc::new(eval), mu, nu, c1, c2, label: label.into() })
    }

    pub fn constant(h1: f64, h2: f64, mu: f64, nu: f64) -> Result<Self> {
        Self::new(format!("constant({h1},{h2})"), mu, nu, 1.0, 1.0, move |_, _| (h1, h2))
    }

    /// `H_i(t) = base_i + amp * t1 t2 / (E1 E2)` over the extents `E`.
    pub fn bilinear(base: (f64, f64), amp: f64, extent: (f64, f64), mu: f64, nu: f64) -> Result<Self> {
        let (e1, e2) = extent;
        let c1 = amp * 1f64.max(e1.powf(-nu)).max(e2.powf(-nu));
        let c2 = amp * 1f64.max((e1 * e2).powf(-nu));
        Self::new(format!("bilinear({},{};{amp})", base.0, base.1), mu, nu, c1, c2, move |x, y| {
            let s = amp * x * y / (e1 * e2);
            (base.0 + s, base.1 + s)
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn at(&self, x: f64, y: f64) -> (f64, f64) {
        (self.eval)(x, y)
    }

    /// `(H1, H2)` when the function is constant on the grid.
    pub fn constant_value(&self, grid: &Grid2D) -> Option<(f64, f64)> {
        let first = self.at(0.0, 0.0);
        let (m1, m2) = grid.shape();
        for i in 0..m1 {
            for j in 0..m2 {
                if self.at(grid.x(i), grid.y(j)) != first {
                    return None;
                }
            }
        }
        Some(first)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    /// max `|H_i(t) - H_i(s)| / (|t1-s1|^nu + |t2-s2|^nu)`.
    pub h1_ratio: f64,
    /// max `|Delta_s H_i(t)| / (|t1-s1||t2-s2|)^nu`.
    pub h2_ratio: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub c1: f64,
    pub c2: f64,
    pub mu: f64,
    pub nu: f64,
}

impl ValidationReport {
    pub fn in_window(&self) -> bool {
        self.mu < self.h_min && self.h_max < self.nu
    }

    pub fn holds_h1(&self) -> bool {
        self.h1_ratio <= self.c1 * (1.0 + 1e-12)
    }

    pub fn holds_h2(&self) -> bool {
        self.h2_ratio <= self.c2 * (1.0 + 1e-12)
    }

    pub fn passed(&self) -> bool {
        self.in_window() && self.holds_h1() && self.holds_h2()
    }
}

/// Checks the window and both Hölder-type conditions over every pair of padded grid nodes.
pub fn validate_hurst(spec: &HurstFunctionSpec, grid: &Grid2D) -> Result<ValidationReport> {
    let xs = grid.xs();
    let ys = grid.ys();
    let (m1, m2) = (xs.len(), ys.len());
    let mut hv = vec![[0.0f64; 2]; m1 * m2];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..m1 {
        for j in 0..m2 {
            let (a, b) = spec.at(xs[i], ys[j]);
            for v in [a, b] {
                if !(0.5 < v && v < 1.0) {
                    return Err(Error::InvalidHurst(format!(
                        "H({}, {}) = ({a}, {b}) leaves (1/2, 1)",
                        xs[i], ys[j]
                    )));
                }
                lo = lo.min(v);
                hi = hi.max(v);
            }
            hv[i * m2 + j] = [a, b];
        }
    }
    let nu = spec.nu;
    let pow1: Vec<f64> = (0..m1).map(|d| (d as f64 * grid.h1()).powf(nu)).collect();
    let pow2: Vec<f64> = (0..m2).map(|d| (d as f64 * grid.h2()).powf(nu)).collect();
    let mut r1 = 0.0f64;
    let mut r2 = 0.0f64;
    for ti in 0..m1 {
        for tj in 0..m2 {
            let ht = hv[ti * m2 + tj];
            for si in 0..=ti {
                for sj in 0..m2 {
                    if si == ti && sj >= tj {
                        continue;
                    }
                    let hs = hv[si * m2 + sj];
                    let d1 = ti - si;
                    let d2 = tj.abs_diff(sj);
                    let denom = pow1[d1] + pow2[d2];
                    for c in 0..2 {
                        r1 = r1.max((ht[c] - hs[c]).abs() / denom);
                    }
                    if d1 > 0 && sj < tj {
                        let a = hv[si * m2 + tj];
                        let b = hv[ti * m2 + sj];
                        let denom2 = pow1[d1] * pow2[d2];
                        for c in 0..2 {
                            r2 = r2.max((ht[c] - a[c] - b[c] + hs[c]).abs() / denom2);
                        }
                    }
                }
            }
        }
    }
    Ok(ValidationReport {
        h1_ratio: r1,
        h2_ratio: r2,
        h_min: lo,
        h_max: hi,
        c1: spec.c1,
        c2: spec.c2,
        mu: spec.mu,
        nu: spec.nu,
    })
}

/// Per-axis cell meshes for the discretized Wiener field.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerGrid {
    pub axis1: CellMesh,
    pub axis2: CellMesh,
}

impl WienerGrid {
    /// Cells of width `h_i / (4 density)` on `[-L_i, padded extent]` (aligned so every grid
    /// coordinate and 0 is a cell edge), geometrically stretched by `1 + 0.1/density` out to
    /// the truncation that keeps the kernel tail below tolerance at exponent `h_tail`.
    pub fn for_grid(grid: &Grid2D, h_tail: f64, density: usize) -> Result<Self> {
        if density == 0 {
            return Err(invalid("wiener mesh density must be at least 1"));
        }
        if !(0.5 < h_tail && h_tail < 1.0) {
            return Err(invalid(format!("tail exponent must lie in (1/2, 1), got {h_tail}")));
        }
        let (ext1, ext2) = grid.padded_extent();
        let (m1, m2) = grid.shape();
        let axis1 = Self::axis(grid.h1(), m1 - 1, ext1, h_tail, density)?;
        let axis2 = Self::axis(grid.h2(), m2 - 1, ext2, h_tail, density)?;
        Ok(Self { axis1, axis2 })
    }

    fn axis(h: f64, top_index: usize, ext: f64, h_tail: f64, density: usize) -> Result<CellMesh> {
        let per = 4 * density;
        let w = h / per as f64;
        let top = top_index * per;
        let left = ((ext.max(1.0) / w).ceil() as usize).max(1);
        let inner = left as f64 * w;
        let truncation = required_truncation(ext, h_tail, Order::Value, TAIL_TOLERANCE).max(inner);
        let growth = 0.1 / density as f64;
        let mut edges = vec![-inner];
        let mut x = inner;
        while x < truncation {
            x = (x * (1.0 + growth)).min(truncation);
            edges.push(-x);
        }
        edges.reverse();
        edges.pop();
        edges.extend((0..=left + top).map(|k| (k as f64 - left as f64) * w));
        CellMesh::from_edges(edges)
    }
}

/// Independent centered Gaussian cell increments with variance equal to cell area.
#[derive(Debug, Clone)]
pub struct WienerIncrements {
    grid: WienerGrid,
    values: Vec<f64>,
}

impl WienerIncrements {
    pub fn grid(&self) -> &WienerGrid {
        &self.grid
    }

    /// Row-major over (axis1 cell, axis2 cell).
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.grid.axis1.len(), self.grid.axis2.len())
    }
}

pub fn sample_wiener(grid: &WienerGrid, seed: Seed) -> WienerIncrements {
    let w1 = grid.axis1.widths();
    let w2 = grid.axis2.widths();
    let s2: Vec<f64> = w2.iter().map(|w| w.sqrt()).collect();
    let mut rng = seed.rng();
    let mut values = Vec::with_capacity(w1.len() * w2.len());
    for a in &w1 {
        let sa = a.sqrt();
        for sb in &s2 {
            let z: f64 = rng.sample(StandardNormal);
            values.push(sa * sb * z);
        }
    }
    WienerIncrements { grid: grid.clone(), values }
}

fn kernel_on_mesh(mids: &[f64], t: f64, h: f64) -> Vec<f64> {
    mids.iter().map(|&u| eval(t, u, h, Order::Value)).collect()
}

/// Discretized mBs: `value(t) = sum_{a,b} k1_a(t) k2_b(t) dW_{ab}` with
/// `k_i = f(t_i, u_mid, H_i(t))`. `W k2` is cached per distinct `(t2, H2)`.
pub fn sample_mbs(grid: &Grid2D, spec: &HurstFunctionSpec, w: &WienerIncrements) -> Result<FieldSample> {
    let (ext1, ext2) = grid.padded_extent();
    let e1 = w.grid.axis1.edges();
    let e2 = w.grid.axis2.edges();
    if e1[0] > 0.0 || e2[0] > 0.0 || *e1.last().unwrap() < ext1 || *e2.last().unwrap() < ext2 {
        return Err(invalid(format!(
            "wiener mesh [{}, {}] x [{}, {}] does not cover [0, {ext1}] x [0, {ext2}]",
            e1[0],
            e1.last().unwrap(),
            e2[0],
            e2.last().unwrap()
        )));
    }
    let mids1 = w.grid.axis1.midpoints();
    let mids2 = w.grid.axis2.midpoints();
    let (n_a, n_b) = w.shape();
    let (m1, m2) = grid.shape();
    let mut k1_cache: HashMap<(usize, u64), Vec<f64>> = HashMap::new();
    let mut wk2_cache: HashMap<(usize, u64), Vec<f64>> = HashMap::new();
    let mut values = vec![0.0; m1 * m2];
    for i in 1..m1 {
        let x = grid.x(i);
        for j in 1..m2 {
            let y = grid.y(j);
            let (h1, h2) = spec.at(x, y);
            for hv in [h1, h2] {
                if !(0.5 < hv && hv < 1.0) {
                    return Err(Error::InvalidHurst(format!("H({x}, {y}) = ({h1}, {h2}) leaves (1/2, 1)")));
                }
            }
            let wk2 = wk2_cache.entry((j, h2.to_bits())).or_insert_with(|| {
                let k2 = kernel_on_mesh(&mids2, y, h2);
                (0..n_a)
                    .map(|a| {
                        let row = &w.values[a * n_b..(a + 1) * n_b];
                        row.iter().zip(&k2).map(|(r, k)| r * k).sum()
                    })
                    .collect()
            });
            let k1 = k1_cache
                .entry((i, h1.to_bits()))
                .or_insert_with(|| kernel_on_mesh(&mids1, x, h1));
            values[i * m2 + j] = k1.iter().zip(wk2.iter()).map(|(a, b)| a * b).sum();
        }
    }
    FieldSample::new(*grid, values)
}

/// Exact variance of the discretized mBs at `t`: `sum k1^2 dw1 * sum k2^2 dw2`.
pub fn mbs_discrete_variance(w: &WienerGrid, t: Point, h: (f64, f64)) -> f64 {
    let part = |mesh: &CellMesh, t: f64, h: f64| -> f64 {
        mesh.midpoints()
            .iter()
            .zip(mesh.widths())
            .map(|(&u, dw)| eval(t, u, h, Order::Value).powi(2) * dw)
            .sum()
    };
    part(&w.axis1, t.0, h.0) * part(&w.axis2, t.1, h.1)
}
