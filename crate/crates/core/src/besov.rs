//! Discrete `W0` and `W1` Besov-type norms of gridded fields.
//!
//! Every singular integral has the form `int_0^L g(x) x^{-1-beta} dx` with `g(0) = 0`.
//! `g` is replaced by its piecewise-linear interpolant on the grid and integrated exactly
//! against the weight (product integration), so the weight is never evaluated at its pole.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::grid::{FieldSample, Index2};

/// Grid side length up to which the sup search is exhaustive under [`Stride::Auto`].
pub const EXHAUSTIVE_LIMIT: usize = 257;

/// Coarse winners whose neighbourhoods are searched exhaustively in strided mode.
const REFINE_ANCHORS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stride {
    Auto,
    Fixed(usize),
}

impl Stride {
    fn resolve(self, n: usize) -> usize {
        match self {
            Stride::Auto if n <= EXHAUSTIVE_LIMIT => 1,
            Stride::Auto => 2,
            Stride::Fixed(k) => k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesovParams {
    pub beta1: f64,
    pub beta2: f64,
    pub stride: Stride,
}

impl BesovParams {
    pub fn new(beta1: f64, beta2: f64) -> Result<Self> {
        for b in [beta1, beta2] {
            if !(0.0 < b && b < 1.0) {
                return Err(invalid(format!("beta must lie in (0, 1), got ({beta1}, {beta2})")));
            }
        }
        Ok(Self { beta1, beta2, stride: Stride::Auto })
    }

    pub fn with_stride(mut self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(invalid("stride must be at least 1"));
        }
        self.stride = Stride::Fixed(stride);
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    W0,
    W1,
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w0" | "W0" => Ok(NormKind::W0),
            "w1" | "W1" => Ok(NormKind::W1),
            other => Err(invalid(format!("unknown norm {other:?}, expected w0 or w1"))),
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormKind::W0 => "w0",
            NormKind::W1 => "w1",
        })
    }
}

/// Supremum with its maximizing pair and per-term breakdown.
///
/// For `W1` the terms are the rectangle quotient, the two mixed single integrals and the
/// double integral. For `W0` they are `|f(t)|`, `phi1`, `phi2`, `phi3` and `s` is the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormReport {
    pub value: f64,
    pub terms: [f64; 4],
    pub s: Index2,
    pub t: Index2,
}

impl NormReport {
    fn zero() -> Self {
        Self { value: 0.0, terms: [0.0; 4], s: (0, 0), t: (0, 0) }
    }

    fn absorb(&mut self, other: NormReport) {
        if other.value > self.value {
            *self = other;
        }
    }
}

/// Exact moments of `x^{-1-beta}` against the two hat functions of each cell
/// `[(j-1) h, j h]`. `left[j]` weights node `j - 1`, `right[j]` weights node `j`;
/// index 0 is unused and `left[1] = 0` because it multiplies `g(0) = 0`.
#[derive(Debug, Clone)]
struct Moments {
    left: Vec<f64>,
    right: Vec<f64>,
}

impl Moments {
    fn new(cells: usize, h: f64, beta: f64) -> Self {
        let scale = h.powf(-beta);
        let mut left = vec![0.0; cells + 1];
        let mut right = vec![0.0; cells + 1];
        if cells >= 1 {
            right[1] = scale / (1.0 - beta);
        }
        for j in 2..=cells {
            let a = (j - 1) as f64;
            let b = j as f64;
            let p0 = (a.powf(-beta) - b.powf(-beta)) / beta;
            let p1 = (b.powf(1.0 - beta) - a.powf(1.0 - beta)) / (1.0 - beta);
            right[j] = scale * (p1 - a * p0);
            left[j] = scale * (b * p0 - p1);
        }
        Self { left, right }
    }

    /// Node weights for `int_0^{a h}`: interior nodes collect both adjacent cells.
    fn weight(&self, k: usize, a: usize) -> f64 {
        if k == a {
            self.right[k]
        } else {
            self.right[k] + self.left[k + 1]
        }
    }
}

/// `(k h)^{-beta}` for `k = 0..=n`, with a zero at `k = 0`.
fn inverse_powers(n: usize, h: f64, beta: f64) -> Vec<f64> {
    (0..=n).map(|k| if k == 0 { 0.0 } else { (k as f64 * h).powf(-beta) }).collect()
}

/// Supremum over rectangles `[s, t]` of the four-term `W1` functional on the unpadded grid.
pub fn w1_norm(f: &FieldSample, p: &BesovParams) -> NormReport {
    let f = f.unpadded();
    let grid = *f.grid();
    let (n1, n2) = grid.shape();
    let m1 = Moments::new(n1 - 1, grid.h1(), p.beta1);
    let m2 = Moments::new(n2 - 1, grid.h2(), p.beta2);
    let q1 = inverse_powers(n1 - 1, grid.h1(), p.beta1);
    let q2 = inverse_powers(n2 - 1, grid.h2(), p.beta2);
    let v = f.values();
    let at = |i: usize, j: usize| v[i * n2 + j];

    let eval = |s1: usize, s2: usize| -> NormReport {
        let rows = n1 - s1;
        let cols = n2 - s2;
        let mut best = NormReport { value: 0.0, terms: [0.0; 4], s: (s1, s2), t: (s1, s2) };
        let base = at(s1, s2);
        let mut g_prev = vec![0.0; cols];
        let mut i1_prev = vec![0.0; cols];
        let mut i2_prev = vec![0.0; cols];
        let mut j_prev = vec![0.0; cols];
        let mut g = vec![0.0; cols];
        let mut i1 = vec![0.0; cols];
        let mut i2 = vec![0.0; cols];
        let mut jj = vec![0.0; cols];
        for a in 1..rows {
            let row = s1 + a;
            let corner = at(row, s2);
            g[0] = 0.0;
            i2[0] = 0.0;
            for b in 1..cols {
                let col = s2 + b;
                g[b] = (at(row, col) - at(s1, col) - corner + base).abs();
                i2[b] = i2[b - 1] + m2.left[b] * g[b - 1] + m2.right[b] * g[b];
            }
            let (l1, r1) = (m1.left[a], m1.right[a]);
            for b in 0..cols {
                i1[b] = i1_prev[b] + l1 * g_prev[b] + r1 * g[b];
                jj[b] = j_prev[b] + l1 * i2_prev[b] + r1 * i2[b];
            }
            for b in 1..cols {
                let t1 = g[b] * q1[a] * q2[b];
                let t2 = i1[b] * q2[b];
                let t3 = i2[b] * q1[a];
                let t4 = jj[b];
                let value = t1 + t2 + t3 + t4;
                if value > best.value {
                    best = NormReport { value, terms: [t1, t2, t3, t4], s: (s1, s2), t: (row, s2 + b) };
                }
            }
            std::mem::swap(&mut g, &mut g_prev);
            std::mem::swap(&mut i1, &mut i1_prev);
            std::mem::swap(&mut i2, &mut i2_prev);
            std::mem::swap(&mut jj, &mut j_prev);
        }
        best
    };
    let stride = p.stride.resolve(n1.max(n2));
    search(n1 - 1, n2 - 1, stride, eval)
}

/// Supremum over nodes `t` of `|f(t)| + phi1 + phi2 + phi3` on the unpadded grid.
pub fn w0_norm(f: &FieldSample, p: &BesovParams) -> NormReport {
    let f = f.unpadded();
    let grid = *f.grid();
    let (n1, n2) = grid.shape();
    let m1 = Moments::new(n1 - 1, grid.h1(), p.beta1);
    let m2 = Moments::new(n2 - 1, grid.h2(), p.beta2);
    let v = f.values();
    let at = |i: usize, j: usize| v[i * n2 + j];

    let eval = |i: usize, j: usize| -> NormReport {
        let ft = at(i, j);
        let mut phi1 = 0.0;
        for k in 1..=i {
            phi1 += m1.weight(k, i) * (ft - at(i - k, j)).abs();
        }
        let mut phi2 = 0.0;
        for l in 1..=j {
            phi2 += m2.weight(l, j) * (ft - at(i, j - l)).abs();
        }
        let mut phi3 = 0.0;
        for k in 1..=i {
            let side = at(i - k, j);
            let mut inner = 0.0;
            for l in 1..=j {
                inner += m2.weight(l, j) * (ft - side - at(i, j - l) + at(i - k, j - l)).abs();
            }
            phi3 += m1.weight(k, i) * inner;
        }
        let terms = [ft.abs(), phi1, phi2, phi3];
        NormReport { value: terms.iter().sum(), terms, s: (0, 0), t: (i, j) }
    };
    let stride = p.stride.resolve(n1.max(n2));
    search(n1, n2, stride, eval)
}

/// Two-stage maximum over indices `[0, r1) x [0, r2)`: a coarse pass on a lattice of the
/// given stride, then an exhaustive pass within one stride of the best coarse candidates.
fn search(r1: usize, r2: usize, stride: usize, eval: impl Fn(usize, usize) -> NormReport + Sync) -> NormReport {
    let run = |cands: &[Index2]| -> Vec<NormReport> { cands.par_iter().map(|&(i, j)| eval(i, j)).collect() };
    let lattice: Vec<Index2> = (0..r1)
        .step_by(stride)
        .flat_map(|i| (0..r2).step_by(stride).map(move |j| (i, j)))
        .collect();
    let coarse = run(&lattice);
    let mut best = NormReport::zero();
    if stride <= 1 {
        coarse.into_iter().for_each(|r| best.absorb(r));
        return best;
    }
    let mut order: Vec<usize> = (0..lattice.len()).collect();
    order.sort_by(|&a, &b| coarse[b].value.total_cmp(&coarse[a].value));
    let mut fine = BTreeSet::new();
    for &k in order.iter().take(REFINE_ANCHORS) {
        let (c1, c2) = lattice[k];
        for i in c1.saturating_sub(stride)..(c1 + stride + 1).min(r1) {
            for j in c2.saturating_sub(stride)..(c2 + stride + 1).min(r2) {
                fine.insert((i, j));
            }
        }
    }
    let fine: Vec<Index2> = fine.into_iter().collect();
    coarse.into_iter().chain(run(&fine)).for_each(|r| best.absorb(r));
    best
}

pub fn norm(f: &FieldSample, p: &BesovParams, kind: NormKind) -> NormReport {
    match kind {
        NormKind::W0 => w0_norm(f, p),
        NormKind::W1 => w1_norm(f, p),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinementRow {
    pub n: usize,
    pub value: f64,
    /// Difference from the previous row's value, `NaN` on the first row.
    pub change: f64,
}

/// Norm of a fixed analytic field on a sequence of `n x n` grids over `[0, t1] x [0, t2]`.
pub fn norm_refinement_study(
    field: impl Fn(f64, f64) -> f64,
    extent: (f64, f64),
    sizes: &[usize],
    p: &BesovParams,
    kind: NormKind,
) -> Result<Vec<RefinementRow>> {
    let mut rows: Vec<RefinementRow> = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let grid = crate::grid::make_grid(extent.0, extent.1, n, n, 0, 0)?;
        let f = FieldSample::from_fn(grid, &field)?;
        let value = norm(&f, p, kind).value;
        let change = rows.last().map_or(f64::NAN, |r| value - r.value);
        rows.push(RefinementRow { n, value, change });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{sample_fbs, HurstPair};
    use crate::grid::{make_grid, Seed};
    use proptest::prelude::*;

    fn field(n: usize, f: impl Fn(f64, f64) -> f64) -> FieldSample {
        FieldSample::from_fn(make_grid(1.0, 1.0, n, n, 0, 0).unwrap(), f).unwrap()
    }

    fn half() -> BesovParams {
        BesovParams::new(0.5, 0.5).unwrap()
    }

    #[test]
    fn moments_integrate_linear_functions_exactly() {
        // int_0^{1} x * x^{-1-beta} dx = 1/(1-beta); interpolation of x is exact
        let beta = 0.3;
        let n = 10;
        let m = Moments::new(n, 0.1, beta);
        let total: f64 = (1..=n).map(|k| m.weight(k, n) * (k as f64 * 0.1)).sum();
        assert!((total - 1.0 / (1.0 - beta)).abs() < 1e-13);
        // x^2: exact value 1/(2-beta), interpolation error of order h^{2-beta}
        let err = |n: usize| {
            let h = 1.0 / n as f64;
            let m = Moments::new(n, h, beta);
            let approx: f64 = (1..=n).map(|k| m.weight(k, n) * (k as f64 * h).powi(2)).sum();
            approx - 1.0 / (2.0 - beta)
        };
        let (e1, e2, e3) = (err(10), err(20), err(40));
        assert!(e1 > 0.0 && e1 < 3e-2);
        assert!(e1 / e2 > 2f64.powf(1.5) && e2 / e3 > 2f64.powf(1.5));
    }

    #[test]
    fn zero_field() {
        let f = field(9, |_, _| 0.0);
        assert_eq!(w0_norm(&f, &half()).value, 0.0);
        assert_eq!(w1_norm(&f, &half()).value, 0.0);
    }

    #[test]
    fn bilinear_field_closed_forms() {
        let f = field(17, |x, y| x * y);
        let r1 = w1_norm(&f, &half());
        assert!((r1.value - 9.0).abs() < 1e-12);
        for (got, want) in r1.terms.iter().zip([1.0, 2.0, 2.0, 4.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!((r1.s, r1.t), ((0, 0), (16, 16)));
        let r0 = w0_norm(&f, &half());
        assert!((r0.value - 9.0).abs() < 1e-12);
        assert_eq!(r0.t, (16, 16));
        for (got, want) in r0.terms.iter().zip([1.0, 2.0, 2.0, 4.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn breakdown_sums_to_value() {
        let g = make_grid(1.0, 1.0, 17, 17, 0, 0).unwrap();
        let f = sample_fbs(&g, HurstPair::new(0.7, 0.6).unwrap(), Seed::new(4, 0)).unwrap();
        let p = BesovParams::new(0.3, 0.2).unwrap();
        for r in [w0_norm(&f, &p), w1_norm(&f, &p)] {
            assert!((r.terms.iter().sum::<f64>() - r.value).abs() <= 1e-12 * r.value);
        }
    }

    #[test]
    fn one_variable_field_has_no_mixed_terms() {
        let f = field(17, |x, _| (4.0 * x).sin());
        let p = BesovParams::new(0.4, 0.4).unwrap();
        let r = w0_norm(&f, &p);
        assert_eq!(r.terms[2], 0.0);
        assert!(r.terms[3] < 1e-12);
        assert!(w1_norm(&f, &p).value < 1e-12);
    }

    #[test]
    fn additive_field_has_zero_w1() {
        let f = field(17, |x, y| x.powf(0.7) + (3.0 * y).cos() - 2.0);
        assert!(w1_norm(&f, &BesovParams::new(0.3, 0.6).unwrap()).value < 1e-12);
    }

    fn brute_term1(f: &FieldSample, p: &BesovParams) -> f64 {
        let (n1, n2) = f.grid().shape();
        let (h1, h2) = (f.grid().h1(), f.grid().h2());
        let mut best = 0.0f64;
        for s1 in 0..n1 {
            for s2 in 0..n2 {
                for t1 in s1 + 1..n1 {
                    for t2 in s2 + 1..n2 {
                        let d = f.get(t1, t2) - f.get(s1, t2) - f.get(t1, s2) + f.get(s1, s2);
                        let q = d.abs()
                            / (((t1 - s1) as f64 * h1).powf(p.beta1) * ((t2 - s2) as f64 * h2).powf(p.beta2));
                        best = best.max(q);
                    }
                }
            }
        }
        best
    }

    #[test]
    fn first_term_dominated_by_value() {
        let g = make_grid(1.0, 1.0, 12, 12, 0, 0).unwrap();
        let f = sample_fbs(&g, HurstPair::new(0.6, 0.6).unwrap(), Seed::new(8, 0)).unwrap();
        let p = BesovParams::new(0.3, 0.3).unwrap();
        assert!(w1_norm(&f, &p).value >= brute_term1(&f, &p));
    }

    /// One-dimensional `A + I` for `g(x) = x^{3/2}` on `[s, 1]`, computed by substitution
    /// `x = L w^{1/(1-beta)}` and composite Simpson.
    fn one_dim_functional(s: f64, beta: f64) -> f64 {
        let g = |x: f64| x.powf(1.5);
        let l = 1.0 - s;
        let pexp = 1.0 / (1.0 - beta);
        let integrand = |w: f64| {
            if w == 0.0 {
                return if s == 0.0 { 0.0 } else { pexp * 1.5 * s.sqrt() * l.powf(1.0 - beta) };
            }
            let x = l * w.powf(pexp);
            (g(s + x) - g(s)) * x.powf(-1.0 - beta) * l * pexp * w.powf(pexp - 1.0)
        };
        let m = 4000;
        let step = 1.0 / m as f64;
        let mut acc = integrand(0.0) + integrand(1.0);
        for k in 1..m {
            acc += integrand(k as f64 * step) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        let i = acc * step / 3.0;
        (g(1.0) - g(s)) / l.powf(beta) + i
    }

    #[test]
    fn product_field_converges_to_separable_oracle() {
        let beta = 0.6;
        // sup of (A1 + I1)(A2 + I2) over rectangles; both factors peak at t = 1
        let mut peak = 0.0f64;
        for k in 0..2000 {
            peak = peak.max(one_dim_functional(k as f64 * 0.5 / 2000.0, beta));
        }
        let oracle = peak * peak;
        let p = BesovParams::new(beta, beta).unwrap();
        let rows =
            norm_refinement_study(|x, y| (x * y).powf(1.5), (1.0, 1.0), &[17, 33, 65], &p, NormKind::W1).unwrap();
        let errs: Vec<f64> = rows.iter().map(|r| (r.value - oracle).abs()).collect();
        assert!(errs[2] < errs[1] && errs[1] < errs[0], "{rows:?} vs {oracle}");
        assert!(errs[2] / oracle < 1e-2, "{rows:?} vs {oracle}");
        assert!((errs[1] / errs[2]).log2() >= 0.9, "{errs:?}");
    }

    #[test]
    fn constant_field_refinement_is_zero() {
        let rows = norm_refinement_study(|_, _| 3.0, (1.0, 1.0), &[9, 17], &half(), NormKind::W1).unwrap();
        assert!(rows.iter().all(|r| r.value == 0.0));
        assert!(rows[0].change.is_nan() && rows[1].change == 0.0);
    }

    #[test]
    fn strided_search_matches_exhaustive() {
        let g = make_grid(1.0, 1.0, 32, 32, 0, 0).unwrap();
        let h = HurstPair::new(0.7, 0.7).unwrap();
        let p = BesovParams::new(0.3, 0.3).unwrap();
        for r in 0..3 {
            let f = sample_fbs(&g, h, Seed::new(21, r)).unwrap();
            for kind in [NormKind::W0, NormKind::W1] {
                let exact = norm(&f, &p.with_stride(1).unwrap(), kind);
                let strided = norm(&f, &p.with_stride(4).unwrap(), kind);
                assert!(strided.value <= exact.value);
                assert!(strided.value >= 0.95 * exact.value, "{kind}: {strided:?} vs {exact:?}");
            }
        }
    }

    #[test]
    fn padding_is_ignored() {
        let g = make_grid(1.0, 1.0, 9, 9, 3, 3).unwrap();
        let a = FieldSample::from_fn(g, |x, y| x * y).unwrap();
        assert_eq!(w1_norm(&a, &half()), w1_norm(&a.unpadded(), &half()));
    }

    #[test]
    fn invalid_params() {
        assert!(BesovParams::new(0.0, 0.5).is_err());
        assert!(BesovParams::new(0.5, 1.0).is_err());
        assert!(half().with_stride(0).is_err());
        assert!("w2".parse::<NormKind>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn homogeneous(c in -3.0f64..3.0, seed in 0u64..1000) {
            let g = make_grid(1.0, 1.0, 9, 9, 0, 0).unwrap();
            let f = sample_fbs(&g, HurstPair::new(0.7, 0.6).unwrap(), Seed::new(seed, 0)).unwrap();
            let p = BesovParams::new(0.3, 0.4).unwrap();
            for kind in [NormKind::W0, NormKind::W1] {
                let a = norm(&f.scaled(c), &p, kind).value;
                let b = c.abs() * norm(&f, &p, kind).value;
                prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0));
            }
        }

        #[test]
        fn triangle_inequality(seed in 0u64..1000) {
            let g = make_grid(1.0, 1.0, 9, 9, 0, 0).unwrap();
            let h = HurstPair::new(0.6, 0.8).unwrap();
            let f = sample_fbs(&g, h, Seed::new(seed, 0)).unwrap();
            let k = sample_fbs(&g, h, Seed::new(seed, 1)).unwrap();
            let sum = f.linear_combination(1.0, &k, 1.0).unwrap();
            let p = BesovParams::new(0.3, 0.3).unwrap();
            for kind in [NormKind::W0, NormKind::W1] {
                let lhs = norm(&sum, &p, kind).value;
                let rhs = norm(&f, &p, kind).value + norm(&k, &p, kind).value;
                prop_assert!(lhs <= rhs * (1.0 + 1e-12));
            }
        }
    }
}
