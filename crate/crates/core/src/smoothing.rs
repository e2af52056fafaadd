//! Sliding-window average `eps^{-2} int_{[t, t+eps]} f(s) ds` via a summed-area table.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::grid::FieldSample;

/// Window sizes in grid cells per axis, `eps_i = k_i h_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmoothingParams {
    pub k1: usize,
    pub k2: usize,
}

impl SmoothingParams {
    pub fn new(k: usize) -> Result<Self> {
        Self::per_axis(k, k)
    }

    pub fn per_axis(k1: usize, k2: usize) -> Result<Self> {
        if k1 == 0 || k2 == 0 {
            return Err(invalid("smoothing window must be at least one cell"));
        }
        Ok(Self { k1, k2 })
    }
}

/// `s[i][j]` is the trapezoid integral of `f` over `[0, x_i] x [0, y_j]`.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    rows: usize,
    cols: usize,
    s: Vec<f64>,
}

impl IntegralImage {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.s[i * self.cols + j]
    }

    /// Integral over the node rectangle `[x_{i0}, x_{i1}] x [y_{j0}, y_{j1}]`.
    pub fn rect(&self, i0: usize, j0: usize, i1: usize, j1: usize) -> f64 {
        self.at(i1, j1) - self.at(i0, j1) - self.at(i1, j0) + self.at(i0, j0)
    }
}

pub fn build_prefix(f: &FieldSample) -> IntegralImage {
    let (rows, cols) = f.grid().shape();
    let area = f.grid().h1() * f.grid().h2();
    let v = f.values();
    let mut s = vec![0.0; rows * cols];
    for i in 1..rows {
        let mut run = 0.0;
        for j in 1..cols {
            let cell = (v[(i - 1) * cols + j - 1] + v[i * cols + j - 1] + v[(i - 1) * cols + j] + v[i * cols + j])
                * 0.25
                * area;
            run += cell;
            s[i * cols + j] = s[(i - 1) * cols + j] + run;
        }
    }
    IntegralImage { rows, cols, s }
}

/// Averaged field on the unpadded grid.
pub fn smooth(f: &FieldSample, p: SmoothingParams) -> Result<FieldSample> {
    let grid = f.grid();
    let (pad1, pad2) = grid.pad();
    if p.k1 > pad1 || p.k2 > pad2 {
        return Err(invalid(format!(
            "smoothing window ({}, {}) cells needs padding of at least ({}, {}) cells, grid has ({pad1}, {pad2})",
            p.k1, p.k2, p.k1, p.k2
        )));
    }
    let image = build_prefix(f);
    let out = grid.unpadded();
    let (n1, n2) = out.shape();
    let norm = 1.0 / ((p.k1 as f64 * grid.h1()) * (p.k2 as f64 * grid.h2()));
    let values: Vec<f64> = (0..n1)
        .into_par_iter()
        .flat_map_iter(|i| {
            let image = &image;
            (0..n2).map(move |j| image.rect(i, j, i + p.k1, j + p.k2) * norm)
        })
        .collect();
    FieldSample::new(out, values)
}

/// `g - f` on the common unpadded region.
pub fn difference_field(f: &FieldSample, g: &FieldSample) -> Result<FieldSample> {
    let a = f.unpadded();
    let b = g.unpadded();
    if !a.grid().same_domain(b.grid()) {
        return Err(invalid(format!(
            "grid mismatch: {:?} vs {:?}",
            a.grid(),
            b.grid()
        )));
    }
    a.linear_combination(-1.0, &b, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{sample_fbs, HurstPair};
    use crate::grid::{make_grid, Seed};

    fn bilinear(n: usize, pad: usize) -> FieldSample {
        FieldSample::from_fn(make_grid(1.0, 1.0, n, n, pad, pad).unwrap(), |x, y| x * y).unwrap()
    }

    #[test]
    fn constant_total() {
        let g = make_grid(1.0, 1.0, 9, 9, 0, 0).unwrap();
        let f = FieldSample::from_fn(g, |_, _| 2.5).unwrap();
        let s = build_prefix(&f);
        assert!((s.at(8, 8) - 2.5).abs() < 1e-14);
    }

    #[test]
    fn bilinear_total_is_exact() {
        let s = build_prefix(&bilinear(17, 0));
        assert!((s.at(16, 16) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn quadratic_total_converges() {
        let errs: Vec<f64> = [9, 17, 33]
            .iter()
            .map(|&n| {
                let g = make_grid(1.0, 1.0, n, n, 0, 0).unwrap();
                let f = FieldSample::from_fn(g, |x, y| x * x * y).unwrap();
                (build_prefix(&f).at(n - 1, n - 1) - 1.0 / 6.0).abs()
            })
            .collect();
        assert!(errs[1] < errs[0] / 3.5 && errs[2] < errs[1] / 3.5);
    }

    #[test]
    fn rectangle_sums_match_direct_quadrature() {
        let g = make_grid(1.0, 1.0, 12, 10, 0, 0).unwrap();
        let f = FieldSample::from_fn(g, |x, y| (3.0 * x).sin() + x * y * y).unwrap();
        let s = build_prefix(&f);
        let area = g.h1() * g.h2();
        for (i0, j0, i1, j1) in [(0, 0, 11, 9), (2, 3, 7, 8), (5, 5, 6, 6)] {
            let mut direct = 0.0;
            for i in i0..i1 {
                for j in j0..j1 {
                    direct += (f.get(i, j) + f.get(i + 1, j) + f.get(i, j + 1) + f.get(i + 1, j + 1)) / 4.0 * area;
                }
            }
            let r = s.rect(i0, j0, i1, j1);
            assert!((r - direct).abs() <= 1e-12 * direct.abs().max(1e-3));
        }
        assert_eq!(s.rect(0, 0, 4, 9) + s.rect(4, 0, 11, 9), s.at(11, 9));
    }

    #[test]
    fn smooth_constant_and_bilinear() {
        let g = make_grid(1.0, 1.0, 9, 9, 2, 2).unwrap();
        let c = smooth(&FieldSample::from_fn(g, |_, _| -1.25).unwrap(), SmoothingParams::new(2).unwrap()).unwrap();
        assert!(c.values().iter().all(|v| (v + 1.25).abs() < 1e-14));
        // h = 1/8, k = 2 gives eps = 1/4; node (4, 4) is t = (0.5, 0.5)
        let b = smooth(&bilinear(9, 2), SmoothingParams::new(2).unwrap()).unwrap();
        assert_eq!(b.grid().shape(), (9, 9));
        assert!((b.get(4, 4) - 0.390625).abs() < 1e-15);
    }

    #[test]
    fn smooth_quadratic_gauge() {
        let want = (0.75f64.powi(3) - 0.5f64.powi(3)) / (3.0 * 0.25) * 0.625;
        let mut prev = f64::INFINITY;
        for (n, k) in [(9, 2), (17, 4), (33, 8)] {
            let g = make_grid(1.0, 1.0, n, n, k, k).unwrap();
            let f = FieldSample::from_fn(g, |x, y| x * x * y).unwrap();
            let s = smooth(&f, SmoothingParams::new(k).unwrap()).unwrap();
            let err = (s.get((n - 1) / 2, (n - 1) / 2) - want).abs();
            assert!(err < prev / 3.5 || err < 1e-14);
            prev = err;
        }
    }

    #[test]
    fn insufficient_padding_names_requirement() {
        let err = smooth(&bilinear(9, 1), SmoothingParams::new(3).unwrap()).unwrap_err();
        assert!(err.to_string().contains("at least (3, 3)"));
    }

    #[test]
    fn difference_of_bilinear() {
        let f = bilinear(9, 4);
        let k = 4;
        let eps = k as f64 / 8.0;
        let d = difference_field(&f, &smooth(&f, SmoothingParams::new(k).unwrap()).unwrap()).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let (x, y) = (i as f64 / 8.0, j as f64 / 8.0);
                assert!((d.get(i, j) - (eps / 2.0 * (x + y) + eps * eps / 4.0)).abs() < 1e-15);
            }
        }
        let zero = difference_field(&f, &f).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn difference_rejects_mismatch() {
        assert!(difference_field(&bilinear(9, 0), &bilinear(5, 0)).is_err());
    }

    #[test]
    fn linear_and_contractive() {
        let g = make_grid(1.0, 1.0, 17, 17, 4, 4).unwrap();
        let h = HurstPair::new(0.7, 0.6).unwrap();
        let a = sample_fbs(&g, h, Seed::new(1, 0)).unwrap();
        let b = sample_fbs(&g, h, Seed::new(1, 1)).unwrap();
        let p = SmoothingParams::new(4).unwrap();
        let lhs = smooth(&a.linear_combination(2.0, &b, -0.5).unwrap(), p).unwrap();
        let rhs = smooth(&a, p).unwrap().linear_combination(2.0, &smooth(&b, p).unwrap(), -0.5).unwrap();
        for (x, y) in lhs.values().iter().zip(rhs.values()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(smooth(&a, p).unwrap().max_abs() <= a.max_abs() * (1.0 + 1e-12));
    }

    #[test]
    fn bilinear_error_is_first_order() {
        for k in [1, 2, 4, 8] {
            let f = bilinear(33, 8);
            let s = smooth(&f, SmoothingParams::new(k).unwrap()).unwrap();
            let eps = k as f64 / 32.0;
            let (x, y) = (0.5, 0.75);
            let err = s.get(16, 24) - f.get(16, 24);
            assert!((err / eps - (x + y) / 2.0).abs() <= eps / 4.0 + 1e-12);
        }
    }

    #[test]
    fn smoothed_fbs_variance_is_stationary_on_diagonal() {
        let g = make_grid(1.0, 1.0, 17, 17, 4, 4).unwrap();
        let h = HurstPair::new(0.7, 0.7).unwrap();
        let p = SmoothingParams::new(4).unwrap();
        let reps = 300;
        let nodes = [4, 8, 12, 16];
        let mut acc = [0.0f64; 4];
        for r in 0..reps {
            let f = sample_fbs(&g, h, Seed::new(77, r)).unwrap();
            let d = difference_field(&f, &smooth(&f, p).unwrap()).unwrap();
            for (a, &k) in acc.iter_mut().zip(&nodes) {
                let inc = d.get(k, k) - d.get(k - 4, k) - d.get(k, k - 4) + d.get(k - 4, k - 4);
                *a += inc * inc;
            }
        }
        let v: Vec<f64> = acc.iter().map(|a| a / reps as f64).collect();
        let mean = v.iter().sum::<f64>() / 4.0;
        for x in v {
            assert!((x - mean).abs() / mean < 0.35, "{x} vs {mean}");
        }
    }
}
