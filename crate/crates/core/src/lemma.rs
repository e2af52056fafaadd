//! Deterministic checks of the kernel moment bounds.
//!
//! Every second moment involved is an `L2` inner product of explicit kernels, so each
//! check evaluates `lhs / rhs` on a parameter lattice by quadrature, once at the given
//! resolution and once with `(M, n_u)` doubled.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::generators::HurstFunctionSpec;
use crate::grid::{Grid2D, Seed};
use crate::kernel::{HurstWindow, KernelKey, KernelQuad, KernelTable, Order};

/// Largest relative change of the max ratio under refinement that counts as stable.
pub const STABILITY_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LemmaId {
    Fbm1,
    Fbm2,
    Fbm3,
    Fbs,
    Mbs,
    Int,
}

impl LemmaId {
    pub const ALL: [LemmaId; 6] = [LemmaId::Fbm1, LemmaId::Fbm2, LemmaId::Fbm3, LemmaId::Fbs, LemmaId::Mbs, LemmaId::Int];

    pub fn name(&self) -> &'static str {
        match self {
            LemmaId::Fbm1 => "fbm1",
            LemmaId::Fbm2 => "fbm2",
            LemmaId::Fbm3 => "fbm3",
            LemmaId::Fbs => "fbs",
            LemmaId::Mbs => "mbs",
            LemmaId::Int => "int",
        }
    }
}

impl fmt::Display for LemmaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LemmaId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LemmaId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| invalid(format!("unknown lemma {s:?}, expected one of fbm1, fbm2, fbm3, fbs, mbs, int")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaRow {
    pub params: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

impl LemmaRow {
    /// `None` for the excluded `0/0` case.
    pub fn ratio(&self) -> Option<f64> {
        if self.lhs == 0.0 && self.rhs == 0.0 {
            None
        } else {
            Some(self.lhs / self.rhs)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub id: LemmaId,
    pub param_names: Vec<&'static str>,
    pub rows: Vec<LemmaRow>,
    /// Number of `0/0` tuples left out of the ratio statistics.
    pub excluded: usize,
    pub max_ratio: f64,
    pub argmax: Option<usize>,
    pub refined_max_ratio: f64,
}

impl LemmaReport {
    pub fn relative_change(&self) -> f64 {
        if self.max_ratio == self.refined_max_ratio {
            0.0
        } else {
            (self.refined_max_ratio - self.max_ratio).abs() / self.max_ratio.abs()
        }
    }

    pub fn stable(&self) -> bool {
        self.relative_change() <= STABILITY_TOLERANCE
    }

    pub fn all_finite_nonnegative(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.lhs >= 0.0 && r.ratio().is_none_or(|q| q.is_finite() && q >= 0.0))
            && self.max_ratio.is_finite()
            && self.refined_max_ratio.is_finite()
    }

    pub fn passed(&self) -> bool {
        self.all_finite_nonnegative() && self.stable()
    }

    /// Writes `lemma,<params>,lhs,rhs,ratio`; excluded rows carry an empty ratio.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["lemma"];
        header.extend(&self.param_names);
        header.extend(["lhs", "rhs", "ratio"]);
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![self.id.name().to_string()];
            rec.extend(r.params.iter().map(|p| p.to_string()));
            rec.push(r.lhs.to_string());
            rec.push(r.rhs.to_string());
            rec.push(r.ratio().map(|q| q.to_string()).unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Parameter lattices shared by the one-parameter checks.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaLattice {
    pub ts: Vec<f64>,
    pub hs: Vec<f64>,
    pub window: HurstWindow,
}

impl Default for LemmaLattice {
    fn default() -> Self {
        Self {
            ts: vec![0.25, 0.5, 0.75, 1.0],
            hs: vec![0.55, 0.6, 0.65, 0.7, 0.75, 0.8],
            window: HurstWindow::default(),
        }
    }
}

impl LemmaLattice {
    pub fn t_max(&self) -> f64 {
        self.ts.iter().cloned().fold(0.0, f64::max)
    }

    /// Quadrature sized for every lattice point and derivative order.
    pub fn quadrature(&self) -> KernelQuad {
        KernelQuad::for_window(self.t_max().max(1.0), &self.window, Order::Second)
    }

    pub fn time_tuples(&self) -> Vec<(f64, f64, f64)> {
        let mut v = Vec::new();
        for &t1 in &self.ts {
            for &t2 in &self.ts {
                if t2 < t1 {
                    for &h in &self.hs {
                        v.push((t1, t2, h));
                    }
                }
            }
        }
        v
    }

    pub fn hurst_tuples(&self) -> Vec<(f64, f64, f64)> {
        let mut v = Vec::new();
        for &t in &self.ts {
            for &h1 in &self.hs {
                for &h2 in &self.hs {
                    if h1 != h2 {
                        v.push((t, h1, h2));
                    }
                }
            }
        }
        v
    }

    pub fn mixed_tuples(&self) -> Vec<(f64, f64, f64, f64)> {
        let mut v = Vec::new();
        for &t1 in &self.ts {
            for &t2 in &self.ts {
                for &h1 in &self.hs {
                    for &h2 in &self.hs {
                        if t1 != t2 && h1 != h2 {
                            v.push((t1, t2, h1, h2));
                        }
                    }
                }
            }
        }
        v
    }

    pub fn integrability_tuples(&self) -> Vec<(f64, f64)> {
        self.ts.iter().flat_map(|&t| self.hs.iter().map(move |&h| (t, h))).collect()
    }

    /// Random four-point tuples: `t` drawn from the lattice, the eight Hurst values uniform
    /// on `[h_min, h_max]` with pairwise gaps of at least `gap`.
    pub fn fourpoint_tuples(&self, count: usize, gap: f64, seed: Seed) -> Result<Vec<FourPoint>> {
        let (lo, hi) = (self.window.h_min, self.window.h_max);
        if (hi - lo) < 7.0 * gap {
            return Err(invalid(format!("window [{lo}, {hi}] cannot hold eight values {gap} apart")));
        }
        let mut rng = seed.rng();
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let vals: [f64; 8] = std::array::from_fn(|_| rng.random_range(lo..=hi));
            let mut sorted = vals;
            sorted.sort_by(f64::total_cmp);
            if sorted.windows(2).any(|w| w[1] - w[0] < gap) {
                continue;
            }
            let t = (
                self.ts[rng.random_range(0..self.ts.len())],
                self.ts[rng.random_range(0..self.ts.len())],
            );
            out.push(FourPoint {
                t,
                h: [vals[0], vals[1], vals[2], vals[3]],
                hp: [vals[4], vals[5], vals[6], vals[7]],
            });
        }
        Ok(out)
    }
}

/// `t` with Hurst values `H_1..H_4` on axis one and `H'_1..H'_4` on axis two.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourPoint {
    pub t: (f64, f64),
    pub h: [f64; 4],
    pub hp: [f64; 4],
}

impl FourPoint {
    /// `(sum c_i H_i)^2 + (sum c_i H'_i)^2 + (d12 + d34) (d14 + d23)` with the squared
    /// pairwise gaps `d_ij` of both axes.
    pub fn bound(&self) -> f64 {
        let (h, p) = (self.h, self.hp);
        let sq = |x: f64| x * x;
        let alt = sq(h[0] - h[1] + h[2] - h[3]) + sq(p[0] - p[1] + p[2] - p[3]);
        let near = sq(h[0] - h[1]) + sq(p[0] - p[1]) + sq(h[2] - h[3]) + sq(p[2] - p[3]);
        let far = sq(h[0] - h[3]) + sq(p[0] - p[3]) + sq(h[1] - h[2]) + sq(p[1] - p[2]);
        alt + near * far
    }
}

const SIGNS: [f64; 4] = [1.0, -1.0, 1.0, -1.0];

/// Gram sum `sum_ij c_i c_j <a_i, a_j> <b_i, b_j>` for separable kernels `a_i (x) b_i`,
/// with values below the rounding level of the terms snapped to zero.
fn separable_norm2(table: &KernelTable, terms: &[(f64, KernelKey, KernelKey)]) -> f64 {
    let mut sum = 0.0;
    let mut scale = 0.0;
    for (ci, ai, bi) in terms {
        for (cj, aj, bj) in terms {
            let v = ci * cj * table.inner(*ai, *aj) * table.inner(*bi, *bj);
            sum += v;
            scale += v.abs();
        }
    }
    if sum.abs() <= 1e-13 * scale {
        0.0
    } else {
        sum
    }
}

fn evaluate<T: Sync>(
    id: LemmaId,
    param_names: Vec<&'static str>,
    tuples: &[T],
    keys: impl Fn(&T) -> Vec<KernelKey>,
    row: impl Fn(&KernelTable, &T) -> LemmaRow + Sync,
    q: &KernelQuad,
) -> Result<LemmaReport> {
    let all_keys: Vec<KernelKey> = tuples.iter().flat_map(&keys).collect();
    let run = |q: &KernelQuad| -> Result<Vec<LemmaRow>> {
        let table = KernelTable::build(q, &all_keys)?;
        Ok(tuples.par_iter().map(|t| row(&table, t)).collect())
    };
    let rows = run(q)?;
    let refined = run(&q.refined())?;
    let max_of = |rows: &[LemmaRow]| -> (f64, Option<usize>) {
        let mut best = (f64::NEG_INFINITY, None);
        for (k, r) in rows.iter().enumerate() {
            if let Some(q) = r.ratio() {
                if q > best.0 || q.is_nan() {
                    best = (q, Some(k));
                }
            }
        }
        best
    };
    let (max_ratio, argmax) = max_of(&rows);
    let (refined_max_ratio, _) = max_of(&refined);
    let excluded = rows.iter().filter(|r| r.ratio().is_none()).count();
    Ok(LemmaReport { id, param_names, rows, excluded, max_ratio, argmax, refined_max_ratio })
}

/// `||f(t1) - f(t2)||^2 / |t1 - t2|^{2H}` over `(t1, t2, H)`.
pub fn check_fbm_time_increment(tuples: &[(f64, f64, f64)], q: &KernelQuad) -> Result<LemmaReport> {
    evaluate(
        LemmaId::Fbm1,
        vec!["t1", "t2", "h"],
        tuples,
        |&(t1, t2, h)| vec![KernelKey::value(t1, h), KernelKey::value(t2, h)],
        |table, &(t1, t2, h)| LemmaRow {
            params: vec![t1, t2, h],
            lhs: table.combination_norm2(&[(1.0, KernelKey::value(t1, h)), (-1.0, KernelKey::value(t2, h))]),
            rhs: (t1 - t2).abs().powf(2.0 * h),
        },
        q,
    )
}

/// `||f(t, H1) - f(t, H2)||^2 / (H1 - H2)^2` over `(t, H1, H2)`.
pub fn check_fbm_hurst_increment(tuples: &[(f64, f64, f64)], q: &KernelQuad) -> Result<LemmaReport> {
    evaluate(
        LemmaId::Fbm2,
        vec!["t", "h1", "h2"],
        tuples,
        |&(t, h1, h2)| vec![KernelKey::value(t, h1), KernelKey::value(t, h2)],
        |table, &(t, h1, h2)| LemmaRow {
            params: vec![t, h1, h2],
            lhs: table.combination_norm2(&[(1.0, KernelKey::value(t, h1)), (-1.0, KernelKey::value(t, h2))]),
            rhs: (h1 - h2).powi(2),
        },
        q,
    )
}

/// `||f(t1,H1) - f(t2,H1) - f(t1,H2) + f(t2,H2)||^2 / (|t1 - t2|^{2 mu} (H1 - H2)^2)`.
pub fn check_fbm_mixed_increment(tuples: &[(f64, f64, f64, f64)], mu: f64, q: &KernelQuad) -> Result<LemmaReport> {
    evaluate(
        LemmaId::Fbm3,
        vec!["t1", "t2", "h1", "h2"],
        tuples,
        |&(t1, t2, h1, h2)| {
            vec![
                KernelKey::value(t1, h1),
                KernelKey::value(t2, h1),
                KernelKey::value(t1, h2),
                KernelKey::value(t2, h2),
            ]
        },
        |table, &(t1, t2, h1, h2)| LemmaRow {
            params: vec![t1, t2, h1, h2],
            lhs: table.combination_norm2(&[
                (1.0, KernelKey::value(t1, h1)),
                (-1.0, KernelKey::value(t2, h1)),
                (-1.0, KernelKey::value(t1, h2)),
                (1.0, KernelKey::value(t2, h2)),
            ]),
            rhs: (t1 - t2).abs().powf(2.0 * mu) * (h1 - h2).powi(2),
        },
        q,
    )
}

fn fourpoint_terms(p: &FourPoint) -> Vec<(f64, KernelKey, KernelKey)> {
    (0..4)
        .map(|i| (SIGNS[i], KernelKey::value(p.t.0, p.h[i]), KernelKey::value(p.t.1, p.hp[i])))
        .collect()
}

/// Alternating four-point sum of separable sheets against the bracketed Hurst gaps.
pub fn check_fbs_fourpoint(tuples: &[FourPoint], q: &KernelQuad) -> Result<LemmaReport> {
    evaluate(
        LemmaId::Fbs,
        vec!["t1", "t2", "h1", "h2", "h3", "h4", "hp1", "hp2", "hp3", "hp4"],
        tuples,
        |p| fourpoint_terms(p).into_iter().flat_map(|(_, a, b)| [a, b]).collect(),
        |table, p| {
            let mut params = vec![p.t.0, p.t.1];
            params.extend(p.h);
            params.extend(p.hp);
            LemmaRow { params, lhs: separable_norm2(table, &fourpoint_terms(p)), rhs: p.bound() }
        },
        q,
    )
}

/// Pair of grid indices `(s, t)` with `s < t` componentwise.
type NodePair = ((usize, usize), (usize, usize));

fn mbs_terms(spec: &HurstFunctionSpec, grid: &Grid2D, (s, t): NodePair) -> Vec<(f64, KernelKey, KernelKey)> {
    let corners = [(t, 1.0), ((s.0, t.1), -1.0), ((t.0, s.1), -1.0), (s, 1.0)];
    corners
        .iter()
        .map(|&((i, j), c)| {
            let (x, y) = (grid.x(i), grid.y(j));
            let (h1, h2) = spec.at(x, y);
            (c, KernelKey::value(x, h1), KernelKey::value(y, h2))
        })
        .collect()
}

/// `E (Delta_s Y_t)^2 / (|t1 - s1| |t2 - s2|)^{2 mu}` over all node pairs of the grid.
pub fn check_mbs_increment(spec: &HurstFunctionSpec, grid: &Grid2D, q: &KernelQuad) -> Result<LemmaReport> {
    let (m1, m2) = grid.shape();
    let mut pairs: Vec<NodePair> = Vec::new();
    for s1 in 0..m1 {
        for t1 in s1 + 1..m1 {
            for s2 in 0..m2 {
                for t2 in s2 + 1..m2 {
                    pairs.push(((s1, s2), (t1, t2)));
                }
            }
        }
    }
    let mu = spec.mu;
    evaluate(
        LemmaId::Mbs,
        vec!["s1", "s2", "t1", "t2"],
        &pairs,
        |&p| mbs_terms(spec, grid, p).into_iter().flat_map(|(_, a, b)| [a, b]).collect(),
        |table, &(s, t)| {
            let (s1, s2, t1, t2) = (grid.x(s.0), grid.y(s.1), grid.x(t.0), grid.y(t.1));
            LemmaRow {
                params: vec![s1, s2, t1, t2],
                lhs: separable_norm2(table, &mbs_terms(spec, grid, (s, t))),
                rhs: ((t1 - s1) * (t2 - s2)).powf(2.0 * mu),
            }
        },
        q,
    )
}

/// `int f^2`, `int (f'_h)^2`, `int (f''_hh)^2` at each `(t, h)`, reported as the ratio to 1.
pub fn check_integrability(tuples: &[(f64, f64)], q: &KernelQuad) -> Result<LemmaReport> {
    let expanded: Vec<(f64, f64, Order)> = tuples
        .iter()
        .flat_map(|&(t, h)| [Order::Value, Order::First, Order::Second].map(|o| (t, h, o)))
        .collect();
    evaluate(
        LemmaId::Int,
        vec!["t", "h", "order"],
        &expanded,
        |&(t, h, o)| vec![KernelKey::new(t, h, o)],
        |table, &(t, h, o)| LemmaRow {
            params: vec![t, h, o.index() as f64],
            lhs: table.combination_norm2(&[(1.0, KernelKey::new(t, h, o))]),
            rhs: 1.0,
        },
        q,
    )
}

/// Hurst function and grid for the default multifractional check: the bilinear preset on
/// an `8 x 8` grid over the unit square.
pub fn default_mbs_setup(window: &HurstWindow) -> Result<(HurstFunctionSpec, Grid2D)> {
    let grid = crate::grid::make_grid(1.0, 1.0, 8, 8, 0, 0)?;
    let spec = HurstFunctionSpec::bilinear(
        (window.h_min + 0.05, window.h_min + 0.05),
        window.h_max - window.h_min - 0.1,
        (1.0, 1.0),
        window.mu,
        window.nu,
    )?;
    Ok((spec, grid))
}

/// Number of random four-point tuples in the default check.
pub const FOURPOINT_TUPLES: usize = 200;
/// Minimal pairwise gap between the eight Hurst values of a random four-point tuple.
pub const FOURPOINT_GAP: f64 = 0.02;

/// Runs one check on its default lattice derived from `lattice`.
pub fn run_default(id: LemmaId, lattice: &LemmaLattice, seed: Seed) -> Result<LemmaReport> {
    let q = lattice.quadrature();
    match id {
        LemmaId::Fbm1 => check_fbm_time_increment(&lattice.time_tuples(), &q),
        LemmaId::Fbm2 => check_fbm_hurst_increment(&lattice.hurst_tuples(), &q),
        LemmaId::Fbm3 => check_fbm_mixed_increment(&lattice.mixed_tuples(), lattice.window.mu, &q),
        LemmaId::Fbs => check_fbs_fourpoint(&lattice.fourpoint_tuples(FOURPOINT_TUPLES, FOURPOINT_GAP, seed)?, &q),
        LemmaId::Mbs => {
            let (spec, grid) = default_mbs_setup(&lattice.window)?;
            check_mbs_increment(&spec, &grid, &q)
        }
        LemmaId::Int => check_integrability(&lattice.integrability_tuples(), &q),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::fbs_increment_variance;
    use crate::generators::HurstPair;
    use crate::grid::make_grid;
    use crate::kernel::{ch_constant, kernel_deriv_l2_norms, volterra_kernel, CellMesh, QuadRule};
    use std::sync::OnceLock;

    fn q() -> &'static KernelQuad {
        static Q: OnceLock<KernelQuad> = OnceLock::new();
        Q.get_or_init(|| LemmaLattice::default().quadrature())
    }

    #[test]
    fn time_increment_matches_normalizer() {
        let r = check_fbm_time_increment(&[(1.0, 0.5, 0.7)], q()).unwrap();
        let want = ch_constant(0.7).unwrap().powi(-2);
        assert!((r.max_ratio / want - 1.0).abs() < 1e-3, "{} vs {want}", r.max_ratio);
        assert!(r.passed());
    }

    #[test]
    fn time_increment_at_half_is_one() {
        let r = check_fbm_time_increment(&[(1.0, 0.25, 0.5), (0.75, 0.5, 0.5)], q()).unwrap();
        for row in &r.rows {
            assert!((row.ratio().unwrap() - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn equal_times_are_excluded() {
        let r = check_fbm_time_increment(&[(0.5, 0.5, 0.7), (1.0, 0.5, 0.7)], q()).unwrap();
        assert_eq!(r.rows[0].lhs, 0.0);
        assert_eq!(r.excluded, 1);
        assert_eq!(r.argmax, Some(1));
    }

    #[test]
    fn hurst_increment_limit_and_symmetry() {
        let d = 1e-3;
        let r = check_fbm_hurst_increment(&[(1.0, 0.7 + d / 2.0, 0.7 - d / 2.0), (1.0, 0.7 - d / 2.0, 0.7 + d / 2.0)], q())
            .unwrap();
        let (first, _) = kernel_deriv_l2_norms(1.0, 0.7, q()).unwrap();
        let a = r.rows[0].ratio().unwrap();
        assert_eq!(a, r.rows[1].ratio().unwrap());
        assert!((a / first - 1.0).abs() < 1e-3, "{a} vs {first}");
    }

    #[test]
    fn mixed_increment_degenerate_and_probe() {
        let r = check_fbm_mixed_increment(&[(1.0, 1.0, 0.7, 0.6), (1.0, 0.5, 0.7, 0.7)], 0.55, q()).unwrap();
        assert!(r.rows.iter().all(|row| row.lhs == 0.0));
        let probe = check_fbm_mixed_increment(&[(0.5, 0.49, 0.71, 0.7), (0.5, 0.499, 0.701, 0.7)], 0.55, q()).unwrap();
        let coarse = probe.rows[0].ratio().unwrap();
        let fine = probe.rows[1].ratio().unwrap();
        assert!(fine.is_finite() && fine <= 1.1 * coarse, "{coarse} {fine}");
    }

    #[test]
    fn fourpoint_degenerate_cases() {
        let same = FourPoint { t: (0.5, 1.0), h: [0.7; 4], hp: [0.6; 4] };
        let paired = FourPoint { t: (0.5, 1.0), h: [0.6, 0.6, 0.7, 0.7], hp: [0.65, 0.65, 0.75, 0.75] };
        let r = check_fbs_fourpoint(&[same, paired], q()).unwrap();
        assert_eq!(r.rows[0].lhs, 0.0);
        assert_eq!(r.rows[1].lhs, 0.0);
        assert_eq!(r.rows[1].rhs, 0.0);
        assert_eq!(r.excluded, 2);
    }

    fn direct_fourpoint(p: &FourPoint, q: &KernelQuad) -> f64 {
        let mesh = CellMesh::graded(q.truncation, q.nodes_per_unit, &[p.t.0, p.t.1]);
        let quad = mesh.quadrature(QuadRule::Midpoint);
        let a: Vec<Vec<f64>> = p.h.iter().map(|&h| quad.kernel_vector(p.t.0, h, Order::Value)).collect();
        let b: Vec<Vec<f64>> = p.hp.iter().map(|&h| quad.kernel_vector(p.t.1, h, Order::Value)).collect();
        let mut total = 0.0;
        for x in 0..quad.nodes.len() {
            for y in 0..quad.nodes.len() {
                let f: f64 = (0..4).map(|i| SIGNS[i] * a[i][x] * b[i][y]).sum();
                total += quad.weights[x] * quad.weights[y] * f * f;
            }
        }
        total
    }

    #[test]
    fn separable_expansion_matches_direct_sum() {
        let lattice = LemmaLattice::default();
        let base = KernelQuad::for_window(1.0, &lattice.window, Order::Value);
        let coarse = KernelQuad::new(base.truncation, 8, QuadRule::Midpoint).unwrap();
        for p in lattice.fourpoint_tuples(3, FOURPOINT_GAP, Seed::new(2, 0)).unwrap() {
            let r = check_fbs_fourpoint(&[p], &coarse).unwrap();
            let direct = direct_fourpoint(&p, &coarse);
            assert!((r.rows[0].lhs / direct - 1.0).abs() < 1e-6, "{} vs {direct}", r.rows[0].lhs);
        }
    }

    #[test]
    fn fourpoint_tuples_respect_gaps() {
        let lattice = LemmaLattice::default();
        let tuples = lattice.fourpoint_tuples(20, 0.02, Seed::new(1, 0)).unwrap();
        for p in tuples {
            let mut all: Vec<f64> = p.h.iter().chain(&p.hp).cloned().collect();
            all.sort_by(f64::total_cmp);
            assert!(all.windows(2).all(|w| w[1] - w[0] >= 0.02));
            assert!(all[0] >= 0.55 && all[7] <= 0.8);
        }
        assert!(lattice.fourpoint_tuples(1, 0.1, Seed::new(1, 0)).is_err());
    }

    #[test]
    fn constant_hurst_mbs_reduces_to_fbs() {
        let grid = make_grid(1.0, 1.0, 3, 3, 0, 0).unwrap();
        let spec = HurstFunctionSpec::constant(0.7, 0.6, 0.55, 0.85).unwrap();
        let r = check_mbs_increment(&spec, &grid, q()).unwrap();
        let c = (ch_constant(0.7).unwrap() * ch_constant(0.6).unwrap()).powi(-2);
        let h = HurstPair::new(0.7, 0.6).unwrap();
        for row in &r.rows {
            let (s, t) = ((row.params[0], row.params[1]), (row.params[2], row.params[3]));
            let want = c * fbs_increment_variance(s, t, h);
            assert!((row.lhs / want - 1.0).abs() < 2e-3, "{row:?} vs {want}");
            assert!(row.ratio().unwrap() <= c * (1.0 + 2e-3));
        }
    }

    #[test]
    fn integrability_is_finite() {
        let r = check_integrability(&[(1.0, 0.6), (0.5, 0.8)], q()).unwrap();
        assert_eq!(r.rows.len(), 6);
        assert!(r.passed());
        let want = ch_constant(0.6).unwrap().powi(-2);
        assert!((r.rows[0].lhs / want - 1.0).abs() < 1e-3);
        assert!(volterra_kernel(1.0, -1.0, 0.6).unwrap() > 0.0);
    }

    #[test]
    fn csv_layout() {
        let r = check_fbm_time_increment(&[(1.0, 0.5, 0.7), (0.5, 0.5, 0.7)], q()).unwrap();
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "lemma,t1,t2,h,lhs,rhs,ratio");
        assert!(lines[1].starts_with("fbm1,1,0.5,0.7,"));
        assert!(lines[2].ends_with(",0,0,"));
    }

    #[test]
    fn lemma_ids_roundtrip() {
        for id in LemmaId::ALL {
            assert_eq!(id.name().parse::<LemmaId>().unwrap(), id);
        }
        assert!("fbm4".parse::<LemmaId>().is_err());
    }
}
