//! Fractional Volterra kernels `f(t,u,h) = (t-u)_+^{h-1/2} - (-u)_+^{h-1/2}`, their
//! h-derivatives, and quadrature of kernel integrals over the real line.
//!
//! Integrals over `u in R` are truncated to `[-M, t]`. The tail past `-M` is bounded by
//! the mean-value estimate `|f| <= (h-1/2) t (-u)^{h-3/2}` (and its logarithmic analogues
//! for the derivatives), and `M` is accepted only when that bound is below
//! [`TAIL_TOLERANCE`]` * t^{2h}`.
//!
//! Cells are graded geometrically towards `u = 0` and every `u = t` in play, because the
//! derivatives carry `ln` factors there. Midpoint nodes never touch those points.

use std::collections::HashMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};

/// Relative tail tolerance: the truncated mass must stay below this times `t^{2h}`.
pub const TAIL_TOLERANCE: f64 = 1e-8;

/// Geometric halving levels applied to cells adjacent to `u = 0` and `u = t`.
pub const GRADING_LEVELS: usize = 20;

pub const DEFAULT_NODES_PER_UNIT: usize = 64;

/// Hurst window `1/2 < mu < H_min <= H_max < nu < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HurstWindow {
    pub mu: f64,
    pub nu: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl HurstWindow {
    pub fn new(mu: f64, nu: f64, h_min: f64, h_max: f64) -> Result<Self> {
        if !(0.5 < mu && mu < h_min && h_min <= h_max && h_max < nu && nu < 1.0) {
            return Err(invalid(format!(
                "Hurst window must satisfy 1/2 < mu < H_min <= H_max < nu < 1, got mu={mu}, H_min={h_min}, H_max={h_max}, nu={nu}"
            )));
        }
        Ok(Self { mu, nu, h_min, h_max })
    }

    pub fn contains(&self, h: f64) -> bool {
        self.h_min <= h && h <= self.h_max
    }
}

impl Default for HurstWindow {
    fn default() -> Self {
        Self { mu: 0.525, nu: 0.85, h_min: 0.55, h_max: 0.8 }
    }
}

/// Which h-derivative of the kernel to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Order {
    Value,
    First,
    Second,
}

impl Order {
    pub fn index(self) -> usize {
        match self {
            Order::Value => 0,
            Order::First => 1,
            Order::Second => 2,
        }
    }
}

fn check_h(h: f64) -> Result<()> {
    if h == 0.5 || (0.5 < h && h < 1.0) {
        Ok(())
    } else {
        Err(invalid(format!("kernel exponent needs h in (1/2, 1), got {h}")))
    }
}

/// Kernel or one of its h-derivatives with the limiting value 0 at `u = t` and
/// for the `(-u)_+` term at `u = 0`. No argument checks.
#[inline]
pub(crate) fn eval(t: f64, u: f64, h: f64, order: Order) -> f64 {
    let a = h - 0.5;
    if u >= t {
        return 0.0;
    }
    if u >= 0.0 {
        let y = t - u;
        let p = y.powf(a);
        return match order {
            Order::Value => p,
            Order::First => p * y.ln(),
            Order::Second => {
                let l = y.ln();
                p * l * l
            }
        };
    }
    // u < 0: both terms present. Written in terms of x = -u and r = t/x so that the
    // difference of two nearly equal powers is never formed explicitly.
    let x = -u;
    let lr = (t / x).ln_1p();
    let e = (a * lr).exp_m1();
    let xa = x.powf(a);
    match order {
        Order::Value => xa * e,
        Order::First => {
            let lx = x.ln();
            xa * (e * lx + (1.0 + e) * lr)
        }
        Order::Second => {
            let lx = x.ln();
            xa * (e * lx * lx + (1.0 + e) * (2.0 * lx * lr + lr * lr))
        }
    }
}

/// `f(t,u,h)`; `h = 1/2` gives the indicator of `[0, t)`.
pub fn volterra_kernel(t: f64, u: f64, h: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(invalid(format!("kernel needs t >= 0, got {t}")));
    }
    check_h(h)?;
    Ok(eval(t, u, h, Order::Value))
}

fn check_log_domain(t: f64, u: f64, h: f64) -> Result<()> {
    if !(t >= 0.0) {
        return Err(invalid(format!("kernel needs t >= 0, got {t}")));
    }
    if !(0.5 < h && h < 1.0) {
        return Err(invalid(format!("kernel derivative needs h in (1/2, 1), got {h}")));
    }
    if u == t || u == 0.0 {
        return Err(invalid(format!("kernel derivative has a logarithmic singularity at u = {u}")));
    }
    Ok(())
}

/// `d/dh f(t,u,h)`.
pub fn kernel_dh(t: f64, u: f64, h: f64) -> Result<f64> {
    check_log_domain(t, u, h)?;
    Ok(eval(t, u, h, Order::First))
}

/// `d^2/dh^2 f(t,u,h)`.
pub fn kernel_dhh(t: f64, u: f64, h: f64) -> Result<f64> {
    check_log_domain(t, u, h)?;
    Ok(eval(t, u, h, Order::Second))
}

/// `C_H = (2H sin(pi H) Gamma(2H))^{1/2} / Gamma(H + 1/2)`.
pub fn ch_constant(h: f64) -> Result<f64> {
    if !(0.0 < h && h < 1.0) {
        return Err(invalid(format!("C_H needs H in (0, 1), got {h}")));
    }
    Ok((2.0 * h * (PI * h).sin() * gamma(2.0 * h)).sqrt() / gamma(h + 0.5))
}

/// `int_M^inf x^{-1-b} ln^j x dx`.
fn log_power_tail(m: f64, b: f64, j: u32) -> f64 {
    let lm = m.ln();
    let mut sum = 0.0;
    let mut fact_ratio = 1.0; // j!/i!, starting at i = j
    for i in (0..=j).rev() {
        sum += fact_ratio * lm.powi(i as i32) / b.powi((j - i + 1) as i32);
        fact_ratio *= i as f64;
    }
    m.powf(-b) * sum
}

/// Smallest `x` past which `y^{a-1}(a ln^2 y + 2 ln y)` is decreasing.
fn second_order_threshold(a: f64) -> f64 {
    if a == 0.0 {
        return 1.0;
    }
    // y^{a-2}(a(a-1) L^2 + (4a-2) L + 2) <= 0 for L = ln y beyond the larger root.
    let qa = a * (a - 1.0);
    let qb = 4.0 * a - 2.0;
    let disc = (qb * qb - 8.0 * qa).sqrt();
    let r1 = (-qb + disc) / (2.0 * qa);
    let r2 = (-qb - disc) / (2.0 * qa);
    r1.max(r2).max(0.0).exp()
}

/// Upper bound on `int_{-inf}^{-M} (d^k f/dh^k)^2 du`.
pub fn tail_bound(t: f64, h: f64, m: f64, order: Order) -> f64 {
    let a = h - 0.5;
    let b = 2.0 - 2.0 * h;
    let t2 = t * t;
    match order {
        Order::Value => a * a * t2 * log_power_tail(m, b, 0),
        Order::First => {
            if m < 1.0 {
                return f64::INFINITY;
            }
            t2 * (a * a * log_power_tail(m, b, 2) + 2.0 * a * log_power_tail(m, b, 1) + log_power_tail(m, b, 0))
        }
        Order::Second => {
            if m < 1.0 || m < second_order_threshold(a) {
                return f64::INFINITY;
            }
            t2 * (a * a * log_power_tail(m, b, 4) + 4.0 * a * log_power_tail(m, b, 3) + 4.0 * log_power_tail(m, b, 2))
        }
    }
}

/// Smallest truncation (to bisection precision, rounded up) meeting the tail tolerance.
pub fn required_truncation(t: f64, h: f64, order: Order, tol: f64) -> f64 {
    let target = tol * t.powf(2.0 * h);
    let ok = |lm: f64| tail_bound(t, h, lm.exp(), order) <= target;
    let mut lo = t.max(2.0).ln();
    if ok(lo) {
        return lo.exp();
    }
    let mut hi = 700.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi.exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadRule {
    Midpoint,
    Trapezoid,
}

/// Truncation and resolution of kernel quadrature on `[-M, t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelQuad {
    pub truncation: f64,
    pub nodes_per_unit: usize,
    pub rule: QuadRule,
}

impl KernelQuad {
    pub fn new(truncation: f64, nodes_per_unit: usize, rule: QuadRule) -> Result<Self> {
        if !(truncation > 0.0) {
            return Err(invalid(format!("truncation M must be positive, got {truncation}")));
        }
        if nodes_per_unit < 2 {
            return Err(invalid(format!("need at least 2 nodes per unit length, got {nodes_per_unit}")));
        }
        Ok(Self { truncation, nodes_per_unit, rule })
    }

    /// Midpoint quadrature whose truncation covers every `t <= t_max`, every `h` of the
    /// window and every derivative order up to `max_order`.
    pub fn for_window(t_max: f64, window: &HurstWindow, max_order: Order) -> Self {
        let mut m: f64 = 1.0;
        let steps = 8;
        for k in 0..=steps {
            let h = window.h_min + (window.h_max - window.h_min) * k as f64 / steps as f64;
            for order in [Order::Value, Order::First, Order::Second] {
                if order.index() <= max_order.index() {
                    m = m.max(required_truncation(t_max, h, order, TAIL_TOLERANCE));
                }
            }
        }
        // headroom against the bisection rounding
        Self { truncation: 2.0 * m, nodes_per_unit: DEFAULT_NODES_PER_UNIT, rule: QuadRule::Midpoint }
    }

    /// Doubles both `M` and the node density.
    pub fn refined(&self) -> Self {
        Self {
            truncation: 2.0 * self.truncation,
            nodes_per_unit: 2 * self.nodes_per_unit,
            rule: self.rule,
        }
    }

    pub fn check_tail(&self, t: f64, h: f64, order: Order) -> Result<()> {
        let bound = tail_bound(t, h, self.truncation, order);
        let tolerance = TAIL_TOLERANCE * t.powf(2.0 * h);
        if bound <= tolerance {
            Ok(())
        } else {
            Err(Error::Truncation { bound, tolerance, truncation: self.truncation })
        }
    }

    /// Nodes and weights on `[-M, max(breakpoints)]`, graded at each breakpoint and at 0.
    pub fn quadrature(&self, breakpoints: &[f64]) -> Quadrature {
        let mesh = CellMesh::graded(self.truncation, self.nodes_per_unit, breakpoints);
        mesh.quadrature(self.rule)
    }
}

/// Sorted cell edges of a 1-D mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMesh {
    edges: Vec<f64>,
}

impl CellMesh {
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("cell edges must be strictly increasing with at least one cell"));
        }
        Ok(Self { edges })
    }

    /// Geometrically stretched cells from `-inner` out to `-truncation`, ratio `1 + growth`.
    fn tail_edges(inner: f64, truncation: f64, growth: f64) -> Vec<f64> {
        let mut out = vec![-inner];
        let mut x = inner;
        while x < truncation {
            x = (x * (1.0 + growth)).min(truncation);
            if truncation - x < 1e-9 * truncation {
                x = truncation;
            }
            out.push(-x);
        }
        out.reverse();
        out
    }

    /// Graded mesh on `[-M, max breakpoint]`: uniform `n_u` cells per unit length on
    /// `[-L, max]` with `L = max(1, max)`, geometric halving into each breakpoint and
    /// into 0, and geometric stretching (ratio `1 + 1/n_u`) on `[-M, -L]`.
    pub fn graded(truncation: f64, nodes_per_unit: usize, breakpoints: &[f64]) -> Self {
        let mut pts: Vec<f64> = breakpoints.iter().copied().filter(|&b| b > 0.0).collect();
        pts.push(0.0);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let top = *pts.last().unwrap();
        let inner = top.max(1.0);
        let mut edges = if truncation > inner {
            Self::tail_edges(inner, truncation, 1.0 / nodes_per_unit as f64)
        } else {
            vec![-truncation]
        };
        let start = edges.last().copied().unwrap();
        let mut segments = vec![(start, 0.0, false)];
        for w in pts.windows(2) {
            segments.push((w[0], w[1], true));
        }
        for (a, b, left_singular) in segments {
            let len = b - a;
            let cells = ((len * nodes_per_unit as f64).ceil() as usize).max(2);
            let w = len / cells as f64;
            let mut seg: Vec<f64> = (1..=cells).map(|k| a + k as f64 * w).collect();
            *seg.last_mut().unwrap() = b;
            if left_singular {
                for k in 1..=GRADING_LEVELS {
                    seg.push(a + w / (1u64 << k) as f64);
                }
            }
            for k in 1..=GRADING_LEVELS {
                seg.push(b - w / (1u64 << k) as f64);
            }
            seg.sort_by(f64::total_cmp);
            edges.extend(seg);
        }
        edges.dedup();
        Self { edges }
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn midpoints(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn quadrature(&self, rule: QuadRule) -> Quadrature {
        match rule {
            QuadRule::Midpoint => Quadrature { nodes: self.midpoints(), weights: self.widths() },
            QuadRule::Trapezoid => {
                let widths = self.widths();
                let mut weights = vec![0.0; self.edges.len()];
                for (k, w) in widths.iter().enumerate() {
                    weights[k] += 0.5 * w;
                    weights[k + 1] += 0.5 * w;
                }
                Quadrature { nodes: self.edges.clone(), weights }
            }
        }
    }
}

/// Quadrature nodes and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub fn kernel_vector(&self, t: f64, h: f64, order: Order) -> Vec<f64> {
        self.nodes.iter().map(|&u| eval(t, u, h, order)).collect()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&u, &w)| w * f(u)).sum()
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.weights).map(|((x, y), w)| w * x * y).sum()
    }
}

fn check_args(t: f64, h: f64, q: &KernelQuad, order: Order) -> Result<()> {
    if !(t > 0.0) {
        return Err(invalid(format!("kernel integral needs t > 0, got {t}")));
    }
    if order == Order::Value {
        check_h(h)?;
    } else if !(0.5 < h && h < 1.0) {
        return Err(invalid(format!("kernel derivative needs h in (1/2, 1), got {h}")));
    }
    q.check_tail(t, h, order)
}

/// `int f(t,u,h)^2 du` over `[-M, t]`; continuum value `C_h^{-2} t^{2h}`.
pub fn kernel_l2_norm(t: f64, h: f64, q: &KernelQuad) -> Result<f64> {
    check_args(t, h, q, Order::Value)?;
    let quad = q.quadrature(&[t]);
    Ok(quad.integrate(|u| eval(t, u, h, Order::Value).powi(2)))
}

/// `(int (df/dh)^2 du, int (d^2f/dh^2)^2 du)`.
pub fn kernel_deriv_l2_norms(t: f64, h: f64, q: &KernelQuad) -> Result<(f64, f64)> {
    check_args(t, h, q, Order::First)?;
    check_args(t, h, q, Order::Second)?;
    let quad = q.quadrature(&[t]);
    let d1 = quad.integrate(|u| eval(t, u, h, Order::First).powi(2));
    let d2 = quad.integrate(|u| eval(t, u, h, Order::Second).powi(2));
    Ok((d1, d2))
}

/// Cache key: exact bits of `(t, h)` plus derivative order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KernelKey {
    t: u64,
    h: u64,
    order: Order,
}

impl KernelKey {
    pub fn new(t: f64, h: f64, order: Order) -> Self {
        Self { t: t.to_bits(), h: h.to_bits(), order }
    }

    pub fn value(t: f64, h: f64) -> Self {
        Self::new(t, h, Order::Value)
    }

    pub fn t(&self) -> f64 {
        f64::from_bits(self.t)
    }

    pub fn h(&self) -> f64 {
        f64::from_bits(self.h)
    }
}

/// Kernel vectors on one shared quadrature, built once for a known key set and then frozen.
#[derive(Debug, Clone)]
pub struct KernelTable {
    quad: Quadrature,
    vectors: HashMap<KernelKey, Vec<f64>>,
}

impl KernelTable {
    pub fn build(q: &KernelQuad, keys: &[KernelKey]) -> Result<Self> {
        let mut uniq = keys.to_vec();
        uniq.sort_by_key(|k| (k.t, k.h, k.order));
        uniq.dedup();
        let mut breakpoints = Vec::new();
        for k in &uniq {
            let t = k.t();
            if t > 0.0 {
                check_args(t, k.h(), q, k.order)?;
            }
            breakpoints.push(t);
        }
        let quad = q.quadrature(&breakpoints);
        let vectors = uniq
            .par_iter()
            .map(|k| (*k, quad.kernel_vector(k.t(), k.h(), k.order)))
            .collect();
        Ok(Self { quad, vectors })
    }

    pub fn quadrature(&self) -> &Quadrature {
        &self.quad
    }

    /// Panics on keys that were not supplied to [`KernelTable::build`].
    pub fn vector(&self, key: KernelKey) -> &[f64] {
        self.vectors
            .get(&key)
            .unwrap_or_else(|| panic!("kernel ({}, {}, {:?}) not in table", key.t(), key.h(), key.order))
    }

    pub fn inner(&self, a: KernelKey, b: KernelKey) -> f64 {
        self.quad.inner(self.vector(a), self.vector(b))
    }

    /// `int (sum_i c_i f_i(u))^2 du`, combined pointwise before squaring. Coefficients of
    /// repeated keys are merged first so cancelling combinations vanish exactly.
    pub fn combination_norm2(&self, terms: &[(f64, KernelKey)]) -> f64 {
        let mut merged: Vec<(f64, KernelKey)> = Vec::with_capacity(terms.len());
        for &(c, k) in terms {
            match merged.iter_mut().find(|(_, m)| *m == k) {
                Some((acc, _)) => *acc += c,
                None => merged.push((c, k)),
            }
        }
        merged.retain(|(c, _)| *c != 0.0);
        let vecs: Vec<(f64, &[f64])> = merged.iter().map(|(c, k)| (*c, self.vector(*k))).collect();
        (0..self.quad.nodes.len())
            .map(|n| {
                let v: f64 = vecs.iter().map(|(c, vec)| c * vec[n]).sum();
                self.quad.weights[n] * v * v
            })
            .sum()
    }
}
