//! Uniform grids, gridded field samples, rectangular increments and seeded RNG streams.
//!
//! A [`Grid2D`] discretizes `[0, T1] x [0, T2]` with `n1 x n2` nodes and carries
//! `pad1`/`pad2` extra nodes past the upper edges. Padding is fixed at construction
//! so that window averages over `[t, t + eps]` are available for every `t` in `[0, T]`.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    t1: f64,
    t2: f64,
    n1: usize,
    n2: usize,
    pad1: usize,
    pad2: usize,
}

impl Grid2D {
    pub fn new(t1: f64, t2: f64, n1: usize, n2: usize, pad1: usize, pad2: usize) -> Result<Self> {
        if !(t1 > 0.0 && t1.is_finite() && t2 > 0.0 && t2.is_finite()) {
            return Err(invalid(format!("domain extents must be positive, got ({t1}, {t2})")));
        }
        if n1 < 2 || n2 < 2 {
            return Err(invalid(format!("need at least 2 points per axis, got ({n1}, {n2})")));
        }
        Ok(Self { t1, t2, n1, n2, pad1, pad2 })
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn t2(&self) -> f64 {
        self.t2
    }

    /// Points per axis inside `[0, T]`, endpoints included.
    pub fn n(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    pub fn pad(&self) -> (usize, usize) {
        (self.pad1, self.pad2)
    }

    /// Points per axis including padding.
    pub fn shape(&self) -> (usize, usize) {
        (self.n1 + self.pad1, self.n2 + self.pad2)
    }

    pub fn h1(&self) -> f64 {
        self.t1 / (self.n1 - 1) as f64
    }

    pub fn h2(&self) -> f64 {
        self.t2 / (self.n2 - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.h1()
    }

    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.h2()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.shape().0).map(|i| self.x(i)).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        (0..self.shape().1).map(|j| self.y(j)).collect()
    }

    /// Largest padded coordinate per axis.
    pub fn padded_extent(&self) -> (f64, f64) {
        let (m1, m2) = self.shape();
        (self.x(m1 - 1), self.y(m2 - 1))
    }

    /// Same domain and resolution, padding removed.
    pub fn unpadded(&self) -> Self {
        Self { pad1: 0, pad2: 0, ..*self }
    }

    /// True when both grids discretize the same `[0, T]` with the same node count.
    pub fn same_domain(&self, other: &Self) -> bool {
        self.t1 == other.t1 && self.t2 == other.t2 && self.n1 == other.n1 && self.n2 == other.n2
    }
}

/// Shorthand for [`Grid2D::new`].
pub fn make_grid(t1: f64, t2: f64, n1: usize, n2: usize, pad1: usize, pad2: usize) -> Result<Grid2D> {
    Grid2D::new(t1, t2, n1, n2, pad1, pad2)
}

/// One realization of a scalar field on every node of a grid, padding included.
///
/// Values are stored row-major with the x index outermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    grid: Grid2D,
    values: Vec<f64>,
}

impl FieldSample {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        let (m1, m2) = grid.shape();
        if values.len() != m1 * m2 {
            return Err(invalid(format!(
                "field has {} values, grid shape {m1}x{m2} needs {}",
                values.len(),
                m1 * m2
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite field value at ({}, {})",
                pos / m2,
                pos % m2
            )));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn new_unchecked(grid: Grid2D, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.shape().0 * grid.shape().1);
        Self { grid, values }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let (m1, m2) = grid.shape();
        let mut values = Vec::with_capacity(m1 * m2);
        for i in 0..m1 {
            let x = grid.x(i);
            for j in 0..m2 {
                values.push(f(x, grid.y(j)));
            }
        }
        Self::new(grid, values)
    }

    pub fn zeros(grid: Grid2D) -> Self {
        let (m1, m2) = grid.shape();
        Self { grid, values: vec![0.0; m1 * m2] }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.shape().1 + j]
    }

    /// Restriction to the unpadded `[0, T]` nodes.
    pub fn unpadded(&self) -> FieldSample {
        let (n1, n2) = self.grid.n();
        let mut values = Vec::with_capacity(n1 * n2);
        for i in 0..n1 {
            for j in 0..n2 {
                values.push(self.get(i, j));
            }
        }
        Self { grid: self.grid.unpadded(), values }
    }

    pub fn scaled(&self, c: f64) -> FieldSample {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// Pointwise `a*self + b*other`; grids must match exactly.
    pub fn linear_combination(&self, a: f64, other: &FieldSample, b: f64) -> Result<FieldSample> {
        if self.grid != other.grid {
            return Err(invalid("linear combination of fields on different grids"));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        FieldSample::new(self.grid, values)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Serializes as `x,y,value` rows, x outermost, shortest round-trip floats.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "y", "value"])?;
        let (m1, m2) = self.grid.shape();
        for i in 0..m1 {
            let x = self.grid.x(i).to_string();
            for j in 0..m2 {
                w.write_record([x.as_str(), &self.grid.y(j).to_string(), &self.get(i, j).to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the `x,y,value` layout written by [`FieldSample::write_csv`].
    ///
    /// The file does not record padding, so the caller states how many trailing
    /// nodes per axis are padding.
    pub fn read_csv<R: Read>(reader: R, pad1: usize, pad2: usize) -> Result<FieldSample> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().map(str::trim).collect::<Vec<_>>() != ["x", "y", "value"] {
            return Err(invalid(format!("expected header x,y,value, got {:?}", headers)));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .ok_or_else(|| invalid("short csv row"))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| invalid(format!("bad number in csv: {e}")))
            };
            rows.push((parse(0)?, parse(1)?, parse(2)?));
        }
        let m2 = rows.iter().take_while(|r| r.0 == rows[0].0).count();
        if m2 < 2 || rows.len() % m2 != 0 {
            return Err(invalid("csv is not a full rectangular grid"));
        }
        let m1 = rows.len() / m2;
        if m1 < 2 {
            return Err(invalid("csv needs at least two x coordinates"));
        }
        let (n1, n2) = (
            m1.checked_sub(pad1).filter(|&n| n >= 2),
            m2.checked_sub(pad2).filter(|&n| n >= 2),
        );
        let (n1, n2) = match (n1, n2) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(invalid(format!("padding ({pad1}, {pad2}) too large for {m1}x{m2} csv grid"))),
        };
        let h1 = rows[m2].0 - rows[0].0;
        let h2 = rows[1].1 - rows[0].1;
        let grid = Grid2D::new(h1 * (n1 - 1) as f64, h2 * (n2 - 1) as f64, n1, n2, pad1, pad2)?;
        for (k, &(x, y, _)) in rows.iter().enumerate() {
            let (i, j) = (k / m2, k % m2);
            let tol1 = 1e-9 * grid.h1().max(x.abs());
            let tol2 = 1e-9 * grid.h2().max(y.abs());
            if (x - grid.x(i)).abs() > tol1 || (y - grid.y(j)).abs() > tol2 {
                return Err(invalid(format!(
                    "csv row {k} at ({x}, {y}) is off the uniform grid (expected ({}, {}))",
                    grid.x(i),
                    grid.y(j)
                )));
            }
        }
        FieldSample::new(grid, rows.into_iter().map(|r| r.2).collect())
    }
}

/// Grid-index pair `(i, j)`.
pub type Index2 = (usize, usize);

/// `f(t) - f(s1, t2) - f(t1, s2) + f(s)` at grid indices.
///
/// Indices need not be ordered; swapping `s` and `t` along one axis flips the sign.
pub fn delta_increment(f: &FieldSample, s: Index2, t: Index2) -> Result<f64> {
    let (m1, m2) = f.grid().shape();
    if s.0 >= m1 || t.0 >= m1 || s.1 >= m2 || t.1 >= m2 {
        return Err(invalid(format!("increment indices {s:?}, {t:?} outside {m1}x{m2} grid")));
    }
    Ok(f.get(t.0, t.1) - f.get(s.0, t.1) - f.get(t.0, s.1) + f.get(s.0, s.1))
}

/// Reproducible RNG stream identifier: `value` is the experiment seed, `stream` the replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Seed {
    pub value: u64,
    pub stream: u64,
}

impl Seed {
    pub fn new(value: u64, stream: u64) -> Self {
        Self { value, stream }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        Self { stream, ..self }
    }

    /// ChaCha8 keyed by `value`, on its own stream per replica.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.value);
        rng.set_stream(self.stream);
        rng
    }
}
