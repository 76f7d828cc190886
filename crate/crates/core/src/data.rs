//! Bounded datasets, CSV ingestion and seeded sample splitting.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::rng::derive_seed;

/// Response vector and design matrix with declared entrywise bounds.
///
/// Construction clips every covariate to `[-c_x, c_x]` and every response to
/// `[-c_y, c_y]`; the bounds are what the sensitivity certificates rely on.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    c_x: f64,
    c_y: f64,
    clipped: bool,
}

impl Dataset {
    pub fn new(mut x: DMatrix<f64>, mut y: DVector<f64>, c_x: f64, c_y: f64) -> Result<Self> {
        check_bound("c_x", c_x)?;
        check_bound("c_y", c_y)?;
        if x.nrows() != y.len() {
            return Err(invalid(format!(
                "design has {} rows but response has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() < 2 {
            return Err(invalid("a dataset needs at least two rows"));
        }
        if x.ncols() < 1 {
            return Err(invalid("a dataset needs at least one covariate"));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % x.nrows(), pos / x.nrows());
            return Err(Error::Validation(format!(
                "non-finite covariate at row {}, column x{}",
                r + 1,
                c + 1
            )));
        }
        if let Some(r) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite response at row {}",
                r + 1
            )));
        }
        let mut clipped = false;
        for v in x.iter_mut() {
            clipped |= clip(v, c_x);
        }
        for v in y.iter_mut() {
            clipped |= clip(v, c_y);
        }
        Ok(Self {
            x,
            y,
            c_x,
            c_y,
            clipped,
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn c_x(&self) -> f64 {
        self.c_x
    }

    pub fn c_y(&self) -> f64 {
        self.c_y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Whether any entry was moved onto a bound at construction.
    pub fn was_clipped(&self) -> bool {
        self.clipped
    }

    /// Rows at the given 0-based indices, in the given order.
    pub fn subset_rows(&self, rows: &[usize]) -> Result<Dataset> {
        if rows.len() < 2 {
            return Err(invalid("a row subset needs at least two rows"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n()) {
            return Err(invalid(format!("row index {bad} out of range")));
        }
        let x = self.x.select_rows(rows.iter());
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r]));
        Ok(Dataset {
            x,
            y,
            c_x: self.c_x,
            c_y: self.c_y,
            clipped: self.clipped,
        })
    }

    /// Replaces row `row` in place, clipping the new values to the bounds.
    pub fn with_row(&self, row: usize, x_row: &[f64], y_val: f64) -> Result<Dataset> {
        if row >= self.n() || x_row.len() != self.p() {
            return Err(invalid("replacement row does not match the dataset shape"));
        }
        let mut out = self.clone();
        for (j, &v) in x_row.iter().enumerate() {
            let mut v = v;
            out.clipped |= clip(&mut v, self.c_x);
            out.x[(row, j)] = v;
        }
        let mut v = y_val;
        out.clipped |= clip(&mut v, self.c_y);
        out.y[row] = v;
        Ok(out)
    }

    /// Writes the dataset using the `y,x1,...,xp` schema.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["y".to_string()];
        header.extend((1..=self.p()).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = Vec::with_capacity(self.p() + 1);
            rec.push(self.y[i].to_string());
            rec.extend((0..self.p()).map(|j| self.x[(i, j)].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_bound(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be a positive finite bound, got {v}")))
    }
}

fn clip(v: &mut f64, bound: f64) -> bool {
    if *v > bound {
        *v = bound;
        true
    } else if *v < -bound {
        *v = -bound;
        true
    } else {
        false
    }
}

/// Reads a `y,x1,...,xp` CSV file and clips it to the declared bounds.
///
/// Row and column numbers in errors are 1-based and count data rows only.
pub fn load_dataset<P: AsRef<Path>>(path: P, c_x: f64, c_y: f64) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::Parse {
            row: 0,
            column: header.len(),
            message: "expected header `y,x1,...,xp` with at least one covariate".into(),
        });
    }
    if &header[0] != "y" {
        return Err(Error::Parse {
            row: 0,
            column: 1,
            message: format!("first column must be `y`, found `{}`", &header[0]),
        });
    }
    for (j, name) in header.iter().enumerate().skip(1) {
        if name != format!("x{j}") {
            return Err(Error::Parse {
                row: 0,
                column: j + 1,
                message: format!("expected column `x{j}`, found `{name}`"),
            });
        }
    }
    let p = header.len() - 1;
    let mut ys = Vec::new();
    let mut xs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if rec.len() != p + 1 {
            return Err(Error::Parse {
                row,
                column: rec.len().min(p + 1),
                message: format!("expected {} fields, found {}", p + 1, rec.len()),
            });
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                column: j + 1,
                message: format!("cannot parse `{field}` as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite value at row {row}, column {}",
                    j + 1
                )));
            }
            if j == 0 {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    let n = ys.len();
    let x = DMatrix::from_row_slice(n, p, &xs);
    Dataset::new(x, DVector::from_vec(ys), c_x, c_y)
}

/// A seeded partition of `0..n` into two disjoint halves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitPlan {
    pub split_seed: u64,
    /// Sorted 0-based indices of the first half.
    pub i1: Vec<usize>,
    /// Sorted 0-based indices of the second half.
    pub i2: Vec<usize>,
}

/// Uniformly random split with `|I1| = n1`, fully determined by `split_seed`.
pub fn make_split(n: usize, n1: usize, split_seed: u64) -> Result<SplitPlan> {
    if n1 < 1 || n1 >= n {
        return Err(invalid(format!("split size n1 = {n1} must satisfy 1 <= n1 < n = {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(split_seed, "split", 0));
    idx.shuffle(&mut rng);
    let mut i1 = idx[..n1].to_vec();
    let mut i2 = idx[n1..].to_vec();
    i1.sort_unstable();
    i2.sort_unstable();
    Ok(SplitPlan { split_seed, i1, i2 })
}
