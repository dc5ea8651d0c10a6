//! Dense row-stochastic matrices and their stationary distributions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums and on small negative round-off.
pub const ROW_TOLERANCE: f64 = 1e-12;

/// Relative pivot size below which a linear system is treated as singular.
const PIVOT_TOLERANCE: f64 = 1e-13;

/// A square row-stochastic matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    size: usize,
    data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn zeros(size: usize) -> Self {
        TransitionMatrix {
            size,
            data: vec![0.0; size * size],
        }
    }

    pub fn identity(size: usize) -> Self {
        let mut m = Self::zeros(size);
        for i in 0..size {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds a matrix from rows and checks that it is row-stochastic.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        let mut m = Self::zeros(size);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != size {
                return Err(Error::InvalidConfig(format!(
                    "row {i} has {} entries, expected {size}",
                    row.len()
                )));
            }
            m.data[i * size..(i + 1) * size].copy_from_slice(row);
        }
        m.check_stochastic()?;
        Ok(m)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.size + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.size.max(1)).take(self.size)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Largest absolute deviation of a row sum from one.
    pub fn max_row_sum_error(&self) -> f64 {
        self.rows()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Rejects negative entries and rows that do not sum to one.
    pub fn check_stochastic(&self) -> Result<()> {
        for (i, row) in self.rows().enumerate() {
            if let Some(&v) = row.iter().find(|v| !(**v >= 0.0)) {
                return Err(Error::NegativeProbability { row: i, value: v });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::InvalidConfig(format!("row {i} sums to {sum}")));
            }
        }
        Ok(())
    }

    /// `max_j |(p P)_j - p_j|`.
    pub fn balance_residual(&self, p: &[f64]) -> f64 {
        (0..self.size)
            .map(|j| {
                let flow: f64 = (0..self.size).map(|i| p[i] * self.get(i, j)).sum();
                (flow - p[j]).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Clamps round-off negatives to zero and rejects genuinely negative values.
pub(crate) fn clean_probability(value: f64, row: usize) -> Result<f64> {
    if value.is_nan() {
        return Err(Error::NegativeProbability { row, value });
    }
    if value < -ROW_TOLERANCE {
        return Err(Error::NegativeProbability { row, value });
    }
    Ok(value.max(0.0))
}

/// Stationary distribution of an irreducible chain.
///
/// Uses state-reduction elimination, which only adds and multiplies
/// nonnegative quantities and therefore keeps full relative accuracy on
/// states with tiny stationary mass. Chains with transient states fall back
/// to solving `(P^T - I) p = 0` with the last equation replaced by `sum p = 1`.
pub fn stationary_solve(matrix: &TransitionMatrix) -> Result<Vec<f64>> {
    if matrix.size() == 0 {
        return Err(Error::SingularChain("empty chain".into()));
    }
    let p = match state_reduction(matrix) {
        Some(p) => p,
        None => stationary_solve_direct(matrix)?,
    };
    Ok(p)
}

fn state_reduction(matrix: &TransitionMatrix) -> Option<Vec<f64>> {
    let n = matrix.size();
    let mut a = matrix.data.clone();
    for k in (1..n).rev() {
        let s: f64 = (0..k).map(|j| a[k * n + j]).sum();
        if !(s > 0.0) || !s.is_finite() {
            return None;
        }
        for i in 0..k {
            a[i * n + k] /= s;
        }
        for i in 0..k {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..k {
                a[i * n + j] += aik * a[k * n + j];
            }
        }
    }
    let mut x = vec![0.0; n];
    x[0] = 1.0;
    for k in 1..n {
        x[k] = (0..k).map(|i| x[i] * a[i * n + k]).sum();
    }
    let total: f64 = x.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    x.iter_mut().for_each(|v| *v /= total);
    Some(x)
}

/// Stationary distribution from the balance equations with one equation
/// replaced by the normalization constraint.
pub fn stationary_solve_direct(matrix: &TransitionMatrix) -> Result<Vec<f64>> {
    let n = matrix.size();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = matrix.get(j, i) - if i == j { 1.0 } else { 0.0 };
        }
    }
    let mut b = vec![0.0; n];
    for j in 0..n {
        a[(n - 1) * n + j] = 1.0;
    }
    b[n - 1] = 1.0;
    let p = solve_linear(a, b, n)?;
    normalize_stationary(p)
}

/// Clips round-off negatives and renormalizes a solved stationary vector.
pub(crate) fn normalize_stationary(mut p: Vec<f64>) -> Result<Vec<f64>> {
    for (i, v) in p.iter_mut().enumerate() {
        if *v < -ROW_TOLERANCE || v.is_nan() {
            return Err(Error::SingularChain(format!(
                "stationary mass {v:e} at state {i} is negative"
            )));
        }
        *v = v.max(0.0);
    }
    let total: f64 = p.iter().sum();
    if !(total > 0.0) {
        return Err(Error::SingularChain("stationary vector vanished".into()));
    }
    p.iter_mut().for_each(|v| *v /= total);
    Ok(p)
}

/// Gaussian elimination with partial pivoting on a row-major `n x n` system.
pub(crate) fn solve_linear(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Err(Error::SingularChain("zero system".into()));
    }
    for col in 0..n {
        let (pivot_row, pivot) =
            (col..n)
                .map(|r| (r, a[r * n + col].abs()))
                .fold(
                    (col, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if pivot <= PIVOT_TOLERANCE * scale {
            return Err(Error::SingularChain(format!(
                "rank deficiency at column {col} (pivot {pivot:e})"
            )));
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
            }
            b.swap(col, pivot_row);
        }
        let diag = a[col * n + col];
        for r in col + 1..n {
            let factor = a[r * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[r * n + j] -= factor * a[col * n + j];
            }
            b[r] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let tail: f64 = (r + 1..n).map(|j| a[r * n + j] * x[j]).sum();
        x[r] = (b[r] - tail) / a[r * n + r];
    }
    Ok(x)
}

/// Long-run state occupancy of the chain started from `initial`.
///
/// Equals the stationary distribution when that is unique. Otherwise the
/// chain is split into closed classes, each weighted by the probability of
/// being absorbed into it from `initial`.
pub fn long_run_distribution(matrix: &TransitionMatrix, initial: &[f64]) -> Result<Vec<f64>> {
    match stationary_solve(matrix) {
        Err(Error::SingularChain(_)) => class_decomposition(matrix, initial),
        other => other,
    }
}

fn class_decomposition(matrix: &TransitionMatrix, initial: &[f64]) -> Result<Vec<f64>> {
    let n = matrix.size();
    if initial.len() != n {
        return Err(Error::InvalidConfig(
            "initial distribution has the wrong size".into(),
        ));
    }
    let mut reach = vec![false; n * n];
    for i in 0..n {
        reach[i * n + i] = true;
        for j in 0..n {
            if matrix.get(i, j) > 0.0 {
                reach[i * n + j] = true;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i * n + k] {
                for j in 0..n {
                    if reach[k * n + j] {
                        reach[i * n + j] = true;
                    }
                }
            }
        }
    }
    let recurrent: Vec<bool> = (0..n)
        .map(|i| (0..n).all(|j| !reach[i * n + j] || reach[j * n + i]))
        .collect();
    let mut class_of = vec![usize::MAX; n];
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        if recurrent[i] && class_of[i] == usize::MAX {
            let members: Vec<usize> = (0..n).filter(|&j| reach[i * n + j]).collect();
            for &j in &members {
                class_of[j] = classes.len();
            }
            classes.push(members);
        }
    }
    let transient: Vec<usize> = (0..n).filter(|&i| !recurrent[i]).collect();

    let mut out = vec![0.0; n];
    for members in &classes {
        let mut weight: f64 = members.iter().map(|&i| initial[i]).sum();
        if !transient.is_empty() {
            let t = transient.len();
            let mut a = vec![0.0; t * t];
            let mut b = vec![0.0; t];
            for (r, &i) in transient.iter().enumerate() {
                // The escape mass replaces `1 - P(i, i)`, which cancels to zero
                // for nearly absorbing states. Each row is then scaled to a
                // unit diagonal so tiny escape rates do not look singular.
                let escape: f64 = (0..n).filter(|&j| j != i).map(|j| matrix.get(i, j)).sum();
                for (s, &j) in transient.iter().enumerate() {
                    a[r * t + s] = if r == s {
                        1.0
                    } else {
                        -matrix.get(i, j) / escape
                    };
                }
                b[r] = members.iter().map(|&j| matrix.get(i, j)).sum::<f64>() / escape;
            }
            let absorb = solve_linear(a, b, t)?;
            weight += transient
                .iter()
                .zip(&absorb)
                .map(|(&i, h)| initial[i] * h)
                .sum::<f64>();
        }
        if weight <= 0.0 {
            continue;
        }
        let mut sub = TransitionMatrix::zeros(members.len());
        for (r, &i) in members.iter().enumerate() {
            for (s, &j) in members.iter().enumerate() {
                sub.set(r, s, matrix.get(i, j));
            }
        }
        let local = if members.len() == 1 {
            vec![1.0]
        } else {
            stationary_solve(&sub)?
        };
        for (&i, p) in members.iter().zip(local) {
            out[i] += weight * p;
        }
    }
    normalize_stationary(out)
}

/// Stationary distribution by repeated multiplication, used as an oracle.
pub fn power_iteration(matrix: &TransitionMatrix, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = matrix.size();
    let mut p = vec![1.0 / n as f64; n];
    for it in 0..max_iter {
        let mut next = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                next[j] += p[i] * matrix.get(i, j);
            }
        }
        let diff = next
            .iter()
            .zip(&p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        p = next;
        if diff <= tol {
            return Ok(p);
        }
        if it + 1 == max_iter {
            return Err(Error::NoConvergence {
                iterations: max_iter,
                residual: diff,
            });
        }
    }
    Ok(p)
}
