//! Dense least squares through the normal equations.

use crate::error::{Error, Result};

/// Row-major square matrix.
#[derive(Clone, Debug)]
struct Square {
    n: usize,
    a: Vec<f64>,
}

impl Square {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.at(i, j) * x[j]).sum())
            .collect()
    }
}

/// Lower-triangular Cholesky factor of an SPD matrix.
fn cholesky(m: &Square) -> Result<Vec<f64>> {
    let n = m.n;
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = m.at(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 1e-14 * m.at(i, i).abs() || !s.is_finite() {
                    return Err(Error::DegenerateDesign(format!(
                        "normal matrix not positive definite at pivot {i}"
                    )));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    x
}

/// Solves `(XᵀX + jitter·I) β = Xᵀy`. The jitter keeps rank-deficient
/// designs (collinear one-hot blocks, never-active columns) solvable; two
/// rounds of iterative refinement recover the precision lost to the
/// resulting conditioning.
pub fn least_squares(rows: &[Vec<f64>], y: &[f64], jitter: f64) -> Result<Vec<f64>> {
    let Some(first) = rows.first() else {
        return Err(Error::DegenerateDesign("no rows".into()));
    };
    let n = first.len();
    if rows.len() != y.len() || rows.iter().any(|r| r.len() != n) {
        return Err(Error::DegenerateDesign("ragged design matrix".into()));
    }
    let mut gram = Square {
        n,
        a: vec![0.0; n * n],
    };
    let mut rhs = vec![0.0; n];
    for (row, &target) in rows.iter().zip(y) {
        for i in 0..n {
            if row[i] == 0.0 {
                continue;
            }
            rhs[i] += row[i] * target;
            for j in 0..n {
                gram.a[i * n + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..n {
        gram.a[i * n + i] += jitter;
    }
    let l = cholesky(&gram)?;
    let mut beta = cholesky_solve(&l, n, &rhs);
    for _ in 0..2 {
        let ab = gram.mul_vec(&beta);
        let r: Vec<f64> = rhs.iter().zip(&ab).map(|(b, a)| b - a).collect();
        let delta = cholesky_solve(&l, n, &r);
        for (b, d) in beta.iter_mut().zip(delta) {
            *b += d;
        }
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::DegenerateDesign("non-finite coefficients".into()));
    }
    Ok(beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_full_rank_coefficients() {
        let rows = vec![
            vec![1.0, 2.0, 3.0, 4.0],
            vec![1.0, 7.0, 6.0, 7.0],
            vec![1.0, 1.0, 1.0, 1.0],
            vec![1.0, 3.0, 2.0, 4.0],
            vec![1.0, 5.0, 0.0, 2.0],
        ];
        let beta_star = [-1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().zip(&beta_star).map(|(a, b)| a * b).sum())
            .collect();
        let beta = least_squares(&rows, &y, 1e-8).unwrap();
        for (b, s) in beta.iter().zip(beta_star) {
            assert!((b - s).abs() < 1e-6, "{b} vs {s}");
        }
    }

    #[test]
    fn simple_line_fit() {
        // y = 1 + 2x with symmetric noise: OLS slope and intercept are exact.
        let xs = [0.0, 1.0, 2.0, 3.0];
        let noise = [0.1, -0.1, -0.1, 0.1];
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![1.0, x]).collect();
        let y: Vec<f64> = xs
            .iter()
            .zip(noise)
            .map(|(x, e)| 1.0 + 2.0 * x + e)
            .collect();
        let beta = least_squares(&rows, &y, 0.0).unwrap();
        assert!((beta[0] - 1.0).abs() < 1e-12);
        assert!((beta[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_needs_jitter() {
        let rows = vec![vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]];
        let y = [0.4, 0.6];
        assert!(least_squares(&rows, &y, 0.0).is_err());
        let beta = least_squares(&rows, &y, 1e-8).unwrap();
        for (row, t) in rows.iter().zip(y) {
            let pred: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            assert!((pred - t).abs() < 1e-7);
        }
    }

    #[test]
    fn empty_design_is_degenerate() {
        assert!(matches!(
            least_squares(&[], &[], 1e-8),
            Err(Error::DegenerateDesign(_))
        ));
    }
}
