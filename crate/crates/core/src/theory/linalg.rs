//! Small dense linear algebra on row-major square matrices.

use crate::error::{Error, Result};

fn check_square(a: &[f64], d: usize) -> Result<()> {
    if a.len() != d * d {
        return Err(Error::Dimension {
            expected: d * d,
            got: a.len(),
        });
    }
    Ok(())
}

/// Largest `|a_ij - a_ji|`.
pub fn asymmetry(a: &[f64], d: usize) -> Result<f64> {
    check_square(a, d)?;
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in (i + 1)..d {
            worst = worst.max((a[i * d + j] - a[j * d + i]).abs());
        }
    }
    Ok(worst)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
///
/// Sweeps until the off-diagonal Frobenius norm falls below `tol` times the
/// Frobenius norm of the input.
pub fn symmetric_eigenvalues(a: &[f64], d: usize, tol: f64) -> Result<Vec<f64>> {
    check_square(a, d)?;
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("matrix passed to eigenvalue routine"));
    }
    let mut m = a.to_vec();
    let scale = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    s += m[i * d + j] * m[i * d + j];
                }
            }
        }
        s.sqrt()
    };
    const MAX_SWEEPS: usize = 100;
    for _ in 0..MAX_SWEEPS {
        if off(&m) <= tol * scale {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * d + p];
                let aqq = m[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = m[k * d + p];
                    let akq = m[k * d + q];
                    m[k * d + p] = c * akp - s * akq;
                    m[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = m[p * d + k];
                    let aqk = m[q * d + k];
                    m[p * d + k] = c * apk - s * aqk;
                    m[q * d + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..d).map(|i| m[i * d + i]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let d = b.len();
    check_square(a, d)?;
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let scale = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let tiny = scale * d as f64 * f64::EPSILON;
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&i, &j| m[i * d + col].abs().total_cmp(&m[j * d + col].abs()))
            .expect("non-empty range");
        if !(m[pivot * d + col].abs() > tiny) {
            return Err(Error::Rank(format!("pivot {col} vanishes")));
        }
        if pivot != col {
            for k in 0..d {
                m.swap(col * d + k, pivot * d + k);
            }
            x.swap(col, pivot);
        }
        let diag = m[col * d + col];
        for row in (col + 1)..d {
            let f = m[row * d + col] / diag;
            if f == 0.0 {
                continue;
            }
            for k in col..d {
                m[row * d + k] -= f * m[col * d + k];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..d).rev() {
        let mut acc = x[col];
        for k in (col + 1)..d {
            acc -= m[col * d + k] * x[k];
        }
        x[col] = acc / m[col * d + col];
    }
    Ok(x)
}

/// Neumaier-compensated sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}
