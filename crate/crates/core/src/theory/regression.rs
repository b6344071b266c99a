//! Least squares under mixing: closed form, a mask-sampled SGD solver, and
//! the line-fitting demo.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::linalg::solve;
use crate::error::{Error, Result};
use crate::math::{LayerShape, ParamLayout, ParamVector};
use crate::mixreg::{
    phi_backward_in_place, phi_mix_into, Anchor, MaskDistribution, MaskStream, MixPolicy,
    Regularizer,
};

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    /// Row-major `n x d` design matrix.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub d: usize,
    /// Generating parameters, when synthetic.
    pub w_true: Option<Vec<f64>>,
    pub noise: f64,
}

impl RegressionProblem {
    pub fn new(x: Vec<f64>, y: Vec<f64>, d: usize) -> Result<Self> {
        let n = y.len();
        if d == 0 || x.len() != n * d {
            return Err(Error::Dimension {
                expected: n * d,
                got: x.len(),
            });
        }
        if n < d {
            return Err(Error::config(format!(
                "{n} observations for {d} parameters"
            )));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::numeric("regression data"));
        }
        Ok(Self {
            x,
            y,
            d,
            w_true: None,
            noise: 0.0,
        })
    }

    /// `y = w1 x + w2 + eps` with `x ~ U[-1, 1]` and `eps ~ N(0, noise^2)`.
    /// Returns the problem and an anchor drawn like the true parameters.
    pub fn synthetic_line(seed: u64, n: usize, noise: f64) -> Result<(Self, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_true: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
        let u: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
        let mut x = Vec::with_capacity(2 * n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let xi: f64 = rng.random_range(-1.0..=1.0);
            let eps: f64 = rng.sample::<f64, _>(StandardNormal) * noise;
            x.extend([xi, 1.0]);
            y.push(w_true[0] * xi + w_true[1] + eps);
        }
        let mut prob = Self::new(x, y, 2)?;
        prob.w_true = Some(w_true);
        prob.noise = noise;
        Ok((prob, u))
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// `X^T X / n` and `X^T y / n`.
    pub fn normal_equations(&self) -> (Vec<f64>, Vec<f64>) {
        let (n, d) = (self.n(), self.d);
        let mut g = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        for r in 0..n {
            let row = &self.x[r * d..(r + 1) * d];
            for i in 0..d {
                b[i] += row[i] * self.y[r];
                for j in 0..d {
                    g[i * d + j] += row[i] * row[j];
                }
            }
        }
        let inv = 1.0 / n as f64;
        g.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= inv);
        (g, b)
    }

    /// Mean squared error over two: `(1 / 2n) ||X w - y||^2`.
    pub fn loss(&self, w: &[f64]) -> Result<f64> {
        if w.len() != self.d {
            return Err(Error::Dimension {
                expected: self.d,
                got: w.len(),
            });
        }
        let d = self.d;
        let sse: f64 = (0..self.n())
            .map(|r| {
                let pred: f64 = self.x[r * d..(r + 1) * d]
                    .iter()
                    .zip(w)
                    .map(|(a, b)| a * b)
                    .sum();
                (pred - self.y[r]).powi(2)
            })
            .sum();
        Ok(0.5 * sse / self.n() as f64)
    }
}

fn check_p(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(format!(
            "drop probability {p} outside [0, 1)"
        )))
    }
}

/// Exact minimizer of the expected squared error under per-parameter
/// mixout toward `u`:
/// `(X^T X / n + rho diag(c)) w = X^T y / n + rho diag(c) u`,
/// with `rho = p / (1 - p)` and `c_i` the mean of column `i` squared.
pub fn ls_mixout_solve(prob: &RegressionProblem, u: &[f64], p: f64) -> Result<Vec<f64>> {
    check_p(p)?;
    let d = prob.d;
    if u.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: u.len(),
        });
    }
    let (mut g, mut b) = prob.normal_equations();
    let rho = p / (1.0 - p);
    for i in 0..d {
        let c = g[i * d + i];
        g[i * d + i] += rho * c;
        b[i] += rho * c * u[i];
    }
    solve(&g, &b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdSettings {
    pub lr: f64,
    pub steps: u64,
    /// Iterates before this step are excluded from the average.
    pub burn_in: u64,
}

impl Default for SgdSettings {
    fn default() -> Self {
        Self {
            lr: 0.01,
            steps: 1_000_000,
            burn_in: 50_000,
        }
    }
}

/// Minimizes the expected loss by full-batch SGD with one sampled mask per
/// step, returning the average of the post-burn-in iterates.
pub fn ls_sgd_solve(
    prob: &RegressionProblem,
    u: &[f64],
    p: f64,
    settings: &SgdSettings,
    seed: u64,
) -> Result<Vec<f64>> {
    check_p(p)?;
    if settings.burn_in >= settings.steps {
        return Err(Error::config("burn-in must be shorter than the run"));
    }
    let d = prob.d;
    let layout = Arc::new(ParamLayout::new(&[LayerShape::weights_only(d, 1)]));
    let anchor = ParamVector::from_values(layout.clone(), u.to_vec())?;
    let policy = MixPolicy::mixconnect(Anchor::Explicit(anchor), MaskDistribution::bernoulli(p)?)?;
    let reg = Regularizer::new(policy, layout)?;
    let (g, b) = prob.normal_equations();
    let stream = MaskStream::new(seed);
    let mu = reg.mean();
    let mut w = u.to_vec();
    let mut phi = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut avg = vec![0.0; d];
    for step in 0..settings.steps {
        let mask = reg.sample(&stream, step)?;
        phi_mix_into(&w, u, &mask, mu, &mut phi)?;
        for i in 0..d {
            grad[i] = (0..d).map(|j| g[i * d + j] * phi[j]).sum::<f64>() - b[i];
        }
        phi_backward_in_place(&mask, mu, &mut grad)?;
        for i in 0..d {
            w[i] -= settings.lr * grad[i];
        }
        if step >= settings.burn_in {
            let k = (step - settings.burn_in + 1) as f64;
            for i in 0..d {
                avg[i] += (w[i] - avg[i]) / k;
            }
        }
    }
    if avg.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("SGD iterate"));
    }
    Ok(avg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsRow {
    pub p: f64,
    pub w_hat: Vec<f64>,
    pub dev_from_u: f64,
    pub dev_from_true: f64,
    pub w_sgd: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsDemo {
    pub problem: RegressionProblem,
    pub u: Vec<f64>,
    pub rows: Vec<LsRow>,
}

pub const DEMO_POINTS: usize = 200;
pub const DEMO_NOISE: f64 = 0.1;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Fits the synthetic line at every `p` in `grid`.
pub fn ls_regression_demo(seed: u64, grid: &[f64], sgd: Option<&SgdSettings>) -> Result<LsDemo> {
    let (problem, u) = RegressionProblem::synthetic_line(seed, DEMO_POINTS, DEMO_NOISE)?;
    let w_true = problem.w_true.clone().expect("synthetic problem");
    let rows = grid
        .iter()
        .map(|&p| {
            let w_hat = ls_mixout_solve(&problem, &u, p)?;
            let w_sgd = match sgd {
                Some(s) => Some(ls_sgd_solve(&problem, &u, p, s, seed)?),
                None => None,
            };
            Ok(LsRow {
                p,
                dev_from_u: dist(&w_hat, &u),
                dev_from_true: dist(&w_hat, &w_true),
                w_hat,
                w_sgd,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LsDemo { problem, u, rows })
}

pub fn write_demo_csv<W: Write>(rows: &[LsRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "p,w_hat_1,w_hat_2,dev_from_u,dev_from_true")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.p, r.w_hat[0], r.w_hat[1], r.dev_from_u, r.dev_from_true
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let prob = RegressionProblem::new(vec![1.0, -1.0], vec![2.0, -2.0], 1).unwrap();
        assert_eq!(ls_mixout_solve(&prob, &[0.0], 0.5).unwrap(), vec![1.0]);
        assert_eq!(ls_mixout_solve(&prob, &[0.0], 0.0).unwrap(), vec![2.0]);
    }

    #[test]
    fn zero_drop_is_ordinary_least_squares() {
        let (prob, u) = RegressionProblem::synthetic_line(4, 50, 0.1).unwrap();
        let (g, b) = prob.normal_equations();
        let ols = solve(&g, &b).unwrap();
        assert_eq!(ls_mixout_solve(&prob, &u, 0.0).unwrap(), ols);
    }

    #[test]
    fn approaches_anchor_as_p_grows() {
        let (prob, u) = RegressionProblem::synthetic_line(1, 200, 0.1).unwrap();
        let near = ls_mixout_solve(&prob, &u, 0.999_999).unwrap();
        assert!(dist(&near, &u) < 1e-4);
        let mut last = f64::INFINITY;
        for k in 0..10 {
            let dev = dist(&ls_mixout_solve(&prob, &u, k as f64 / 10.0).unwrap(), &u);
            assert!(dev < last);
            last = dev;
        }
    }

    #[test]
    fn invalid_inputs() {
        let prob = RegressionProblem::new(vec![1.0, 2.0], vec![1.0, 2.0], 1).unwrap();
        assert!(matches!(
            ls_mixout_solve(&prob, &[0.0], 1.0),
            Err(Error::Config(_))
        ));
        let flat = RegressionProblem::new(vec![1.0, 1.0, 2.0, 2.0], vec![1.0, 2.0], 2).unwrap();
        assert!(matches!(
            ls_mixout_solve(&flat, &[0.0, 0.0], 0.0),
            Err(Error::Rank(_))
        ));
        assert!(RegressionProblem::new(vec![1.0, 2.0], vec![1.0], 2).is_err());
    }

    #[test]
    fn closed_form_is_stationary_for_expected_loss() {
        let (prob, u) = RegressionProblem::synthetic_line(2, 30, 0.1).unwrap();
        let p = 0.4;
        let w_hat = ls_mixout_solve(&prob, &u, p).unwrap();
        // E over the 4 mask outcomes of the loss at phi
        let expected = |w: &[f64]| -> f64 {
            let mu = 1.0 - p;
            let mut total = 0.0;
            for outcome in 0..4u32 {
                let mut phi = [0.0; 2];
                let mut prob_o = 1.0;
                for i in 0..2 {
                    let kept = outcome >> i & 1 == 1;
                    prob_o *= if kept { mu } else { p };
                    phi[i] = if kept {
                        u[i] + (w[i] - u[i]) / mu
                    } else {
                        u[i]
                    };
                }
                total += prob_o * prob.loss(&phi).unwrap();
            }
            total
        };
        let h = 1e-4;
        for i in 0..2 {
            let mut a = w_hat.clone();
            let mut b = w_hat.clone();
            a[i] += h;
            b[i] -= h;
            let slope = (expected(&a) - expected(&b)) / (2.0 * h);
            assert!(slope.abs() < 1e-9, "{slope}");
        }
    }

    #[test]
    fn csv_has_expected_header_and_rows() {
        let demo = ls_regression_demo(0, &[0.0, 0.5], None).unwrap();
        let mut buf = Vec::new();
        write_demo_csv(&demo.rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "p,w_hat_1,w_hat_2,dev_from_u,dev_from_true");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("0.5,"));
    }
}
