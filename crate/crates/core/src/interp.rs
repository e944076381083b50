//! One-dimensional interpolants used for centerline construction.

use crate::error::{Error, Result};

fn check_knots(xs: &[f64], ys: &[f64], min: usize) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::shape(format!("{} knots but {} values", xs.len(), ys.len())));
    }
    if xs.len() < min {
        return Err(Error::invalid(format!("need at least {min} knots, got {}", xs.len())));
    }
    if xs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("knots must be strictly increasing"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::invalid("knots and values must be finite"));
    }
    Ok(())
}

/// Index `i` of the interval `[xs[i], xs[i + 1]]` containing `x` (clamped).
fn interval(xs: &[f64], x: f64) -> usize {
    match xs.partition_point(|&k| k <= x) {
        0 => 0,
        n if n >= xs.len() => xs.len() - 2,
        n => n - 1,
    }
}

/// Piecewise-linear interpolation; clamps to the end values outside the knots.
pub fn linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert!(xs.len() == ys.len() && xs.len() >= 2);
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let i = interval(xs, x);
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + t * (ys[i + 1] - ys[i])
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch–Carlson slopes).
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        check_knots(&xs, &ys, 2)?;
        let n = xs.len();
        let secants: Vec<f64> = (0..n - 1)
            .map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]))
            .collect();

        let mut slopes = vec![0.0; n];
        slopes[0] = secants[0];
        slopes[n - 1] = secants[n - 2];
        for i in 1..n - 1 {
            let (a, b) = (secants[i - 1], secants[i]);
            slopes[i] = if a * b <= 0.0 { 0.0 } else { 0.5 * (a + b) };
        }
        for i in 0..n - 1 {
            let d = secants[i];
            if d == 0.0 {
                slopes[i] = 0.0;
                slopes[i + 1] = 0.0;
                continue;
            }
            let alpha = slopes[i] / d;
            let beta = slopes[i + 1] / d;
            let r = alpha * alpha + beta * beta;
            if r > 9.0 {
                let tau = 3.0 / r.sqrt();
                slopes[i] = tau * alpha * d;
                slopes[i + 1] = tau * beta * d;
            }
        }
        Ok(Self { xs, ys, slopes })
    }

    pub fn knots(&self) -> &[f64] {
        &self.xs
    }

    /// Evaluates the interpolant; outside the knot range the end cubic is extended.
    pub fn eval(&self, x: f64) -> f64 {
        let i = interval(&self.xs, x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[i] + h10 * h * self.slopes[i] + h01 * self.ys[i + 1] + h11 * h * self.slopes[i + 1]
    }
}

/// Natural cubic spline minimizing `sum (y_i - g(x_i))^2 + lambda * int g''^2`.
///
/// Reinsch's algorithm: solve `(R + lambda Q^T Q) gamma = Q^T y` for the
/// interior second derivatives, then `g = y - lambda Q gamma`. Linear data
/// has `Q^T y = 0` and is reproduced exactly for every `lambda`.
#[derive(Debug, Clone)]
pub struct SmoothingSpline {
    xs: Vec<f64>,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl SmoothingSpline {
    pub fn fit(xs: &[f64], ys: &[f64], lambda: f64) -> Result<Self> {
        check_knots(xs, ys, 2)?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("smoothing penalty must be >= 0, got {lambda}")));
        }
        let n = xs.len();
        if n < 3 {
            return Ok(Self {
                xs: xs.to_vec(),
                values: ys.to_vec(),
                second: vec![0.0; n],
            });
        }
        let m = n - 2;
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();

        // Column j of Q (interior knot j + 1) has entries at rows j, j+1, j+2.
        let q = |j: usize| -> [f64; 3] {
            let (a, b) = (1.0 / h[j], 1.0 / h[j + 1]);
            [a, -a - b, b]
        };

        // Symmetric pentadiagonal system stored as three diagonals.
        let mut d0 = vec![0.0; m];
        let mut d1 = vec![0.0; m.saturating_sub(1)];
        let mut d2 = vec![0.0; m.saturating_sub(2)];
        let mut rhs = vec![0.0; m];
        for j in 0..m {
            let qj = q(j);
            d0[j] = (h[j] + h[j + 1]) / 3.0 + lambda * qj.iter().map(|v| v * v).sum::<f64>();
            rhs[j] = qj[0] * ys[j] + qj[1] * ys[j + 1] + qj[2] * ys[j + 2];
            if j + 1 < m {
                let qk = q(j + 1);
                d1[j] = h[j + 1] / 6.0 + lambda * (qj[1] * qk[0] + qj[2] * qk[1]);
            }
            if j + 2 < m {
                let qk = q(j + 2);
                d2[j] = lambda * qj[2] * qk[0];
            }
        }
        let gamma = solve_pentadiagonal(d0, d1, d2, rhs)?;

        let mut values = ys.to_vec();
        for (j, g) in gamma.iter().enumerate() {
            let qj = q(j);
            for r in 0..3 {
                values[j + r] -= lambda * qj[r] * g;
            }
        }
        let mut second = vec![0.0; n];
        second[1..n - 1].copy_from_slice(&gamma);
        Ok(Self {
            xs: xs.to_vec(),
            values,
            second,
        })
    }

    /// Fitted values at the knots.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = interval(&self.xs, x);
        let (xl, xr) = (self.xs[i], self.xs[i + 1]);
        let h = xr - xl;
        let (a, b) = (x - xl, xr - x);
        (a * self.values[i + 1] + b * self.values[i]) / h
            - a * b / 6.0 * ((1.0 + a / h) * self.second[i + 1] + (1.0 + b / h) * self.second[i])
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let i = interval(&self.xs, x);
        let (xl, xr) = (self.xs[i], self.xs[i + 1]);
        let h = xr - xl;
        let (a, b) = (x - xl, xr - x);
        (self.values[i + 1] - self.values[i]) / h
            + ((3.0 * a * a / h - h) * self.second[i + 1] - (3.0 * b * b / h - h) * self.second[i]) / 6.0
    }
}

/// Solves a symmetric positive-definite pentadiagonal system by banded LDL^T.
fn solve_pentadiagonal(
    diag: Vec<f64>,
    off1: Vec<f64>,
    off2: Vec<f64>,
    mut rhs: Vec<f64>,
) -> Result<Vec<f64>> {
    let m = diag.len();
    // l1[i] = L[i+1][i], l2[i] = L[i+2][i]
    let mut d = vec![0.0; m];
    let mut l1 = vec![0.0; m];
    let mut l2 = vec![0.0; m];
    for i in 0..m {
        let mut di = diag[i];
        if i >= 1 {
            di -= l1[i - 1] * l1[i - 1] * d[i - 1];
        }
        if i >= 2 {
            di -= l2[i - 2] * l2[i - 2] * d[i - 2];
        }
        if !(di > 0.0) {
            return Err(Error::degenerate("smoothing system is not positive definite"));
        }
        d[i] = di;
        if i + 1 < m {
            let mut v = off1[i];
            if i >= 1 {
                v -= l2[i - 1] * l1[i - 1] * d[i - 1];
            }
            l1[i] = v / di;
        }
        if i + 2 < m {
            l2[i] = off2[i] / di;
        }
    }
    for i in 0..m {
        if i >= 1 {
            rhs[i] -= l1[i - 1] * rhs[i - 1];
        }
        if i >= 2 {
            rhs[i] -= l2[i - 2] * rhs[i - 2];
        }
    }
    for i in 0..m {
        rhs[i] /= d[i];
    }
    for i in (0..m).rev() {
        if i + 1 < m {
            rhs[i] -= l1[i] * rhs[i + 1];
        }
        if i + 2 < m {
            rhs[i] -= l2[i] * rhs[i + 2];
        }
    }
    Ok(rhs)
}
