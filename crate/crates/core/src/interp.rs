//! Piecewise-cubic interpolation used for tabulated signals and trajectory lookups.

use crate::error::{Error, Result};

/// Natural cubic spline through `(knots[i], values[i])`.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl CubicSpline {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(Error::Shape {
                what: "spline values",
                expected: knots.len(),
                got: values.len(),
            });
        }
        if knots.len() < 2 {
            return Err(Error::Parameter("a spline needs at least two knots".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parameter(
                "spline knots must be strictly increasing".into(),
            ));
        }
        let n = knots.len();
        let mut second = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior equations, natural end conditions.
            let mut diag = vec![0.0; n];
            let mut rhs = vec![0.0; n];
            let mut upper = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = knots[i] - knots[i - 1];
                let h1 = knots[i + 1] - knots[i];
                let lower = h0 / 6.0;
                diag[i] = (h0 + h1) / 3.0;
                upper[i] = h1 / 6.0;
                rhs[i] = (values[i + 1] - values[i]) / h1 - (values[i] - values[i - 1]) / h0;
                if i > 1 {
                    let f = lower / diag[i - 1];
                    diag[i] -= f * upper[i - 1];
                    rhs[i] -= f * rhs[i - 1];
                }
            }
            for i in (1..n - 1).rev() {
                let next = if i + 1 < n - 1 { second[i + 1] } else { 0.0 };
                second[i] = (rhs[i] - upper[i] * next) / diag[i];
            }
        }
        Ok(Self {
            knots,
            values,
            second,
        })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    fn segment(&self, t: f64) -> Result<usize> {
        let (lo, hi) = self.domain();
        if !(t >= lo && t <= hi) {
            return Err(Error::Domain(format!(
                "t = {t} outside tabulated range [{lo}, {hi}]"
            )));
        }
        let idx = self.knots.partition_point(|&k| k <= t);
        Ok(idx.clamp(1, self.knots.len() - 1) - 1)
    }

    /// Value and first derivative at `t`.
    pub fn eval(&self, t: f64) -> Result<(f64, f64)> {
        let i = self.segment(t)?;
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.second[i], self.second[i + 1]);
        let h = x1 - x0;
        let a = (x1 - t) / h;
        let b = (t - x0) / h;
        let value = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let slope = (y1 - y0) / h - (3.0 * a * a - 1.0) * h * m0 / 6.0
            + (3.0 * b * b - 1.0) * h * m1 / 6.0;
        Ok((value, slope))
    }
}

/// Cubic Hermite interpolant on `[t0, t1]` from end values and end slopes.
pub fn hermite(t0: f64, t1: f64, y0: f64, y1: f64, d0: f64, d1: f64, t: f64) -> f64 {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
}
