//! Cubic spline interpolation with not-a-knot end conditions.

use crate::error::{Error, Result};
use nalgebra::DVector;

/// Scalar cubic spline on a strictly increasing grid.
#[derive(Clone, Debug)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    // second derivatives at the knots
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n != y.len() || n < 2 {
            return Err(Error::InvalidInput("spline needs >= 2 matching points".into()));
        }
        for w in x.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidInput("spline grid must be increasing".into()));
            }
        }
        if n == 2 {
            return Ok(Self { x, y, m: vec![0.0, 0.0] });
        }
        let m = solve_second_derivatives(&x, &y);
        Ok(Self { x, y, m })
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    pub fn deriv(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        (self.y[i + 1] - self.y[i]) / h
            + ((3.0 * b * b - 1.0) * self.m[i + 1] - (3.0 * a * a - 1.0) * self.m[i]) * h / 6.0
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }
}

// Tridiagonal-with-corners solve for natural cubic second derivatives,
// using not-a-knot conditions at both ends (third derivative continuous
// across the first and last interior knots).
fn solve_second_derivatives(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 3 {
        // single quadratic through three points: linear second derivative
        let h0 = x[1] - x[0];
        let h1 = x[2] - x[1];
        let d0 = (y[1] - y[0]) / h0;
        let d1 = (y[2] - y[1]) / h1;
        let m1 = 2.0 * (d1 - d0) / (h0 + h1);
        return vec![m1, m1, m1];
    }
    // Not-a-knot makes the second derivative linear across the first and
    // last pairs of intervals, so the end values are extrapolated:
    //   m0      = m1 - h0 (m2 - m1) / h1,
    //   m_{n-1} = m_{n-2} + h_{n-2} (m_{n-2} - m_{n-3}) / h_{n-3}.
    // Substituting into the interior continuity rows leaves a strictly
    // tridiagonal system for m1 .. m_{n-2} solved by the Thomas algorithm.
    let k = n - 2; // number of interior unknowns
    let mut a = vec![0.0; k];
    let mut b = vec![0.0; k];
    let mut c = vec![0.0; k];
    let mut d = vec![0.0; k];
    for (j, i) in (1..n - 1).enumerate() {
        let h0 = x[i] - x[i - 1];
        let h1 = x[i + 1] - x[i];
        a[j] = h0;
        b[j] = 2.0 * (h0 + h1);
        c[j] = h1;
        d[j] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
    }
    {
        let h0 = x[1] - x[0];
        let h1 = x[2] - x[1];
        // m0 = ((h0 + h1) m1 - h0 m2) / h1 folded into the first row
        b[0] += a[0] * (h0 + h1) / h1;
        c[0] -= a[0] * h0 / h1;
        a[0] = 0.0;
        let hn0 = x[n - 2] - x[n - 3];
        let hn1 = x[n - 1] - x[n - 2];
        // m_{n-1} = ((hn0 + hn1) m_{n-2} - hn1 m_{n-3}) / hn0 folded into last
        b[k - 1] += c[k - 1] * (hn0 + hn1) / hn0;
        a[k - 1] -= c[k - 1] * hn1 / hn0;
        c[k - 1] = 0.0;
    }
    let mut cp = vec![0.0; k];
    let mut dp = vec![0.0; k];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..k {
        let denom = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / denom;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / denom;
    }
    let mut m = vec![0.0; n];
    m[k] = dp[k - 1];
    for i in (1..k).rev() {
        m[i] = dp[i - 1] - cp[i - 1] * m[i + 1];
    }
    {
        let h0 = x[1] - x[0];
        let h1 = x[2] - x[1];
        m[0] = m[1] - h0 * (m[2] - m[1]) / h1;
        let hn0 = x[n - 2] - x[n - 3];
        let hn1 = x[n - 1] - x[n - 2];
        m[n - 1] = m[n - 2] + hn1 * (m[n - 2] - m[n - 3]) / hn0;
    }
    m
}

/// Vector-valued curve interpolated componentwise by cubic splines.
#[derive(Clone, Debug)]
pub struct CurveSpline {
    comps: Vec<CubicSpline>,
}

impl CurveSpline {
    pub fn new(params: &[f64], points: &[DVector<f64>]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("empty point list".into()));
        }
        let n = points[0].len();
        let comps = (0..n)
            .map(|k| {
                CubicSpline::new(params.to_vec(), points.iter().map(|p| p[k]).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { comps })
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.comps.len(), self.comps.iter().map(|s| s.eval(t)))
    }

    pub fn deriv(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.comps.len(), self.comps.iter().map(|s| s.deriv(t)))
    }

    pub fn domain(&self) -> (f64, f64) {
        self.comps[0].domain()
    }
}
