//! Least-squares line fits for decay curves.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

/// Ordinary least squares of `ys` on `xs`; `None` with fewer than two points or constant `xs`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let m = n as f64;
    let mx = xs[..n].iter().sum::<f64>() / m;
    let my = ys[..n].iter().sum::<f64>() / m;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (xs[i] - mx, ys[i] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LineFit { slope, intercept: my - slope * mx, r2, points: n })
}

/// Fits log(err) against t over the leading run of errors strictly above `floor`.
pub fn log_decay_fit(ts: &[f64], errs: &[f64], floor: f64) -> Option<LineFit> {
    let cut = errs.iter().position(|e| !(*e > floor)).unwrap_or(errs.len());
    let logs: Vec<f64> = errs[..cut].iter().map(|e| e.ln()).collect();
    linear_fit(&ts[..cut], &logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_line() {
        let f = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert_relative_eq!(f.slope, 2.0);
        assert_relative_eq!(f.intercept, 1.0);
        assert_relative_eq!(f.r2, 1.0);
    }

    #[test]
    fn decay_stops_at_floor() {
        let ts: Vec<f64> = (0..10).map(f64::from).collect();
        let errs: Vec<f64> = ts.iter().map(|t| if *t < 6.0 { 0.1f64.powf(*t) } else { 1e-7 }).collect();
        let f = log_decay_fit(&ts, &errs, 1e-6).unwrap();
        assert_eq!(f.points, 6);
        assert_relative_eq!(f.slope, 0.1f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(linear_fit(&[1.0], &[1.0]).is_none());
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 2.0]).is_none());
    }
}
