//! Central finite differences, the independent oracle for every hand-derived
//! gradient in the crate.

/// `(f(p + h·e_i) − f(p − h·e_i)) / 2h` for every coordinate `i`.
pub fn central_difference(params: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest per-component relative error between an analytic and a numeric
/// gradient.
///
/// Each component is scaled by `max(|a_i|, |n_i|, 1e-3·‖n‖∞, 1e-9)`, so
/// components that are tiny relative to the gradient as a whole are judged
/// against the gradient's scale rather than against their own round-off.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let floor = (1e-3 * scale).max(1e-9);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let g = central_difference(&[1.0, -2.0], 1e-3, |p| p[0] * p[0] + 3.0 * p[1]);
        assert!((g[0] - 2.0).abs() < 1e-9);
        assert!((g[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn relative_error_flags_mismatch() {
        assert!(max_relative_error(&[1.0, 2.0], &[1.0, 2.0]) == 0.0);
        assert!(max_relative_error(&[1.0, 2.2], &[1.0, 2.0]) > 0.05);
    }
}
