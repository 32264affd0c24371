//! Scalar link functions used throughout the models.

/// Logistic function, evaluated without overflow for large `|z|`.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)`, so that `-ln σ(z) = softplus(-z)` and `-ln(1 - σ(z)) = softplus(z)`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Log-odds `ln p - ln(1 - p)`.
#[inline]
pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

/// Clamp used wherever a probability is fed to a logarithm.
pub const PROB_EPS: f64 = 1e-12;

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(2.0) - 0.880_797_077_977_882_3).abs() < 1e-15);
        assert_eq!(sigmoid(40.0), 1.0);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((sigmoid(-2.0) + sigmoid(2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softplus_matches_log_sigmoid() {
        for &z in &[-30.0, -2.5, 0.0, 1.0, 7.0, 30.0] {
            let direct = -(sigmoid(z).ln());
            assert!((softplus(-z) - direct).abs() < 1e-12, "z = {z}");
        }
        assert!(softplus(1000.0).is_finite());
        assert_eq!(softplus(-1000.0), 0.0);
    }

    #[test]
    fn logit_inverts_sigmoid() {
        for &p in &[1e-9, 0.01, 0.2, 0.5, 0.93] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-15);
        }
    }
}
