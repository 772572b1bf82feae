//! Layer sensitivity coefficients from noise-injection measurements.
//!
//! Injecting noise of norm `n` into a layer raises the loss by approximately
//! `n^2 * a_l`, so `a_l` is the slope of the least-squares line through the
//! origin over the points `(n^2, delta_loss)`.

use serde::{Deserialize, Serialize};

use crate::error::{QpalError, Result};

/// One probe: the injected noise norm and the observed loss increase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMeasurement {
    pub noise_norm: f64,
    pub loss_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityFit {
    pub a: f64,
    /// Set when the raw slope came out negative and was clamped to zero.
    pub clamped: bool,
}

/// Least squares through the origin on `(n^2, delta_loss)`:
/// `a = sum(n^2 dL) / sum(n^4)`. Negative fits are clamped to zero with a
/// flag; fewer than two measurements is a degenerate fit.
pub fn fit_sensitivity(measurements: &[SensitivityMeasurement]) -> Result<SensitivityFit> {
    if measurements.len() < 2 {
        return Err(QpalError::DegenerateFit(format!(
            "need at least 2 measurements, got {}",
            measurements.len()
        )));
    }
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for m in measurements {
        if !(m.noise_norm > 0.0) {
            return Err(QpalError::DegenerateFit(format!(
                "noise norm must be positive, got {}",
                m.noise_norm
            )));
        }
        let x = m.noise_norm * m.noise_norm;
        num += x * m.loss_delta;
        den += x * x;
    }
    let raw = num / den;
    if raw < 0.0 {
        Ok(SensitivityFit { a: 0.0, clamped: true })
    } else {
        Ok(SensitivityFit { a: raw, clamped: false })
    }
}

/// The 16-point probe grid `n_i = sqrt(i)/16 * scale` for `i` in `1..=16`.
pub fn probe_grid(scale: f64) -> Vec<f64> {
    (1..=16).map(|i| (i as f64).sqrt() / 16.0 * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_quadratic_recovers_slope() {
        let ms: Vec<SensitivityMeasurement> = (1..=4)
            .map(|i| {
                let n = i as f64;
                SensitivityMeasurement { noise_norm: n, loss_delta: 3.0 * n * n }
            })
            .collect();
        let fit = fit_sensitivity(&ms).unwrap();
        assert!((fit.a - 3.0).abs() < 1e-12);
        assert!(!fit.clamped);
    }

    #[test]
    fn probe_grid_recovers_planted_coefficient() {
        let a = 0.0173;
        let ms: Vec<SensitivityMeasurement> = probe_grid(3.7)
            .into_iter()
            .map(|n| SensitivityMeasurement { noise_norm: n, loss_delta: a * n * n })
            .collect();
        let fit = fit_sensitivity(&ms).unwrap();
        assert!((fit.a - a).abs() / a < 1e-6, "fit {}", fit.a);
    }

    #[test]
    fn negative_slope_clamps() {
        let ms: Vec<SensitivityMeasurement> = (1..=3)
            .map(|i| {
                let n = i as f64;
                SensitivityMeasurement { noise_norm: n, loss_delta: -n * n }
            })
            .collect();
        let fit = fit_sensitivity(&ms).unwrap();
        assert_eq!(fit.a, 0.0);
        assert!(fit.clamped);
    }

    #[test]
    fn too_few_measurements() {
        let one = [SensitivityMeasurement { noise_norm: 1.0, loss_delta: 1.0 }];
        assert!(matches!(fit_sensitivity(&one), Err(QpalError::DegenerateFit(_))));
    }

    proptest! {
        #[test]
        fn scale_equivariant(k in 0.01f64..100.0, a in 0.0f64..10.0) {
            let ms: Vec<SensitivityMeasurement> = probe_grid(1.3)
                .into_iter()
                .map(|n| SensitivityMeasurement { noise_norm: n, loss_delta: a * n * n })
                .collect();
            let scaled: Vec<SensitivityMeasurement> = ms
                .iter()
                .map(|m| SensitivityMeasurement { noise_norm: m.noise_norm, loss_delta: k * m.loss_delta })
                .collect();
            let f0 = fit_sensitivity(&ms).unwrap().a;
            let f1 = fit_sensitivity(&scaled).unwrap().a;
            prop_assert!((f1 - k * f0).abs() <= 1e-9 * (1.0 + k * f0));
        }
    }
}
