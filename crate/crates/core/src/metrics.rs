//! Reconstruction quality measures.

use ndarray::Zip;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::stft::{MagnitudeSpectrogram, Spectrogram};

/// Spectral convergence `||A - |X|||_F / ||A||_F`.
pub fn spectral_convergence<T: Real>(target: &MagnitudeSpectrogram<T>, estimate: &Spectrogram<T>) -> Result<T> {
    estimate.check_dims(target.dims())?;
    let norm = target.frobenius_norm();
    if norm.is_zero() {
        return Err(Error::UndefinedMetric("spectral convergence of an all-zero target".into()));
    }
    let err = Zip::from(target.data())
        .and(estimate.data())
        .fold(T::zero(), |acc, &a, &x| {
            let d = a - x.norm();
            acc + d * d
        })
        .sqrt();
    Ok(err / norm)
}

/// `-20 log10(SC)`.
pub fn magnitude_snr_db<T: Real>(target: &MagnitudeSpectrogram<T>, estimate: &Spectrogram<T>) -> Result<T> {
    let sc = spectral_convergence(target, estimate)?;
    Ok(-T::from_f64_lossy(20.0) * sc.log10())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub spectral_convergence: f64,
    pub magnitude_snr_db: f64,
    pub signal_length: usize,
    pub algorithm_label: String,
    /// Score reported by an external scorer, when one was configured.
    pub external_score: Option<f64>,
}

impl MetricReport {
    pub fn new<T: Real>(
        target: &MagnitudeSpectrogram<T>,
        estimate: &Spectrogram<T>,
        signal_length: usize,
        algorithm_label: impl Into<String>,
    ) -> Result<Self> {
        let sc = spectral_convergence(target, estimate)?.to_f64_lossy();
        Ok(Self {
            spectral_convergence: sc,
            magnitude_snr_db: -20.0 * sc.log10(),
            signal_length,
            algorithm_label: algorithm_label.into(),
            external_score: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use num_complex::Complex;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn exact_and_zero_estimates() {
        let a = MagnitudeSpectrogram::new(array![[1.0, 2.0], [0.5, 3.0]]).unwrap();
        let exact = Spectrogram::new(array![[c(0.0, 1.0), c(-2.0, 0.0)], [c(0.3, 0.4), c(0.0, -3.0)]]).unwrap();
        assert!(spectral_convergence(&a, &exact).unwrap() < 1e-15);
        let zero = Spectrogram::zeros(2, 2);
        assert!((spectral_convergence(&a, &zero).unwrap() - 1.0).abs() < 1e-15);
        assert!(magnitude_snr_db(&a, &zero).unwrap().abs() < 1e-12);
    }

    #[test]
    fn hand_computed_quotient() {
        let a = MagnitudeSpectrogram::new(array![[1.0, 2.0], [3.0, 0.0], [0.5, 4.0]]).unwrap();
        let x = Spectrogram::new(array![
            [c(1.0, 1.0), c(0.0, 1.0)],
            [c(3.0, 0.0), c(0.6, 0.8)],
            [c(0.0, 0.0), c(-2.0, 0.0)]
        ])
        .unwrap();
        // |X| = [[sqrt2, 1], [3, 1], [0, 2]]
        let num = (1.0 - 2f64.sqrt()).powi(2) + 1.0 + 0.0 + 1.0 + 0.25 + 4.0;
        let den = 1.0 + 4.0 + 9.0 + 0.0 + 0.25 + 16.0;
        let want = (num / den).sqrt();
        let got = spectral_convergence(&a, &x).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((magnitude_snr_db(&a, &x).unwrap() + 20.0 * want.log10()).abs() < 1e-12);
    }

    #[test]
    fn snr_of_tenth() {
        let a = MagnitudeSpectrogram::new(array![[10.0]]).unwrap();
        let x = Spectrogram::new(array![[c(9.0, 0.0)]]).unwrap();
        assert!((magnitude_snr_db(&a, &x).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn undefined_for_zero_target() {
        let a = MagnitudeSpectrogram::new(array![[0.0, 0.0]]).unwrap();
        let x = Spectrogram::zeros(1, 2);
        assert!(matches!(spectral_convergence(&a, &x), Err(Error::UndefinedMetric(_))));
        let bad = Spectrogram::zeros(2, 2);
        assert!(spectral_convergence(&a, &bad).is_err());
    }

    #[test]
    fn report_fields() {
        let a = MagnitudeSpectrogram::new(array![[10.0]]).unwrap();
        let x = Spectrogram::new(array![[c(9.0, 0.0)]]).unwrap();
        let r = MetricReport::new(&a, &x, 100, "gla").unwrap();
        assert!((r.spectral_convergence - 0.1).abs() < 1e-12);
        assert!((r.magnitude_snr_db - 20.0).abs() < 1e-9);
        assert_eq!(r.external_score, None);
    }
}
