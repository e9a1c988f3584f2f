//! Iterative projection algorithms over an abstract pair of projections.
//!
//! Every algorithm is written against [`Projector`], so the same step code runs
//! offline (whole spectrogram, [`OfflineProjector`]) and online (fluid buffer
//! with a partial consistency projection, see [`crate::online`]).

use std::fmt;

use ndarray::Zip;

use crate::error::{Error, Result};
use crate::metrics::spectral_convergence;
use crate::scalar::Real;
use crate::stft::{
    check_nonzero_beta, dm_f_from_consistency_projection, dm_f_from_magnitude_projection, proj_magnitude,
    MagnitudeSpectrogram, Spectrogram, Stft,
};

/// The magnitude projection `p_A` and a consistency projection `p_C` (or a partial one).
pub trait Projector<T: Real> {
    fn magnitude(&mut self, x: &Spectrogram<T>) -> Spectrogram<T>;
    fn consistency(&mut self, x: &Spectrogram<T>) -> Spectrogram<T>;
}

/// Whole-spectrogram projections for a fixed target magnitude.
pub struct OfflineProjector<'a, T: Real> {
    stft: &'a Stft<T>,
    target: &'a MagnitudeSpectrogram<T>,
}

impl<'a, T: Real> OfflineProjector<'a, T> {
    pub fn new(stft: &'a Stft<T>, target: &'a MagnitudeSpectrogram<T>) -> Result<Self> {
        if target.bins() != stft.config().bins() {
            return Err(Error::dims((stft.config().bins(), target.frames()), target.dims()));
        }
        Ok(Self { stft, target })
    }
}

impl<T: Real> Projector<T> for OfflineProjector<'_, T> {
    fn magnitude(&mut self, x: &Spectrogram<T>) -> Spectrogram<T> {
        proj_magnitude(x, self.target).expect("iterate shape matches the target")
    }

    fn consistency(&mut self, x: &Spectrogram<T>) -> Spectrogram<T> {
        self.stft.proj_consistency(x).expect("iterate shape matches the transform")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProjectionCounts {
    pub magnitude: usize,
    pub consistency: usize,
}

impl ProjectionCounts {
    pub fn total(&self) -> usize {
        self.magnitude + self.consistency
    }
}

/// Wraps a projector and counts how often each projection is applied.
pub struct CountingProjector<P> {
    inner: P,
    counts: ProjectionCounts,
}

impl<P> CountingProjector<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            counts: ProjectionCounts::default(),
        }
    }

    pub fn counts(&self) -> ProjectionCounts {
        self.counts
    }

    pub fn into_inner(self) -> P {
        self.inner
    }
}

impl<T: Real, P: Projector<T>> Projector<T> for CountingProjector<P> {
    fn magnitude(&mut self, x: &Spectrogram<T>) -> Spectrogram<T> {
        self.counts.magnitude += 1;
        self.inner.magnitude(x)
    }

    fn consistency(&mut self, x: &Spectrogram<T>) -> Spectrogram<T> {
        self.counts.consistency += 1;
        self.inner.consistency(x)
    }
}

/// Algorithm variant with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Algorithm<T> {
    Gla,
    Fgla { alpha: T },
    Agla { alpha1: T, alpha2: T, gamma: T },
    Raar { beta: T },
    Dm { beta: T },
}

impl<T: Real> Algorithm<T> {
    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: T| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be finite, got {v}")))
            }
        };
        match *self {
            Algorithm::Gla => Ok(()),
            Algorithm::Fgla { alpha } => {
                finite("alpha", alpha)?;
                if alpha < T::zero() {
                    return Err(Error::InvalidParameter(format!("FGLA requires alpha >= 0, got {alpha}")));
                }
                Ok(())
            }
            Algorithm::Agla { alpha1, alpha2, gamma } => {
                for (name, v) in [("alpha1", alpha1), ("alpha2", alpha2), ("gamma", gamma)] {
                    finite(name, v)?;
                    if v <= T::zero() {
                        return Err(Error::InvalidParameter(format!("AGLA requires {name} > 0, got {v}")));
                    }
                }
                Ok(())
            }
            Algorithm::Raar { beta } => {
                finite("beta", beta)?;
                if beta <= T::zero() || beta > T::one() {
                    return Err(Error::InvalidParameter(format!("RAAR requires 0 < beta <= 1, got {beta}")));
                }
                Ok(())
            }
            Algorithm::Dm { beta } => check_nonzero_beta(beta),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Gla => "gla",
            Algorithm::Fgla { .. } => "fgla",
            Algorithm::Agla { .. } => "agla",
            Algorithm::Raar { .. } => "raar",
            Algorithm::Dm { .. } => "dm",
        }
    }

    /// Canonical `key=value;...` parameter text; empty for GLA.
    pub fn params_text(&self) -> String {
        match self {
            Algorithm::Gla => String::new(),
            Algorithm::Fgla { alpha } => format!("alpha={alpha}"),
            Algorithm::Agla { alpha1, alpha2, gamma } => {
                format!("alpha1={alpha1};alpha2={alpha2};gamma={gamma}")
            }
            Algorithm::Raar { beta } | Algorithm::Dm { beta } => format!("beta={beta}"),
        }
    }

    /// Tuned presets for speech at 16 kHz with 32 ms / 8 ms Hann frames.
    /// `with_lookahead` selects the values for `B > 0`.
    pub fn preset(name: &str, with_lookahead: bool) -> Option<Self> {
        let v = T::from_f64_lossy;
        Some(match (name, with_lookahead) {
            ("gla", _) => Algorithm::Gla,
            ("fgla", false) => Algorithm::Fgla { alpha: v(0.99) },
            ("fgla", true) => Algorithm::Fgla { alpha: v(0.8) },
            ("raar", false) => Algorithm::Raar { beta: v(0.99) },
            ("raar", true) => Algorithm::Raar { beta: v(0.7) },
            ("dm", false) => Algorithm::Dm { beta: v(1.5) },
            ("dm", true) => Algorithm::Dm { beta: v(0.5) },
            ("agla", _) => Algorithm::Agla {
                alpha1: v(0.95),
                alpha2: v(0.99),
                gamma: v(1.2),
            },
            _ => return None,
        })
    }

    fn uses_y(&self) -> bool {
        matches!(self, Algorithm::Fgla { .. } | Algorithm::Agla { .. })
    }

    fn uses_z(&self) -> bool {
        matches!(self, Algorithm::Agla { .. })
    }
}

impl<T: Real> fmt::Display for Algorithm<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let params = self.params_text();
        if params.is_empty() {
            f.write_str(self.name())
        } else {
            write!(f, "{}({})", self.name(), params)
        }
    }
}

/// A validated algorithm plus its iteration budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgorithmSpec<T> {
    algorithm: Algorithm<T>,
    iterations: usize,
}

impl<T: Real> AlgorithmSpec<T> {
    pub fn new(algorithm: Algorithm<T>, iterations: usize) -> Result<Self> {
        algorithm.validate()?;
        Ok(Self { algorithm, iterations })
    }

    pub fn algorithm(&self) -> &Algorithm<T> {
        &self.algorithm
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

/// Current iterate and the auxiliary sequences of the momentum variants.
#[derive(Debug, Clone, PartialEq)]
pub struct IterState<T> {
    pub x: Spectrogram<T>,
    pub y: Option<Spectrogram<T>>,
    pub z: Option<Spectrogram<T>>,
    pub iter: usize,
}

impl<T: Real> IterState<T> {
    /// `Y^0 = Z^0 = X^0` where the variant uses them.
    pub fn new(x0: Spectrogram<T>, algorithm: &Algorithm<T>) -> Self {
        let y = algorithm.uses_y().then(|| x0.clone());
        let z = algorithm.uses_z().then(|| x0.clone());
        Self { x: x0, y, z, iter: 0 }
    }

    /// One iteration of `algorithm`. Parameters are assumed validated.
    pub fn step<P: Projector<T>>(&mut self, algorithm: &Algorithm<T>, proj: &mut P) {
        match *algorithm {
            Algorithm::Gla => gla(self, proj),
            Algorithm::Fgla { alpha } => fgla(self, proj, alpha),
            Algorithm::Agla { alpha1, alpha2, gamma } => agla(self, proj, alpha1, alpha2, gamma),
            Algorithm::Raar { beta } => raar(self, proj, beta),
            Algorithm::Dm { beta } => dm(self, proj, beta),
        }
        self.iter += 1;
    }
}

/// `y1 + alpha * (y1 - y0)`.
fn extrapolate<T: Real>(y1: &Spectrogram<T>, y0: &Spectrogram<T>, alpha: T) -> Spectrogram<T> {
    Spectrogram::from_data(
        Zip::from(y1.data())
            .and(y0.data())
            .map_collect(|&a, &b| a + (a - b) * alpha),
    )
}

fn gla<T: Real, P: Projector<T>>(state: &mut IterState<T>, proj: &mut P) {
    let pa = proj.magnitude(&state.x);
    state.x = proj.consistency(&pa);
}

fn fgla<T: Real, P: Projector<T>>(state: &mut IterState<T>, proj: &mut P, alpha: T) {
    let pa = proj.magnitude(&state.x);
    let y1 = proj.consistency(&pa);
    let y0 = state.y.as_ref().expect("FGLA state carries Y");
    state.x = extrapolate(&y1, y0, alpha);
    state.y = Some(y1);
}

fn agla<T: Real, P: Projector<T>>(state: &mut IterState<T>, proj: &mut P, alpha1: T, alpha2: T, gamma: T) {
    let pa = proj.magnitude(&state.x);
    let pc = proj.consistency(&pa);
    let y0 = state.y.as_ref().expect("AGLA state carries Y");
    let z0 = state.z.as_ref().expect("AGLA state carries Z");
    let y1 = z0.lincomb(T::one() - gamma, &pc, gamma);
    state.z = Some(extrapolate(&y1, y0, alpha1));
    state.x = extrapolate(&y1, y0, alpha2);
    state.y = Some(y1);
}

fn raar<T: Real, P: Projector<T>>(state: &mut IterState<T>, proj: &mut P, beta: T) {
    let x = &state.x;
    let pa = proj.magnitude(x);
    let ra = reflect(&pa, x);
    let pc = proj.consistency(&ra);
    // beta/2 (X + r_C(r_A X)) + (1 - beta) p_A X, with r_C(r_A X) = 2 p_C(r_A X) - 2 p_A X + X
    let next = Zip::from(x.data())
        .and(pa.data())
        .and(pc.data())
        .map_collect(|&x, &pa, &pc| (x + (pc - pa)) * beta + pa * (T::one() - beta));
    state.x = Spectrogram::from_data(next);
}

/// `2 p - x`.
fn reflect<T: Real>(p: &Spectrogram<T>, x: &Spectrogram<T>) -> Spectrogram<T> {
    p.lincomb(T::from_f64_lossy(2.0), x, -T::one())
}

fn dm<T: Real, P: Projector<T>>(state: &mut IterState<T>, proj: &mut P, beta: T) {
    let x = &state.x;
    let pa = proj.magnitude(x);
    // f_A is the identity at beta = -1 and f_C at beta = 1; skip the projections they make redundant.
    let fa = if beta == -T::one() {
        x.clone()
    } else if beta == T::one() {
        reflect(&pa, x)
    } else {
        dm_f_from_magnitude_projection(&pa, x, beta)
    };
    let pc_fa = proj.consistency(&fa);
    let pa_fc = if beta == T::one() {
        pa
    } else {
        let pc_x = if beta == -T::one() { pc_fa.clone() } else { proj.consistency(x) };
        let fc = dm_f_from_consistency_projection(&pc_x, x, beta);
        proj.magnitude(&fc)
    };
    let next = Zip::from(x.data())
        .and(pc_fa.data())
        .and(pa_fc.data())
        .map_collect(|&x, &a, &b| x + (a - b) * beta);
    state.x = Spectrogram::from_data(next);
}

fn check_state<T: Real>(state: &IterState<T>, mag: &MagnitudeSpectrogram<T>) -> Result<()> {
    state.x.check_dims(mag.dims())?;
    for aux in [&state.y, &state.z].into_iter().flatten() {
        aux.check_dims(mag.dims())?;
    }
    Ok(())
}

fn offline_step<T: Real>(
    state: &mut IterState<T>,
    mag: &MagnitudeSpectrogram<T>,
    stft: &Stft<T>,
    algorithm: Algorithm<T>,
) -> Result<()> {
    algorithm.validate()?;
    check_state(state, mag)?;
    if (algorithm.uses_y() && state.y.is_none()) || (algorithm.uses_z() && state.z.is_none()) {
        return Err(Error::InvalidInput(format!(
            "{} state is missing its auxiliary sequences",
            algorithm.name()
        )));
    }
    let mut proj = OfflineProjector::new(stft, mag)?;
    state.step(&algorithm, &mut proj);
    Ok(())
}

/// `X <- p_C(p_A(X))`.
pub fn step_gla<T: Real>(state: &mut IterState<T>, mag: &MagnitudeSpectrogram<T>, stft: &Stft<T>) -> Result<()> {
    offline_step(state, mag, stft, Algorithm::Gla)
}

pub fn step_fgla<T: Real>(
    state: &mut IterState<T>,
    mag: &MagnitudeSpectrogram<T>,
    stft: &Stft<T>,
    alpha: T,
) -> Result<()> {
    offline_step(state, mag, stft, Algorithm::Fgla { alpha })
}

pub fn step_agla<T: Real>(
    state: &mut IterState<T>,
    mag: &MagnitudeSpectrogram<T>,
    stft: &Stft<T>,
    alpha1: T,
    alpha2: T,
    gamma: T,
) -> Result<()> {
    offline_step(state, mag, stft, Algorithm::Agla { alpha1, alpha2, gamma })
}

pub fn step_raar<T: Real>(
    state: &mut IterState<T>,
    mag: &MagnitudeSpectrogram<T>,
    stft: &Stft<T>,
    beta: T,
) -> Result<()> {
    offline_step(state, mag, stft, Algorithm::Raar { beta })
}

pub fn step_dm<T: Real>(state: &mut IterState<T>, mag: &MagnitudeSpectrogram<T>, stft: &Stft<T>, beta: T) -> Result<()> {
    offline_step(state, mag, stft, Algorithm::Dm { beta })
}

/// `|| p_A(X) - p_C(p_A(X)) ||_F`, the distance from the magnitude set to the consistent set.
pub fn inconsistency<T: Real>(x: &Spectrogram<T>, mag: &MagnitudeSpectrogram<T>, stft: &Stft<T>) -> Result<T> {
    let pa = proj_magnitude(x, mag)?;
    let pc = stft.proj_consistency(&pa)?;
    Ok(pa.sub(&pc).frobenius_norm())
}

#[derive(Debug, Clone)]
pub struct OfflineResult<T> {
    /// `p_A(X^I)`.
    pub spectrogram: Spectrogram<T>,
    pub signal: Vec<T>,
    /// Spectral convergence of `p_C(p_A(X^i))` after each iteration.
    pub trace: Vec<T>,
}

/// Runs `spec.iterations()` steps from `init` (its phase, the target magnitude)
/// or from zero phase when `init` is `None`.
pub fn run_offline<T: Real>(
    mag: &MagnitudeSpectrogram<T>,
    stft: &Stft<T>,
    spec: &AlgorithmSpec<T>,
    init: Option<&Spectrogram<T>>,
) -> Result<OfflineResult<T>> {
    let mut proj = OfflineProjector::new(stft, mag)?;
    let x0 = match init {
        Some(init) => proj_magnitude(init, mag)?,
        None => Spectrogram::zero_phase(mag),
    };
    let mut state = IterState::new(x0, spec.algorithm());
    let mut trace = Vec::with_capacity(spec.iterations());
    let norm = mag.frobenius_norm();
    for _ in 0..spec.iterations() {
        state.step(spec.algorithm(), &mut proj);
        if norm > T::zero() {
            let pa = proj.magnitude(&state.x);
            let realized = proj.consistency(&pa);
            trace.push(spectral_convergence(mag, &realized)?);
        }
    }
    let spectrogram = proj_magnitude(&state.x, mag)?;
    let signal = stft.istft(&spectrogram)?;
    Ok(OfflineResult {
        spectrogram,
        signal,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::{StftConfig, WindowKind};

    fn setup() -> (Stft<f64>, Vec<f64>) {
        let stft = Stft::new(StftConfig::new(32, 8, WindowKind::Hann, 8000).unwrap());
        let x: Vec<f64> = (0..200).map(|n| (0.3 * n as f64).sin() + 0.5 * (0.11 * n as f64).cos()).collect();
        (stft, x)
    }

    #[test]
    fn parameter_ranges() {
        assert!(AlgorithmSpec::new(Algorithm::Fgla { alpha: -0.1 }, 1).is_err());
        assert!(AlgorithmSpec::new(Algorithm::Fgla { alpha: 0.0 }, 1).is_ok());
        assert!(AlgorithmSpec::new(Algorithm::Raar { beta: 0.0 }, 1).is_err());
        assert!(AlgorithmSpec::new(Algorithm::Raar { beta: 1.0 }, 1).is_ok());
        assert!(AlgorithmSpec::new(Algorithm::Raar { beta: 1.01 }, 1).is_err());
        assert!(AlgorithmSpec::new(Algorithm::Dm { beta: 0.0 }, 1).is_err());
        assert!(AlgorithmSpec::new(Algorithm::Dm { beta: -0.5 }, 1).is_ok());
        assert!(AlgorithmSpec::new(Algorithm::Agla { alpha1: 0.0, alpha2: 1.0, gamma: 1.0 }, 1).is_err());
        assert!(AlgorithmSpec::new(Algorithm::Dm { beta: f64::NAN }, 1).is_err());
    }

    #[test]
    fn step_functions_reject_bad_parameters() {
        let (stft, x) = setup();
        let spec = stft.stft(&x).unwrap();
        let mag = spec.magnitude();
        let mut state = IterState::new(spec.clone(), &Algorithm::Gla);
        assert!(step_raar(&mut state, &mag, &stft, 1.5).is_err());
        assert!(step_dm(&mut state, &mag, &stft, 0.0).is_err());
        // GLA state has no Y
        assert!(step_fgla(&mut state, &mag, &stft, 0.5).is_err());
        assert_eq!(state.iter, 0);
    }

    #[test]
    fn fixed_point_is_preserved_by_every_variant() {
        let (stft, x) = setup();
        let x0 = stft.stft(&x).unwrap();
        let mag = x0.magnitude();
        for alg in [
            Algorithm::Gla,
            Algorithm::Fgla { alpha: 0.99 },
            Algorithm::Agla { alpha1: 0.95, alpha2: 0.99, gamma: 1.2 },
            Algorithm::Raar { beta: 0.7 },
            Algorithm::Dm { beta: 1.5 },
        ] {
            let mut proj = OfflineProjector::new(&stft, &mag).unwrap();
            let mut state = IterState::new(x0.clone(), &alg);
            for _ in 0..5 {
                state.step(&alg, &mut proj);
            }
            let rel = state.x.max_abs_diff(&x0) / x0.frobenius_norm();
            assert!(rel < 1e-8, "{alg}: {rel}");
        }
    }

    #[test]
    fn zero_magnitude_gives_zero() {
        let stft = Stft::new(StftConfig::<f64>::new(16, 4, WindowKind::Hann, 8000).unwrap());
        let mag = MagnitudeSpectrogram::new(ndarray::Array2::zeros((9, 6))).unwrap();
        let mut state = IterState::new(Spectrogram::zero_phase(&mag), &Algorithm::Gla);
        step_gla(&mut state, &mag, &stft).unwrap();
        assert_eq!(state.x.frobenius_norm(), 0.0);
        assert_eq!(state.iter, 1);
    }

    #[test]
    fn zero_iterations_return_init() {
        let (stft, x) = setup();
        let mag = stft.stft(&x).unwrap().magnitude();
        let spec = AlgorithmSpec::new(Algorithm::Gla, 0).unwrap();
        let out = run_offline(&mag, &stft, &spec, None).unwrap();
        assert_eq!(out.spectrogram, Spectrogram::zero_phase(&mag));
        assert!(out.trace.is_empty());
        assert_eq!(out.signal, stft.istft(&Spectrogram::zero_phase(&mag)).unwrap());
    }

    #[test]
    fn dm_projection_counts() {
        let (stft, x) = setup();
        let mag = stft.stft(&x).unwrap().magnitude();
        let count = |alg: Algorithm<f64>| {
            let mut proj = CountingProjector::new(OfflineProjector::new(&stft, &mag).unwrap());
            let mut state = IterState::new(Spectrogram::zero_phase(&mag), &alg);
            state.step(&alg, &mut proj);
            proj.counts()
        };
        let raar = count(Algorithm::Raar { beta: 0.7 });
        assert_eq!((raar.magnitude, raar.consistency), (1, 1));
        let dm = count(Algorithm::Dm { beta: 1.5 });
        assert_eq!((dm.magnitude, dm.consistency), (2, 2));
        let dm1 = count(Algorithm::Dm { beta: 1.0 });
        assert_eq!((dm1.magnitude, dm1.consistency), (1, 1));
        let dmm1 = count(Algorithm::Dm { beta: -1.0 });
        assert_eq!(dmm1.consistency, 1);
    }

    #[test]
    fn preset_table() {
        assert_eq!(Algorithm::<f64>::preset("raar", true), Some(Algorithm::Raar { beta: 0.7 }));
        assert_eq!(Algorithm::<f64>::preset("dm", false), Some(Algorithm::Dm { beta: 1.5 }));
        assert_eq!(Algorithm::<f64>::preset("fgla", true), Some(Algorithm::Fgla { alpha: 0.8 }));
        assert!(Algorithm::<f64>::preset("nope", true).is_none());
        assert_eq!(Algorithm::Raar { beta: 0.7 }.to_string(), "raar(beta=0.7)");
    }
}
