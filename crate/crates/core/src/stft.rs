//! Least-squares STFT, its inverse, and the projection operators built on them.
//!
//! Frames live on a padded time axis: frame `l` covers padded samples
//! `[l*H, l*H + N)`, and the original signal starts at padded index
//! [`StftConfig::leading_pad`]. Every original sample is covered by
//! `ceil(N/H)` frames. Spectra are one-sided (`K = N/2 + 1` bins).

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, Zip};
use num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative floor below which the squared-window sum is treated as zero.
pub const WINDOW_SUM_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    Hann,
    Rectangular,
    Custom,
}

impl WindowKind {
    /// Code stored in spectrogram file headers.
    pub fn code(self) -> u32 {
        match self {
            WindowKind::Hann => 0,
            WindowKind::Rectangular => 1,
            WindowKind::Custom => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(WindowKind::Hann),
            1 => Some(WindowKind::Rectangular),
            2 => Some(WindowKind::Custom),
            _ => None,
        }
    }
}

impl fmt::Display for WindowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowKind::Hann => "hann",
            WindowKind::Rectangular => "rectangular",
            WindowKind::Custom => "custom",
        })
    }
}

/// Periodic Hann window `0.5 * (1 - cos(2 pi n / N))`.
pub fn make_hann_window<T: Real>(frame_len: usize) -> Result<Vec<T>> {
    if frame_len < 2 {
        return Err(Error::InvalidConfig(format!(
            "window length must be at least 2, got {frame_len}"
        )));
    }
    let n_f = frame_len as f64;
    Ok((0..frame_len)
        .map(|n| {
            let phase = 2.0 * std::f64::consts::PI * n as f64 / n_f;
            T::from_f64_lossy(0.5 * (1.0 - phase.cos()))
        })
        .collect())
}

pub fn make_rectangular_window<T: Real>(frame_len: usize) -> Result<Vec<T>> {
    if frame_len < 2 {
        return Err(Error::InvalidConfig(format!(
            "window length must be at least 2, got {frame_len}"
        )));
    }
    Ok(vec![T::one(); frame_len])
}

/// Frame length, hop, window and sample rate of an STFT.
#[derive(Debug, Clone, PartialEq)]
pub struct StftConfig<T> {
    frame_len: usize,
    hop: usize,
    window: Vec<T>,
    kind: WindowKind,
    sample_rate: u32,
}

impl<T: Real> StftConfig<T> {
    pub fn new(frame_len: usize, hop: usize, kind: WindowKind, sample_rate: u32) -> Result<Self> {
        let window = match kind {
            WindowKind::Hann => make_hann_window(frame_len)?,
            WindowKind::Rectangular => make_rectangular_window(frame_len)?,
            WindowKind::Custom => {
                return Err(Error::InvalidConfig(
                    "custom windows are built with StftConfig::with_window".into(),
                ))
            }
        };
        Self::build(window, hop, kind, sample_rate)
    }

    pub fn with_window(window: Vec<T>, hop: usize, sample_rate: u32) -> Result<Self> {
        Self::build(window, hop, WindowKind::Custom, sample_rate)
    }

    /// Hann window with frame length and hop given in milliseconds.
    pub fn from_millis(frame_ms: f64, hop_ms: f64, sample_rate: u32) -> Result<Self> {
        let to_samples = |ms: f64| (ms * f64::from(sample_rate) / 1000.0).round();
        let (n, h) = (to_samples(frame_ms), to_samples(hop_ms));
        if !(n.is_finite() && h.is_finite()) || n < 0.0 || h < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "frame {frame_ms} ms / hop {hop_ms} ms do not give sample counts"
            )));
        }
        Self::new(n as usize, h as usize, WindowKind::Hann, sample_rate)
    }

    /// 32 ms frames, 8 ms hop, Hann window.
    pub fn speech_default(sample_rate: u32) -> Result<Self> {
        Self::from_millis(32.0, 8.0, sample_rate)
    }

    fn build(window: Vec<T>, hop: usize, kind: WindowKind, sample_rate: u32) -> Result<Self> {
        let frame_len = window.len();
        if frame_len < 2 {
            return Err(Error::InvalidConfig(format!(
                "frame length must be at least 2, got {frame_len}"
            )));
        }
        if hop == 0 || hop > frame_len {
            return Err(Error::InvalidConfig(format!(
                "hop must satisfy 1 <= H <= N, got H={hop}, N={frame_len}"
            )));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if window.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig("window has non-finite coefficients".into()));
        }
        if window.iter().all(|w| w.is_zero()) {
            return Err(Error::InvalidConfig("window is identically zero".into()));
        }
        Ok(Self {
            frame_len,
            hop,
            window,
            kind,
            sample_rate,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window(&self) -> &[T] {
        &self.window
    }

    pub fn window_kind(&self) -> WindowKind {
        self.kind
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// One-sided bin count `N/2 + 1`.
    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Number of frames covering each sample in steady state, `ceil(N/H)`.
    pub fn frames_per_sample(&self) -> usize {
        self.frame_len.div_ceil(self.hop)
    }

    /// Number of earlier frames that overlap a frame, `ceil(N/H - 1)`.
    pub fn overlap_frames(&self) -> usize {
        self.frames_per_sample() - 1
    }

    /// Zeros prepended to the signal before framing.
    pub fn leading_pad(&self) -> usize {
        self.overlap_frames() * self.hop
    }

    /// Frame count produced by [`Stft::stft`] for a signal of `signal_len` samples.
    pub fn num_frames(&self, signal_len: usize) -> usize {
        if signal_len == 0 {
            return 0;
        }
        self.frames_per_sample() + (signal_len - 1) / self.hop
    }

    /// Length of the padded span covered by `frames` frames.
    pub fn padded_span(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.frame_len
        }
    }

    /// Length of the signal returned by [`Stft::istft`] for `frames` frames.
    pub fn output_len(&self, frames: usize) -> usize {
        self.padded_span(frames).saturating_sub(self.leading_pad())
    }

    /// Steady-state maximum of the overlap-added squared window.
    pub fn window_sum_peak(&self) -> T {
        (0..self.hop)
            .map(|n| {
                (n..self.frame_len)
                    .step_by(self.hop)
                    .fold(T::zero(), |acc, i| acc + self.window[i] * self.window[i])
            })
            .fold(T::zero(), T::max)
    }

    /// Absolute value below which a squared-window sum counts as empty.
    pub fn window_sum_floor(&self) -> T {
        T::from_f64_lossy(WINDOW_SUM_FLOOR) * self.window_sum_peak()
    }
}

/// Complex one-sided STFT coefficients, `bins x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T> {
    data: Array2<Complex<T>>,
}

impl<T: Real> Spectrogram<T> {
    pub fn new(data: Array2<Complex<T>>) -> Result<Self> {
        if data.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::InvalidInput("spectrogram has non-finite entries".into()));
        }
        Ok(Self { data })
    }

    pub(crate) fn from_data(data: Array2<Complex<T>>) -> Self {
        Self { data }
    }

    pub fn zeros(bins: usize, frames: usize) -> Self {
        Self {
            data: Array2::from_elem((bins, frames), Complex::new(T::zero(), T::zero())),
        }
    }

    /// `A * e^{j0}`.
    pub fn zero_phase(mag: &MagnitudeSpectrogram<T>) -> Self {
        Self {
            data: mag.data.mapv(|a| Complex::new(a, T::zero())),
        }
    }

    pub fn bins(&self) -> usize {
        self.data.nrows()
    }

    pub fn frames(&self) -> usize {
        self.data.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array2<Complex<T>> {
        &self.data
    }

    pub fn into_data(self) -> Array2<Complex<T>> {
        self.data
    }

    pub fn column(&self, frame: usize) -> ArrayView1<'_, Complex<T>> {
        self.data.column(frame)
    }

    pub fn magnitude(&self) -> MagnitudeSpectrogram<T> {
        MagnitudeSpectrogram {
            data: self.data.mapv(|c| c.norm()),
        }
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, c| acc + c.norm_sqr()).sqrt()
    }

    /// `a*self + b*other`.
    pub fn lincomb(&self, a: T, other: &Self, b: T) -> Self {
        Self::from_data(Zip::from(&self.data).and(&other.data).map_collect(|&x, &y| x * a + y * b))
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::from_data(Zip::from(&self.data).and(&other.data).map_collect(|&x, &y| x - y))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        Zip::from(&self.data)
            .and(&other.data)
            .fold(T::zero(), |acc, &x, &y| acc.max((x - y).norm()))
    }

    pub(crate) fn check_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::dims(dims, self.dims()));
        }
        Ok(())
    }
}

/// Nonnegative target magnitudes, `bins x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram<T> {
    data: Array2<T>,
}

impl<T: Real> MagnitudeSpectrogram<T> {
    pub fn new(data: Array2<T>) -> Result<Self> {
        if let Some(((k, l), v)) = data.indexed_iter().find(|(_, v)| !(v.is_finite() && **v >= T::zero())) {
            return Err(Error::InvalidInput(format!(
                "magnitude at bin {k}, frame {l} is {v}; entries must be finite and nonnegative"
            )));
        }
        Ok(Self { data })
    }

    pub fn bins(&self) -> usize {
        self.data.nrows()
    }

    pub fn frames(&self) -> usize {
        self.data.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array2<T> {
        &self.data
    }

    pub fn into_data(self) -> Array2<T> {
        self.data
    }

    pub fn column(&self, frame: usize) -> ArrayView1<'_, T> {
        self.data.column(frame)
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &a| acc + a * a).sqrt()
    }
}

fn phase_of<T: Real>(x: Complex<T>) -> Complex<T> {
    let r = x.norm();
    if r > T::zero() {
        x / r
    } else {
        Complex::new(T::one(), T::zero())
    }
}

/// `A e^{j arg x}` for a single bin, with `arg 0 = 0`.
#[inline]
pub fn project_bin<T: Real>(x: Complex<T>, a: T) -> Complex<T> {
    phase_of(x) * a
}

/// Magnitude projection: keep each bin's phase, impose the target magnitude.
pub fn proj_magnitude<T: Real>(spec: &Spectrogram<T>, mag: &MagnitudeSpectrogram<T>) -> Result<Spectrogram<T>> {
    spec.check_dims(mag.dims())?;
    Ok(Spectrogram::from_data(
        Zip::from(&spec.data).and(&mag.data).map_collect(|&x, &a| project_bin(x, a)),
    ))
}

/// `2 p_A(X) - X`.
pub fn reflect_magnitude<T: Real>(spec: &Spectrogram<T>, mag: &MagnitudeSpectrogram<T>) -> Result<Spectrogram<T>> {
    let p = proj_magnitude(spec, mag)?;
    Ok(p.lincomb(T::from_f64_lossy(2.0), spec, -T::one()))
}

/// `p_A(X) + (p_A(X) - X) / beta`.
pub fn dm_f_magnitude<T: Real>(
    spec: &Spectrogram<T>,
    mag: &MagnitudeSpectrogram<T>,
    beta: T,
) -> Result<Spectrogram<T>> {
    check_nonzero_beta(beta)?;
    let p = proj_magnitude(spec, mag)?;
    Ok(dm_f_from_magnitude_projection(&p, spec, beta))
}

pub(crate) fn dm_f_from_magnitude_projection<T: Real>(p: &Spectrogram<T>, x: &Spectrogram<T>, beta: T) -> Spectrogram<T> {
    let inv = beta.recip();
    p.lincomb(T::one() + inv, x, -inv)
}

pub(crate) fn dm_f_from_consistency_projection<T: Real>(p: &Spectrogram<T>, x: &Spectrogram<T>, beta: T) -> Spectrogram<T> {
    let inv = beta.recip();
    p.lincomb(T::one() - inv, x, inv)
}

pub(crate) fn check_nonzero_beta<T: Real>(beta: T) -> Result<()> {
    if beta.is_zero() || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!("beta must be finite and nonzero, got {beta}")));
    }
    Ok(())
}

/// Planned STFT for one configuration. Cheap to clone; safe to share between threads.
#[derive(Clone)]
pub struct Stft<T: Real> {
    config: StftConfig<T>,
    forward: Arc<dyn RealToComplex<T>>,
    inverse: Arc<dyn ComplexToReal<T>>,
    floor: T,
}

impl<T: Real> fmt::Debug for Stft<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stft").field("config", &self.config).finish_non_exhaustive()
    }
}

/// Reusable buffers for single-frame transforms.
pub(crate) struct FrameScratch<T> {
    time: Vec<T>,
    freq: Vec<Complex<T>>,
    fwd: Vec<Complex<T>>,
    inv: Vec<Complex<T>>,
}

impl<T: Real> Stft<T> {
    pub fn new(config: StftConfig<T>) -> Self {
        let mut planner = RealFftPlanner::<T>::new();
        let forward = planner.plan_fft_forward(config.frame_len);
        let inverse = planner.plan_fft_inverse(config.frame_len);
        let floor = config.window_sum_floor();
        Self {
            config,
            forward,
            inverse,
            floor,
        }
    }

    pub fn config(&self) -> &StftConfig<T> {
        &self.config
    }

    pub(crate) fn scratch(&self) -> FrameScratch<T> {
        FrameScratch {
            time: vec![T::zero(); self.config.frame_len],
            freq: vec![Complex::default(); self.config.bins()],
            fwd: self.forward.make_scratch_vec(),
            inv: self.inverse.make_scratch_vec(),
        }
    }

    /// Windowed DFT of `segment` (length N, unwindowed) into `out` (length K).
    pub(crate) fn analyze_segment(&self, segment: &[T], out: &mut [Complex<T>], scratch: &mut FrameScratch<T>) {
        for ((t, &s), &w) in scratch.time.iter_mut().zip(segment).zip(&self.config.window) {
            *t = s * w;
        }
        self.forward
            .process_with_scratch(&mut scratch.time, out, &mut scratch.fwd)
            .expect("buffer sizes match the plan");
    }

    /// Inverse DFT of one one-sided column into `out` (length N), unwindowed.
    /// Imaginary parts of the DC and Nyquist bins are discarded.
    pub(crate) fn synthesize_column(&self, column: ArrayView1<'_, Complex<T>>, out: &mut [T], scratch: &mut FrameScratch<T>) {
        for (f, &c) in scratch.freq.iter_mut().zip(column.iter()) {
            *f = c;
        }
        scratch.freq[0].im = T::zero();
        if self.config.frame_len.is_multiple_of(2) {
            let last = scratch.freq.len() - 1;
            scratch.freq[last].im = T::zero();
        }
        self.inverse
            .process_with_scratch(&mut scratch.freq, out, &mut scratch.inv)
            .expect("buffer sizes match the plan");
        let scale = T::from_usize_lossy(self.config.frame_len).recip();
        out.iter_mut().for_each(|v| *v = *v * scale);
    }

    /// Windowed DFT of one unwindowed length-N segment.
    pub fn windowed_dft(&self, segment: &[T]) -> Result<Vec<Complex<T>>> {
        if segment.len() != self.config.frame_len {
            return Err(Error::dims((self.config.frame_len, 1), (segment.len(), 1)));
        }
        let mut out = vec![Complex::default(); self.config.bins()];
        self.analyze_segment(segment, &mut out, &mut self.scratch());
        Ok(out)
    }

    /// Unwindowed inverse DFT of one one-sided column.
    pub fn inverse_dft(&self, column: ArrayView1<'_, Complex<T>>) -> Result<Vec<T>> {
        if column.len() != self.config.bins() {
            return Err(Error::dims((self.config.bins(), 1), (column.len(), 1)));
        }
        let mut out = vec![T::zero(); self.config.frame_len];
        self.synthesize_column(column, &mut out, &mut self.scratch());
        Ok(out)
    }

    /// Forward STFT of a real signal.
    pub fn stft(&self, signal: &[T]) -> Result<Spectrogram<T>> {
        if signal.is_empty() {
            return Err(Error::InvalidInput("signal is empty".into()));
        }
        if signal.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("signal has non-finite samples".into()));
        }
        Ok(self.analyze(signal, self.config.num_frames(signal.len())))
    }

    /// STFT with exactly `frames` frames; samples beyond `signal` are zero and
    /// samples beyond the frames' span are ignored.
    pub fn analyze(&self, signal: &[T], frames: usize) -> Spectrogram<T> {
        let (n, h, lead) = (self.config.frame_len, self.config.hop, self.config.leading_pad());
        let mut data = Array2::from_elem((self.config.bins(), frames), Complex::default());
        let mut scratch = self.scratch();
        let mut segment = vec![T::zero(); n];
        let mut column = vec![Complex::default(); self.config.bins()];
        for l in 0..frames {
            for (i, s) in segment.iter_mut().enumerate() {
                let p = l * h + i;
                *s = p
                    .checked_sub(lead)
                    .and_then(|idx| signal.get(idx))
                    .copied()
                    .unwrap_or_else(T::zero);
            }
            self.analyze_segment(&segment, &mut column, &mut scratch);
            for (dst, &src) in data.column_mut(l).iter_mut().zip(&column) {
                *dst = src;
            }
        }
        Spectrogram::from_data(data)
    }

    /// Windowed overlap-add numerator and squared-window denominator over the padded span.
    pub(crate) fn overlap_add(&self, spec: &Spectrogram<T>) -> (Vec<T>, Vec<T>) {
        let (n, h) = (self.config.frame_len, self.config.hop);
        let span = self.config.padded_span(spec.frames());
        let mut num = vec![T::zero(); span];
        let mut den = vec![T::zero(); span];
        let mut scratch = self.scratch();
        let mut frame = vec![T::zero(); n];
        for l in 0..spec.frames() {
            self.synthesize_column(spec.column(l), &mut frame, &mut scratch);
            let start = l * h;
            for (i, (&x, &w)) in frame.iter().zip(&self.config.window).enumerate() {
                num[start + i] = num[start + i] + w * x;
                den[start + i] = den[start + i] + w * w;
            }
        }
        (num, den)
    }

    pub(crate) fn normalize(&self, num: T, den: T) -> T {
        if den < self.floor || den.is_zero() {
            T::zero()
        } else {
            num / den
        }
    }

    fn check_bins(&self, spec: &Spectrogram<T>) -> Result<()> {
        if spec.bins() != self.config.bins() {
            return Err(Error::dims((self.config.bins(), spec.frames()), spec.dims()));
        }
        Ok(())
    }

    /// Least-squares inverse STFT. Returns [`StftConfig::output_len`] samples
    /// on the unpadded axis.
    pub fn istft(&self, spec: &Spectrogram<T>) -> Result<Vec<T>> {
        self.check_bins(spec)?;
        let (num, den) = self.overlap_add(spec);
        let lead = self.config.leading_pad();
        Ok(num
            .iter()
            .zip(&den)
            .skip(lead)
            .map(|(&a, &b)| self.normalize(a, b))
            .collect())
    }

    /// `STFT(iSTFT(X))`.
    pub fn proj_consistency(&self, spec: &Spectrogram<T>) -> Result<Spectrogram<T>> {
        let signal = self.istft(spec)?;
        Ok(self.analyze(&signal, spec.frames()))
    }

    /// `2 p_C(X) - X`.
    pub fn reflect_consistency(&self, spec: &Spectrogram<T>) -> Result<Spectrogram<T>> {
        let p = self.proj_consistency(spec)?;
        Ok(p.lincomb(T::from_f64_lossy(2.0), spec, -T::one()))
    }

    /// `p_C(X) - (p_C(X) - X) / beta`.
    pub fn dm_f_consistency(&self, spec: &Spectrogram<T>, beta: T) -> Result<Spectrogram<T>> {
        check_nonzero_beta(beta)?;
        let p = self.proj_consistency(spec)?;
        Ok(dm_f_from_consistency_projection(&p, spec, beta))
    }
}
