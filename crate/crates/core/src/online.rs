//! Frame-by-frame phase retrieval with an optional look-ahead.
//!
//! Committed ("frozen") frames are never stored; their contribution survives
//! only as two running sums over the time axis: the windowed signal
//! `sum_l w(n - lH) x_l(n)` and the squared window `sum_l w^2(n - lH)`. The
//! current frame and its `B` look-ahead frames form the fluid buffer, which is
//! iterated with the magnitude projection and a partial consistency
//! projection that combines the fluid frames with the frozen sums. Any
//! [`Algorithm`] runs unchanged on top of these two projections.
//!
//! Sample indices below are on the padded axis used by [`Stft`]; emitted
//! output starts at [`StftConfig::leading_pad`] so a full stream matches
//! [`Stft::istft`] sample for sample in length.

use std::collections::VecDeque;

use ndarray::{Array1, Array2};
use num_complex::Complex;

use crate::algorithms::{Algorithm, AlgorithmSpec, CountingProjector, IterState, ProjectionCounts, Projector};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::stft::{proj_magnitude, project_bin, MagnitudeSpectrogram, Spectrogram, Stft, StftConfig};

/// First sample touched by any committed frame overlapping frame `m`:
/// `H * (m - ceil(N/H - 1))`, clamped at zero.
pub fn first_overlap_sample<T: Real>(m: usize, config: &StftConfig<T>) -> usize {
    config.hop() * m.saturating_sub(config.overlap_frames())
}

/// Running sums representing the frozen frames, stored from `origin` onwards.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrozenSums<T> {
    origin: usize,
    signal: Vec<T>,
    window: Vec<T>,
}

impl<T: Real> FrozenSums<T> {
    pub fn new() -> Self {
        Self {
            origin: 0,
            signal: Vec::new(),
            window: Vec::new(),
        }
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    /// Windowed-signal sum from `origin`.
    pub fn signal(&self) -> &[T] {
        &self.signal
    }

    /// Squared-window sum from `origin`.
    pub fn window(&self) -> &[T] {
        &self.window
    }

    pub fn signal_at(&self, n: usize) -> T {
        n.checked_sub(self.origin)
            .and_then(|i| self.signal.get(i))
            .copied()
            .unwrap_or_else(T::zero)
    }

    pub fn window_at(&self, n: usize) -> T {
        n.checked_sub(self.origin)
            .and_then(|i| self.window.get(i))
            .copied()
            .unwrap_or_else(T::zero)
    }

    /// Adds one committed frame starting at sample `start`: `frame` is its
    /// unwindowed iDFT.
    pub fn accumulate(&mut self, start: usize, frame: &[T], window: &[T]) {
        debug_assert!(start >= self.origin);
        let end = start + frame.len() - self.origin;
        if self.signal.len() < end {
            self.signal.resize(end, T::zero());
            self.window.resize(end, T::zero());
        }
        let offset = start - self.origin;
        for (i, (&x, &w)) in frame.iter().zip(window).enumerate() {
            self.signal[offset + i] = self.signal[offset + i] + w * x;
            self.window[offset + i] = self.window[offset + i] + w * w;
        }
    }

    /// Drops everything before sample `n`.
    pub fn discard_before(&mut self, n: usize) {
        if n <= self.origin {
            return;
        }
        let k = (n - self.origin).min(self.signal.len());
        self.signal.drain(..k);
        self.window.drain(..k);
        self.origin = n;
    }
}

/// Time-domain samples `[start, start + samples.len())`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialSignal<T> {
    pub start: usize,
    pub samples: Vec<T>,
}

impl<T: Real> PartialSignal<T> {
    pub fn at(&self, n: usize) -> T {
        n.checked_sub(self.start)
            .and_then(|i| self.samples.get(i))
            .copied()
            .unwrap_or_else(T::zero)
    }
}

fn check_fluid<T: Real>(stft: &Stft<T>, fluid: &Spectrogram<T>) -> Result<()> {
    if fluid.bins() != stft.config().bins() || fluid.frames() == 0 {
        return Err(Error::dims((stft.config().bins(), fluid.frames().max(1)), fluid.dims()));
    }
    Ok(())
}

/// Partial least-squares iSTFT of the fluid frames `m, m+1, ...` given the
/// frozen sums, over `[first_overlap_sample(m), end of the last fluid frame)`.
pub fn partial_istft<T: Real>(
    stft: &Stft<T>,
    fluid: &Spectrogram<T>,
    first_frame: usize,
    frozen: &FrozenSums<T>,
) -> Result<PartialSignal<T>> {
    check_fluid(stft, fluid)?;
    Ok(partial_istft_unchecked(stft, fluid, first_frame, frozen))
}

fn partial_istft_unchecked<T: Real>(
    stft: &Stft<T>,
    fluid: &Spectrogram<T>,
    first_frame: usize,
    frozen: &FrozenSums<T>,
) -> PartialSignal<T> {
    let cfg = stft.config();
    let (n, h) = (cfg.frame_len(), cfg.hop());
    let start = first_overlap_sample(first_frame, cfg);
    let end = (first_frame + fluid.frames() - 1) * h + n;
    let mut num: Vec<T> = (start..end).map(|i| frozen.signal_at(i)).collect();
    let mut den: Vec<T> = (start..end).map(|i| frozen.window_at(i)).collect();
    let mut scratch = stft.scratch();
    let mut frame = vec![T::zero(); n];
    for j in 0..fluid.frames() {
        stft.synthesize_column(fluid.column(j), &mut frame, &mut scratch);
        let offset = (first_frame + j) * h - start;
        for (i, (&x, &w)) in frame.iter().zip(cfg.window()).enumerate() {
            num[offset + i] = num[offset + i] + w * x;
            den[offset + i] = den[offset + i] + w * w;
        }
    }
    // The leading pad is known to be silent.
    let lead = cfg.leading_pad();
    let samples = num
        .iter()
        .zip(&den)
        .enumerate()
        .map(|(i, (&a, &b))| if start + i < lead { T::zero() } else { stft.normalize(a, b) })
        .collect();
    PartialSignal { start, samples }
}

/// Windowed DFT of frame `frame` read out of `signal`.
fn analyze_frame_of<T: Real>(stft: &Stft<T>, signal: &PartialSignal<T>, frame: usize, out: &mut [Complex<T>]) {
    let cfg = stft.config();
    let begin = frame * cfg.hop();
    let segment: Vec<T> = (begin..begin + cfg.frame_len()).map(|i| signal.at(i)).collect();
    let mut scratch = stft.scratch();
    stft.analyze_segment(&segment, out, &mut scratch);
}

/// Partial consistency projection: re-analyses only the fluid frames of the
/// partial iSTFT; the frozen sums are read, never written.
pub fn partial_proj_consistency<T: Real>(
    stft: &Stft<T>,
    fluid: &Spectrogram<T>,
    first_frame: usize,
    frozen: &FrozenSums<T>,
) -> Result<Spectrogram<T>> {
    check_fluid(stft, fluid)?;
    Ok(partial_proj_unchecked(stft, fluid, first_frame, frozen))
}

fn partial_proj_unchecked<T: Real>(
    stft: &Stft<T>,
    fluid: &Spectrogram<T>,
    first_frame: usize,
    frozen: &FrozenSums<T>,
) -> Spectrogram<T> {
    let signal = partial_istft_unchecked(stft, fluid, first_frame, frozen);
    let mut data = Array2::from_elem(fluid.dims(), Complex::default());
    let mut column = vec![Complex::default(); fluid.bins()];
    for j in 0..fluid.frames() {
        analyze_frame_of(stft, &signal, first_frame + j, &mut column);
        for (dst, &src) in data.column_mut(j).iter_mut().zip(&column) {
            *dst = src;
        }
    }
    Spectrogram::from_data(data)
}

/// Magnitude projection onto the fluid frames' known magnitudes and the
/// partial consistency projection given the frozen sums.
pub struct OnlineProjector<'a, T: Real> {
    stft: &'a Stft<T>,
    target: &'a MagnitudeSpectrogram<T>,
    frozen: &'a FrozenSums<T>,
    first_frame: usize,
}

impl<'a, T: Real> OnlineProjector<'a, T> {
    pub fn new(
        stft: &'a Stft<T>,
        target: &'a MagnitudeSpectrogram<T>,
        frozen: &'a FrozenSums<T>,
        first_frame: usize,
    ) -> Self {
        Self {
            stft,
            target,
            frozen,
            first_frame,
        }
    }
}

impl<T: Real> Projector<T> for OnlineProjector<'_, T> {
    fn magnitude(&mut self, x: &Spectrogram<T>) -> Spectrogram<T> {
        proj_magnitude(x, self.target).expect("fluid shape matches its magnitudes")
    }

    fn consistency(&mut self, x: &Spectrogram<T>) -> Spectrogram<T> {
        partial_proj_unchecked(self.stft, x, self.first_frame, self.frozen)
    }
}

/// A committed frame and the output samples it finalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Commit<T> {
    pub frame: usize,
    /// `p_A` of the frame's final iterate.
    pub column: Array1<Complex<T>>,
    pub samples: Vec<T>,
}

/// Streaming reconstruction state for one stream.
#[derive(Debug, Clone)]
pub struct OnlineState<T: Real> {
    stft: Stft<T>,
    spec: AlgorithmSpec<T>,
    lookahead: usize,
    /// Index of the oldest fluid frame (the next to commit).
    frame_index: usize,
    received: usize,
    fluid: VecDeque<Array1<Complex<T>>>,
    fluid_mag: VecDeque<Array1<T>>,
    frozen: FrozenSums<T>,
    /// Padded sample index up to which output has been emitted.
    emitted_until: usize,
    counts: ProjectionCounts,
}

impl<T: Real> OnlineState<T> {
    pub fn new(stft: Stft<T>, spec: AlgorithmSpec<T>, lookahead: usize) -> Result<Self> {
        spec.algorithm().validate()?;
        if stft.config().overlap_frames() == 0 {
            return Err(Error::InvalidConfig(
                "online reconstruction needs overlapping frames (H < N)".into(),
            ));
        }
        let emitted_until = stft.config().leading_pad();
        Ok(Self {
            stft,
            spec,
            lookahead,
            frame_index: 0,
            received: 0,
            fluid: VecDeque::with_capacity(lookahead + 1),
            fluid_mag: VecDeque::with_capacity(lookahead + 1),
            frozen: FrozenSums::new(),
            emitted_until,
            counts: ProjectionCounts::default(),
        })
    }

    pub fn stft(&self) -> &Stft<T> {
        &self.stft
    }

    pub fn spec(&self) -> &AlgorithmSpec<T> {
        &self.spec
    }

    pub fn lookahead(&self) -> usize {
        self.lookahead
    }

    /// Index of the oldest fluid frame.
    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn frames_received(&self) -> usize {
        self.received
    }

    pub fn frozen(&self) -> &FrozenSums<T> {
        &self.frozen
    }

    /// Output samples emitted so far.
    pub fn samples_emitted(&self) -> usize {
        self.emitted_until - self.stft.config().leading_pad()
    }

    /// Projections applied by the algorithm steps so far (initialization excluded).
    pub fn projection_counts(&self) -> ProjectionCounts {
        self.counts
    }

    /// Current fluid buffer as a `K x (fluid frames)` spectrogram.
    pub fn fluid(&self) -> Spectrogram<T> {
        Self::stack(&self.fluid, self.stft.config().bins())
    }

    fn fluid_magnitude(&self) -> MagnitudeSpectrogram<T> {
        let k = self.stft.config().bins();
        let mut data = Array2::zeros((k, self.fluid_mag.len()));
        for (j, col) in self.fluid_mag.iter().enumerate() {
            data.column_mut(j).assign(col);
        }
        MagnitudeSpectrogram::new(data).expect("columns were validated on arrival")
    }

    fn stack(cols: &VecDeque<Array1<Complex<T>>>, bins: usize) -> Spectrogram<T> {
        let mut data = Array2::from_elem((bins, cols.len()), Complex::default());
        for (j, col) in cols.iter().enumerate() {
            data.column_mut(j).assign(col);
        }
        Spectrogram::from_data(data)
    }

    fn validate_column(&self, mag: &[T]) -> Result<Array1<T>> {
        let k = self.stft.config().bins();
        if mag.len() != k {
            return Err(Error::dims((k, 1), (mag.len(), 1)));
        }
        if let Some((k, v)) = mag.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= T::zero())) {
            return Err(Error::InvalidInput(format!(
                "magnitude at bin {k} is {v}; entries must be finite and nonnegative"
            )));
        }
        Ok(Array1::from(mag.to_vec()))
    }

    /// Appends the entering frame to the fluid buffer. The first `B+1` frames
    /// get zero phase; later frames take the phase of their windowed DFT of
    /// the estimate formed by the frozen sums, the magnitude-projected fluid
    /// frames and the entering frame itself with zero phase.
    pub fn init_new_frame(&mut self, mag: &[T]) -> Result<()> {
        let mag = self.validate_column(mag)?;
        self.push_initialized(mag);
        Ok(())
    }

    fn push_initialized(&mut self, mag: Array1<T>) {
        let entering = self.received;
        self.received += 1;
        let zero_phase: Array1<Complex<T>> = mag.mapv(|a| Complex::new(a, T::zero()));
        let column = if entering <= self.lookahead {
            zero_phase
        } else {
            let mut cols: VecDeque<Array1<Complex<T>>> = self
                .fluid
                .iter()
                .zip(&self.fluid_mag)
                .map(|(x, a)| ndarray::Zip::from(x).and(a).map_collect(|&x, &a| project_bin(x, a)))
                .collect();
            cols.push_back(zero_phase);
            let estimate = Self::stack(&cols, self.stft.config().bins());
            let signal = partial_istft_unchecked(&self.stft, &estimate, self.frame_index, &self.frozen);
            let mut spectrum = vec![Complex::default(); self.stft.config().bins()];
            analyze_frame_of(&self.stft, &signal, entering, &mut spectrum);
            ndarray::Zip::from(&mag)
                .and(&Array1::from(spectrum))
                .map_collect(|&a, &x| project_bin(x, a))
        };
        self.fluid.push_back(column);
        self.fluid_mag.push_back(mag);
    }

    fn iterate(&mut self) {
        if self.fluid.is_empty() {
            return;
        }
        let target = self.fluid_magnitude();
        let algorithm: Algorithm<T> = *self.spec.algorithm();
        let mut state = IterState::new(self.fluid(), &algorithm);
        let mut proj = CountingProjector::new(OnlineProjector::new(&self.stft, &target, &self.frozen, self.frame_index));
        for _ in 0..self.spec.iterations() {
            state.step(&algorithm, &mut proj);
        }
        let counts = proj.counts();
        self.counts.magnitude += counts.magnitude;
        self.counts.consistency += counts.consistency;
        for (j, col) in self.fluid.iter_mut().enumerate() {
            col.assign(&state.x.column(j));
        }
    }

    fn commit_oldest(&mut self) -> Commit<T> {
        let raw = self.fluid.pop_front().expect("fluid buffer is nonempty");
        let mag = self.fluid_mag.pop_front().expect("fluid magnitudes track the buffer");
        let column = ndarray::Zip::from(&raw).and(&mag).map_collect(|&x, &a| project_bin(x, a));

        let cfg = self.stft.config();
        let (n, h) = (cfg.frame_len(), cfg.hop());
        let m = self.frame_index;
        let mut scratch = self.stft.scratch();
        let mut frame = vec![T::zero(); n];
        self.stft.synthesize_column(column.view(), &mut frame, &mut scratch);
        self.frozen.accumulate(m * h, &frame, cfg.window());

        // Nothing after frame m touches samples before (m + 1) H.
        let samples = self.emit_until((m + 1) * h);
        self.frame_index += 1;
        let keep_from = first_overlap_sample(self.frame_index, self.stft.config());
        self.frozen.discard_before(keep_from);
        Commit { frame: m, column, samples }
    }

    fn emit_until(&mut self, end: usize) -> Vec<T> {
        let begin = self.emitted_until;
        if end <= begin {
            return Vec::new();
        }
        self.emitted_until = end;
        (begin..end)
            .map(|i| self.stft.normalize(self.frozen.signal_at(i), self.frozen.window_at(i)))
            .collect()
    }

    /// Feeds one magnitude column. Returns `None` while the look-ahead buffer
    /// fills; afterwards every call commits one frame.
    pub fn process_frame(&mut self, mag: &[T]) -> Result<Option<Commit<T>>> {
        let mag = self.validate_column(mag)?;
        self.push_initialized(mag);
        if self.fluid.len() <= self.lookahead {
            return Ok(None);
        }
        self.iterate();
        Ok(Some(self.commit_oldest()))
    }

    /// Commits the remaining fluid frames, one per step with a full iteration
    /// budget each, and emits the rest of the signal.
    pub fn flush(&mut self) -> Flushed<T> {
        let mut commits = Vec::with_capacity(self.fluid.len());
        while !self.fluid.is_empty() {
            self.iterate();
            commits.push(self.commit_oldest());
        }
        let end = self.stft.config().padded_span(self.received);
        let tail = self.emit_until(end);
        Flushed { commits, tail }
    }
}

/// Commits made at the end of a stream and the samples after the last
/// commit's hop that no later frame can change.
#[derive(Debug, Clone, PartialEq)]
pub struct Flushed<T> {
    pub commits: Vec<Commit<T>>,
    pub tail: Vec<T>,
}

impl<T: Real> Flushed<T> {
    /// Every sample emitted by the flush, in order.
    pub fn samples(&self) -> impl Iterator<Item = T> + '_ {
        self.commits.iter().flat_map(|c| c.samples.iter().copied()).chain(self.tail.iter().copied())
    }
}

/// Streams every column of `mag` through an [`OnlineState`] and flushes.
/// The result has [`StftConfig::output_len`] samples.
pub fn stream_reconstruct<T: Real>(
    mag: &MagnitudeSpectrogram<T>,
    spec: &AlgorithmSpec<T>,
    stft: &Stft<T>,
    lookahead: usize,
) -> Result<Vec<T>> {
    let log = stream_commits(mag, spec, stft, lookahead)?;
    Ok(log.samples().collect())
}

/// Like [`stream_reconstruct`] but returns every commit, with the flush tail.
pub fn stream_commits<T: Real>(
    mag: &MagnitudeSpectrogram<T>,
    spec: &AlgorithmSpec<T>,
    stft: &Stft<T>,
    lookahead: usize,
) -> Result<Flushed<T>> {
    if mag.bins() != stft.config().bins() {
        return Err(Error::dims((stft.config().bins(), mag.frames()), mag.dims()));
    }
    let mut state = OnlineState::new(stft.clone(), *spec, lookahead)?;
    let mut commits = Vec::with_capacity(mag.frames());
    let mut column = vec![T::zero(); mag.bins()];
    for l in 0..mag.frames() {
        for (dst, &src) in column.iter_mut().zip(mag.column(l)) {
            *dst = src;
        }
        commits.extend(state.process_frame(&column)?);
    }
    let last = state.flush();
    commits.extend(last.commits);
    Ok(Flushed {
        commits,
        tail: last.tail,
    })
}
