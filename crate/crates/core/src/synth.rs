//! Seeded synthetic test signals.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    /// Single tone at the requested frequency.
    Sine,
    /// Three sinusoids with seeded frequencies and amplitudes.
    Multisine,
    /// Linear sweep from 100 Hz to 0.4 * sample rate.
    Chirp,
    /// Band-limited noise bursts.
    Noise,
    /// Voiced harmonic segments with formant envelopes, unvoiced bursts and pauses.
    Speechlike,
}

impl FromStr for SignalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sine" => SignalKind::Sine,
            "multisine" => SignalKind::Multisine,
            "chirp" => SignalKind::Chirp,
            "noise" => SignalKind::Noise,
            "speechlike" => SignalKind::Speechlike,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown signal kind {other:?}; expected sine, multisine, chirp, noise or speechlike"
                )))
            }
        })
    }
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignalKind::Sine => "sine",
            SignalKind::Multisine => "multisine",
            SignalKind::Chirp => "chirp",
            SignalKind::Noise => "noise",
            SignalKind::Speechlike => "speechlike",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub kind: SignalKind,
    pub seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
    /// Tone frequency for [`SignalKind::Sine`].
    pub freq: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            kind: SignalKind::Speechlike,
            seconds: 1.0,
            sample_rate: 16000,
            seed: 0,
            freq: 440.0,
        }
    }
}

const PEAK: f64 = 0.7;

pub fn generate(params: &SynthParams) -> Result<Vec<f64>> {
    if !(params.seconds.is_finite() && params.seconds > 0.0) {
        return Err(Error::InvalidParameter(format!("duration must be positive, got {}", params.seconds)));
    }
    if params.sample_rate == 0 {
        return Err(Error::InvalidParameter("sample rate must be positive".into()));
    }
    let rate = f64::from(params.sample_rate);
    let len = (params.seconds * rate).round() as usize;
    if len == 0 {
        return Err(Error::InvalidParameter("duration rounds to zero samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let signal = match params.kind {
        SignalKind::Sine => {
            if !(params.freq > 0.0 && params.freq < rate / 2.0) {
                return Err(Error::InvalidParameter(format!(
                    "tone frequency {} outside (0, {})",
                    params.freq,
                    rate / 2.0
                )));
            }
            (0..len).map(|n| 0.5 * (2.0 * PI * params.freq * n as f64 / rate).sin()).collect()
        }
        SignalKind::Multisine => multisine(&mut rng, len, rate),
        SignalKind::Chirp => chirp(len, rate),
        SignalKind::Noise => normalize(noise_bursts(&mut rng, len, rate)),
        SignalKind::Speechlike => normalize(speechlike(&mut rng, len, rate)),
    };
    Ok(signal)
}

fn normalize(mut x: Vec<f64>) -> Vec<f64> {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= PEAK / peak);
    }
    x
}

fn multisine(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    let tones: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let f = rng.random_range(100.0..rate * 0.3);
            let a = rng.random_range(0.1..0.3);
            let phi = rng.random_range(0.0..2.0 * PI);
            (f, a, phi)
        })
        .collect();
    (0..len)
        .map(|n| {
            let t = n as f64 / rate;
            tones.iter().map(|&(f, a, phi)| a * (2.0 * PI * f * t + phi).sin()).sum()
        })
        .collect()
}

fn chirp(len: usize, rate: f64) -> Vec<f64> {
    let (f0, f1) = (100.0, 0.4 * rate);
    let dur = len as f64 / rate;
    (0..len)
        .map(|n| {
            let t = n as f64 / rate;
            0.5 * (2.0 * PI * (f0 * t + 0.5 * (f1 - f0) / dur * t * t)).sin()
        })
        .collect()
}

/// Raised-cosine attack and release over `ramp` samples.
fn envelope(i: usize, len: usize, ramp: usize) -> f64 {
    let ramp = ramp.min(len / 2).max(1);
    let edge = i.min(len - 1 - i);
    if edge >= ramp {
        1.0
    } else {
        0.5 * (1.0 - (PI * edge as f64 / ramp as f64).cos())
    }
}

fn white(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-1.0..1.0)
}

fn noise_bursts(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut t = 0;
    while t < len {
        let dur = ((rng.random_range(0.05..0.2)) * rate) as usize;
        let gap = ((rng.random_range(0.02..0.1)) * rate) as usize;
        let cutoff = rng.random_range(0.05..0.4);
        let end = (t + dur).min(len);
        let mut lp = 0.0;
        for (i, o) in out[t..end].iter_mut().enumerate() {
            lp += cutoff * (white(rng) - lp);
            *o = lp * envelope(i, end - t, (0.01 * rate) as usize);
        }
        t = end + gap;
    }
    out
}

struct Formant {
    freq: f64,
    bandwidth: f64,
    gain: f64,
}

fn voiced_segment(rng: &mut ChaCha8Rng, out: &mut [f64], rate: f64) {
    let f0_start: f64 = rng.random_range(90.0..220.0);
    let f0_end = f0_start * rng.random_range(0.8..1.25);
    let formants = [
        Formant {
            freq: rng.random_range(300.0..900.0),
            bandwidth: 90.0,
            gain: 1.0,
        },
        Formant {
            freq: rng.random_range(900.0..2500.0),
            bandwidth: 130.0,
            gain: 0.5,
        },
        Formant {
            freq: rng.random_range(2500.0..3500.0),
            bandwidth: 200.0,
            gain: 0.25,
        },
    ];
    let len = out.len();
    let nyquist = rate / 2.0;
    let mut phase = rng.random_range(0.0..2.0 * PI);
    for (i, o) in out.iter_mut().enumerate() {
        let frac = i as f64 / len as f64;
        let f0 = f0_start + (f0_end - f0_start) * frac;
        phase += 2.0 * PI * f0 / rate;
        let harmonics = ((0.9 * nyquist) / f0) as usize;
        let mut v = 0.0;
        for h in 1..=harmonics {
            let fh = h as f64 * f0;
            let shape: f64 = formants
                .iter()
                .map(|f| f.gain * (-0.5 * ((fh - f.freq) / f.bandwidth).powi(2)).exp())
                .sum();
            v += (shape + 0.02 / h as f64) * (h as f64 * phase).sin();
        }
        *o += v * envelope(i, len, (0.02 * rate) as usize);
    }
}

fn unvoiced_segment(rng: &mut ChaCha8Rng, out: &mut [f64], rate: f64) {
    let len = out.len();
    let smooth = rng.random_range(0.3..0.8);
    let gain = rng.random_range(0.2..0.5);
    let (mut prev, mut lp) = (0.0, 0.0);
    for (i, o) in out.iter_mut().enumerate() {
        let w = white(rng);
        let hp = w - prev;
        prev = w;
        lp += smooth * (hp - lp);
        *o += gain * lp * envelope(i, len, (0.01 * rate) as usize);
    }
}

fn speechlike(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut t = 0;
    while t < len {
        let choice: f64 = rng.random();
        let dur = (rng.random_range(0.08..0.25) * rate) as usize;
        let end = (t + dur.max(1)).min(len);
        if choice < 0.6 {
            voiced_segment(rng, &mut out[t..end], rate);
        } else if choice < 0.8 {
            unvoiced_segment(rng, &mut out[t..end], rate);
        }
        t = end;
    }
    out
}

/// Checks that a corpus signal is usable: nonempty, finite, within `[-1, 1]`
/// and not silent (RMS at least 1e-3).
pub fn validate_signal(samples: &[f64]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("signal is empty".into()));
    }
    if samples.iter().any(|s| !s.is_finite() || s.abs() > 1.0) {
        return Err(Error::InvalidInput("signal has samples outside [-1, 1]".into()));
    }
    let rms = (samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64).sqrt();
    if rms < 1e-3 {
        return Err(Error::InvalidInput(format!("signal is effectively silent (rms {rms:e})")));
    }
    Ok(())
}

/// `count` speech-like signals with seeds `base_seed, base_seed + 1, ...`.
pub fn speechlike_corpus(count: usize, seconds: f64, sample_rate: u32, base_seed: u64) -> Result<Vec<Vec<f64>>> {
    (0..count as u64)
        .map(|i| {
            generate(&SynthParams {
                kind: SignalKind::Speechlike,
                seconds,
                sample_rate,
                seed: base_seed + i,
                freq: 0.0,
            })
        })
        .collect()
}
