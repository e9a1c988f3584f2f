//! Test-only oracles: naive DFTs, straight-line transcriptions and a
//! time-domain RTISI-LA reference. None of these call into the library's
//! transform code.

#![allow(dead_code)]

use std::f64::consts::PI;

use ndarray::Array2;
use phaseflow::{Complex, MagnitudeSpectrogram, Spectrogram, StftConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type C64 = Complex<f64>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_signal(seed: u64, len: usize) -> Vec<f64> {
    let mut r = rng(seed);
    (0..len).map(|_| r.random_range(-1.0..1.0)).collect()
}

pub fn random_spectrogram(seed: u64, bins: usize, frames: usize) -> Spectrogram<f64> {
    let mut r = rng(seed);
    let data = Array2::from_shape_fn((bins, frames), |_| {
        C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))
    });
    Spectrogram::new(data).unwrap()
}

pub fn random_magnitude(seed: u64, bins: usize, frames: usize) -> MagnitudeSpectrogram<f64> {
    let mut r = rng(seed);
    MagnitudeSpectrogram::new(Array2::from_shape_fn((bins, frames), |_| r.random_range(0.0..2.0))).unwrap()
}

/// One-sided DFT by direct summation.
pub fn naive_dft(frame: &[f64]) -> Vec<C64> {
    let n = frame.len();
    (0..n / 2 + 1)
        .map(|k| {
            frame.iter().enumerate().fold(C64::new(0.0, 0.0), |acc, (i, &x)| {
                let ang = -2.0 * PI * ((k * i) % n) as f64 / n as f64;
                acc + C64::new(ang.cos(), ang.sin()) * x
            })
        })
        .collect()
}

/// Real inverse of a one-sided spectrum via its Hermitian completion
/// (imaginary parts of DC and Nyquist dropped).
pub fn naive_idft(col: &[C64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let mut acc = col[0].re;
            for (k, c) in col.iter().enumerate().skip(1) {
                let ang = 2.0 * PI * ((k * i) % n) as f64 / n as f64;
                let term = (c * C64::new(ang.cos(), ang.sin())).re;
                if n.is_multiple_of(2) && k == n / 2 {
                    acc += c.re * ang.cos();
                } else {
                    acc += 2.0 * term;
                }
            }
            acc / n as f64
        })
        .collect()
}

fn padded_sample(signal: &[f64], cfg: &StftConfig<f64>, p: usize) -> f64 {
    p.checked_sub(cfg.leading_pad())
        .and_then(|i| signal.get(i))
        .copied()
        .unwrap_or(0.0)
}

pub fn naive_stft(signal: &[f64], cfg: &StftConfig<f64>, frames: usize) -> Array2<C64> {
    let (n, h) = (cfg.frame_len(), cfg.hop());
    let mut out = Array2::from_elem((cfg.bins(), frames), C64::new(0.0, 0.0));
    for l in 0..frames {
        let seg: Vec<f64> = (0..n).map(|i| padded_sample(signal, cfg, l * h + i) * cfg.window()[i]).collect();
        for (k, v) in naive_dft(&seg).into_iter().enumerate() {
            out[[k, l]] = v;
        }
    }
    out
}

fn window_floor(cfg: &StftConfig<f64>) -> f64 {
    let (n, h) = (cfg.frame_len(), cfg.hop());
    let peak = (0..h)
        .map(|o| (o..n).step_by(h).map(|i| cfg.window()[i].powi(2)).sum::<f64>())
        .fold(0.0, f64::max);
    1e-10 * peak
}

/// Least-squares overlap-add on the unpadded axis.
pub fn naive_istft(spec: &Array2<C64>, cfg: &StftConfig<f64>) -> Vec<f64> {
    let (n, h) = (cfg.frame_len(), cfg.hop());
    let frames = spec.ncols();
    let span = (frames - 1) * h + n;
    let mut num = vec![0.0; span];
    let mut den = vec![0.0; span];
    for l in 0..frames {
        let col: Vec<C64> = spec.column(l).to_vec();
        let seg = naive_idft(&col, n);
        for i in 0..n {
            num[l * h + i] += cfg.window()[i] * seg[i];
            den[l * h + i] += cfg.window()[i].powi(2);
        }
    }
    let floor = window_floor(cfg);
    num.iter()
        .zip(&den)
        .skip(cfg.leading_pad())
        .map(|(a, b)| if *b < floor || *b == 0.0 { 0.0 } else { a / b })
        .collect()
}

pub fn naive_proj_c(spec: &Array2<C64>, cfg: &StftConfig<f64>) -> Array2<C64> {
    naive_stft(&naive_istft(spec, cfg), cfg, spec.ncols())
}

pub fn proj_a_bin(x: C64, a: f64) -> C64 {
    let r = x.norm();
    if r > 0.0 {
        x / r * a
    } else {
        C64::new(a, 0.0)
    }
}

pub fn max_abs(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn fro(a: &Array2<C64>) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Time-domain RTISI-LA with the same framing, commit schedule and
/// initialization as the streaming engine: every fluid frame is held as the
/// time segment iDFT(A e^{j phi}); each iteration re-estimates the signal by
/// overlap-adding committed and fluid segments, then re-windows, transforms
/// and imposes the magnitude frame by frame.
pub fn rtisi_la(mag: &Array2<f64>, cfg: &StftConfig<f64>, lookahead: usize, iterations: usize) -> Vec<f64> {
    let (n, h) = (cfg.frame_len(), cfg.hop());
    let w = cfg.window();
    let frames = mag.ncols();
    let span = (frames - 1) * h + n;
    let floor = window_floor(cfg);
    let mut committed_num = vec![0.0; span];
    let mut committed_den = vec![0.0; span];
    // (frame index, time segment)
    let mut fluid: Vec<(usize, Vec<f64>)> = Vec::new();
    let col = |l: usize| -> Vec<f64> { mag.column(l).to_vec() };
    let impose = |spectrum: &[C64], a: &[f64]| -> Vec<f64> {
        let imposed: Vec<C64> = spectrum.iter().zip(a).map(|(&x, &a)| proj_a_bin(x, a)).collect();
        naive_idft(&imposed, n)
    };
    let zero_phase_segment = |a: &[f64]| -> Vec<f64> {
        let spec: Vec<C64> = a.iter().map(|&v| C64::new(v, 0.0)).collect();
        naive_idft(&spec, n)
    };
    let lead = cfg.leading_pad();
    let estimate = |fluid: &[(usize, Vec<f64>)], num0: &[f64], den0: &[f64], l: usize| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let p = l * h + i;
                if p < lead {
                    return 0.0;
                }
                let mut a = num0[p];
                let mut b = den0[p];
                for (j, seg) in fluid {
                    let start = j * h;
                    if p >= start && p < start + n {
                        a += w[p - start] * seg[p - start];
                        b += w[p - start].powi(2);
                    }
                }
                if b < floor || b == 0.0 {
                    0.0
                } else {
                    a / b
                }
            })
            .collect()
    };
    let windowed = |seg: &[f64]| -> Vec<f64> { seg.iter().zip(w).map(|(s, w)| s * w).collect() };

    let step = |fluid: &mut Vec<(usize, Vec<f64>)>, num0: &mut Vec<f64>, den0: &mut Vec<f64>| {
        for _ in 0..iterations {
            let snapshot = fluid.clone();
            for (j, seg) in fluid.iter_mut() {
                let est = estimate(&snapshot, num0, den0, *j);
                *seg = impose(&naive_dft(&windowed(&est)), &col(*j));
            }
        }
        let (j, seg) = fluid.remove(0);
        for i in 0..n {
            num0[j * h + i] += w[i] * seg[i];
            den0[j * h + i] += w[i].powi(2);
        }
    };

    for l in 0..frames {
        let a = col(l);
        if l <= lookahead {
            fluid.push((l, zero_phase_segment(&a)));
        } else {
            let mut trial = fluid.clone();
            trial.push((l, zero_phase_segment(&a)));
            let est = estimate(&trial, &committed_num, &committed_den, l);
            fluid.push((l, impose(&naive_dft(&windowed(&est)), &a)));
        }
        if fluid.len() == lookahead + 1 {
            step(&mut fluid, &mut committed_num, &mut committed_den);
        }
    }
    while !fluid.is_empty() {
        step(&mut fluid, &mut committed_num, &mut committed_den);
    }
    committed_num
        .iter()
        .zip(&committed_den)
        .skip(cfg.leading_pad())
        .map(|(a, b)| if *b < floor || *b == 0.0 { 0.0 } else { a / b })
        .collect()
}
