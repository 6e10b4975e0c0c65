//! 80-channel log-mel filterbank features: 25 ms Hann windows every 10 ms,
//! 512-point FFT power spectrum, triangular mel filters over 125-7600 Hz.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::wav::Waveform;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;
pub const NUM_MEL_BINS: usize = 80;
pub const FFT_SIZE: usize = 512;
pub const WINDOW_SAMPLES: usize = 400;
pub const HOP_SAMPLES: usize = 160;
pub const MEL_LOW_HZ: f64 = 125.0;
pub const MEL_HIGH_HZ: f64 = 7600.0;
pub const ENERGY_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct AcousticFeatures {
    /// `[T, 80]` log energies.
    pub frames: Tensor<f64>,
    pub frame_shift: f64,
    pub frame_length: f64,
}

impl AcousticFeatures {
    pub fn from_frames(frames: Tensor<f64>) -> Self {
        Self {
            frames,
            frame_shift: HOP_SAMPLES as f64 / SAMPLE_RATE as f64,
            frame_length: WINDOW_SAMPLES as f64 / SAMPLE_RATE as f64,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

/// Number of analysis frames for `n` samples (no end padding).
pub fn frame_count(n: usize) -> usize {
    if n < WINDOW_SAMPLES {
        0
    } else {
        (n - WINDOW_SAMPLES) / HOP_SAMPLES + 1
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Centre frequency of each mel filter in Hz.
pub fn mel_center_frequencies() -> Vec<f64> {
    mel_edges()[1..=NUM_MEL_BINS].to_vec()
}

fn mel_edges() -> Vec<f64> {
    let lo = hz_to_mel(MEL_LOW_HZ);
    let hi = hz_to_mel(MEL_HIGH_HZ);
    (0..NUM_MEL_BINS + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (NUM_MEL_BINS + 1) as f64))
        .collect()
}

/// Precomputed window, filter weights and FFT plan.
pub struct LogMelExtractor {
    window: Vec<f64>,
    /// `filters[m]` holds `(first_bin, weights)` for mel channel `m`.
    filters: Vec<(usize, Vec<f64>)>,
    fft: Arc<dyn Fft<f64>>,
}

impl Default for LogMelExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl LogMelExtractor {
    pub fn new() -> Self {
        // periodic Hann
        let window = (0..WINDOW_SAMPLES)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / WINDOW_SAMPLES as f64).cos())
            .collect();
        let edges = mel_edges();
        let bin_hz = SAMPLE_RATE as f64 / FFT_SIZE as f64;
        let filters = (0..NUM_MEL_BINS)
            .map(|m| {
                let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
                let first = (l / bin_hz).ceil() as usize;
                let last = ((r / bin_hz).floor() as usize).min(FFT_SIZE / 2);
                let weights = (first..=last)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= c {
                            ((f - l) / (c - l)).max(0.0)
                        } else {
                            ((r - f) / (r - c)).max(0.0)
                        }
                    })
                    .collect();
                (first, weights)
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
        Self { window, filters, fft }
    }

    pub fn extract(&self, w: &Waveform) -> Result<AcousticFeatures> {
        if w.sample_rate != SAMPLE_RATE {
            return Err(Error::UnsupportedRate(w.sample_rate));
        }
        let t = frame_count(w.samples.len());
        let mut out = Vec::with_capacity(t * NUM_MEL_BINS);
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
        let mut power = vec![0.0; FFT_SIZE / 2 + 1];
        for f in 0..t {
            let start = f * HOP_SAMPLES;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = if i < WINDOW_SAMPLES {
                    Complex::new(w.samples[start + i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for (first, weights) in &self.filters {
                let e: f64 = weights.iter().zip(&power[*first..]).map(|(w, p)| w * p).sum();
                out.push(e.max(ENERGY_FLOOR).ln());
            }
        }
        Ok(AcousticFeatures::from_frames(Tensor::new(&[t, NUM_MEL_BINS], out)?))
    }
}

pub fn log_mel_filterbank(w: &Waveform) -> Result<AcousticFeatures> {
    LogMelExtractor::new().extract(w)
}
