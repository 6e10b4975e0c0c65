//! Synthetic tone-sequence task: each token is a short sine tone at one of a
//! few fixed frequencies, separated by gaps and buried in white noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::augment::stream;
use crate::error::{config_err, Result};
use crate::frontend::{LogMelExtractor, Waveform, SAMPLE_RATE};
use crate::par::{self, Execution};
use crate::tensor::Tensor;
use crate::transducer::Vocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyTaskSpec {
    pub num_tones: usize,
    pub tone_secs: f64,
    pub gap_secs: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub snr_db: f64,
    pub train_utterances: usize,
    pub dev_utterances: usize,
}

impl Default for ToyTaskSpec {
    fn default() -> Self {
        Self {
            num_tones: 8,
            tone_secs: 0.1,
            gap_secs: 0.05,
            min_tokens: 1,
            max_tokens: 6,
            snr_db: 20.0,
            train_utterances: 2000,
            dev_utterances: 200,
        }
    }
}

const TONES_HZ: [f64; 12] = [
    400.0, 700.0, 1000.0, 1400.0, 1900.0, 2500.0, 3200.0, 4000.0, 4800.0, 5600.0, 6300.0, 7000.0,
];
const AMPLITUDE: f64 = 0.5;
const RAMP_SECS: f64 = 0.01;

impl ToyTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_tones == 0 || self.num_tones > TONES_HZ.len() {
            return Err(config_err(format!("num_tones must be in 1..={}", TONES_HZ.len())));
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return Err(config_err("need 1 <= min_tokens <= max_tokens"));
        }
        if !(self.tone_secs > 0.0) || !(self.gap_secs >= 0.0) {
            return Err(config_err("tone and gap durations must be positive"));
        }
        if self.dev_utterances == 0 || self.train_utterances == 0 {
            return Err(config_err("train and dev sets must be non-empty"));
        }
        Ok(())
    }

    pub fn frequencies(&self) -> &[f64] {
        &TONES_HZ[..self.num_tones]
    }

    /// Blank plus `tone0 .. tone{n-1}`.
    pub fn vocab(&self) -> Vocab {
        Vocab::with_labels((0..self.num_tones).map(|i| format!("tone{i}"))).expect("distinct tone names")
    }

    /// Audio for a token sequence (token ids start at 1). The signal has a
    /// leading and trailing gap; noise is added at `snr_db` relative to the
    /// tone power.
    pub fn synthesize<R: Rng + ?Sized>(&self, labels: &[usize], rng: &mut R) -> Result<Waveform> {
        let sr = SAMPLE_RATE as f64;
        let tone_n = (self.tone_secs * sr).round() as usize;
        let gap_n = (self.gap_secs * sr).round() as usize;
        let ramp_n = ((RAMP_SECS * sr) as usize).min(tone_n / 2).max(1);
        let mut samples = vec![0.0; gap_n];
        for &label in labels {
            if label == 0 || label > self.num_tones {
                return Err(config_err(format!("tone label {label} out of range")));
            }
            let f = TONES_HZ[label - 1];
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            for i in 0..tone_n {
                let edge = i.min(tone_n - 1 - i);
                let env = if edge < ramp_n {
                    0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / ramp_n as f64).cos()
                } else {
                    1.0
                };
                samples.push(AMPLITUDE * env * (std::f64::consts::TAU * f * i as f64 / sr + phase).sin());
            }
            samples.extend(std::iter::repeat_n(0.0, gap_n));
        }
        let noise_std = (AMPLITUDE * AMPLITUDE / 2.0 / 10f64.powf(self.snr_db / 10.0)).sqrt();
        let noise = Normal::new(0.0, noise_std).map_err(|e| config_err(e.to_string()))?;
        for s in &mut samples {
            *s += noise.sample(rng);
        }
        Waveform::new(samples, SAMPLE_RATE)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    /// `[T, 80]` log-mel features.
    pub features: Tensor<f32>,
    pub labels: Vec<usize>,
}

/// `count` utterances; utterance `i` depends only on `(seed, i)`.
pub fn generate(task: &ToyTaskSpec, count: usize, seed: u64, exec: Execution) -> Result<Vec<Utterance>> {
    task.validate()?;
    let extractor = LogMelExtractor::new();
    let idx: Vec<u64> = (0..count as u64).collect();
    par::map(exec, &idx, |_, &i| {
        let mut rng = stream(seed, u64::MAX, i);
        let n = rng.random_range(task.min_tokens..=task.max_tokens);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(1..=task.num_tones)).collect();
        let wave = task.synthesize(&labels, &mut rng)?;
        let feats = extractor.extract(&wave)?;
        Ok(Utterance {
            features: feats.frames.cast(),
            labels,
        })
    })
    .into_iter()
    .collect()
}
