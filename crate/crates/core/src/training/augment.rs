//! SpecAugment masking, variational weight noise and per-item RNG streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{config_err, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Float, Tensor};

/// Independent RNG stream for `(seed, a, b)`, e.g. (seed, step, utterance).
pub fn stream(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpecAugmentConfig {
    /// Maximum frequency-mask width (`F`).
    pub freq_width: usize,
    pub freq_masks: usize,
    pub time_masks: usize,
    /// Maximum time-mask width as a fraction of the length (`pS`).
    pub time_ratio: f64,
}

impl From<&super::TrainConfig> for SpecAugmentConfig {
    fn from(c: &super::TrainConfig) -> Self {
        Self {
            freq_width: c.spec_f,
            freq_masks: c.spec_freq_masks,
            time_masks: c.spec_time_masks,
            time_ratio: c.spec_ps,
        }
    }
}

/// Zeroes random frequency bands and time spans of a `[T, D]` feature
/// matrix. No time warping.
pub fn specaugment<F: Float, R: Rng + ?Sized>(x: &Tensor<F>, cfg: &SpecAugmentConfig, rng: &mut R) -> Result<Tensor<F>> {
    let (t, d) = x.expect_matrix("features")?;
    let mut out = x.clone();
    for _ in 0..cfg.freq_masks {
        let w = rng.random_range(0..=cfg.freq_width.min(d));
        let start = rng.random_range(0..=d - w);
        for r in 0..t {
            out.row_mut(r)[start..start + w].fill(F::zero());
        }
    }
    let max_t = (cfg.time_ratio * t as f64).floor() as usize;
    for _ in 0..cfg.time_masks {
        let w = rng.random_range(0..=max_t.min(t));
        let start = rng.random_range(0..=t - w);
        for r in start..start + w {
            out.row_mut(r).fill(F::zero());
        }
    }
    Ok(out)
}

/// A copy of `store` with Gaussian noise of `std` added to `ids`.
pub fn variational_noise<F: Float, R: Rng + ?Sized>(
    store: &ParamStore<F>,
    ids: &[ParamId],
    std: f64,
    rng: &mut R,
) -> Result<ParamStore<F>> {
    if !(std >= 0.0) {
        return Err(config_err(format!("noise std must be non-negative, got {std}")));
    }
    let mut noisy = store.clone();
    if std == 0.0 {
        return Ok(noisy);
    }
    let normal = Normal::new(0.0, std).map_err(|e| config_err(e.to_string()))?;
    for &id in ids {
        for v in noisy.get_mut(id).data_mut() {
            *v = F::of(v.as_f64() + normal.sample(rng));
        }
    }
    Ok(noisy)
}
