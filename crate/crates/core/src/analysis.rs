//! Static cost model: parameter counts, encoder FLOPs per second of audio and
//! receptive field, computed from an [`EncoderConfig`] without building it.
//!
//! FLOP convention: a multiply-add is 2 FLOPs, a bias add or residual add 1
//! per element, batch norm and activations 4 per element. SE pooling, the
//! bottleneck and gating are included. Frame counts are kept real-valued
//! (`100 * seconds` scaled by the running length factor) so cost is exactly
//! linear in duration.

use std::fmt::Write as _;

use serde::Serialize;

use crate::encoder::{se_bottleneck, BlockSpec, EncoderConfig};
use crate::transducer::DecoderConfig;

/// Input frames per second of audio (10 ms hop).
pub const FRAMES_PER_SECOND: f64 = 100.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockCost {
    pub block: usize,
    pub params: usize,
    /// FLOPs for one second of audio.
    pub flops: f64,
    /// Output frames per input frame after this block.
    pub output_length_factor: f64,
    /// Receptive field in input frames after this block.
    pub receptive_field: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub total_params: usize,
    pub encoder_params: usize,
    pub decoder_params: usize,
    pub flops_per_second_audio: f64,
    pub receptive_field: usize,
    pub jump: usize,
    pub per_block: Vec<BlockCost>,
}

/// Trainable parameters of one block with `d_in` input channels.
pub fn block_params(spec: &BlockSpec, d_in: usize) -> usize {
    let d = spec.out_channels;
    let k = spec.kernel_size;
    let mut n = 0;
    for l in 0..spec.num_layers {
        let di = if l == 0 { d_in } else { d };
        n += k * di + di; // depthwise
        n += di * d + d; // pointwise
        n += 2 * d; // batch norm
    }
    if spec.se {
        let db = se_bottleneck(d);
        n += d * db + db + db * d + d;
    }
    if spec.residual {
        n += d_in * d + d + 2 * d;
    }
    n
}

/// FLOPs of one block for `seconds` of audio reaching it at `frames_in`
/// (possibly fractional) frames. Returns the FLOPs and the output frame
/// count. The global SE bottleneck runs once per utterance; it is charged
/// once per second of audio so cost stays linear in duration.
pub fn block_flops(spec: &BlockSpec, d_in: usize, frames_in: f64, seconds: f64, se_window: Option<usize>) -> (f64, f64) {
    let d = spec.out_channels as f64;
    let k = spec.kernel_size as f64;
    let mut flops = 0.0;
    let mut frames = frames_in;
    for l in 0..spec.num_layers {
        let di = if l == 0 { d_in as f64 } else { d };
        frames /= spec.layer_stride(l) as f64;
        flops += (2.0 * k * di + di) * frames; // depthwise + bias
        flops += (2.0 * di * d + d) * frames; // pointwise + bias
        flops += 4.0 * d * frames; // batch norm
        flops += 4.0 * d * frames; // activation
    }
    if spec.se {
        let db = se_bottleneck(spec.out_channels) as f64;
        let bottleneck = 2.0 * d * db + db + 4.0 * db + 2.0 * db * d + d + 4.0 * d;
        flops += match se_window {
            // sum over frames, one division, one gate per element
            None => d * frames + (d + bottleneck) * seconds + d * frames,
            // sliding sums (add + subtract), a division and a bottleneck per frame
            Some(_) => 3.0 * d * frames + bottleneck * frames + d * frames,
        };
    }
    if spec.residual {
        flops += (2.0 * d_in as f64 * d + d) * frames; // projection
        flops += 4.0 * d * frames; // projection batch norm
        flops += d * frames; // residual add
        flops += 4.0 * d * frames; // activation
    }
    (flops, frames)
}

/// Receptive field and frame jump after every conv layer of the encoder,
/// one entry per block.
fn receptive_fields(config: &EncoderConfig) -> Vec<(usize, usize)> {
    let mut rf = 1;
    let mut jump = 1;
    config
        .blocks
        .iter()
        .map(|b| {
            for l in 0..b.num_layers {
                rf += (b.kernel_size - 1) * jump;
                jump *= b.layer_stride(l);
            }
            (rf, jump)
        })
        .collect()
}

/// `(receptive field, jump)` in input frames for one output frame.
pub fn receptive_field(config: &EncoderConfig) -> (usize, usize) {
    receptive_fields(config).last().copied().unwrap_or((1, 1))
}

pub fn encoder_params(config: &EncoderConfig) -> usize {
    config
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| block_params(b, config.block_input_dim(i)))
        .sum()
}

/// Encoder FLOPs for `audio_seconds` of audio.
pub fn count_flops(config: &EncoderConfig, audio_seconds: f64) -> f64 {
    let seconds = audio_seconds.max(0.0);
    let mut frames = FRAMES_PER_SECOND * seconds;
    let mut total = 0.0;
    for (i, b) in config.blocks.iter().enumerate() {
        let (f, out) = block_flops(b, config.block_input_dim(i), frames, seconds, config.se_window);
        total += f;
        frames = out;
    }
    total
}

/// Full report; `decoder` adds the label encoder and joint network to the
/// total.
pub fn count_params(config: &EncoderConfig, decoder: Option<&DecoderConfig>) -> CostReport {
    let rfs = receptive_fields(config);
    let mut frames = FRAMES_PER_SECOND;
    let per_block: Vec<BlockCost> = config
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let d_in = config.block_input_dim(i);
            let (flops, out) = block_flops(b, d_in, frames, 1.0, config.se_window);
            frames = out;
            BlockCost {
                block: i,
                params: block_params(b, d_in),
                flops,
                output_length_factor: out / FRAMES_PER_SECOND,
                receptive_field: rfs[i].0,
            }
        })
        .collect();
    let encoder_params = per_block.iter().map(|b| b.params).sum();
    let decoder_params = decoder.map_or(0, |d| d.param_count(config.output_dim()));
    let (receptive_field, jump) = receptive_field(config);
    CostReport {
        total_params: encoder_params + decoder_params,
        encoder_params,
        decoder_params,
        flops_per_second_audio: per_block.iter().map(|b| b.flops).sum(),
        receptive_field,
        jump,
        per_block,
    }
}

impl CostReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Aligned plain-text rendering.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "total params      {:>14}", self.total_params);
        let _ = writeln!(s, "encoder params    {:>14}", self.encoder_params);
        let _ = writeln!(s, "decoder params    {:>14}", self.decoder_params);
        let _ = writeln!(s, "GFLOPs / s audio  {:>14.4}", self.flops_per_second_audio / 1e9);
        let _ = writeln!(s, "receptive field   {:>14} frames (jump {})", self.receptive_field, self.jump);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:>5} {:>12} {:>14} {:>10} {:>8}", "block", "params", "MFLOPs/s", "length", "rf");
        for b in &self.per_block {
            let _ = writeln!(
                s,
                "{:>5} {:>12} {:>14.3} {:>10.4} {:>8}",
                format!("C{}", b.block),
                b.params,
                b.flops / 1e6,
                b.output_length_factor,
                b.receptive_field
            );
        }
        s
    }
}
