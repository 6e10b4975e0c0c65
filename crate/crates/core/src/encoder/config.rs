//! Declarative encoder layout and the width-scaled default configuration.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Swish,
    Relu,
    /// Linear pass-through; used by receptive-field probes.
    Identity,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reduction {
    /// One stride-2 block (C3).
    #[serde(rename = "2x")]
    X2,
    /// Stride-2 blocks at C3, C7 and C14.
    #[default]
    #[serde(rename = "8x")]
    X8,
}

impl Reduction {
    pub fn strided_blocks(self) -> &'static [usize] {
        match self {
            Reduction::X2 => &[3],
            Reduction::X8 => &[3, 7, 14],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub num_layers: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    /// 1 or 2; a stride of 2 applies to the block's last conv layer.
    pub stride: usize,
    pub residual: bool,
    pub se: bool,
}

impl BlockSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 1 {
            return Err(config_err("block needs at least one conv layer"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(config_err(format!("kernel size must be odd, got {}", self.kernel_size)));
        }
        if self.out_channels < 1 {
            return Err(config_err("block needs at least one output channel"));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(config_err(format!("block stride must be 1 or 2, got {}", self.stride)));
        }
        Ok(())
    }

    /// Stride of conv layer `layer` within the block.
    pub fn layer_stride(&self, layer: usize) -> usize {
        if layer + 1 == self.num_layers {
            self.stride
        } else {
            1
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub alpha: f64,
    pub blocks: Vec<BlockSpec>,
    pub input_dim: usize,
    /// Pooling window of the SE modules in frames; `None` pools the whole
    /// utterance.
    #[serde(default)]
    pub se_window: Option<usize>,
    #[serde(default)]
    pub activation: Activation,
}

/// `x` rounded to the nearest multiple of 8, at least 8.
pub fn round_channels(x: f64) -> usize {
    (((x / 8.0).round() as usize) * 8).max(8)
}

/// SE bottleneck width for `d` channels.
pub fn se_bottleneck(d: usize) -> usize {
    (d / 8).max(1)
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(config_err(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.input_dim < 1 {
            return Err(config_err("input_dim must be positive"));
        }
        if self.blocks.is_empty() {
            return Err(config_err("encoder needs at least one block"));
        }
        if self.se_window == Some(0) {
            return Err(config_err("SE window must be >= 1"));
        }
        self.blocks.iter().try_for_each(BlockSpec::validate)
    }

    pub fn output_dim(&self) -> usize {
        self.blocks.last().map_or(self.input_dim, |b| b.out_channels)
    }

    /// Input channel count of block `i`.
    pub fn block_input_dim(&self, i: usize) -> usize {
        if i == 0 {
            self.input_dim
        } else {
            self.blocks[i - 1].out_channels
        }
    }

    /// Total temporal reduction factor.
    pub fn reduction_factor(&self) -> usize {
        self.blocks.iter().map(|b| b.stride).product()
    }

    pub fn output_len(&self, t: usize) -> usize {
        self.blocks.iter().fold(t, |t, b| t.div_ceil(b.stride))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }
}

/// The 23-block layout: channels `256a` for C0-C10, `512a` for C11-C21 and
/// `640a` for C22; C0 and C22 are single-layer blocks without residual or SE.
pub fn default_config(alpha: f64, kernel: usize, reduction: Reduction) -> Result<EncoderConfig> {
    if !(alpha > 0.0) {
        return Err(config_err(format!("alpha must be positive, got {alpha}")));
    }
    if kernel % 2 == 0 {
        return Err(config_err(format!("kernel size must be odd, got {kernel}")));
    }
    let blocks = (0..23)
        .map(|i| {
            let base = match i {
                0..=10 => 256.0,
                11..=21 => 512.0,
                _ => 640.0,
            };
            let edge = i == 0 || i == 22;
            BlockSpec {
                num_layers: if edge { 1 } else { 5 },
                out_channels: round_channels(base * alpha),
                kernel_size: kernel,
                stride: if reduction.strided_blocks().contains(&i) { 2 } else { 1 },
                residual: !edge,
                se: !edge,
            }
        })
        .collect();
    let config = EncoderConfig {
        alpha,
        blocks,
        input_dim: 80,
        se_window: None,
        activation: Activation::Swish,
    };
    config.validate()?;
    Ok(config)
}

/// Five-block version of the default layout for desk-scale experiments:
/// a single-layer stem, three strided residual blocks (8x reduction) and a
/// single-layer head.
pub fn reduced_config(alpha: f64, kernel: usize, layers_per_block: usize) -> Result<EncoderConfig> {
    let widths = [256.0, 256.0, 512.0, 512.0, 640.0];
    let blocks = widths
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let edge = i == 0 || i == 4;
            BlockSpec {
                num_layers: if edge { 1 } else { layers_per_block },
                out_channels: round_channels(w * alpha),
                kernel_size: kernel,
                stride: if edge { 1 } else { 2 },
                residual: !edge,
                se: !edge,
            }
        })
        .collect();
    let config = EncoderConfig {
        alpha,
        blocks,
        input_dim: 80,
        se_window: None,
        activation: Activation::Swish,
    };
    config.validate()?;
    Ok(config)
}
