//! Convolution blocks: `m` layers of depthwise-separable conv + BN + act,
//! optional SE on the last layer's output and a projected skip connection.

use super::config::{se_bottleneck, Activation, BlockSpec};
use super::se::{activate, se_on_tape, SeParamIds, SeWindow};
use crate::error::{Error, Result};
use crate::kernels::{BnMode, BN_EPS};
use crate::params::{Init, ParamId, ParamSource, ParamStore};
use crate::tape::{BatchStats, GradTape, Var};
use crate::tensor::Float;

/// Tape, parameters and batch-norm mode for one forward pass.
pub struct Forward<'a, F: Float> {
    pub tape: &'a mut GradTape<F>,
    pub store: &'a ParamStore<F>,
    pub mode: BnMode,
    /// Batch statistics of every training-mode batch norm, in call order.
    pub bn_updates: Vec<BnUpdate<F>>,
}

impl<'a, F: Float> Forward<'a, F> {
    pub fn new(tape: &'a mut GradTape<F>, store: &'a ParamStore<F>, mode: BnMode) -> Self {
        Self {
            tape,
            store,
            mode,
            bn_updates: Vec::new(),
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }
}

#[derive(Clone, Debug)]
pub struct BnUpdate<F: Float> {
    pub ids: BnParamIds,
    pub stats: BatchStats<F>,
}

#[derive(Clone, Copy, Debug)]
pub struct BnParamIds {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BnParamIds {
    pub fn build<F: Float>(src: &mut impl ParamSource<F>, prefix: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gamma: src.tensor(&format!("{prefix}.gamma"), &[d], Init::Ones, true)?,
            beta: src.tensor(&format!("{prefix}.beta"), &[d], Init::Zeros, true)?,
            running_mean: src.tensor(&format!("{prefix}.running_mean"), &[d], Init::Zeros, false)?,
            running_var: src.tensor(&format!("{prefix}.running_var"), &[d], Init::Ones, false)?,
        })
    }

    pub fn forward<F: Float>(&self, fw: &mut Forward<'_, F>, x: Var) -> Result<Var> {
        let gamma = fw.param(self.gamma);
        let beta = fw.param(self.beta);
        match fw.mode {
            BnMode::Train => {
                let (y, stats) = fw.tape.batch_norm_train(x, gamma, beta, BN_EPS)?;
                fw.bn_updates.push(BnUpdate { ids: *self, stats });
                Ok(y)
            }
            BnMode::Infer => fw.tape.batch_norm_infer(
                x,
                gamma,
                beta,
                fw.store.get(self.running_mean),
                fw.store.get(self.running_var),
                BN_EPS,
            ),
        }
    }
}

/// One `Act(BN(PointwiseConv(DepthwiseConv(x))))` layer.
#[derive(Clone, Debug)]
pub struct ConvLayerParams {
    pub dw_kernel: ParamId,
    pub dw_bias: ParamId,
    pub pw_weight: ParamId,
    pub pw_bias: ParamId,
    pub bn: BnParamIds,
}

impl ConvLayerParams {
    pub fn build<F: Float>(
        src: &mut impl ParamSource<F>,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        kernel: usize,
    ) -> Result<Self> {
        Ok(Self {
            dw_kernel: src.tensor(&format!("{prefix}.dw.kernel"), &[kernel, d_in], Init::glorot(kernel, kernel), true)?,
            dw_bias: src.tensor(&format!("{prefix}.dw.bias"), &[d_in], Init::Zeros, true)?,
            pw_weight: src.tensor(&format!("{prefix}.pw.weight"), &[d_in, d_out], Init::glorot(d_in, d_out), true)?,
            pw_bias: src.tensor(&format!("{prefix}.pw.bias"), &[d_out], Init::Zeros, true)?,
            bn: BnParamIds::build(src, &format!("{prefix}.bn"), d_out)?,
        })
    }

    pub fn forward<F: Float>(&self, fw: &mut Forward<'_, F>, x: Var, stride: usize, act: Activation) -> Result<Var> {
        let k = fw.param(self.dw_kernel);
        let kb = fw.param(self.dw_bias);
        let h = fw.tape.depthwise_conv(x, k, Some(kb), stride)?;
        let w = fw.param(self.pw_weight);
        let b = fw.param(self.pw_bias);
        let h = fw.tape.linear(h, w, Some(b))?;
        let h = self.bn.forward(fw, h)?;
        Ok(activate(fw.tape, h, act))
    }
}

/// Pointwise projection with batch norm on the skip path.
#[derive(Clone, Debug)]
pub struct ProjectionParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub bn: BnParamIds,
}

#[derive(Clone, Debug)]
pub struct BlockParams {
    pub layers: Vec<ConvLayerParams>,
    pub se: Option<SeParamIds>,
    pub projection: Option<ProjectionParams>,
}

impl BlockParams {
    pub fn build<F: Float>(src: &mut impl ParamSource<F>, prefix: &str, spec: &BlockSpec, d_in: usize) -> Result<Self> {
        spec.validate()?;
        let d_out = spec.out_channels;
        let layers = (0..spec.num_layers)
            .map(|l| {
                let li = if l == 0 { d_in } else { d_out };
                ConvLayerParams::build(src, &format!("{prefix}.l{l}"), li, d_out, spec.kernel_size)
            })
            .collect::<Result<Vec<_>>>()?;
        let se = if spec.se {
            Some(SeParamIds::build(src, &format!("{prefix}.se"), d_out, se_bottleneck(d_out))?)
        } else {
            None
        };
        let projection = if spec.residual {
            Some(ProjectionParams {
                weight: src.tensor(&format!("{prefix}.proj.weight"), &[d_in, d_out], Init::glorot(d_in, d_out), true)?,
                bias: src.tensor(&format!("{prefix}.proj.bias"), &[d_out], Init::Zeros, true)?,
                bn: BnParamIds::build(src, &format!("{prefix}.proj.bn"), d_out)?,
            })
        } else {
            None
        };
        Ok(Self { layers, se, projection })
    }

    /// `Act(SE(f^m(x)) + P(x))`, or just `f^m(x)` (with SE if enabled) for
    /// blocks without a residual path.
    pub fn forward<F: Float>(
        &self,
        fw: &mut Forward<'_, F>,
        spec: &BlockSpec,
        x: Var,
        act: Activation,
        window: SeWindow,
    ) -> Result<Var> {
        if self.layers.len() != spec.num_layers || self.se.is_some() != spec.se || self.projection.is_some() != spec.residual {
            return Err(Error::Config("block parameters do not match block spec".into()));
        }
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.forward(fw, h, spec.layer_stride(l), act)?;
        }
        if let Some(se) = &self.se {
            let weights = se.to_vars(fw.tape, fw.store);
            h = se_on_tape(fw.tape, h, weights, window, act)?;
        }
        if let Some(p) = &self.projection {
            let xs = fw.tape.subsample(x, spec.stride)?;
            let w = fw.param(p.weight);
            let b = fw.param(p.bias);
            let r = fw.tape.linear(xs, w, Some(b))?;
            let r = p.bn.forward(fw, r)?;
            let sum = fw.tape.add(h, r)?;
            h = activate(fw.tape, sum, act);
        }
        Ok(h)
    }
}
