//! The convolutional audio encoder: a stack of [`BlockSpec`] blocks applied
//! in order to `[T, 80]` features.

mod block;
mod config;
mod se;

pub use block::{BlockParams, BnParamIds, BnUpdate, ConvLayerParams, Forward, ProjectionParams};
pub use config::{
    default_config, reduced_config, round_channels, se_bottleneck, Activation, BlockSpec, EncoderConfig, Reduction,
};
pub use se::{se_module, se_on_tape, SeParamIds, SeParams, SeWindow};

use crate::error::{ensure_eq, Error, Result};
use crate::kernels::BnMode;
use crate::params::{Lookup, ParamSource, ParamStore};
use crate::tape::{GradTape, Var};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub blocks: Vec<BlockParams>,
}

impl Encoder {
    /// Builds the encoder's tensors under `prefix` (`"{prefix}.b03.l2.dw.kernel"`, ...).
    pub fn build<F: Float>(config: EncoderConfig, src: &mut impl ParamSource<F>, prefix: &str) -> Result<Self> {
        config.validate()?;
        let blocks = config
            .blocks
            .iter()
            .enumerate()
            .map(|(i, spec)| BlockParams::build(src, &format!("{prefix}.b{i:02}"), spec, config.block_input_dim(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, blocks })
    }

    /// Resolves an encoder whose tensors are already in `store`.
    pub fn from_store<F: Float>(config: EncoderConfig, store: &ParamStore<F>, prefix: &str) -> Result<Self> {
        Self::build(config, &mut Lookup { store }, prefix)
    }

    pub fn window(&self) -> SeWindow {
        self.config.se_window.into()
    }

    /// Records the encoder on `fw.tape`; `x` is `[T, input_dim]`.
    pub fn forward<F: Float>(&self, fw: &mut Forward<'_, F>, x: Var) -> Result<Var> {
        let (t, d) = fw.tape.value(x).expect_matrix("encoder input")?;
        ensure_eq("encoder input dimension", d, self.config.input_dim)?;
        if t == 0 {
            return Err(Error::EmptyInput("encoder input has zero frames".into()));
        }
        let mut h = x;
        for (spec, params) in self.config.blocks.iter().zip(&self.blocks) {
            h = params.forward(fw, spec, h, self.config.activation, self.window())?;
        }
        Ok(h)
    }

    /// Inference-mode encoding of a `[T, input_dim]` sequence.
    pub fn encode<F: Float>(&self, store: &ParamStore<F>, features: &Tensor<F>) -> Result<Tensor<F>> {
        let mut tape = GradTape::new();
        let x = tape.leaf(features.clone());
        let mut fw = Forward::new(&mut tape, store, BnMode::Infer);
        let y = self.forward(&mut fw, x)?;
        Ok(tape.value(y).clone())
    }
}

/// Applies one conv block to `x` outside of any training context.
pub fn conv_block<F: Float>(
    x: &Tensor<F>,
    spec: &BlockSpec,
    params: &BlockParams,
    store: &ParamStore<F>,
    mode: BnMode,
) -> Result<Tensor<F>> {
    let mut tape = GradTape::new();
    let xv = tape.leaf(x.clone());
    let mut fw = Forward::new(&mut tape, store, mode);
    let y = params.forward(&mut fw, spec, xv, Activation::Swish, SeWindow::Global)?;
    Ok(tape.value(y).clone())
}

/// Folds averaged batch statistics into the running estimates.
///
/// `updates` holds, per utterance, the statistics of every batch norm in
/// forward order; all utterances must have run the same network.
pub fn apply_bn_updates<F: Float>(store: &mut ParamStore<F>, updates: &[Vec<BnUpdate<F>>], momentum: f64) -> Result<()> {
    let Some(first) = updates.first() else {
        return Ok(());
    };
    let n = F::of(updates.len() as f64);
    for (k, u) in first.iter().enumerate() {
        let mut mean = Tensor::zeros(u.stats.mean.shape());
        let mut var = Tensor::zeros(u.stats.var.shape());
        for per_utt in updates {
            let other = per_utt
                .get(k)
                .ok_or_else(|| Error::Config("utterances recorded different batch norms".into()))?;
            mean.add_assign(&other.stats.mean)?;
            var.add_assign(&other.stats.var)?;
        }
        let m = F::of(momentum);
        let one_m = F::one() - m;
        let rm = store.get_mut(u.ids.running_mean);
        for (r, &b) in rm.data_mut().iter_mut().zip(mean.data()) {
            *r = m * *r + one_m * (b / n);
        }
        let rv = store.get_mut(u.ids.running_var);
        for (r, &b) in rv.data_mut().iter_mut().zip(var.data()) {
            *r = m * *r + one_m * (b / n);
        }
    }
    Ok(())
}
