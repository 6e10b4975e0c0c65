//! Encoder, label encoder and joint network assembled into one model.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decode::{greedy_decode, StepModel};
use super::joint::{joint_on_tape, JointWeights};
use super::loss::{rnnt_loss_on_tape, validate_labels};
use super::lstm::{lstm_sequence_on_tape, lstm_step, LstmState, LstmWeights};
use super::vocab::{Vocab, BLANK_ID};
use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::encoder::{Activation, BlockSpec, Encoder, EncoderConfig, Forward};
use crate::error::{config_err, Error, Result};
use crate::kernels::{conv1d_pointwise, BnMode};
use crate::params::{Init, Initializer, ParamId, ParamSource, ParamStore};
use crate::tape::{GradTape, Var};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub vocab_size: usize,
    /// Label-encoder input (embedding) width.
    pub embed_dim: usize,
    /// LSTM hidden size.
    pub hidden_dim: usize,
    pub joint_dim: usize,
}

impl DecoderConfig {
    /// The reference decoder used for parameter accounting: 640-wide
    /// embedding, LSTM and joint.
    pub fn reference(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 640,
            hidden_dim: 640,
            joint_dim: 640,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(config_err("vocabulary needs blank plus at least one token"));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.joint_dim == 0 {
            return Err(config_err("decoder dimensions must be positive"));
        }
        Ok(())
    }

    /// Trainable scalars in the label encoder and joint network, given the
    /// encoder output width.
    pub fn param_count(&self, enc_dim: usize) -> usize {
        let (v, e, h, j) = (self.vocab_size, self.embed_dim, self.hidden_dim, self.joint_dim);
        let embedding = v * e;
        let lstm = e * 4 * h + h * 4 * h + 4 * h;
        let joint = enc_dim * j + h * j + j + j * v + v;
        embedding + lstm + joint
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderParamIds {
    pub embedding: ParamId,
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub lstm_bias: ParamId,
    pub enc_proj: ParamId,
    pub pred_proj: ParamId,
    pub joint_bias: ParamId,
    pub out_proj: ParamId,
    pub out_bias: ParamId,
}

impl DecoderParamIds {
    pub fn build<F: Float>(src: &mut impl ParamSource<F>, cfg: &DecoderConfig, enc_dim: usize) -> Result<Self> {
        let (v, e, h, j) = (cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.joint_dim);
        Ok(Self {
            embedding: src.tensor("decoder.embedding", &[v, e], Init::glorot(v, e), true)?,
            w_ih: src.tensor("decoder.lstm.w_ih", &[e, 4 * h], Init::glorot(e, h), true)?,
            w_hh: src.tensor("decoder.lstm.w_hh", &[h, 4 * h], Init::glorot(h, h), true)?,
            lstm_bias: src.tensor("decoder.lstm.bias", &[4 * h], Init::Zeros, true)?,
            enc_proj: src.tensor("joint.enc_proj", &[enc_dim, j], Init::glorot(enc_dim, j), true)?,
            pred_proj: src.tensor("joint.pred_proj", &[h, j], Init::glorot(h, j), true)?,
            joint_bias: src.tensor("joint.bias", &[j], Init::Zeros, true)?,
            out_proj: src.tensor("joint.out_proj", &[j, v], Init::glorot(j, v), true)?,
            out_bias: src.tensor("joint.out_bias", &[v], Init::Zeros, true)?,
        })
    }

    /// Weight matrices of the label encoder and joint network (biases
    /// excluded); the targets of variational noise.
    pub fn weights(&self) -> [ParamId; 6] {
        [self.embedding, self.w_ih, self.w_hh, self.enc_proj, self.pred_proj, self.out_proj]
    }

    pub fn all(&self) -> [ParamId; 9] {
        [
            self.embedding,
            self.w_ih,
            self.w_hh,
            self.lstm_bias,
            self.enc_proj,
            self.pred_proj,
            self.joint_bias,
            self.out_proj,
            self.out_bias,
        ]
    }

    pub fn lstm<F: Float>(&self, store: &ParamStore<F>) -> LstmWeights<F> {
        LstmWeights {
            w_ih: store.get(self.w_ih).clone(),
            w_hh: store.get(self.w_hh).clone(),
            bias: store.get(self.lstm_bias).clone(),
        }
    }

    pub fn joint<F: Float>(&self, store: &ParamStore<F>) -> JointWeights<F> {
        JointWeights {
            enc_proj: store.get(self.enc_proj).clone(),
            pred_proj: store.get(self.pred_proj).clone(),
            bias: store.get(self.joint_bias).clone(),
            out_proj: store.get(self.out_proj).clone(),
            out_bias: store.get(self.out_bias).clone(),
        }
    }
}

/// Parameter layout of a transducer; the values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Transducer {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: DecoderParamIds,
}

impl Transducer {
    pub fn build<F: Float>(config: ModelConfig, src: &mut impl ParamSource<F>) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::build(config.encoder.clone(), src, "encoder")?;
        let decoder = DecoderParamIds::build(src, &config.decoder, config.encoder.output_dim())?;
        Ok(Self { config, encoder, decoder })
    }

    pub fn vocab_size(&self) -> usize {
        self.config.decoder.vocab_size
    }

    /// Records encoder, label encoder, joint and loss for one utterance.
    /// `features` is `[T, input_dim]`; returns the scalar loss node.
    pub fn forward_loss<F: Float>(&self, fw: &mut Forward<'_, F>, features: Var, labels: &[usize]) -> Result<Var> {
        validate_labels(labels, BLANK_ID, self.vocab_size())?;
        let enc = self.encoder.forward(fw, features)?;
        let frames = fw.tape.value(enc).rows();
        let d = &self.decoder;
        let mut inputs = Vec::with_capacity(labels.len() + 1);
        inputs.push(BLANK_ID);
        inputs.extend_from_slice(labels);
        let table = fw.param(d.embedding);
        let emb = fw.tape.gather(table, &inputs)?;
        let (wi, wh, b) = (fw.param(d.w_ih), fw.param(d.w_hh), fw.param(d.lstm_bias));
        let pred = lstm_sequence_on_tape(fw.tape, emb, wi, wh, b)?;
        let jw = [
            fw.param(d.enc_proj),
            fw.param(d.pred_proj),
            fw.param(d.joint_bias),
            fw.param(d.out_proj),
            fw.param(d.out_bias),
        ];
        let logits = joint_on_tape(fw.tape, enc, pred, jw)?;
        rnnt_loss_on_tape(fw.tape, logits, frames, labels, BLANK_ID)
    }

    /// Inference-mode loss value (no gradients kept).
    pub fn loss<F: Float>(&self, store: &ParamStore<F>, features: &Tensor<F>, labels: &[usize]) -> Result<f64> {
        let mut tape = GradTape::new();
        let x = tape.leaf(features.clone());
        let mut fw = Forward::new(&mut tape, store, BnMode::Infer);
        let l = self.forward_loss(&mut fw, x, labels)?;
        Ok(tape.value(l).data()[0].as_f64())
    }

    /// Greedy decode of a `[T, input_dim]` feature sequence.
    pub fn decode<F: Float>(&self, store: &ParamStore<F>, features: &Tensor<F>) -> Result<Vec<usize>> {
        let enc = self.encoder.encode(store, features)?;
        let scorer = GreedyScorer::new(self, store, &enc)?;
        Ok(greedy_decode(&scorer, enc.rows(), BLANK_ID))
    }
}

/// Step-wise label encoder and joint over a fixed encoder output.
pub struct GreedyScorer<F: Float> {
    enc_part: Tensor<F>,
    embedding: Tensor<F>,
    lstm: LstmWeights<F>,
    joint: JointWeights<F>,
}

#[derive(Clone, Debug)]
pub struct ScorerState<F: Float> {
    lstm: LstmState<F>,
    /// `pred_proj . h + bias`
    pred_part: Vec<F>,
}

impl<F: Float> GreedyScorer<F> {
    pub fn new(net: &Transducer, store: &ParamStore<F>, enc: &Tensor<F>) -> Result<Self> {
        let joint = net.decoder.joint(store);
        Ok(Self {
            enc_part: conv1d_pointwise(enc, &joint.enc_proj, None)?,
            embedding: store.get(net.decoder.embedding).clone(),
            lstm: net.decoder.lstm(store),
            joint,
        })
    }

    fn step(&self, state: &LstmState<F>, token: usize) -> ScorerState<F> {
        let lstm = lstm_step(self.embedding.row(token), state, &self.lstm).expect("shapes checked at build");
        let h = Tensor::new(&[1, lstm.h.len()], lstm.h.clone()).expect("row vector");
        let pred_part = conv1d_pointwise(&h, &self.joint.pred_proj, Some(&self.joint.bias))
            .expect("shapes checked at build")
            .into_data();
        ScorerState { lstm, pred_part }
    }
}

impl<F: Float> StepModel for GreedyScorer<F> {
    type State = ScorerState<F>;

    fn start(&self) -> Self::State {
        self.step(&LstmState::zeros(self.lstm.hidden()), BLANK_ID)
    }

    fn advance(&self, state: &Self::State, token: usize) -> Self::State {
        self.step(&state.lstm, token)
    }

    fn logits(&self, frame: usize, state: &Self::State) -> Vec<f64> {
        let h: Vec<F> = self
            .enc_part
            .row(frame)
            .iter()
            .zip(&state.pred_part)
            .map(|(&a, &b)| (a + b).tanh())
            .collect();
        let h = Tensor::new(&[1, h.len()], h).expect("row vector");
        conv1d_pointwise(&h, &self.joint.out_proj, Some(&self.joint.out_bias))
            .expect("shapes checked at build")
            .to_f64_vec()
    }
}

/// A transducer together with its parameter values and vocabulary.
#[derive(Clone, Debug)]
pub struct TransducerModel<F: Float = f32> {
    pub net: Transducer,
    pub store: ParamStore<F>,
    pub vocab: Vocab,
}

fn vocab_mismatch(checkpoint: usize, vocab: usize) -> Error {
    Error::Vocab(format!(
        "checkpoint expects a vocabulary of {checkpoint} tokens but the vocabulary file has {vocab}"
    ))
}

impl<F: Float> TransducerModel<F> {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        if config.decoder.vocab_size != vocab.len() {
            return Err(vocab_mismatch(config.decoder.vocab_size, vocab.len()));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Transducer::build(config, &mut Initializer { store: &mut store, rng: &mut rng })?;
        Ok(Self { net, store, vocab })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn decode(&self, features: &Tensor<F>) -> Result<Vec<usize>> {
        self.net.decode(&self.store, features)
    }

    pub fn transcribe(&self, features: &Tensor<F>) -> Result<String> {
        Ok(self.vocab.render(&self.decode(features)?))
    }

    /// Parameters plus `meta.*` tensors describing the architecture.
    pub fn checkpoint_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out = meta_tensors(self.config());
        out.extend(self.store.entries().map(|(_, e)| (e.name.clone(), e.value.cast::<f32>())));
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_checkpoint(path, &self.checkpoint_tensors())
    }

    pub fn from_tensors(tensors: &[(String, Tensor<f32>)], vocab: Vocab) -> Result<Self> {
        let config = config_from_meta(tensors)?;
        let mut model = Self::new(config, vocab.clone(), 0).map_err(|e| match e {
            Error::Vocab(_) => vocab_mismatch(config_vocab(tensors).unwrap_or(0), vocab.len()),
            other => other,
        })?;
        let mut loaded = ParamStore::<F>::new();
        for (name, t) in tensors.iter().filter(|(n, _)| !n.starts_with("meta.")) {
            loaded.add(name.clone(), t.cast(), true)?;
        }
        model.store.load_from(&loaded).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>, vocab: Vocab) -> Result<Self> {
        Self::from_tensors(&read_checkpoint(path)?, vocab)
    }
}

fn activation_code(a: Activation) -> f32 {
    match a {
        Activation::Swish => 0.0,
        Activation::Relu => 1.0,
        Activation::Identity => 2.0,
    }
}

fn meta_tensors(config: &ModelConfig) -> Vec<(String, Tensor<f32>)> {
    let enc = &config.encoder;
    let mut blocks = Vec::with_capacity(enc.blocks.len() * 6);
    for b in &enc.blocks {
        blocks.extend([
            b.num_layers as f32,
            b.out_channels as f32,
            b.kernel_size as f32,
            b.stride as f32,
            b.residual as u8 as f32,
            b.se as u8 as f32,
        ]);
    }
    let d = &config.decoder;
    vec![
        (
            "meta.blocks".into(),
            Tensor::new(&[enc.blocks.len(), 6], blocks).expect("6 fields per block"),
        ),
        (
            "meta.encoder".into(),
            Tensor::vector(vec![
                enc.alpha as f32,
                enc.input_dim as f32,
                enc.se_window.map_or(-1.0, |w| w as f32),
                activation_code(enc.activation),
            ]),
        ),
        (
            "meta.decoder".into(),
            Tensor::vector(vec![
                d.vocab_size as f32,
                d.embed_dim as f32,
                d.hidden_dim as f32,
                d.joint_dim as f32,
            ]),
        ),
    ]
}

fn meta<'a>(tensors: &'a [(String, Tensor<f32>)], name: &str, len: usize) -> Result<&'a Tensor<f32>> {
    let t = tensors
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| Error::Checkpoint(format!("missing {name}")))?;
    if t.len() % len != 0 || t.is_empty() {
        return Err(Error::Checkpoint(format!("malformed {name}")));
    }
    Ok(t)
}

fn count(v: f32, what: &str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::Checkpoint(format!("invalid {what}: {v}")))
    }
}

fn config_vocab(tensors: &[(String, Tensor<f32>)]) -> Option<usize> {
    meta(tensors, "meta.decoder", 4).ok().map(|t| t.data()[0] as usize)
}

fn config_from_meta(tensors: &[(String, Tensor<f32>)]) -> Result<ModelConfig> {
    let b = meta(tensors, "meta.blocks", 6)?.data();
    let blocks = b
        .chunks_exact(6)
        .map(|c| {
            Ok(BlockSpec {
                num_layers: count(c[0], "num_layers")?,
                out_channels: count(c[1], "out_channels")?,
                kernel_size: count(c[2], "kernel_size")?,
                stride: count(c[3], "stride")?,
                residual: c[4] != 0.0,
                se: c[5] != 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let e = meta(tensors, "meta.encoder", 4)?.data();
    let activation = match e[3] as i32 {
        0 => Activation::Swish,
        1 => Activation::Relu,
        2 => Activation::Identity,
        _ => return Err(Error::Checkpoint(format!("unknown activation code {}", e[3]))),
    };
    let d = meta(tensors, "meta.decoder", 4)?.data();
    let config = ModelConfig {
        encoder: EncoderConfig {
            alpha: e[0] as f64,
            blocks,
            input_dim: count(e[1], "input_dim")?,
            se_window: if e[2] < 0.0 { None } else { Some(count(e[2], "se_window")?) },
            activation,
        },
        decoder: DecoderConfig {
            vocab_size: count(d[0], "vocab_size")?,
            embed_dim: count(d[1], "embed_dim")?,
            hidden_dim: count(d[2], "hidden_dim")?,
            joint_dim: count(d[3], "joint_dim")?,
        },
    };
    config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::reduced_config;

    fn small() -> (ModelConfig, Vocab) {
        let vocab = Vocab::with_labels(["a", "b", "c"]).unwrap();
        let config = ModelConfig {
            encoder: reduced_config(0.125, 3, 2).unwrap(),
            decoder: DecoderConfig {
                vocab_size: 4,
                embed_dim: 8,
                hidden_dim: 12,
                joint_dim: 10,
            },
        };
        (config, vocab)
    }

    #[test]
    fn decoder_count_matches_store() {
        let (config, vocab) = small();
        let m = TransducerModel::<f32>::new(config.clone(), vocab, 1).unwrap();
        let counted: usize = m.net.decoder.all().iter().map(|&id| m.store.get(id).len()).sum();
        assert_eq!(counted, config.decoder.param_count(config.encoder.output_dim()));
    }

    #[test]
    fn checkpoint_round_trip_preserves_decoding() {
        let (config, vocab) = small();
        let m = TransducerModel::<f32>::new(config.clone(), vocab.clone(), 5).unwrap();
        let back = TransducerModel::<f32>::from_tensors(&m.checkpoint_tensors(), vocab).unwrap();
        assert_eq!(back.config(), &config);
        let x = Tensor::from_f64(&[24, 80], &(0..24 * 80).map(|i| ((i as f64) * 0.37).sin()).collect::<Vec<_>>()).unwrap();
        assert_eq!(m.decode(&x).unwrap(), back.decode(&x).unwrap());
        for ((_, a), (_, b)) in m.store.entries().zip(back.store.entries()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn vocab_size_mismatch_names_both() {
        let (config, vocab) = small();
        let m = TransducerModel::<f32>::new(config, vocab, 5).unwrap();
        let other = Vocab::with_labels(["a", "b"]).unwrap();
        let err = TransducerModel::<f32>::from_tensors(&m.checkpoint_tensors(), other).unwrap_err().to_string();
        assert!(err.contains('4') && err.contains('3'), "{err}");
    }

    #[test]
    fn decoded_tokens_never_blank() {
        let (config, vocab) = small();
        for seed in 0..5 {
            let m = TransducerModel::<f64>::new(config.clone(), vocab.clone(), seed).unwrap();
            let x = Tensor::<f64>::full(&[16, 80], seed as f64 - 2.0);
            let out = m.decode(&x).unwrap();
            assert!(out.iter().all(|&k| k != BLANK_ID && k < 4));
        }
    }

    #[test]
    fn loss_is_positive_and_rejects_blank() {
        let (config, vocab) = small();
        let m = TransducerModel::<f64>::new(config, vocab, 2).unwrap();
        let x = Tensor::<f64>::full(&[16, 80], 0.5);
        assert!(m.net.loss(&m.store, &x, &[1, 2]).unwrap() > 0.0);
        assert!(matches!(m.net.loss(&m.store, &x, &[0]), Err(Error::InvalidLabel { .. })));
    }
}
