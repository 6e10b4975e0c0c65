//! Batch training loop and the end-to-end toy run.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::augment::{specaugment, stream, variational_noise, SpecAugmentConfig};
use super::config::{lr_schedule, TrainConfig};
use super::toy::{generate, ToyTaskSpec, Utterance};
use crate::encoder::{apply_bn_updates, reduced_config, BnUpdate, Forward};
use crate::error::{config_err, Error, Result};
use crate::kernels::{BnMode, BN_MOMENTUM};
use crate::par::{self, Execution};
use crate::params::{ParamId, ParamStore};
use crate::tape::GradTape;
use crate::tensor::Tensor;
use crate::transducer::{DecoderConfig, ModelConfig, TransducerModel};

/// Stream ids separating the RNG uses of one seed.
const DATA_TRAIN: u64 = 1;
const DATA_DEV: u64 = 2;
const SHUFFLE: u64 = 3;
const NOISE: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_token_error_rate: f64,
}

/// Everything a toy run needs; the JSON form is the `--config` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyRunConfig {
    pub task: ToyTaskSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// 5-block encoder at alpha = 0.125 with a small decoder.
pub fn toy_model_config(task: &ToyTaskSpec) -> ModelConfig {
    ModelConfig {
        encoder: reduced_config(0.125, 5, 5).expect("valid reduced config"),
        decoder: DecoderConfig {
            vocab_size: task.num_tones + 1,
            embed_dim: 32,
            hidden_dim: 64,
            joint_dim: 64,
        },
    }
}

impl Default for ToyRunConfig {
    fn default() -> Self {
        let task = ToyTaskSpec::default();
        Self {
            model: toy_model_config(&task),
            task,
            train: TrainConfig {
                warmup_steps: 1_000,
                target_dev_error: Some(0.03),
                ..TrainConfig::default()
            },
        }
    }
}

impl ToyRunConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.decoder.vocab_size != self.task.num_tones + 1 {
            return Err(config_err(format!(
                "decoder vocab_size {} does not match {} tones plus blank",
                self.model.decoder.vocab_size, self.task.num_tones
            )));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

/// Token error rate: total edit distance over total reference tokens.
pub fn token_error_rate(model: &TransducerModel<f32>, data: &[Utterance], exec: Execution) -> Result<f64> {
    let per_utt = par::map(exec, data, |_, u| {
        let hyp = model.decode(&u.features)?;
        Ok::<_, Error>((strsim::generic_levenshtein(&hyp, &u.labels), u.labels.len()))
    });
    let (mut errors, mut total) = (0usize, 0usize);
    for r in per_utt {
        let (e, n) = r?;
        errors += e;
        total += n;
    }
    Ok(if total == 0 { 0.0 } else { errors as f64 / total as f64 })
}

pub struct BatchResult {
    /// Mean utterance loss.
    pub loss: f64,
    /// Mean gradient per trainable parameter.
    pub grads: BTreeMap<ParamId, Tensor<f32>>,
    pub bn_updates: Vec<Vec<BnUpdate<f32>>>,
}

pub struct Trainer {
    pub model: TransducerModel<f32>,
    pub cfg: TrainConfig,
    pub exec: Execution,
    pub step: u64,
    adam: AdamState,
}

impl Trainer {
    pub fn new(model: TransducerModel<f32>, cfg: TrainConfig, exec: Execution) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            model,
            cfg,
            exec,
            step: 0,
            adam: AdamState::new(),
        })
    }

    /// Loss and mean gradients over `batch` against `store`, with
    /// SpecAugment drawn from the `(seed, step, index)` streams. Utterances
    /// are processed independently and reduced in batch order.
    pub fn batch_gradients(&self, store: &ParamStore<f32>, batch: &[&Utterance], step: u64) -> Result<BatchResult> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        let sa = SpecAugmentConfig::from(&self.cfg);
        let net = &self.model.net;
        let seed = self.cfg.seed;
        let results = par::map(self.exec, batch, |i, u| {
            let mut rng = stream(seed, step, i as u64);
            let feats = specaugment(&u.features, &sa, &mut rng)?;
            let mut tape = GradTape::new();
            let x = tape.leaf(feats);
            let mut fw = Forward::new(&mut tape, store, BnMode::Train);
            let loss = net.forward_loss(&mut fw, x, &u.labels)?;
            let bn = std::mem::take(&mut fw.bn_updates);
            let value = tape.value(loss).data()[0] as f64;
            let grads = tape.backward(loss)?.into_params();
            Ok::<_, Error>((value, grads, bn))
        });
        let scale = 1.0 / batch.len() as f32;
        let mut loss = 0.0;
        let mut grads: BTreeMap<ParamId, Tensor<f32>> = BTreeMap::new();
        let mut bn_updates = Vec::with_capacity(batch.len());
        for r in results {
            let (l, g, bn) = r?;
            loss += l;
            for (id, t) in g {
                match grads.get_mut(&id) {
                    Some(acc) => acc.add_assign(&t)?,
                    None => {
                        grads.insert(id, t);
                    }
                }
            }
            bn_updates.push(bn);
        }
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
        Ok(BatchResult {
            loss: loss / batch.len() as f64,
            grads,
            bn_updates,
        })
    }

    /// One optimiser step; returns the batch loss.
    pub fn train_step(&mut self, batch: &[&Utterance]) -> Result<f64> {
        let step = self.step + 1;
        let lr = lr_schedule(step, &self.cfg)?;
        let noisy;
        let store = if self.cfg.vn_std > 0.0 && step >= self.cfg.vn_start_step {
            let mut rng = stream(self.cfg.seed, step, NOISE << 32);
            noisy = variational_noise(&self.model.store, &self.model.net.decoder.weights(), self.cfg.vn_std, &mut rng)?;
            &noisy
        } else {
            &self.model.store
        };
        let r = self.batch_gradients(store, batch, step).map_err(|e| match e {
            Error::Numeric(detail) => Error::Diverged {
                step: step as usize,
                detail,
            },
            other => other,
        })?;
        if !r.loss.is_finite() {
            return Err(Error::Diverged {
                step: step as usize,
                detail: format!("loss is {}", r.loss),
            });
        }
        if let Some((id, _)) = r.grads.iter().find(|(_, g)| !g.all_finite()) {
            return Err(Error::Diverged {
                step: step as usize,
                detail: format!("non-finite gradient for {}", self.model.store.entry(*id).name),
            });
        }
        adam_step(&mut self.model.store, &r.grads, &mut self.adam, lr, &AdamConfig::from(&self.cfg))?;
        apply_bn_updates(&mut self.model.store, &r.bn_updates, BN_MOMENTUM)?;
        self.step = step;
        Ok(r.loss)
    }
}

/// Deterministic epoch-shuffled batches.
struct Batcher {
    n: usize,
    seed: u64,
    epoch: Option<u64>,
    order: Vec<usize>,
}

impl Batcher {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            epoch: None,
            order: Vec::new(),
        }
    }

    /// Indices of the batch for 1-based `step`.
    fn batch(&mut self, step: u64, size: usize) -> Vec<usize> {
        (0..size)
            .map(|k| {
                let pos = (step - 1) * size as u64 + k as u64;
                let epoch = pos / self.n as u64;
                if self.epoch != Some(epoch) {
                    self.order = (0..self.n).collect();
                    self.order.shuffle(&mut stream(self.seed, epoch, SHUFFLE << 32));
                    self.epoch = Some(epoch);
                }
                self.order[(pos % self.n as u64) as usize]
            })
            .collect()
    }
}

pub struct ToyOutcome {
    pub model: TransducerModel<f32>,
    pub metrics: Vec<MetricsRecord>,
    pub dev: Vec<Utterance>,
}

/// Files written by a toy run.
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint.cnck")
    }
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }
    pub fn vocab(&self) -> PathBuf {
        self.dir.join("vocab.txt")
    }
    pub fn config(&self) -> PathBuf {
        self.dir.join("config.json")
    }
}

/// Generates the toy data, trains until `max_steps` or the dev target, and
/// (with `out`) writes vocab, config, metrics and checkpoint. The output
/// directory is prepared before any training work.
pub fn train_toy(
    run: &ToyRunConfig,
    exec: Execution,
    out: Option<&Path>,
    mut on_record: impl FnMut(&MetricsRecord),
) -> Result<ToyOutcome> {
    run.validate()?;
    let vocab = run.task.vocab();
    let files = out.map(|d| RunFiles { dir: d.to_path_buf() });
    let mut metrics_file = match &files {
        Some(f) => {
            fs::create_dir_all(&f.dir)?;
            vocab.save(f.vocab())?;
            fs::write(f.config(), run.to_json())?;
            Some(BufWriter::new(File::create(f.metrics())?))
        }
        None => None,
    };

    let seed = run.train.seed;
    let train = generate(&run.task, run.task.train_utterances, seed ^ (DATA_TRAIN << 48), exec)?;
    let dev = generate(&run.task, run.task.dev_utterances, seed ^ (DATA_DEV << 48), exec)?;
    let model = TransducerModel::<f32>::new(run.model.clone(), vocab, seed)?;
    let mut trainer = Trainer::new(model, run.train.clone(), exec)?;
    let mut batcher = Batcher::new(train.len(), seed);
    let batch_size = run.train.batch_size;

    let mut metrics = Vec::new();
    let mut emit = |rec: MetricsRecord, metrics: &mut Vec<MetricsRecord>| -> Result<()> {
        if let Some(w) = metrics_file.as_mut() {
            writeln!(w, "{}", serde_json::to_string(&rec)?)?;
            w.flush()?;
        }
        on_record(&rec);
        metrics.push(rec);
        Ok(())
    };

    // step 0: untrained model on the first batch
    let first: Vec<&Utterance> = batcher.batch(1, batch_size).into_iter().map(|i| &train[i]).collect();
    let initial = trainer.batch_gradients(&trainer.model.store, &first, 1)?;
    let dev_err = token_error_rate(&trainer.model, &dev, exec)?;
    emit(
        MetricsRecord {
            step: 0,
            lr: 0.0,
            train_loss: initial.loss,
            dev_token_error_rate: dev_err,
        },
        &mut metrics,
    )?;

    let mut interval_loss = 0.0;
    let mut interval_steps = 0u64;
    for step in 1..=run.train.max_steps {
        let batch: Vec<&Utterance> = batcher.batch(step, batch_size).into_iter().map(|i| &train[i]).collect();
        interval_loss += trainer.train_step(&batch)?;
        interval_steps += 1;
        if step % run.train.eval_interval == 0 || step == run.train.max_steps {
            let dev_err = token_error_rate(&trainer.model, &dev, exec)?;
            emit(
                MetricsRecord {
                    step,
                    lr: lr_schedule(step, &run.train)?,
                    train_loss: interval_loss / interval_steps as f64,
                    dev_token_error_rate: dev_err,
                },
                &mut metrics,
            )?;
            interval_loss = 0.0;
            interval_steps = 0;
            if run.train.target_dev_error.is_some_and(|t| dev_err <= t) {
                break;
            }
        }
    }
    if let Some(f) = &files {
        trainer.model.save(f.checkpoint())?;
    }
    Ok(ToyOutcome {
        model: trainer.model,
        metrics,
        dev,
    })
}
