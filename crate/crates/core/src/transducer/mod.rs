//! RNN-transducer head: LSTM label encoder, joint network, exact loss and
//! greedy decoding.

mod decode;
mod joint;
mod loss;
mod lstm;
mod model;
mod vocab;

pub use decode::{greedy_decode, greedy_decode_with, StepModel, MAX_SYMBOLS_PER_FRAME};
pub use joint::{joint, joint_on_tape, JointWeights};
pub use loss::{rnnt_loss, rnnt_loss_on_tape, validate_labels};
pub use lstm::{lstm_sequence_on_tape, lstm_step, lstm_step_on_tape, LstmState, LstmWeights};
pub use model::{DecoderConfig, DecoderParamIds, GreedyScorer, ModelConfig, ScorerState, Transducer, TransducerModel};
pub use vocab::{Vocab, BLANK_ID, BLANK_SYMBOL};
