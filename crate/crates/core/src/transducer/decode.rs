//! Greedy transducer decoding.

/// Cap on emissions per encoder frame; guarantees termination.
pub const MAX_SYMBOLS_PER_FRAME: usize = 10;

/// What greedy decoding needs from a model: a label-encoder state machine and
/// the joint's logits for a frame/state pair.
pub trait StepModel {
    type State: Clone;

    /// State after the start symbol, before any label.
    fn start(&self) -> Self::State;

    /// State after consuming `token`.
    fn advance(&self, state: &Self::State, token: usize) -> Self::State;

    /// Logits over the vocabulary for encoder frame `frame`.
    fn logits(&self, frame: usize, state: &Self::State) -> Vec<f64>;
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Argmax decoding over `frames` encoder frames. A non-blank emission keeps
/// the decoder on the same frame, up to `max_symbols` times.
pub fn greedy_decode_with<M: StepModel>(model: &M, frames: usize, blank: usize, max_symbols: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut state = model.start();
    for t in 0..frames {
        for _ in 0..max_symbols {
            let k = argmax(&model.logits(t, &state));
            if k == blank {
                break;
            }
            out.push(k);
            state = model.advance(&state, k);
        }
    }
    out
}

pub fn greedy_decode<M: StepModel>(model: &M, frames: usize, blank: usize) -> Vec<usize> {
    greedy_decode_with(model, frames, blank, MAX_SYMBOLS_PER_FRAME)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Logits looked up from `(frame, emitted so far)`.
    struct Table<F: Fn(usize, usize) -> usize> {
        pick: F,
        vocab: usize,
    }

    impl<F: Fn(usize, usize) -> usize> StepModel for Table<F> {
        type State = usize;
        fn start(&self) -> usize {
            0
        }
        fn advance(&self, s: &usize, _token: usize) -> usize {
            s + 1
        }
        fn logits(&self, frame: usize, s: &usize) -> Vec<f64> {
            let mut l = vec![0.0; self.vocab];
            l[(self.pick)(frame, *s)] = 1.0;
            l
        }
    }

    #[test]
    fn always_blank_is_empty() {
        let m = Table { pick: |_, _| 0, vocab: 5 };
        assert!(greedy_decode(&m, 7, 0).is_empty());
    }

    #[test]
    fn single_emission_at_first_frame() {
        let m = Table {
            pick: |t, s| if t == 0 && s == 0 { 3 } else { 0 },
            vocab: 5,
        };
        assert_eq!(greedy_decode(&m, 4, 0), vec![3]);
    }

    #[test]
    fn emissions_per_frame_are_capped() {
        let m = Table { pick: |_, _| 2, vocab: 3 };
        let out = greedy_decode(&m, 3, 0);
        assert_eq!(out.len(), 3 * MAX_SYMBOLS_PER_FRAME);
        assert!(!out.contains(&0));
        assert!(greedy_decode(&m, 0, 0).is_empty());
    }
}
