//! Causal decoder: masked self-attention over the token prefix, cross
//! attention to visual features, FFN, and the 3-layer word-sampling head.

use crate::codec::{Task, Vocabulary};
use crate::model::{linear, transformer_block, Bound, Model};
use crate::tensor::{Tape, Value};

/// Lower-triangular attention mask: position `i` may attend to `j <= i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CausalMask {
    pub size: usize,
    pub allowed: Vec<bool>,
}

/// Build the `[L x L]` causal mask.
pub fn build_causal_mask(len: usize) -> CausalMask {
    assert!(len >= 1, "mask length must be at least 1");
    let mut allowed = vec![false; len * len];
    for i in 0..len {
        for j in 0..=i {
            allowed[i * len + j] = true;
        }
    }
    CausalMask { size: len, allowed }
}

impl CausalMask {
    pub fn allowed_count(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }

    /// Additive form: 0 where allowed, `-inf` where not.
    pub fn additive(&self) -> Vec<f32> {
        self.allowed
            .iter()
            .map(|&a| if a { 0.0 } else { f32::NEG_INFINITY })
            .collect()
    }
}

/// Embed decoder input ids. Coordinate/START ids come from the word table;
/// task-prompt ids are routed to the dedicated prompt table (position 0 only).
fn embed_ids(tape: &mut Tape, bound: &Bound, vocab: &Vocabulary, ids: &[u32]) -> Value {
    let first = ids[0];
    for (pos, &id) in ids.iter().enumerate().skip(1) {
        assert!(
            id <= vocab.start_id(),
            "decoder input id {id} at position {pos} is not a word-table token"
        );
    }
    if first > vocab.start_id() {
        let task_idx = first - vocab.start_id() - 1;
        assert!(task_idx < 4, "decoder input id {first} outside the vocabulary");
        let f = bound
            .fusion
            .as_ref()
            .expect("prompt-token input requires fusion parameters");
        let head = tape.embedding(f.dec_prompt, &[task_idx]);
        if ids.len() == 1 {
            head
        } else {
            let rest = tape.embedding(bound.dec.word, &ids[1..]);
            tape.concat_rows(&[head, rest])
        }
    } else {
        tape.embedding(bound.dec.word, ids)
    }
}

/// Teacher-forced decoder pass over one sample.
///
/// `input_ids` is `[START-or-prompt, c0, c1, c2, c3]` (length `max_len`);
/// output logits are `[max_len x (n_bins+1)]`. The bidirectional variant
/// ignores `input_ids`, feeds 4 learned query tokens without a mask, and
/// returns `[4 x (n_bins+1)]`.
pub fn forward_teacher_forced(
    tape: &mut Tape,
    model: &Model,
    bound: &Bound,
    visual: Value,
    input_ids: &[u32],
) -> Value {
    if model.cfg.bidirectional {
        forward_tokens(tape, model, bound, visual, TokenInput::Queries)
    } else {
        assert_eq!(
            input_ids.len(),
            model.cfg.decoder.max_len,
            "teacher forcing expects sequence length {}, got {}",
            model.cfg.decoder.max_len,
            input_ids.len()
        );
        forward_tokens(tape, model, bound, visual, TokenInput::Ids(input_ids))
    }
}

/// Logits for the next token after `prefix_ids` (1..=max_len ids).
/// Causality makes this equal to the matching row of the teacher-forced pass.
pub fn decode_step(
    tape: &mut Tape,
    model: &Model,
    bound: &Bound,
    visual: Value,
    prefix_ids: &[u32],
) -> Value {
    assert!(
        !prefix_ids.is_empty() && prefix_ids.len() <= model.cfg.decoder.max_len,
        "prefix length {} outside 1..={}",
        prefix_ids.len(),
        model.cfg.decoder.max_len
    );
    let logits = forward_tokens(tape, model, bound, visual, TokenInput::Ids(prefix_ids));
    tape.slice_rows(logits, prefix_ids.len() - 1, 1)
}

enum TokenInput<'a> {
    Ids(&'a [u32]),
    Queries,
}

fn forward_tokens(
    tape: &mut Tape,
    model: &Model,
    bound: &Bound,
    visual: Value,
    input: TokenInput,
) -> Value {
    let cfg = &model.cfg.decoder;
    let vocab = model.vocab();
    let (mut x, masked) = match input {
        TokenInput::Ids(ids) => (embed_ids(tape, bound, &vocab, ids), true),
        TokenInput::Queries => (
            bound.dec.queries.expect("bidirectional model without query tokens"),
            false,
        ),
    };
    let len = tape.shape(x).0;
    let pos = tape.slice_rows(bound.dec.pos, 0, len);
    x = tape.add(x, pos);
    let mask = masked.then(|| {
        let m = build_causal_mask(len).additive();
        tape.leaf(len, len, m)
    });
    for blk in &bound.dec.blocks {
        x = transformer_block(tape, x, blk, cfg.heads, mask, Some(visual));
    }
    x = tape.layer_norm(x, bound.dec.ln_f.0, bound.dec.ln_f.1);
    let h = linear(tape, x, bound.dec.head[0].0, bound.dec.head[0].1);
    let h = tape.gelu(h);
    let h = linear(tape, h, bound.dec.head[1].0, bound.dec.head[1].1);
    let h = tape.gelu(h);
    linear(tape, h, bound.dec.head[2].0, bound.dec.head[2].1)
}

/// Decoder-side prompt injection: the first input id is the task prompt when
/// enabled, START otherwise.
pub fn start_token(vocab: &Vocabulary, dec_prompt: bool, task: Option<Task>) -> u32 {
    match (dec_prompt, task) {
        (true, Some(t)) => vocab.prompt_id(t),
        _ => vocab.start_id(),
    }
}
