//! Unified multi-modal interface: converts an auxiliary modality (depth,
//! thermal, event, or language) to a sequence aligned with the search-image
//! patches and fuses it into the encoder. Missing modalities degrade to the
//! RGB search image and a skipped language modulation.

use crate::codec::Task;
use crate::image::{patchify, Image};
use crate::model::{linear, BoundFusion, FusionKind, TEXT_TABLE_ROWS};
use crate::tensor::{Tape, Value};

/// Patch-embed an image-format auxiliary modality with the dedicated aux
/// projection (separate from the RGB patch embedding). Single-channel
/// modalities are replicated to 3 channels first.
pub fn embed_aux_image(
    tape: &mut Tape,
    fusion: &BoundFusion,
    img: &Image,
    patch: usize,
    expected: (usize, usize),
) -> Value {
    assert_eq!(
        (img.height, img.width),
        expected,
        "aux modality {}x{} does not match the search image {}x{}",
        img.height,
        img.width,
        expected.0,
        expected.1
    );
    let rgb = img.to_rgb();
    let rows = patchify(&rgb, patch);
    let n = (img.height / patch) * (img.width / patch);
    let leaf = tape.leaf(n, patch * patch * 3, rows);
    linear(tape, leaf, fusion.aux_patch.0, fusion.aux_patch.1)
}

/// FNV-1a word hash into the text table.
pub fn hash_word(word: &str) -> u32 {
    let mut h = 0x811c9dc5u32;
    for b in word.bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(0x01000193);
    }
    h % TEXT_TABLE_ROWS as u32
}

/// Toy text embedder: lowercase, split on whitespace, hash each word into a
/// learned table, elementwise max-pool. Empty text is PAD and yields `None`
/// (the modulation step is skipped, not multiplied by zero).
pub fn embed_language(tape: &mut Tape, fusion: &BoundFusion, text: &str) -> Option<Value> {
    let lower = text.to_lowercase();
    let ids: Vec<u32> = lower.split_whitespace().map(hash_word).collect();
    if ids.is_empty() {
        return None;
    }
    let rows = tape.embedding(fusion.text_table, &ids);
    Some(tape.max_rows(rows))
}

/// Channel-wise product of every aux token with the text embedding.
pub fn channelwise_modulate(tape: &mut Tape, seq: Value, text: Value) -> Value {
    tape.mul(seq, text)
}

/// Fill in missing modalities: no image-format modality substitutes the RGB
/// search image; no language stays `None` (PAD).
pub fn resolve_missing<'a>(
    aux_image: Option<&'a Image>,
    text: Option<&'a str>,
    rgb_search: &'a Image,
) -> (&'a Image, Option<&'a str>) {
    let img = aux_image.unwrap_or(rgb_search);
    let text = text.filter(|t| !t.trim().is_empty());
    (img, text)
}

/// Build the unified aux sequence `M_0` for one sample.
pub fn build_m0(
    tape: &mut Tape,
    fusion: &BoundFusion,
    aux_image: Option<&Image>,
    text: Option<&str>,
    rgb_search: &Image,
    patch: usize,
) -> Value {
    let (img, text) = resolve_missing(aux_image, text, rgb_search);
    let seq = embed_aux_image(
        tape,
        fusion,
        img,
        patch,
        (rgb_search.height, rgb_search.width),
    );
    match text.and_then(|t| embed_language(tape, fusion, t)) {
        Some(emb) => channelwise_modulate(tape, seq, emb),
        None => seq,
    }
}

/// Which side(s) a task prompt is injected into.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptSite {
    Encoder,
    Decoder,
}

/// Resolve the enabled prompt injections for a task under the active config.
pub fn prompt_injections(
    cfg: &crate::model::FusionConfig,
    task: Option<Task>,
) -> (Option<Task>, Option<Task>) {
    let enc = if cfg.enc_prompt { task } else { None };
    let dec = if cfg.dec_prompt { task } else { None };
    (enc, dec)
}

/// Parse an ablation-style fusion name.
pub fn fusion_kind_from_name(name: &str) -> Option<FusionKind> {
    FusionKind::parse(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DecoderConfig, EncoderConfig, FusionConfig, Model, ModelConfig};

    fn v2_cfg() -> ModelConfig {
        ModelConfig {
            n_bins: 16,
            encoder: EncoderConfig {
                image_size: 16,
                patch_size: 8,
                depth: 2,
                dim: 8,
                heads: 2,
                ffn_dim: 16,
                joint_extraction: true,
            },
            decoder: DecoderConfig {
                depth: 1,
                dim: 8,
                heads: 2,
                ffn_dim: 16,
                head_hidden: 8,
                max_len: 5,
            },
            fusion: Some(FusionConfig::default()),
            ..ModelConfig::default()
        }
    }

    #[test]
    fn zero_aux_image_gives_bias_rows() {
        let model = Model::new(v2_cfg(), 1);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let f = bound.fusion.as_ref().unwrap();
        let img = Image::zeros(1, 16, 16);
        let m0 = embed_aux_image(&mut tape, f, &img, 8, (16, 16));
        let (n, d) = tape.shape(m0);
        assert_eq!(n, 4);
        let bias = tape.data(f.aux_patch.1).to_vec();
        let data = tape.data(m0);
        for r in 0..n {
            assert_eq!(&data[r * d..(r + 1) * d], &bias[..]);
        }
    }

    #[test]
    fn language_empty_is_pad() {
        let model = Model::new(v2_cfg(), 2);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let f = bound.fusion.as_ref().unwrap();
        assert!(embed_language(&mut tape, f, "").is_none());
        assert!(embed_language(&mut tape, f, "   ").is_none());
    }

    #[test]
    fn language_single_word_is_its_row() {
        let model = Model::new(v2_cfg(), 3);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let f = bound.fusion.as_ref().unwrap();
        let emb = embed_language(&mut tape, f, "square").unwrap();
        let row = hash_word("square") as usize;
        let d = model.cfg.encoder.dim;
        let table = tape.data(f.text_table).to_vec();
        assert_eq!(tape.data(emb), &table[row * d..(row + 1) * d]);
    }

    #[test]
    fn language_is_order_invariant() {
        let model = Model::new(v2_cfg(), 4);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let f = bound.fusion.as_ref().unwrap();
        let a = embed_language(&mut tape, f, "red square").unwrap();
        let b = embed_language(&mut tape, f, "square red").unwrap();
        assert_eq!(tape.data(a), tape.data(b));
        let c = embed_language(&mut tape, f, "Red SQUARE").unwrap();
        assert_eq!(tape.data(a), tape.data(c));
    }

    #[test]
    fn modulate_identities() {
        let model = Model::new(v2_cfg(), 5);
        let mut tape = Tape::new();
        let _bound = model.bind(&mut tape);
        let seq = tape.leaf(3, 4, (0..12).map(|v| v as f32 * 0.5).collect());
        let ones = tape.leaf(1, 4, vec![1.0; 4]);
        let same = channelwise_modulate(&mut tape, seq, ones);
        assert_eq!(tape.data(same), tape.data(seq));
        let zero = tape.leaf(1, 4, vec![0.0; 4]);
        let z = channelwise_modulate(&mut tape, seq, zero);
        assert!(tape.data(z).iter().all(|&v| v == 0.0));
        // bilinearity in the text embedding
        let t = tape.leaf(1, 4, vec![0.5, 1.0, 2.0, 3.0]);
        let m1 = channelwise_modulate(&mut tape, seq, t);
        let t2 = tape.scale(t, 2.0);
        let m2 = channelwise_modulate(&mut tape, seq, t2);
        for (a, b) in tape.data(m1).iter().zip(tape.data(m2)) {
            assert!((b - 2.0 * a).abs() < 1e-6);
        }
    }

    #[test]
    fn resolve_missing_rules() {
        let thermal = Image::filled(1, 16, 16, 0.4);
        let rgb = Image::filled(3, 16, 16, 0.2);
        // thermal-only sample
        let (img, text) = resolve_missing(Some(&thermal), None, &rgb);
        assert_eq!(img.channels, 1);
        assert!(text.is_none());
        // language-only sample falls back to the RGB search image
        let (img, text) = resolve_missing(None, Some("the red square"), &rgb);
        assert_eq!(img.channels, 3);
        assert_eq!(text, Some("the red square"));
        // nothing at all: RGB self-fusion with PAD
        let (img, text) = resolve_missing(None, None, &rgb);
        assert!(std::ptr::eq(img, &rgb));
        assert!(text.is_none());
    }

    #[test]
    fn prompt_injection_switches() {
        let mut cfg = FusionConfig::default();
        let t = Some(Task::Thermal);
        assert_eq!(prompt_injections(&cfg, t), (t, t));
        cfg.enc_prompt = false;
        assert_eq!(prompt_injections(&cfg, t), (None, t));
        cfg.dec_prompt = false;
        assert_eq!(prompt_injections(&cfg, t), (None, None));
    }
}
