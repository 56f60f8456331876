//! Joint bidirectional encoding of template and search images, with the
//! multi-modal fusion hook applied at every block.

use crate::codec::Task;
use crate::image::{patchify, Image};
use crate::model::{attention, linear, transformer_block, Bound, BoundFusion, FusionKind, Model};
use crate::tensor::{Tape, Value};

/// Encoder output handed to the decoder.
pub struct VisualFeatures {
    /// `[(prompt? + k*N (+ N aux)) x dec_dim]` after the final projection.
    pub tokens: Value,
    /// Row range of the search-image tokens within `tokens`.
    pub search_span: (usize, usize),
    /// Row ranges of each input image (templates then search), prompt and
    /// aux rows excluded.
    pub image_spans: Vec<(usize, usize)>,
}

/// Auxiliary-modal input to fold into the encoder.
pub struct FusionInput<'a> {
    pub bound: &'a BoundFusion,
    pub kind: FusionKind,
    /// Unified aux sequence `M_0`, `[N x enc_dim]`.
    pub m0: Value,
}

/// Per-channel statistics of the synthetic training distribution, applied to
/// RGB inputs before patch projection.
pub const RGB_MEAN: [f32; 3] = [0.147, 0.155, 0.161];
pub const RGB_STD: [f32; 3] = [0.116, 0.112, 0.117];

/// Replace rows `span` of `x` with `rows(span) + delta`.
fn splice_add(tape: &mut Tape, x: Value, span: (usize, usize), delta: Value) -> Value {
    let (rows, _) = tape.shape(x);
    let (start, len) = span;
    let mid = tape.slice_rows(x, start, len);
    let mid = tape.add(mid, delta);
    let mut parts = Vec::with_capacity(3);
    if start > 0 {
        parts.push(tape.slice_rows(x, 0, start));
    }
    parts.push(mid);
    if start + len < rows {
        parts.push(tape.slice_rows(x, start + len, rows - start - len));
    }
    tape.concat_rows(&parts)
}

/// Patch-embed one image and add position + segment embeddings.
/// `seg_row` selects which segment embedding the image carries.
fn embed_image(tape: &mut Tape, bound: &Bound, model: &Model, img: &Image, seg_row: usize) -> Value {
    let e = &model.cfg.encoder;
    assert_eq!(
        (img.height, img.width),
        (e.image_size, e.image_size),
        "image {}x{} does not match encoder size {}",
        img.height,
        img.width,
        e.image_size
    );
    let mut rows = patchify(img, e.patch_size);
    // rows are channel-major within each patch: P*P values per channel
    let plane = e.patch_size * e.patch_size;
    for row in rows.chunks_mut(e.patch_dim()) {
        for c in 0..3 {
            for v in &mut row[c * plane..(c + 1) * plane] {
                *v = (*v - RGB_MEAN[c]) / RGB_STD[c];
            }
        }
    }
    let leaf = tape.leaf(e.n_patches(), e.patch_dim(), rows);
    let x = linear(tape, leaf, bound.enc.patch.0, bound.enc.patch.1);
    let x = tape.add(x, bound.enc.pos);
    let seg = tape.slice_rows(bound.enc.seg, seg_row, 1);
    tape.add(x, seg)
}

fn run_blocks(
    tape: &mut Tape,
    bound: &Bound,
    model: &Model,
    mut x: Value,
    search_span: (usize, usize),
    fusion: Option<&FusionInput>,
) -> Value {
    let heads = model.cfg.encoder.heads;
    let mut m_prev = fusion.map(|f| f.m0);
    for (l, blk) in bound.enc.blocks.iter().enumerate() {
        if let Some(f) = fusion {
            match f.kind {
                FusionKind::LowRank => {
                    let a = &f.bound.adapters[l];
                    let md = linear(tape, m_prev.unwrap(), a.down_m.0, a.down_m.1);
                    let vs = tape.slice_rows(x, search_span.0, search_span.1);
                    let vd = linear(tape, vs, a.down_v.0, a.down_v.1);
                    let s = tape.add(md, vd);
                    let m_next = linear(tape, s, a.up.0, a.up.1);
                    x = splice_add(tape, x, search_span, m_next);
                    m_prev = Some(m_next);
                }
                FusionKind::Attention => {
                    let vs = tape.slice_rows(x, search_span.0, search_span.1);
                    let c = attention(tape, vs, f.m0, &f.bound.xattn[l], heads, None);
                    x = splice_add(tape, x, search_span, c);
                }
                // input-level variants; nothing per block
                FusionKind::Add | FusionKind::Concat => {}
            }
        }
        x = transformer_block(tape, x, blk, heads, None, None);
    }
    x
}

/// Encode templates and search jointly (or separately with shared weights)
/// and project to the decoder dimension. `templates` holds one or two images
/// (initial + optional dynamic); `prompt` prepends a task-prompt embedding.
pub fn encode_joint(
    tape: &mut Tape,
    model: &Model,
    bound: &Bound,
    templates: &[&Image],
    search: &Image,
    fusion: Option<FusionInput>,
    prompt: Option<Task>,
) -> VisualFeatures {
    assert!(
        (1..=2).contains(&templates.len()),
        "expected 1 or 2 templates, got {}",
        templates.len()
    );
    for t in templates {
        assert_eq!(
            (t.height, t.width),
            (search.height, search.width),
            "template and search images must share a resolution"
        );
    }
    let e = &model.cfg.encoder;
    let n = e.n_patches();
    let k = templates.len() + 1;
    let prompt_rows = prompt.is_some() as usize;
    let search_start = prompt_rows + (k - 1) * n;

    // segment rows: 0 initial template, 1 dynamic template, 2 search, 3 aux
    let seg_of = |i: usize| if i + 1 < k { i } else { 2 };

    let prompt_tok = prompt.map(|task| {
        let f = bound.fusion.as_ref().expect("task prompt requires fusion parameters");
        tape.slice_rows(f.enc_prompt, task.index(), 1)
    });

    let x = if e.joint_extraction {
        let mut parts = Vec::with_capacity(k + 1);
        if let Some(p) = prompt_tok {
            parts.push(p);
        }
        for (i, img) in templates.iter().enumerate() {
            parts.push(embed_image(tape, bound, model, img, seg_of(i)));
        }
        parts.push(embed_image(tape, bound, model, search, 2));
        let mut x = tape.concat_rows(&parts);
        let mut span = (search_start, n);
        if let Some(f) = &fusion {
            match f.kind {
                FusionKind::Add => {
                    x = splice_add(tape, x, span, f.m0);
                }
                FusionKind::Concat => {
                    let seg = tape.slice_rows(bound.enc.seg, 3, 1);
                    let aux = tape.add(f.m0, bound.enc.pos);
                    let aux = tape.add(aux, seg);
                    x = tape.concat_rows(&[x, aux]);
                }
                _ => {}
            }
        }
        span = (search_start, n);
        run_blocks(tape, bound, model, x, span, fusion.as_ref())
    } else {
        // weight-shared separate passes; the prompt travels with the search pass
        let mut outs = Vec::with_capacity(k + 1);
        for (i, img) in templates.iter().enumerate() {
            let t = embed_image(tape, bound, model, img, seg_of(i));
            outs.push(run_blocks(tape, bound, model, t, (0, n), None));
        }
        let s_tokens = embed_image(tape, bound, model, search, 2);
        let (mut s_in, inner_span) = match prompt_tok {
            Some(p) => (tape.concat_rows(&[p, s_tokens]), (1, n)),
            None => (s_tokens, (0, n)),
        };
        if let Some(f) = &fusion {
            match f.kind {
                FusionKind::Add => {
                    s_in = splice_add(tape, s_in, inner_span, f.m0);
                }
                FusionKind::Concat => {
                    let seg = tape.slice_rows(bound.enc.seg, 3, 1);
                    let aux = tape.add(f.m0, bound.enc.pos);
                    let aux = tape.add(aux, seg);
                    s_in = tape.concat_rows(&[s_in, aux]);
                }
                _ => {}
            }
        }
        let s_out = run_blocks(tape, bound, model, s_in, inner_span, fusion.as_ref());
        // reassemble in [prompt?, templates..., search(, aux)] order
        let mut parts = Vec::with_capacity(k + 2);
        if prompt_rows == 1 {
            parts.push(tape.slice_rows(s_out, 0, 1));
        }
        parts.extend(outs);
        let s_rows = tape.shape(s_out).0;
        parts.push(tape.slice_rows(s_out, prompt_rows, s_rows - prompt_rows));
        tape.concat_rows(&parts)
    };

    let x = tape.layer_norm(x, bound.enc.ln_f.0, bound.enc.ln_f.1);
    let tokens = linear(tape, x, bound.enc.proj.0, bound.enc.proj.1);

    let image_spans = (0..k).map(|i| (prompt_rows + i * n, n)).collect();
    VisualFeatures {
        tokens,
        search_span: (search_start, n),
        image_spans,
    }
}

/// Pick which visual tokens the decoder cross-attends to.
pub fn select_search_features(
    tape: &mut Tape,
    f: &VisualFeatures,
    variant: crate::model::FeatureVariant,
) -> Value {
    use crate::model::FeatureVariant::*;
    match variant {
        Search => tape.slice_rows(f.tokens, f.search_span.0, f.search_span.1),
        Concat => f.tokens,
        Average => {
            let means: Vec<Value> = f
                .image_spans
                .iter()
                .map(|&(s, l)| {
                    let rows = tape.slice_rows(f.tokens, s, l);
                    tape.mean_rows(rows)
                })
                .collect();
            let cat = tape.concat_rows(&means);
            tape.mean_rows(cat)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureVariant, ModelConfig};

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            n_bins: 16,
            encoder: crate::model::EncoderConfig {
                image_size: 16,
                patch_size: 8,
                depth: 2,
                dim: 8,
                heads: 2,
                ffn_dim: 16,
                joint_extraction: true,
            },
            decoder: crate::model::DecoderConfig {
                depth: 1,
                dim: 8,
                heads: 2,
                ffn_dim: 16,
                head_hidden: 8,
                max_len: 5,
            },
            ..ModelConfig::default()
        }
    }

    fn img(size: usize, fill: f32) -> Image {
        Image::filled(3, size, size, fill)
    }

    #[test]
    fn token_counts() {
        let model = Model::new(tiny_cfg(), 1);
        let t1 = img(16, 0.2);
        let t2 = img(16, 0.3);
        let s = img(16, 0.4);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let f = encode_joint(&mut tape, &model, &bound, &[&t1, &t2], &s, None, None);
        let n = model.cfg.encoder.n_patches();
        assert_eq!(tape.shape(f.tokens).0, 3 * n);
        assert_eq!(f.search_span, (2 * n, n));

        let sel = select_search_features(&mut tape, &f, FeatureVariant::Search);
        assert_eq!(tape.shape(sel).0, n);
        let all = select_search_features(&mut tape, &f, FeatureVariant::Concat);
        assert_eq!(tape.shape(all).0, 3 * n);
        let avg = select_search_features(&mut tape, &f, FeatureVariant::Average);
        assert_eq!(tape.shape(avg).0, 1);
    }

    #[test]
    fn average_variant_is_mean_of_per_image_means() {
        let model = Model::new(tiny_cfg(), 2);
        let t1 = img(16, 0.1);
        let s = img(16, 0.9);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let f = encode_joint(&mut tape, &model, &bound, &[&t1], &s, None, None);
        let avg = select_search_features(&mut tape, &f, FeatureVariant::Average);
        let n = model.cfg.encoder.n_patches();
        let d = model.cfg.decoder.dim;
        let toks = tape.data(f.tokens).to_vec();
        let mut expect = vec![0.0f64; d];
        for (span_i, &(start, len)) in f.image_spans.iter().enumerate() {
            assert_eq!(len, n);
            let mut mean = vec![0.0f64; d];
            for r in start..start + len {
                for j in 0..d {
                    mean[j] += toks[r * d + j] as f64;
                }
            }
            for j in 0..d {
                expect[j] += (mean[j] / n as f64) / f.image_spans.len() as f64;
            }
            let _ = span_i;
        }
        let got = tape.data(avg);
        for j in 0..d {
            assert!((got[j] as f64 - expect[j]).abs() < 1e-5, "col {j}");
        }
    }

    #[test]
    fn separate_mode_keeps_token_count() {
        let mut cfg = tiny_cfg();
        cfg.encoder.joint_extraction = false;
        let model = Model::new(cfg, 3);
        let t1 = img(16, 0.2);
        let t2 = img(16, 0.5);
        let s = img(16, 0.7);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let f = encode_joint(&mut tape, &model, &bound, &[&t1, &t2], &s, None, None);
        assert_eq!(tape.shape(f.tokens).0, 3 * model.cfg.encoder.n_patches());
    }

    #[test]
    #[should_panic(expected = "share a resolution")]
    fn mismatched_sizes_rejected() {
        let model = Model::new(tiny_cfg(), 4);
        let t = Image::filled(3, 8, 8, 0.0);
        let s = img(16, 0.0);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        encode_joint(&mut tape, &model, &bound, &[&t], &s, None, None);
    }
}
