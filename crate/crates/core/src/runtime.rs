//! Online inference: crop a search region around the previous box, greedy
//! decode exactly four coordinate tokens with an optional Hann-window motion
//! prior on the center steps, map back to frame coordinates, and refresh the
//! dynamic template when the token likelihood clears the gate.

use crate::codec::{decode_box, BBox, SeqOrder, Task, Vocabulary};
use crate::decoder::{decode_step, start_token};
use crate::encoder::{encode_joint, select_search_features, FusionInput};
use crate::fusion::build_m0;
use crate::image::{crop_resize, Image};
use crate::model::Model;
use crate::synth::FrameSample;
use crate::tensor::Tape;

/// Invertible mapping between a square frame-space window and the
/// `[0,1]^2` crop coordinates the codec sees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchCrop {
    pub cx: f32,
    pub cy: f32,
    pub side: f32,
    /// Resize factor from frame pixels to model pixels.
    pub scale: f32,
}

impl SearchCrop {
    /// Crop-normalized box to frame pixels.
    pub fn to_frame(&self, b: &BBox) -> BBox {
        let left = self.cx - self.side / 2.0;
        let top = self.cy - self.side / 2.0;
        BBox {
            cx: left + b.cx * self.side,
            cy: top + b.cy * self.side,
            w: b.w * self.side,
            h: b.h * self.side,
        }
    }

    /// Frame-pixel box to crop-normalized coordinates.
    pub fn to_crop(&self, b: &BBox) -> BBox {
        let left = self.cx - self.side / 2.0;
        let top = self.cy - self.side / 2.0;
        BBox {
            cx: (b.cx - left) / self.side,
            cy: (b.cy - top) / self.side,
            w: b.w / self.side,
            h: b.h / self.side,
        }
    }
}

/// Square crop centered on the box, side `factor * sqrt(w*h)`, mean-color
/// padded where it leaves the frame, resized to `out_size`.
pub fn crop_region(
    frame: &Image,
    bbox: &BBox,
    factor: f32,
    out_size: usize,
) -> (Image, SearchCrop) {
    assert!(
        bbox.w > 0.0 && bbox.h > 0.0,
        "crop_region requires a positive-size box, got {}x{}",
        bbox.w,
        bbox.h
    );
    let side = factor * (bbox.w * bbox.h).sqrt();
    let pad = frame.mean_color();
    let img = crop_resize(frame, bbox.cx, bbox.cy, side, out_size, &pad);
    (
        img,
        SearchCrop {
            cx: bbox.cx,
            cy: bbox.cy,
            side,
            scale: out_size as f32 / side,
        },
    )
}

/// Symmetric Hann window `w[k] = 0.5 (1 - cos(2 pi k / (n-1)))`, mirrored so
/// `w[k] == w[n-1-k]` holds bit-exactly (the two central bins of an even
/// window tie, and ties break to the lower index downstream).
pub fn hann_window(n: usize) -> Vec<f32> {
    assert!(n >= 2, "hann window needs at least 2 points");
    let mut w = vec![0.0f32; n];
    let denom = (n - 1) as f64;
    for k in 0..=(n - 1) / 2 {
        let v = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / denom).cos());
        let v = v as f32;
        w[k] = v;
        w[n - 1 - k] = v;
    }
    w
}

/// Multiply the coordinate entries of a post-softmax score vector by the
/// Hann window; the END entry (index `n_bins`) is untouched. No-op when
/// disabled. `probs` has `n_bins` or `n_bins+1` entries.
pub fn apply_window_penalty(probs: &mut [f32], window: &[f32], enabled: bool) {
    if !enabled {
        return;
    }
    let n_bins = window.len();
    assert!(
        probs.len() == n_bins || probs.len() == n_bins + 1,
        "score vector of {} entries does not fit a {n_bins}-bin window",
        probs.len()
    );
    for (p, &w) in probs.iter_mut().zip(window) {
        *p *= w;
    }
}

/// Dynamic-template refresh policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum UpdateMode {
    /// Refresh when the interval is reached and the score clears tau.
    #[default]
    Likelihood,
    /// Refresh whenever the interval is reached.
    Naive,
    /// Never refresh.
    Off,
}

impl UpdateMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "likelihood" => Some(Self::Likelihood),
            "naive" => Some(Self::Naive),
            "off" => Some(Self::Off),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Likelihood => "likelihood",
            Self::Naive => "naive",
            Self::Off => "off",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackerConfig {
    /// Search-region expansion factor.
    pub search_factor: f32,
    /// Template expansion factor (Tab-8-style ablations shrink this one).
    pub template_factor: f32,
    pub window_enabled: bool,
    pub update_mode: UpdateMode,
    /// Likelihood threshold for the dynamic-template update.
    pub tau: f32,
    /// Update interval in frames.
    pub update_interval: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            search_factor: 4.0,
            template_factor: 4.0,
            window_enabled: true,
            update_mode: UpdateMode::Likelihood,
            tau: 0.015,
            update_interval: 25,
        }
    }
}

/// Per-video online state.
pub struct TrackerState {
    pub current_box: BBox,
    pub initial_template: Image,
    pub dynamic_template: Image,
    pub frame_index: u64,
    pub cfg: TrackerConfig,
    window: Vec<f32>,
}

impl TrackerState {
    /// Initialize from the first frame and its ground-truth box. The dynamic
    /// template starts as a copy of the initial one.
    pub fn init(model: &Model, frame: &Image, gt: &BBox, cfg: TrackerConfig) -> Self {
        let out = model.cfg.encoder.image_size;
        let (tpl, _) = crop_region(frame, gt, cfg.template_factor, out);
        Self {
            current_box: *gt,
            initial_template: tpl.clone(),
            dynamic_template: tpl,
            frame_index: 0,
            cfg,
            window: hann_window(model.cfg.n_bins),
        }
    }
}

/// Outcome of one tracked frame.
#[derive(Clone, Debug)]
pub struct FrameResult {
    pub bbox: BBox,
    /// Mean pre-penalty softmax probability of the four chosen tokens.
    pub avg_score: f32,
    pub token_ids: [u32; 4],
}

fn softmax_probs(logits: &[f32]) -> Vec<f32> {
    let mut max = f32::NEG_INFINITY;
    for &v in logits {
        max = max.max(v);
    }
    let mut out = Vec::with_capacity(logits.len());
    let mut sum = 0.0f64;
    for &v in logits {
        let e = crate::tensor::fast_exp(v - max);
        out.push(e);
        sum += e as f64;
    }
    let inv = 1.0 / sum;
    for v in &mut out {
        *v = (*v as f64 * inv) as f32;
    }
    out
}

/// Coordinate steps that predict the box center under a given order; only
/// those steps receive the window penalty. The corner format has no center
/// coordinates, so nothing is penalized.
fn center_steps(order: SeqOrder) -> [bool; 4] {
    match order {
        SeqOrder::Xywh => [true, true, false, false],
        SeqOrder::Whxy => [false, false, true, true],
        SeqOrder::Corners => [false, false, false, false],
    }
}

/// Track one frame: crop, encode, greedy-decode four coordinate tokens
/// (END is never awaited), map back to frame space, advance the state.
pub fn run_frame(state: &mut TrackerState, model: &Model, frame: &FrameSample) -> FrameResult {
    let vocab = model.vocab();
    let out_size = model.cfg.encoder.image_size;
    let (search_img, crop) = crop_region(
        &frame.rgb,
        &state.current_box,
        state.cfg.search_factor,
        out_size,
    );

    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);

    let task = frame.task;
    let (fusion_input, enc_prompt, dec_prompt) = match (&model.cfg.fusion, bound.fusion.as_ref()) {
        (Some(fcfg), Some(fb)) => {
            let (aux_img, text) = match task {
                Some(t) => {
                    let aux = frame.aux_image(t).map(|img| {
                        let pad = img.mean_color();
                        crop_resize(img, crop.cx, crop.cy, crop.side, out_size, &pad)
                    });
                    (aux, frame.aux_text(t).map(|s| s.to_string()))
                }
                None => (None, None),
            };
            let m0 = build_m0(
                &mut tape,
                fb,
                aux_img.as_ref(),
                text.as_deref(),
                &search_img,
                model.cfg.encoder.patch_size,
            );
            let (ep, dp) = crate::fusion::prompt_injections(fcfg, task);
            (
                Some(FusionInput {
                    bound: fb,
                    kind: fcfg.kind,
                    m0,
                }),
                ep,
                dp,
            )
        }
        _ => (None, None, None),
    };

    let feats = encode_joint(
        &mut tape,
        model,
        &bound,
        &[&state.initial_template, &state.dynamic_template],
        &search_img,
        fusion_input,
        enc_prompt,
    );
    let visual = select_search_features(&mut tape, &feats, model.cfg.feature_variant);

    let first = start_token(&vocab, dec_prompt.is_some(), dec_prompt);
    let mut prefix = vec![first];
    let penalize = center_steps(model.cfg.order);
    let mut ids = [0u32; 4];
    let mut score_sum = 0.0f64;
    for step in 0..4 {
        let logits = decode_step(&mut tape, model, &bound, visual, &prefix);
        let mut probs = softmax_probs(tape.data(logits));
        let pre_penalty = probs.clone();
        apply_window_penalty(
            &mut probs,
            &state.window,
            state.cfg.window_enabled && penalize[step],
        );
        // constrained greedy: coordinate words only, lowest index wins ties
        let mut best = 0usize;
        for k in 1..model.cfg.n_bins {
            if probs[k] > probs[best] {
                best = k;
            }
        }
        ids[step] = best as u32;
        score_sum += pre_penalty[best] as f64;
        prefix.push(best as u32);
    }
    let avg_score = (score_sum / 4.0) as f32;

    // a degenerate corner decode keeps the previous box
    let bbox = match decode_box(&ids, &vocab, model.cfg.order) {
        Ok(b) => crop.to_frame(&b),
        Err(_) => state.current_box,
    };

    state.current_box = bbox;
    state.frame_index += 1;
    FrameResult {
        bbox,
        avg_score,
        token_ids: ids,
    }
}

/// Apply the dynamic-template update rule for the frame just processed.
/// Returns whether the template was refreshed.
pub fn maybe_update_template(
    state: &mut TrackerState,
    model: &Model,
    frame: &FrameSample,
    predicted: &BBox,
    avg_score: f32,
) -> bool {
    let interval_reached =
        state.cfg.update_interval > 0 && state.frame_index % state.cfg.update_interval == 0;
    let update = match state.cfg.update_mode {
        UpdateMode::Likelihood => interval_reached && avg_score > state.cfg.tau,
        UpdateMode::Naive => interval_reached,
        UpdateMode::Off => false,
    };
    if update {
        let out = model.cfg.encoder.image_size;
        let (tpl, _) = crop_region(&frame.rgb, predicted, state.cfg.template_factor, out);
        state.dynamic_template = tpl;
    }
    update
}

/// Track a whole sequence (first frame initializes). Returns per-frame boxes
/// (index 0 echoes the ground truth), scores, and update flags.
pub struct Trajectory {
    pub boxes: Vec<BBox>,
    pub scores: Vec<f32>,
    pub updated: Vec<bool>,
}

pub fn track_sequence(model: &Model, frames: &[FrameSample], cfg: TrackerConfig) -> Trajectory {
    assert!(frames.len() >= 2, "tracking needs at least 2 frames");
    let mut state = TrackerState::init(model, &frames[0].rgb, &frames[0].gt, cfg);
    let mut boxes = vec![frames[0].gt];
    let mut scores = vec![1.0f32];
    let mut updated = vec![false];
    for frame in &frames[1..] {
        let r = run_frame(&mut state, model, frame);
        let did = maybe_update_template(&mut state, model, frame, &r.bbox, r.avg_score);
        boxes.push(r.bbox);
        scores.push(r.avg_score);
        updated.push(did);
    }
    Trajectory {
        boxes,
        scores,
        updated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DecoderConfig, EncoderConfig, ModelConfig};
    use crate::synth::{generate_sequence, SceneSpec};

    fn tiny_model() -> Model {
        Model::new(
            ModelConfig {
                n_bins: 64,
                encoder: EncoderConfig {
                    image_size: 16,
                    patch_size: 8,
                    depth: 1,
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
                ..ModelConfig::default()
            },
            99,
        )
    }

    #[test]
    fn crop_side_geometric_mean() {
        let frame = Image::filled(3, 64, 64, 0.2);
        let (_, crop) = crop_region(&frame, &BBox::new(32.0, 32.0, 10.0, 10.0), 4.0, 16);
        assert!((crop.side - 40.0).abs() < 1e-4);
        let (_, crop2) = crop_region(&frame, &BBox::new(32.0, 32.0, 10.0, 20.0), 4.0, 16);
        assert!((crop2.side - 4.0 * 200.0f32.sqrt()).abs() < 1e-3, "{}", crop2.side);
    }

    #[test]
    #[should_panic(expected = "positive-size box")]
    fn crop_rejects_zero_box() {
        let frame = Image::filled(3, 64, 64, 0.2);
        crop_region(&frame, &BBox::new(32.0, 32.0, 0.0, 10.0), 4.0, 16);
    }

    #[test]
    fn crop_mapping_roundtrip() {
        let crop = SearchCrop {
            cx: 50.0,
            cy: 40.0,
            side: 36.0,
            scale: 64.0 / 36.0,
        };
        let b = BBox::new(0.4, 0.6, 0.2, 0.3);
        let f = crop.to_frame(&b);
        let back = crop.to_crop(&f);
        assert!((back.cx - b.cx).abs() < 1e-6);
        assert!((back.cy - b.cy).abs() < 1e-6);
        assert!((back.w - b.w).abs() < 1e-6);
        assert!((back.h - b.h).abs() < 1e-6);
    }

    #[test]
    fn hann_endpoints_zero_and_center_ties() {
        let w = hann_window(4000);
        assert_eq!(w[0], 0.0);
        assert_eq!(w[3999], 0.0);
        assert_eq!(w[1999].to_bits(), w[2000].to_bits());
        for k in 0..4000 {
            assert_eq!(w[k].to_bits(), w[3999 - k].to_bits(), "asymmetry at {k}");
        }
    }

    #[test]
    fn uniform_scores_argmax_is_lower_central_bin() {
        let w = hann_window(4000);
        let mut probs = vec![1.0f32 / 4001.0; 4001];
        apply_window_penalty(&mut probs, &w, true);
        let mut best = 0usize;
        for k in 1..4000 {
            if probs[k] > probs[best] {
                best = k;
            }
        }
        assert_eq!(best, 1999);
        // END entry untouched
        assert_eq!(probs[4000], 1.0 / 4001.0);
    }

    #[test]
    fn endpoint_bins_cannot_win() {
        let w = hann_window(4000);
        let mut probs = vec![0.0f32; 4001];
        probs[0] = 0.99;
        probs[1] = 0.01;
        apply_window_penalty(&mut probs, &w, true);
        assert_eq!(probs[0], 0.0);
        assert!(probs[1] > probs[0]);
    }

    #[test]
    fn disabled_penalty_is_identity() {
        let w = hann_window(64);
        let mut probs: Vec<f32> = (0..65).map(|i| i as f32).collect();
        let before = probs.clone();
        apply_window_penalty(&mut probs, &w, false);
        assert_eq!(probs, before);
    }

    #[test]
    fn update_gate_examples() {
        let model = tiny_model();
        let frame = Image::filled(3, 64, 64, 0.2);
        let gt = BBox::new(32.0, 32.0, 10.0, 10.0);
        let mut state = TrackerState::init(&model, &frame, &gt, TrackerConfig::default());
        let spec = SceneSpec {
            canvas: 64,
            seed: 1,
            ..SceneSpec::default()
        };
        let frames = generate_sequence(&spec, 2);

        state.frame_index = 25;
        assert!(maybe_update_template(&mut state, &model, &frames[1], &gt, 0.020));
        state.frame_index = 25;
        assert!(!maybe_update_template(&mut state, &model, &frames[1], &gt, 0.010));
        state.frame_index = 26;
        assert!(!maybe_update_template(&mut state, &model, &frames[1], &gt, 0.990));

        state.cfg.update_mode = UpdateMode::Naive;
        state.frame_index = 50;
        assert!(maybe_update_template(&mut state, &model, &frames[1], &gt, 0.0));
        state.cfg.update_mode = UpdateMode::Off;
        assert!(!maybe_update_template(&mut state, &model, &frames[1], &gt, 1.0));
    }

    #[test]
    fn run_frame_scores_in_unit_interval_and_deterministic() {
        let model = tiny_model();
        let spec = SceneSpec {
            canvas: 64,
            target_size: 12.0,
            seed: 11,
            ..SceneSpec::default()
        };
        let frames = generate_sequence(&spec, 4);
        let run = || {
            let t = track_sequence(&model, &frames, TrackerConfig::default());
            (t.boxes, t.scores)
        };
        let (boxes_a, scores_a) = run();
        let (boxes_b, scores_b) = run();
        for (a, b) in boxes_a.iter().zip(&boxes_b) {
            assert_eq!(a, b, "trajectory not deterministic");
        }
        for (&s, _) in scores_a.iter().zip(&scores_b).skip(1) {
            assert!(s > 0.0 && s <= 1.0, "score {s} outside (0,1]");
        }
        assert_eq!(scores_a, scores_b);
        assert_eq!(boxes_a[0], frames[0].gt);
    }

    #[test]
    fn pure_detection_configuration_runs() {
        // penalty off, updates off: per-frame detection around the last box
        let model = tiny_model();
        let spec = SceneSpec {
            canvas: 64,
            target_size: 12.0,
            seed: 12,
            ..SceneSpec::default()
        };
        let frames = generate_sequence(&spec, 3);
        let cfg = TrackerConfig {
            window_enabled: false,
            update_mode: UpdateMode::Off,
            ..TrackerConfig::default()
        };
        let t = track_sequence(&model, &frames, cfg);
        assert_eq!(t.boxes.len(), 3);
        assert!(t.updated.iter().all(|&u| !u));
    }
}
