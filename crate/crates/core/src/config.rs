//! Line-based `key = value` run configuration. Every key has a default,
//! unknown keys are rejected, and `parse(render(c)) == c`.

use crate::codec::SeqOrder;
use crate::model::{
    DecoderConfig, EncoderConfig, FeatureVariant, FusionConfig, FusionKind, ModelConfig,
};
use crate::runtime::{TrackerConfig, UpdateMode};
use crate::trainer::{MixStrategy, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub lr_encoder: f32,
    pub lr_rest: f32,
    pub weight_decay: f32,
    pub grad_clip: f32,
    pub lr_drop_at: f64,
    pub warmup_steps: u64,
    pub n_bins: usize,
    pub image_size: usize,
    pub patch_size: usize,
    pub enc_depth: usize,
    pub enc_dim: usize,
    pub enc_heads: usize,
    pub enc_ffn: usize,
    pub joint: bool,
    pub dec_depth: usize,
    pub dec_dim: usize,
    pub dec_heads: usize,
    pub dec_ffn: usize,
    pub head_hidden: usize,
    pub order: SeqOrder,
    pub bidirectional: bool,
    pub features: FeatureVariant,
    /// `none` or a fusion kind; anything but `none` builds a v2 model.
    pub fusion: Option<FusionKind>,
    pub lowrank_dim: usize,
    pub enc_prompt: bool,
    pub dec_prompt: bool,
    pub freeze_base: bool,
    pub mix: MixStrategy,
    pub search_factor: f32,
    pub template_factor: f32,
    pub window: bool,
    pub update_mode: UpdateMode,
    pub tau: f32,
    pub update_interval: u64,
    pub train_sequences: usize,
    pub train_frames: usize,
    pub max_frame_gap: usize,
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 20_000,
            batch_size: 1,
            lr_encoder: 1e-4,
            lr_rest: 1e-3,
            weight_decay: 1e-4,
            grad_clip: 1.0,
            lr_drop_at: 0.8,
            warmup_steps: 200,
            n_bins: 4000,
            image_size: 64,
            patch_size: 8,
            enc_depth: 4,
            enc_dim: 64,
            enc_heads: 4,
            enc_ffn: 256,
            joint: true,
            dec_depth: 2,
            dec_dim: 64,
            dec_heads: 4,
            dec_ffn: 256,
            head_hidden: 64,
            order: SeqOrder::Xywh,
            bidirectional: false,
            features: FeatureVariant::Search,
            fusion: None,
            lowrank_dim: 32,
            enc_prompt: true,
            dec_prompt: true,
            freeze_base: true,
            mix: MixStrategy::Equal,
            search_factor: 4.0,
            template_factor: 4.0,
            window: true,
            update_mode: UpdateMode::Likelihood,
            tau: 0.015,
            update_interval: 25,
            train_sequences: 200,
            train_frames: 24,
            max_frame_gap: 50,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConfigError {
    UnknownKey(String),
    BadValue { key: String, value: String },
    BadLine(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::UnknownKey(k) => write!(f, "unknown config key: {k}"),
            ConfigError::BadValue { key, value } => {
                write!(f, "bad value for {key}: {value:?}")
            }
            ConfigError::BadLine(l) => write!(f, "unparseable config line: {l:?}"),
        }
    }
}

impl std::error::Error for ConfigError {}

macro_rules! config_keys {
    ($($key:ident : $parse:expr, $render:expr;)*) => {
        impl RunConfig {
            /// Apply one `key = value` assignment.
            pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
                match key {
                    $(stringify!($key) => {
                        #[allow(clippy::redundant_closure_call)]
                        match ($parse)(value) {
                            Some(v) => { self.$key = v; Ok(()) }
                            None => Err(ConfigError::BadValue { key: key.into(), value: value.into() }),
                        }
                    })*
                    _ => Err(ConfigError::UnknownKey(key.into())),
                }
            }

            /// Render every key in declaration order.
            pub fn render(&self) -> String {
                let mut out = String::new();
                $(
                    #[allow(clippy::redundant_closure_call)]
                    out.push_str(&format!("{} = {}\n", stringify!($key), ($render)(&self.$key)));
                )*
                out
            }
        }
    };
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

config_keys! {
    seed: |s: &str| s.parse::<u64>().ok(), |v: &u64| v.to_string();
    steps: |s: &str| s.parse::<u64>().ok(), |v: &u64| v.to_string();
    batch_size: |s: &str| s.parse::<usize>().ok(), |v: &usize| v.to_string();
    lr_encoder: |s: &str| s.parse::<f32>().ok(), |v: &f32| v.to_string();
    lr_rest: |s: &str| s.parse::<f32>().ok(), |v: &f32| v.to_string();
    weight_decay: |s: &str| s.parse::<f32>().ok(), |v: &f32| v.to_string();
    grad_clip: |s: &str| s.parse::<f32>().ok(), |v: &f32| v.to_string();
    lr_drop_at: |s: &str| s.parse::<f64>().ok(), |v: &f64| v.to_string();
    warmup_steps: |s: &str| s.parse::<u64>().ok(), |v: &u64| v.to_string();
    n_bins: |s: &str| s.parse::<usize>().ok(), |v: &usize| v.to_string();
    image_size: |s: &str| s.parse::<usize>().ok(), |v: &usize| v.to_string();
    patch_size: |s: &str| s.parse::<usize>().ok(), |v: &usize| v.to_string();
    enc_depth: |s: &str| s.parse::<usize>().ok(), |v: &usize| v.to_string();
    enc_dim: |s: &str| s.parse::<usize>().ok(), |v: &usize| v.to_string();
    enc_heads: |s: &str| s.parse::<usize>().ok(), |v: &usize| v.to_string();
    enc_ffn: |s: &str| s.parse::<usize>().ok(), |v: &usize| v.to_string();
    joint: parse_bool, |v: &bool| v.to_string();
    dec_depth: |s: &str| s.parse::<usize>().ok(), |v: &usize| v.to_string();
    dec_dim: |s: &str| s.parse::<usize>().ok(), |v: &usize| v.to_string();
    dec_heads: |s: &str| s.parse::<usize>().ok(), |v: &usize| v.to_string();
    dec_ffn: |s: &str| s.parse::<usize>().ok(), |v: &usize| v.to_string();
    head_hidden: |s: &str| s.parse::<usize>().ok(), |v: &usize| v.to_string();
    order: SeqOrder::parse, |v: &SeqOrder| v.name().to_string();
    bidirectional: parse_bool, |v: &bool| v.to_string();
    features: FeatureVariant::parse, |v: &FeatureVariant| v.name().to_string();
    fusion: |s: &str| match s {
        "none" => Some(None),
        other => FusionKind::parse(other).map(Some),
    }, |v: &Option<FusionKind>| match v {
        None => "none".to_string(),
        Some(k) => k.name().to_string(),
    };
    lowrank_dim: |s: &str| s.parse::<usize>().ok(), |v: &usize| v.to_string();
    enc_prompt: parse_bool, |v: &bool| v.to_string();
    dec_prompt: parse_bool, |v: &bool| v.to_string();
    freeze_base: parse_bool, |v: &bool| v.to_string();
    mix: MixStrategy::parse, |v: &MixStrategy| v.name().to_string();
    search_factor: |s: &str| s.parse::<f32>().ok(), |v: &f32| v.to_string();
    template_factor: |s: &str| s.parse::<f32>().ok(), |v: &f32| v.to_string();
    window: parse_bool, |v: &bool| v.to_string();
    update_mode: UpdateMode::parse, |v: &UpdateMode| v.name().to_string();
    tau: |s: &str| s.parse::<f32>().ok(), |v: &f32| v.to_string();
    update_interval: |s: &str| s.parse::<u64>().ok(), |v: &u64| v.to_string();
    train_sequences: |s: &str| s.parse::<usize>().ok(), |v: &usize| v.to_string();
    train_frames: |s: &str| s.parse::<usize>().ok(), |v: &usize| v.to_string();
    max_frame_gap: |s: &str| s.parse::<usize>().ok(), |v: &usize| v.to_string();
    checkpoint_every: |s: &str| s.parse::<u64>().ok(), |v: &u64| v.to_string();
}

impl RunConfig {
    /// Parse a config file body. Blank lines and `#` comments are allowed;
    /// unknown keys and malformed lines are rejected.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine(line.to_string()));
            };
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            n_bins: self.n_bins,
            encoder: EncoderConfig {
                image_size: self.image_size,
                patch_size: self.patch_size,
                depth: self.enc_depth,
                dim: self.enc_dim,
                heads: self.enc_heads,
                ffn_dim: self.enc_ffn,
                joint_extraction: self.joint,
            },
            decoder: DecoderConfig {
                depth: self.dec_depth,
                dim: self.dec_dim,
                heads: self.dec_heads,
                ffn_dim: self.dec_ffn,
                head_hidden: self.head_hidden,
                max_len: 5,
            },
            order: self.order,
            bidirectional: self.bidirectional,
            feature_variant: self.features,
            fusion: self.fusion.map(|kind| FusionConfig {
                kind,
                lowrank_dim: self.lowrank_dim,
                enc_prompt: self.enc_prompt,
                dec_prompt: self.dec_prompt,
            }),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            lr_encoder: self.lr_encoder,
            lr_rest: self.lr_rest,
            weight_decay: self.weight_decay,
            grad_clip: self.grad_clip,
            lr_drop_at: self.lr_drop_at,
            warmup_steps: self.warmup_steps,
            seed: self.seed,
            max_frame_gap: self.max_frame_gap,
            search_factor: self.search_factor,
            template_factor: self.template_factor,
            freeze_base: self.freeze_base,
            mix: self.mix,
        }
    }

    pub fn tracker_config(&self) -> TrackerConfig {
        TrackerConfig {
            search_factor: self.search_factor,
            template_factor: self.template_factor,
            window_enabled: self.window,
            update_mode: self.update_mode,
            tau: self.tau,
            update_interval: self.update_interval,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_render_parse_roundtrip() {
        let cfg = RunConfig::default();
        let text = cfg.render();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn modified_values_roundtrip() {
        let mut cfg = RunConfig::default();
        cfg.lr_rest = 3.3e-3;
        cfg.tau = 0.0153;
        cfg.order = SeqOrder::Corners;
        cfg.fusion = Some(FusionKind::Attention);
        cfg.bidirectional = true;
        cfg.n_bins = 500;
        let back = RunConfig::parse(&cfg.render()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::parse("bogus = 3\n").unwrap_err();
        assert_eq!(err, ConfigError::UnknownKey("bogus".into()));
    }

    #[test]
    fn bad_value_rejected() {
        let err = RunConfig::parse("steps = soon\n").unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { .. }));
    }

    #[test]
    fn comments_and_blanks_allowed() {
        let cfg = RunConfig::parse("# a comment\n\nsteps = 5\n").unwrap();
        assert_eq!(cfg.steps, 5);
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = RunConfig::default();
        cfg.set("window", "false").unwrap();
        cfg.set("update_mode", "naive").unwrap();
        assert!(!cfg.window);
        assert_eq!(cfg.update_mode, UpdateMode::Naive);
    }
}
