//! Model configuration, parameter registry, and per-tape binding.
//!
//! Parameters live in a [`ParamSet`] under stable dotted names: `enc.*` for
//! the vision encoder, `dec.*` for the causal decoder and word head, `v2.*`
//! for the multi-modal interface (adapters, aux patch embed, text table,
//! prompt embeddings). The `v2.` prefix is what frozen-base training keys on.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{SeqOrder, Vocabulary};
use crate::tensor::{ParamId, ParamSet, Tape, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    /// Square input resolution for template and search images alike.
    pub image_size: usize,
    pub patch_size: usize,
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Joint feature extraction over the concatenated template/search tokens;
    /// `false` runs weight-shared separate passes per image.
    pub joint_extraction: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            depth: 4,
            dim: 64,
            heads: 4,
            ffn_dim: 256,
            joint_extraction: true,
        }
    }
}

impl EncoderConfig {
    /// Patches per image, `HW / P^2`.
    pub fn n_patches(&self) -> usize {
        assert!(
            self.image_size % self.patch_size == 0,
            "image size {} not divisible by patch size {}",
            self.image_size,
            self.patch_size
        );
        let side = self.image_size / self.patch_size;
        side * side
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderConfig {
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Hidden width of the 3-layer word-sampling perceptron.
    pub head_hidden: usize,
    /// Decoder sequence length: start/prompt + 4 coordinates.
    pub max_len: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            dim: 64,
            heads: 4,
            ffn_dim: 256,
            head_hidden: 64,
            max_len: 5,
        }
    }
}

/// Which visual tokens feed the decoder's cross-attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FeatureVariant {
    /// Only the search-image tokens (default).
    #[default]
    Search,
    /// All tokens (templates + search, plus prompt when present).
    Concat,
    /// One token: the mean of per-image means.
    Average,
}

impl FeatureVariant {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "search" => Some(Self::Search),
            "concat" => Some(Self::Concat),
            "average" => Some(Self::Average),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Search => "search",
            Self::Concat => "concat",
            Self::Average => "average",
        }
    }
}

/// How the auxiliary-modal sequence is folded into the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FusionKind {
    /// Low-rank adapter at every encoder block (default).
    #[default]
    LowRank,
    /// Aux sequence added to the search tokens at the input only.
    Add,
    /// One cross-attention from the search tokens to the aux sequence per block.
    Attention,
    /// Aux patches appended to the encoder input sequence.
    Concat,
}

impl FusionKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lowrank" => Some(Self::LowRank),
            "add" => Some(Self::Add),
            "attention" => Some(Self::Attention),
            "concat" => Some(Self::Concat),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::LowRank => "lowrank",
            Self::Add => "add",
            Self::Attention => "attention",
            Self::Concat => "concat",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FusionConfig {
    pub kind: FusionKind,
    /// Low-rank adapter width `d`.
    pub lowrank_dim: usize,
    /// Prepend the task-prompt embedding to the encoder input.
    pub enc_prompt: bool,
    /// Replace START with the task-prompt token in the decoder input.
    pub dec_prompt: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            kind: FusionKind::LowRank,
            lowrank_dim: 32,
            enc_prompt: true,
            dec_prompt: true,
        }
    }
}

/// Rows of the hashed-word table behind the toy text embedder.
pub const TEXT_TABLE_ROWS: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_bins: usize,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub order: SeqOrder,
    /// Replace autoregressive decoding with 4 learned queries and no mask.
    pub bidirectional: bool,
    pub feature_variant: FeatureVariant,
    pub fusion: Option<FusionConfig>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_bins: 4000,
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            order: SeqOrder::Xywh,
            bidirectional: false,
            feature_variant: FeatureVariant::Search,
            fusion: None,
        }
    }
}

impl ModelConfig {
    pub fn vocab(&self) -> Vocabulary {
        Vocabulary::new(self.n_bins)
    }
}

// ── Typed parameter handles ─────────────────────────────────────────

pub struct AttnParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

pub struct BlockParams {
    pub ln1: (ParamId, ParamId),
    pub attn: AttnParams,
    pub cross_ln: Option<(ParamId, ParamId)>,
    pub cross: Option<AttnParams>,
    pub ln2: (ParamId, ParamId),
    pub fc1: (ParamId, ParamId),
    pub fc2: (ParamId, ParamId),
}

pub struct EncoderParams {
    pub patch: (ParamId, ParamId),
    pub pos: ParamId,
    pub seg: ParamId,
    pub blocks: Vec<BlockParams>,
    pub ln_f: (ParamId, ParamId),
    pub proj: (ParamId, ParamId),
}

pub struct DecoderParams {
    pub word: ParamId,
    pub pos: ParamId,
    /// Learned query tokens for the bidirectional variant.
    pub queries: Option<ParamId>,
    pub blocks: Vec<BlockParams>,
    pub ln_f: (ParamId, ParamId),
    pub head: [(ParamId, ParamId); 3],
}

pub struct AdapterParams {
    pub down_m: (ParamId, ParamId),
    pub down_v: (ParamId, ParamId),
    pub up: (ParamId, ParamId),
}

pub struct FusionParams {
    pub adapters: Vec<AdapterParams>,
    pub xattn: Vec<AttnParams>,
    pub aux_patch: (ParamId, ParamId),
    pub text_table: ParamId,
    pub enc_prompt: ParamId,
    pub dec_prompt: ParamId,
}

/// The full model: config plus named parameters.
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamSet,
    pub enc: EncoderParams,
    pub dec: DecoderParams,
    pub fusion: Option<FusionParams>,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn normal(&mut self, ps: &mut ParamSet, name: &str, rows: usize, cols: usize, std: f32) -> ParamId {
        let data = (0..rows * cols)
            .map(|_| {
                // Box-Muller from two uniforms
                let u1: f64 = self.rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = self.rng.gen();
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                (z as f32) * std
            })
            .collect();
        ps.add(name, rows, cols, data)
    }

    fn zeros(&mut self, ps: &mut ParamSet, name: &str, rows: usize, cols: usize) -> ParamId {
        ps.add(name, rows, cols, vec![0.0; rows * cols])
    }

    fn ones(&mut self, ps: &mut ParamSet, name: &str, rows: usize, cols: usize) -> ParamId {
        ps.add(name, rows, cols, vec![1.0; rows * cols])
    }

    fn linear(&mut self, ps: &mut ParamSet, name: &str, input: usize, output: usize) -> (ParamId, ParamId) {
        let w = self.normal(ps, &format!("{name}.w"), input, output, 0.02);
        let b = self.zeros(ps, &format!("{name}.b"), 1, output);
        (w, b)
    }

    fn layer_norm(&mut self, ps: &mut ParamSet, name: &str, dim: usize) -> (ParamId, ParamId) {
        let g = self.ones(ps, &format!("{name}.g"), 1, dim);
        let b = self.zeros(ps, &format!("{name}.b"), 1, dim);
        (g, b)
    }

    fn attn(&mut self, ps: &mut ParamSet, name: &str, dim: usize) -> AttnParams {
        let (wq, bq) = self.linear(ps, &format!("{name}.q"), dim, dim);
        let (wk, bk) = self.linear(ps, &format!("{name}.k"), dim, dim);
        let (wv, bv) = self.linear(ps, &format!("{name}.v"), dim, dim);
        let (wo, bo) = self.linear(ps, &format!("{name}.o"), dim, dim);
        AttnParams { wq, bq, wk, bk, wv, bv, wo, bo }
    }

    fn block(&mut self, ps: &mut ParamSet, name: &str, dim: usize, ffn: usize, cross: bool) -> BlockParams {
        let ln1 = self.layer_norm(ps, &format!("{name}.ln1"), dim);
        let attn = self.attn(ps, &format!("{name}.attn"), dim);
        let (cross_ln, cross) = if cross {
            (
                Some(self.layer_norm(ps, &format!("{name}.ln_x"), dim)),
                Some(self.attn(ps, &format!("{name}.xattn"), dim)),
            )
        } else {
            (None, None)
        };
        let ln2 = self.layer_norm(ps, &format!("{name}.ln2"), dim);
        let fc1 = self.linear(ps, &format!("{name}.fc1"), dim, ffn);
        let fc2 = self.linear(ps, &format!("{name}.fc2"), ffn, dim);
        BlockParams { ln1, attn, cross_ln, cross, ln2, fc1, fc2 }
    }
}

impl Model {
    /// Build a freshly initialized model. Identical `(cfg, seed)` pairs
    /// produce bit-identical parameters; fusion parameters are drawn after
    /// all base parameters, so a v2 model shares its base initialization
    /// with the plain model of the same seed.
    pub fn new(cfg: ModelConfig, seed: u64) -> Self {
        assert!(cfg.encoder.dim % cfg.encoder.heads == 0, "encoder dim not divisible by heads");
        assert!(cfg.decoder.dim % cfg.decoder.heads == 0, "decoder dim not divisible by heads");
        let mut ps = ParamSet::new();
        let mut init = Init { rng: ChaCha8Rng::seed_from_u64(seed) };
        let e = &cfg.encoder;
        let d = &cfg.decoder;
        let vocab = cfg.vocab();

        let patch = init.linear(&mut ps, "enc.patch", e.patch_dim(), e.dim);
        let pos = init.normal(&mut ps, "enc.pos", e.n_patches(), e.dim, 0.02);
        // segments: initial template, dynamic template, search, aux (concat fusion)
        let seg = init.normal(&mut ps, "enc.seg", 4, e.dim, 0.02);
        let blocks = (0..e.depth)
            .map(|l| init.block(&mut ps, &format!("enc.blk{l}"), e.dim, e.ffn_dim, false))
            .collect();
        let ln_f = init.layer_norm(&mut ps, "enc.ln_f", e.dim);
        let proj = init.linear(&mut ps, "enc.proj", e.dim, d.dim);
        let enc = EncoderParams { patch, pos, seg, blocks, ln_f, proj };

        // word table covers coordinates + END + START; prompts live in v2.prompt.dec
        let word = init.normal(&mut ps, "dec.word", vocab.n_bins + 2, d.dim, 0.02);
        let dpos = init.normal(&mut ps, "dec.pos", d.max_len, d.dim, 0.02);
        let queries = cfg
            .bidirectional
            .then(|| init.normal(&mut ps, "dec.queries", 4, d.dim, 0.02));
        let dblocks = (0..d.depth)
            .map(|l| init.block(&mut ps, &format!("dec.blk{l}"), d.dim, d.ffn_dim, true))
            .collect();
        let dln_f = init.layer_norm(&mut ps, "dec.ln_f", d.dim);
        let head = [
            init.linear(&mut ps, "dec.head0", d.dim, d.head_hidden),
            init.linear(&mut ps, "dec.head1", d.head_hidden, d.head_hidden),
            init.linear(&mut ps, "dec.head2", d.head_hidden, vocab.head_dim()),
        ];
        let dec = DecoderParams {
            word,
            pos: dpos,
            queries,
            blocks: dblocks,
            ln_f: dln_f,
            head,
        };

        let fusion = cfg.fusion.map(|f| {
            let adapters = match f.kind {
                FusionKind::LowRank => (0..e.depth)
                    .map(|l| {
                        let down_m = init.linear(&mut ps, &format!("v2.adapter{l}.down_m"), e.dim, f.lowrank_dim);
                        let down_v = init.linear(&mut ps, &format!("v2.adapter{l}.down_v"), e.dim, f.lowrank_dim);
                        // zero-initialized up-projection: the fused model starts
                        // bit-identical to the frozen base
                        let up_w = init.zeros(&mut ps, &format!("v2.adapter{l}.up.w"), f.lowrank_dim, e.dim);
                        let up_b = init.zeros(&mut ps, &format!("v2.adapter{l}.up.b"), 1, e.dim);
                        AdapterParams { down_m, down_v, up: (up_w, up_b) }
                    })
                    .collect(),
                _ => Vec::new(),
            };
            let xattn = match f.kind {
                FusionKind::Attention => (0..e.depth)
                    .map(|l| init.attn(&mut ps, &format!("v2.xattn{l}"), e.dim))
                    .collect(),
                _ => Vec::new(),
            };
            let aux_patch = init.linear(&mut ps, "v2.aux_patch", e.patch_dim(), e.dim);
            let text_table = init.normal(&mut ps, "v2.text", TEXT_TABLE_ROWS, e.dim, 0.02);
            let enc_prompt = init.normal(&mut ps, "v2.prompt.enc", 4, e.dim, 0.02);
            let dec_prompt = init.normal(&mut ps, "v2.prompt.dec", 4, d.dim, 0.02);
            FusionParams {
                adapters,
                xattn,
                aux_patch,
                text_table,
                enc_prompt,
                dec_prompt,
            }
        });

        Model { cfg, params: ps, enc, dec, fusion }
    }

    pub fn vocab(&self) -> Vocabulary {
        self.cfg.vocab()
    }

    /// Freeze everything outside the multi-modal interface.
    pub fn freeze_base(&mut self) {
        self.params.set_trainable(|name| name.starts_with("v2."));
    }

    pub fn base_checksum(&self) -> u64 {
        self.params.checksum_filtered(|n| !n.starts_with("v2."))
    }

    /// Parameter ids for the two learning-rate groups: the encoder backbone
    /// versus the decoder and every remaining module.
    pub fn lr_groups(&self) -> (Vec<ParamId>, Vec<ParamId>) {
        let mut enc = Vec::new();
        let mut rest = Vec::new();
        for id in self.params.ids() {
            if self.params.get(id).name.starts_with("enc.") {
                enc.push(id);
            } else {
                rest.push(id);
            }
        }
        (enc, rest)
    }

    /// Bind every parameter onto a fresh tape (once per forward/step).
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let b = |t: &mut Tape, id: ParamId| t.param(&self.params, id);
        let bind_attn = |t: &mut Tape, a: &AttnParams| BoundAttn {
            wq: b(t, a.wq),
            bq: b(t, a.bq),
            wk: b(t, a.wk),
            bk: b(t, a.bk),
            wv: b(t, a.wv),
            bv: b(t, a.bv),
            wo: b(t, a.wo),
            bo: b(t, a.bo),
        };
        let bind_block = |t: &mut Tape, blk: &BlockParams| BoundBlock {
            ln1: (b(t, blk.ln1.0), b(t, blk.ln1.1)),
            attn: bind_attn(t, &blk.attn),
            cross_ln: blk.cross_ln.map(|(g, be)| (b(t, g), b(t, be))),
            cross: blk.cross.as_ref().map(|a| bind_attn(t, a)),
            ln2: (b(t, blk.ln2.0), b(t, blk.ln2.1)),
            fc1: (b(t, blk.fc1.0), b(t, blk.fc1.1)),
            fc2: (b(t, blk.fc2.0), b(t, blk.fc2.1)),
        };

        let enc = BoundEncoder {
            patch: (b(tape, self.enc.patch.0), b(tape, self.enc.patch.1)),
            pos: b(tape, self.enc.pos),
            seg: b(tape, self.enc.seg),
            blocks: self.enc.blocks.iter().map(|blk| bind_block(tape, blk)).collect(),
            ln_f: (b(tape, self.enc.ln_f.0), b(tape, self.enc.ln_f.1)),
            proj: (b(tape, self.enc.proj.0), b(tape, self.enc.proj.1)),
        };
        let dec = BoundDecoder {
            word: b(tape, self.dec.word),
            pos: b(tape, self.dec.pos),
            queries: self.dec.queries.map(|q| b(tape, q)),
            blocks: self.dec.blocks.iter().map(|blk| bind_block(tape, blk)).collect(),
            ln_f: (b(tape, self.dec.ln_f.0), b(tape, self.dec.ln_f.1)),
            head: [
                (b(tape, self.dec.head[0].0), b(tape, self.dec.head[0].1)),
                (b(tape, self.dec.head[1].0), b(tape, self.dec.head[1].1)),
                (b(tape, self.dec.head[2].0), b(tape, self.dec.head[2].1)),
            ],
        };
        let fusion = self.fusion.as_ref().map(|f| BoundFusion {
            adapters: f
                .adapters
                .iter()
                .map(|a| BoundAdapter {
                    down_m: (b(tape, a.down_m.0), b(tape, a.down_m.1)),
                    down_v: (b(tape, a.down_v.0), b(tape, a.down_v.1)),
                    up: (b(tape, a.up.0), b(tape, a.up.1)),
                })
                .collect(),
            xattn: f.xattn.iter().map(|a| bind_attn(tape, a)).collect(),
            aux_patch: (b(tape, f.aux_patch.0), b(tape, f.aux_patch.1)),
            text_table: b(tape, f.text_table),
            enc_prompt: b(tape, f.enc_prompt),
            dec_prompt: b(tape, f.dec_prompt),
        });
        Bound { enc, dec, fusion }
    }
}

// ── Tape-bound views ────────────────────────────────────────────────

pub struct BoundAttn {
    pub wq: Value,
    pub bq: Value,
    pub wk: Value,
    pub bk: Value,
    pub wv: Value,
    pub bv: Value,
    pub wo: Value,
    pub bo: Value,
}

pub struct BoundBlock {
    pub ln1: (Value, Value),
    pub attn: BoundAttn,
    pub cross_ln: Option<(Value, Value)>,
    pub cross: Option<BoundAttn>,
    pub ln2: (Value, Value),
    pub fc1: (Value, Value),
    pub fc2: (Value, Value),
}

pub struct BoundEncoder {
    pub patch: (Value, Value),
    pub pos: Value,
    pub seg: Value,
    pub blocks: Vec<BoundBlock>,
    pub ln_f: (Value, Value),
    pub proj: (Value, Value),
}

pub struct BoundDecoder {
    pub word: Value,
    pub pos: Value,
    pub queries: Option<Value>,
    pub blocks: Vec<BoundBlock>,
    pub ln_f: (Value, Value),
    pub head: [(Value, Value); 3],
}

pub struct BoundAdapter {
    pub down_m: (Value, Value),
    pub down_v: (Value, Value),
    pub up: (Value, Value),
}

pub struct BoundFusion {
    pub adapters: Vec<BoundAdapter>,
    pub xattn: Vec<BoundAttn>,
    pub aux_patch: (Value, Value),
    pub text_table: Value,
    pub enc_prompt: Value,
    pub dec_prompt: Value,
}

pub struct Bound {
    pub enc: BoundEncoder,
    pub dec: BoundDecoder,
    pub fusion: Option<BoundFusion>,
}

/// `x.W + b` with `b` broadcast over rows.
pub fn linear(tape: &mut Tape, x: Value, w: Value, b: Value) -> Value {
    let y = tape.matmul(x, w);
    tape.add(y, b)
}

/// Multi-head attention: queries from `q_in`, keys/values from `kv_in`,
/// optional additive mask (`0`/`-inf`, shape `[Lq x Lkv]`).
pub fn attention(
    tape: &mut Tape,
    q_in: Value,
    kv_in: Value,
    p: &BoundAttn,
    heads: usize,
    mask: Option<Value>,
) -> Value {
    let dim = tape.shape(q_in).1;
    assert!(dim % heads == 0, "attention dim {dim} not divisible by {heads} heads");
    let dh = dim / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let same_input = q_in == kv_in;
    // self-attention runs Q, K, V as one fused projection
    let (q, k, v) = if same_input {
        let w = tape.concat_cols(&[p.wq, p.wk, p.wv]);
        let b = tape.concat_cols(&[p.bq, p.bk, p.bv]);
        let qkv = linear(tape, q_in, w, b);
        (
            tape.slice_cols(qkv, 0, dim),
            tape.slice_cols(qkv, dim, dim),
            tape.slice_cols(qkv, 2 * dim, dim),
        )
    } else {
        let w = tape.concat_cols(&[p.wk, p.wv]);
        let b = tape.concat_cols(&[p.bk, p.bv]);
        let kv = linear(tape, kv_in, w, b);
        (
            linear(tape, q_in, p.wq, p.bq),
            tape.slice_cols(kv, 0, dim),
            tape.slice_cols(kv, dim, dim),
        )
    };
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let kt = tape.transpose(kh);
        let mut scores = tape.matmul(qh, kt);
        scores = tape.scale(scores, scale);
        if let Some(m) = mask {
            scores = tape.add(scores, m);
        }
        let probs = tape.softmax(scores);
        outs.push(tape.matmul(probs, vh));
    }
    let cat = tape.concat_cols(&outs);
    linear(tape, cat, p.wo, p.bo)
}

/// Pre-norm transformer block: masked/self attention, optional cross
/// attention, FFN, all with residual connections.
pub fn transformer_block(
    tape: &mut Tape,
    x: Value,
    blk: &BoundBlock,
    heads: usize,
    self_mask: Option<Value>,
    cross_kv: Option<Value>,
) -> Value {
    let n1 = tape.layer_norm(x, blk.ln1.0, blk.ln1.1);
    let a = attention(tape, n1, n1, &blk.attn, heads, self_mask);
    let mut x = tape.add(x, a);
    if let Some(kv) = cross_kv {
        let (g, b) = blk.cross_ln.expect("cross-attention block without ln_x");
        let p = blk.cross.as_ref().expect("cross-attention block without params");
        let nx = tape.layer_norm(x, g, b);
        let c = attention(tape, nx, kv, p, heads, None);
        x = tape.add(x, c);
    }
    let n2 = tape.layer_norm(x, blk.ln2.0, blk.ln2.1);
    let h = linear(tape, n2, blk.fc1.0, blk.fc1.1);
    let h = tape.gelu(h);
    let f = linear(tape, h, blk.fc2.0, blk.fc2.1);
    tape.add(x, f)
}
