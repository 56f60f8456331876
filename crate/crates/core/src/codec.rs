//! Continuous boxes to and from discrete coordinate tokens.
//!
//! Coordinates normalized to the search-region crop are uniformly discretized
//! into `n_bins` words; a shared vocabulary adds END, START, and four
//! task-prompt tokens. The decoder's input sequence is the target sequence
//! with a one-position offset: `[START,x,y,w,h]` against `[x,y,w,h,END]`.

use std::sync::atomic::{AtomicU64, Ordering};

/// Count of coordinates that arrived outside `[0,1]` and were clamped.
static CLAMP_WARNINGS: AtomicU64 = AtomicU64::new(0);

pub fn clamp_warning_count() -> u64 {
    CLAMP_WARNINGS.load(Ordering::Relaxed)
}

/// Axis-aligned box as center plus size. The coordinate space is contextual:
/// frame pixels in tracker state and ground truth, `[0,1]` crop-normalized
/// when encoding to tokens.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

impl BBox {
    pub fn new(cx: f32, cy: f32, w: f32, h: f32) -> Self {
        Self { cx, cy, w, h }
    }

    /// `(x_min, y_min, x_max, y_max)`
    pub fn corners(&self) -> (f32, f32, f32, f32) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn from_corners(x0: f32, y0: f32, x1: f32, y1: f32) -> Self {
        Self {
            cx: (x0 + x1) / 2.0,
            cy: (y0 + y1) / 2.0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    pub fn area(&self) -> f32 {
        self.w * self.h
    }
}

/// Coordinate order emitted by the codec (decoder input/target layout).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SeqOrder {
    /// `[x, y, w, h]` (default: position first, then scale)
    #[default]
    Xywh,
    /// `[w, h, x, y]`
    Whxy,
    /// `[x_min, y_min, x_max, y_max]`
    Corners,
}

impl SeqOrder {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "xywh" => Some(Self::Xywh),
            "whxy" => Some(Self::Whxy),
            "corners" => Some(Self::Corners),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Xywh => "xywh",
            Self::Whxy => "whxy",
            Self::Corners => "corners",
        }
    }
}

/// The four multi-modal tasks a prompt token can name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Depth,
    Thermal,
    Event,
    Language,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Depth, Task::Thermal, Task::Event, Task::Language];

    pub fn index(&self) -> usize {
        match self {
            Task::Depth => 0,
            Task::Thermal => 1,
            Task::Event => 2,
            Task::Language => 3,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "depth" => Some(Task::Depth),
            "thermal" => Some(Task::Thermal),
            "event" => Some(Task::Event),
            "language" => Some(Task::Language),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::Depth => "depth",
            Task::Thermal => "thermal",
            Task::Event => "event",
            Task::Language => "language",
        }
    }
}

/// Token id layout over `n_bins` coordinate words plus special tokens.
///
/// ids `0..n_bins` are coordinate words, `n_bins` is END, `n_bins+1` is START,
/// and `n_bins+2..n_bins+6` are the four task prompts. The logits head covers
/// only `0..=n_bins` (coordinates plus END); START and prompts are input-only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    pub n_bins: usize,
}

impl Vocabulary {
    pub fn new(n_bins: usize) -> Self {
        assert!(n_bins >= 2, "vocabulary needs at least 2 bins, got {n_bins}");
        Self { n_bins }
    }

    pub fn end_id(&self) -> u32 {
        self.n_bins as u32
    }

    pub fn start_id(&self) -> u32 {
        self.n_bins as u32 + 1
    }

    pub fn prompt_id(&self, task: Task) -> u32 {
        self.n_bins as u32 + 2 + task.index() as u32
    }

    /// Total distinct ids, coordinates + END + START + 4 prompts.
    pub fn total_ids(&self) -> usize {
        self.n_bins + 6
    }

    /// Width of the word-sampling head: coordinates + END.
    pub fn head_dim(&self) -> usize {
        self.n_bins + 1
    }

    pub fn is_coord(&self, id: u32) -> bool {
        (id as usize) < self.n_bins
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new(4000)
    }
}

/// Decoder input/target id pair for one box (both length 5).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    /// `[START-or-prompt, c0, c1, c2, c3]`
    pub input: Vec<u32>,
    /// `[c0, c1, c2, c3, END]`
    pub target: Vec<u32>,
}

/// Uniform discretization of `v in [0,1]`: `clamp(floor(v*n_bins), 0, n_bins-1)`.
/// Out-of-range inputs are clamped and counted.
pub fn quantize_coord(v: f32, n_bins: usize) -> u32 {
    assert!(n_bins >= 2, "quantize_coord needs n_bins >= 2");
    if !(0.0..=1.0).contains(&v) {
        CLAMP_WARNINGS.fetch_add(1, Ordering::Relaxed);
    }
    let bin = (v as f64 * n_bins as f64).floor();
    (bin.clamp(0.0, (n_bins - 1) as f64)) as u32
}

/// Bin center `(bin + 0.5)/n_bins`, the inverse of [`quantize_coord`] up to
/// half a bin width.
pub fn dequantize_coord(bin: u32, n_bins: usize) -> f32 {
    assert!(
        (bin as usize) < n_bins,
        "bin {bin} out of range for {n_bins} bins"
    );
    ((bin as f64 + 0.5) / n_bins as f64) as f32
}

/// Quantize a crop-normalized box into its decoder input/target sequences
/// under the active coordinate order. `start` is the id placed at input
/// position 0 (START, or a task prompt).
pub fn encode_box(b: &BBox, vocab: &Vocabulary, order: SeqOrder, start: u32) -> TokenSequence {
    let coords = match order {
        SeqOrder::Xywh => [b.cx, b.cy, b.w, b.h],
        SeqOrder::Whxy => [b.w, b.h, b.cx, b.cy],
        SeqOrder::Corners => {
            let (x0, y0, x1, y1) = b.corners();
            [x0, y0, x1, y1]
        }
    };
    let ids: Vec<u32> = coords
        .iter()
        .map(|&c| quantize_coord(c, vocab.n_bins))
        .collect();
    let mut input = vec![start];
    input.extend_from_slice(&ids);
    let mut target = ids;
    target.push(vocab.end_id());
    TokenSequence { input, target }
}

/// Malformed coordinate sequences rejected by [`decode_box`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DecodeError {
    /// A special token (END/START/prompt) appeared in a coordinate slot.
    NonCoordinateToken { position: usize, id: u32 },
    /// Corner format with inverted extents.
    DegenerateBox,
}

impl std::fmt::Display for DecodeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecodeError::NonCoordinateToken { position, id } => {
                write!(f, "non-coordinate token {id} at position {position}")
            }
            DecodeError::DegenerateBox => write!(f, "degenerate corner box"),
        }
    }
}

impl std::error::Error for DecodeError {}

/// Dequantize four coordinate ids back into a crop-normalized box.
pub fn decode_box(
    ids: &[u32; 4],
    vocab: &Vocabulary,
    order: SeqOrder,
) -> Result<BBox, DecodeError> {
    for (position, &id) in ids.iter().enumerate() {
        if !vocab.is_coord(id) {
            return Err(DecodeError::NonCoordinateToken { position, id });
        }
    }
    let c: Vec<f32> = ids
        .iter()
        .map(|&id| dequantize_coord(id, vocab.n_bins))
        .collect();
    match order {
        SeqOrder::Xywh => Ok(BBox::new(c[0], c[1], c[2], c[3])),
        SeqOrder::Whxy => Ok(BBox::new(c[2], c[3], c[0], c[1])),
        SeqOrder::Corners => {
            if c[2] < c[0] || c[3] < c[1] {
                return Err(DecodeError::DegenerateBox);
            }
            Ok(BBox::from_corners(c[0], c[1], c[2], c[3]))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_boundaries() {
        assert_eq!(quantize_coord(0.0, 4000), 0);
        assert_eq!(quantize_coord(0.5, 4000), 2000);
        assert_eq!(quantize_coord(1.0, 4000), 3999);
    }

    #[test]
    fn quantize_out_of_range_clamps_and_counts() {
        let before = clamp_warning_count();
        assert_eq!(quantize_coord(-0.25, 4000), 0);
        assert_eq!(quantize_coord(1.75, 4000), 3999);
        assert!(clamp_warning_count() >= before + 2);
    }

    #[test]
    fn dequantize_bin_centers() {
        assert_eq!(dequantize_coord(0, 4000), 0.000125);
        assert_eq!(dequantize_coord(2000, 4000), 0.500125);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn dequantize_rejects_out_of_range() {
        dequantize_coord(4000, 4000);
    }

    #[test]
    fn vocabulary_layout() {
        let v = Vocabulary::new(4000);
        assert_eq!(v.end_id(), 4000);
        assert_eq!(v.start_id(), 4001);
        assert_eq!(v.prompt_id(Task::Depth), 4002);
        assert_eq!(v.prompt_id(Task::Language), 4005);
        assert_eq!(v.total_ids(), 4006);
        assert_eq!(v.head_dim(), 4001);
        // four distinct prompt ids, bijective with tasks
        let ids: Vec<u32> = Task::ALL.iter().map(|&t| v.prompt_id(t)).collect();
        let mut dedup = ids.clone();
        dedup.dedup();
        assert_eq!(ids.len(), 4);
        assert_eq!(dedup.len(), 4);
    }

    #[test]
    fn encode_center_box() {
        let v = Vocabulary::new(4000);
        let seq = encode_box(
            &BBox::new(0.5, 0.5, 0.25, 0.25),
            &v,
            SeqOrder::Xywh,
            v.start_id(),
        );
        assert_eq!(seq.target, vec![2000, 2000, 1000, 1000, 4000]);
        assert_eq!(seq.input, vec![4001, 2000, 2000, 1000, 1000]);
    }

    #[test]
    fn encode_corner_format() {
        let v = Vocabulary::new(4000);
        let seq = encode_box(
            &BBox::new(0.5, 0.5, 0.25, 0.25),
            &v,
            SeqOrder::Corners,
            v.start_id(),
        );
        // corners (0.375, 0.375, 0.625, 0.625)
        assert_eq!(seq.target[..4], [1500, 1500, 2500, 2500]);
    }

    #[test]
    fn decode_known_ids() {
        let v = Vocabulary::new(4000);
        let b = decode_box(&[2000, 2000, 1000, 1000], &v, SeqOrder::Xywh).unwrap();
        assert_eq!(b, BBox::new(0.500125, 0.500125, 0.250125, 0.250125));
    }

    #[test]
    fn decode_rejects_special_tokens() {
        let v = Vocabulary::new(4000);
        let err = decode_box(&[2000, 4000, 1000, 1000], &v, SeqOrder::Xywh).unwrap_err();
        assert_eq!(
            err,
            DecodeError::NonCoordinateToken {
                position: 1,
                id: 4000
            }
        );
    }

    #[test]
    fn decode_rejects_degenerate_corners() {
        let v = Vocabulary::new(4000);
        let err = decode_box(&[2000, 2000, 1000, 2500], &v, SeqOrder::Corners).unwrap_err();
        assert_eq!(err, DecodeError::DegenerateBox);
    }

    #[test]
    fn bin_centers_are_fixed_points() {
        let v = Vocabulary::new(4000);
        for &bin in &[0u32, 1, 1999, 2000, 3998, 3999] {
            let c = dequantize_coord(bin, 4000);
            assert_eq!(quantize_coord(c, 4000), bin);
        }
        // full roundtrip through encode/decode on a bin-center box
        let b = BBox::new(
            dequantize_coord(100, 4000),
            dequantize_coord(200, 4000),
            dequantize_coord(300, 4000),
            dequantize_coord(400, 4000),
        );
        for order in [SeqOrder::Xywh, SeqOrder::Whxy] {
            let seq = encode_box(&b, &v, order, v.start_id());
            let ids: [u32; 4] = seq.target[..4].try_into().unwrap();
            let back = decode_box(&ids, &v, order).unwrap();
            assert_eq!(back, b);
        }
    }

    #[test]
    fn roundtrip_error_bounded_by_half_bin() {
        // deterministic pseudo-random sweep
        let mut state = 0x243f6a8885a308d3u64;
        for _ in 0..100_000 {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let vff = ((state >> 11) as f64) / ((1u64 << 53) as f64);
            let vf = vff as f32;
            for n in [100usize, 4000] {
                let q = quantize_coord(vf, n);
                let d = dequantize_coord(q, n);
                let err = (d as f64 - vf as f64).abs();
                assert!(err <= 0.5 / n as f64, "v={vf} n={n} err={err}");
            }
        }
    }
}
