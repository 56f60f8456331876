//! Minimal reverse-mode autodiff over dense row-major f32 matrices.
//!
//! A [`Tape`] is an append-only arena of operation nodes built during the
//! forward pass; [`Tape::backward`] walks it once in reverse. Every tensor is
//! two-dimensional (scalars are `1x1`, vectors `1xN`), which is all the model
//! needs and keeps every backward rule auditable.
//!
//! Reproducibility contract: every kernel accumulates in a fixed order per
//! output element, so identical inputs produce bit-identical data and grad
//! buffers regardless of thread count.

mod optim;
mod tape;

pub use optim::{clip_grad_norm, AdamW, ParamId, ParamSet, Parameter};
pub use tape::{Tape, Value};

/// Fast `exp` for softmax-heavy passes.
///
/// Splits `x = n*ln2 + f`, evaluates `2^f` with a degree-6 polynomial and
/// applies `2^n` via the exponent bits. Relative error is below 1e-6 over
/// the live range; inputs below -87 flush to exactly 0 (so `-inf` masks stay
/// exact) and inputs above +88 saturate to `exp(88)`. Branchless on purpose:
/// the slice kernels below auto-vectorize.
#[inline]
pub fn fast_exp(x: f32) -> f32 {
    const LOG2_E: f32 = std::f32::consts::LOG2_E;
    // 2^f on [-0.5, 0.5]: Taylor coefficients (ln2)^k / k!.
    const C1: f32 = 0.693_147_2;
    const C2: f32 = 0.240_226_51;
    const C3: f32 = 0.055_504_11;
    const C4: f32 = 0.009_618_13;
    const C5: f32 = 0.001_333_355_8;
    const C6: f32 = 0.000_154_035_3;
    // round-to-nearest-even via the 1.5*2^23 magic constant: plain add/sub,
    // so the whole function vectorizes on baseline SSE2
    const MAGIC: f32 = 12_582_912.0;
    let xc = x.clamp(-87.0, 88.0);
    let y = xc * LOG2_E;
    let shifted = y + MAGIC;
    let n = shifted - MAGIC;
    let f = y - n;
    let p = 1.0 + f * (C1 + f * (C2 + f * (C3 + f * (C4 + f * (C5 + f * C6)))));
    let bits = ((n as i32).wrapping_add(127) as u32) << 23;
    let r = p * f32::from_bits(bits);
    // exact zero below the clamp point, as a select rather than a branch
    let keep = (x >= -87.0) as u32 as f32;
    r * keep
}

/// Vectorizable elementwise `exp` over a slice, lane-identical to
/// [`fast_exp`].
pub fn exp_slice(src: &[f32], dst: &mut [f32]) {
    for (d, &x) in dst.iter_mut().zip(src) {
        *d = fast_exp(x);
    }
}

/// Deterministic slice sum in f64 with four independent accumulator chains.
pub fn sum_f64(xs: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = xs.chunks_exact(4);
    let rem = chunks.remainder();
    for c in chunks {
        acc[0] += c[0] as f64;
        acc[1] += c[1] as f64;
        acc[2] += c[2] as f64;
        acc[3] += c[3] as f64;
    }
    let mut tail = 0.0f64;
    for &x in rem {
        tail += x as f64;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `tanh` via `1 - 2/(e^{2x}+1)` on [`fast_exp`]; below 1e-6 absolute error
/// and branchless (saturation falls out of the exp clamps).
#[inline]
pub fn fast_tanh(x: f32) -> f32 {
    let two_x = (2.0 * x).clamp(-88.0, 88.0);
    1.0 - 2.0 / (fast_exp(two_x) + 1.0)
}

/// GELU with the tanh approximation, matching the forward used on the tape.
#[inline]
pub fn gelu_scalar(x: f32) -> f32 {
    const SQRT_2_OVER_PI: f32 = 0.797_884_6;
    0.5 * x * (1.0 + fast_tanh(SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x)))
}

#[inline]
pub(crate) fn gelu_grad_scalar(x: f32) -> f32 {
    const SQRT_2_OVER_PI: f32 = 0.797_884_6;
    let inner = SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x);
    let t = fast_tanh(inner);
    let sech2 = 1.0 - t * t;
    let d_inner = SQRT_2_OVER_PI * (1.0 + 3.0 * 0.044_715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner
}

#[cfg(test)]
mod fast_exp_tests {
    use super::fast_exp;

    #[test]
    fn close_to_std_exp() {
        let mut worst = 0.0f32;
        let mut x = -20.0f32;
        while x < 20.0 {
            let e = x.exp();
            let a = fast_exp(x);
            let rel = ((a - e) / e).abs();
            worst = worst.max(rel);
            x += 0.0137;
        }
        assert!(worst < 1e-6, "fast_exp worst rel err {worst}");
    }

    #[test]
    fn extreme_inputs_do_not_overflow() {
        assert_eq!(fast_exp(-1000.0), 0.0);
        assert!(fast_exp(1000.0).is_finite());
    }
}

/// Bench-only re-export of the NN kernel.
#[doc(hidden)]
pub use tape::matmul_nn as tape_bench_nn;
