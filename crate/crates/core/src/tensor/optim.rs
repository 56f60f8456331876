use std::collections::HashMap;

/// Handle into a [`ParamSet`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct ParamId(pub(crate) usize);

/// A trainable tensor with its gradient and AdamW moment buffers.
pub struct Parameter {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
    pub grad: Vec<f32>,
    m: Vec<f32>,
    v: Vec<f32>,
    pub steps: u64,
    pub trainable: bool,
}

impl Parameter {
    pub fn numel(&self) -> usize {
        self.rows * self.cols
    }
}

/// Named parameter store shared by model, optimizer and checkpoint I/O.
#[derive(Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f32>) -> ParamId {
        assert_eq!(data.len(), rows * cols, "parameter {name}: data length mismatch");
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let n = data.len();
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            rows,
            cols,
            data,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
            trainable: true,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Freeze every parameter whose name fails the predicate.
    pub fn set_trainable<F: Fn(&str) -> bool>(&mut self, keep: F) {
        for p in &mut self.params {
            p.trainable = keep(&p.name);
        }
    }

    /// FNV-1a over the raw bits of every tensor, in store order. Used by the
    /// frozen-base tests to certify that base weights did not move.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        for p in &self.params {
            for &v in &p.data {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }

    /// Checksum restricted to parameters matching the predicate.
    pub fn checksum_filtered<F: Fn(&str) -> bool>(&self, keep: F) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        for p in &self.params {
            if !keep(&p.name) {
                continue;
            }
            for &v in &p.data {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }
}

/// Scale all trainable gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm(params: &mut ParamSet, max_norm: f32) -> f32 {
    let mut sq = 0.0f64;
    for p in params.params.iter() {
        if !p.trainable {
            continue;
        }
        for &g in &p.grad {
            sq += (g as f64) * (g as f64);
        }
    }
    let norm = sq.sqrt() as f32;
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for p in params.params.iter_mut() {
            if !p.trainable {
                continue;
            }
            p.grad.iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Clone, Copy, Debug)]
pub struct AdamW {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamW {
    /// One optimizer step over the listed parameters at learning rate `lr`.
    /// Decay is applied to the weights directly (`theta -= lr*wd*theta`),
    /// separate from the adaptive update; gradients are zeroed afterward.
    pub fn step(&self, params: &mut ParamSet, ids: &[ParamId], lr: f32) {
        for &id in ids {
            let p = &mut params.params[id.0];
            if !p.trainable {
                continue;
            }
            p.steps += 1;
            let t = p.steps as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            for i in 0..p.data.len() {
                let g = p.grad[i];
                p.m[i] = self.beta1 * p.m[i] + (1.0 - self.beta1) * g;
                p.v[i] = self.beta2 * p.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = p.m[i] / bc1;
                let v_hat = p.v[i] / bc2;
                if self.weight_decay > 0.0 {
                    p.data[i] -= lr * self.weight_decay * p.data[i];
                }
                p.data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
                p.grad[i] = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f32) -> (ParamSet, ParamId) {
        let mut ps = ParamSet::new();
        let id = ps.add("w", 1, 1, vec![value]);
        (ps, id)
    }

    #[test]
    fn first_step_matches_closed_form() {
        let (mut ps, id) = one_param(1.0);
        let g = 0.25f32;
        ps.get_mut(id).grad[0] = g;
        let opt = AdamW::default();
        opt.step(&mut ps, &[id], 0.1);
        // t=1: m_hat = g, v_hat = g^2 -> update = -lr * g / (|g| + eps)
        let expected = 1.0 - 0.1 * g / (g.abs() + 1e-8);
        let got = ps.get(id).data[0];
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
        assert_eq!(ps.get(id).grad[0], 0.0, "grads zeroed after step");
    }

    #[test]
    fn zero_grad_zero_decay_leaves_param() {
        let (mut ps, id) = one_param(2.5);
        AdamW::default().step(&mut ps, &[id], 0.1);
        assert_eq!(ps.get(id).data[0], 2.5);
    }

    #[test]
    fn zero_grad_with_decay_shrinks_multiplicatively() {
        let (mut ps, id) = one_param(2.0);
        let opt = AdamW {
            weight_decay: 0.1,
            ..AdamW::default()
        };
        opt.step(&mut ps, &[id], 0.5);
        assert_eq!(ps.get(id).data[0], 2.0 * (1.0 - 0.5 * 0.1));
    }

    #[test]
    fn step_count_increases() {
        let (mut ps, id) = one_param(1.0);
        let opt = AdamW::default();
        opt.step(&mut ps, &[id], 0.1);
        opt.step(&mut ps, &[id], 0.1);
        assert_eq!(ps.get(id).steps, 2);
    }

    #[test]
    fn frozen_params_do_not_move() {
        let (mut ps, id) = one_param(1.0);
        ps.get_mut(id).grad[0] = 1.0;
        ps.set_trainable(|_| false);
        AdamW::default().step(&mut ps, &[id], 0.1);
        assert_eq!(ps.get(id).data[0], 1.0);
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut ps = ParamSet::new();
        let a = ps.add("a", 1, 2, vec![0.0; 2]);
        ps.get_mut(a).grad.copy_from_slice(&[3.0, 4.0]);
        let norm = clip_grad_norm(&mut ps, 1.0);
        assert!((norm - 5.0).abs() < 1e-6);
        let g = &ps.get(a).grad;
        let new_norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!((new_norm - 1.0).abs() < 1e-5);
    }
}
