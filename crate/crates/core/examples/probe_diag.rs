// Per-position loss decomposition after a short training run.
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sqtk_core::decoder::forward_teacher_forced;
use sqtk_core::encoder::{encode_joint, select_search_features};
use sqtk_core::model::{Model, ModelConfig};
use sqtk_core::synth::{generate_sequence, SceneSpec, FrameSample};
use sqtk_core::tensor::Tape;
use sqtk_core::trainer::{make_training_pair, train_rgb, TrainConfig};

fn main() {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let train_seqs: Vec<Vec<FrameSample>> = (0..150u64)
        .map(|s| generate_sequence(&SceneSpec { occluder_prob: 0.25, ..SceneSpec::sampled(s) }, 24))
        .collect();
    let mut model = Model::new(ModelConfig::default(), 42);
    let cfg = TrainConfig { steps, batch_size: 1, seed: 9, ..TrainConfig::default() };
    train_rgb(&mut model, &train_seqs, &cfg, |r| {
        if r.step % 250 == 0 { println!("step {:5} loss {:.4}", r.step, r.loss); }
    }).unwrap();

    // per-position CE over fresh pairs
    let mut rng = ChaCha8Rng::seed_from_u64(555);
    let mut pos_loss = [0.0f64; 5];
    let mut pos_err = [0.0f64; 5]; // |argmax - target| in bins, coords only
    let mut count = 0usize;
    for _ in 0..40 {
        let seq = &train_seqs[(count * 7) % train_seqs.len()];
        let Some(s) = make_training_pair(&model, &cfg, seq, &mut rng) else { continue };
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let feats = encode_joint(&mut tape, &model, &bound, &[&s.template, &s.dynamic], &s.search, None, None);
        let visual = select_search_features(&mut tape, &feats, model.cfg.feature_variant);
        let logits = forward_teacher_forced(&mut tape, &model, &bound, visual, &s.input_ids);
        let v = model.vocab().head_dim();
        let data = tape.data(logits);
        for p in 0..5 {
            let row = &data[p * v..(p + 1) * v];
            let t = s.target_ids[p] as usize;
            let mx = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let lse: f64 = mx as f64 + row.iter().map(|&x| ((x - mx) as f64).exp()).sum::<f64>().ln();
            pos_loss[p] += lse - row[t] as f64;
            let am = row.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            pos_err[p] += (am as f64 - t as f64).abs();
        }
        count += 1;
    }
    for p in 0..5 {
        println!("pos {p}: CE {:.3}  |argmax-target| {:.0} bins", pos_loss[p] / count as f64, pos_err[p] / count as f64);
    }
}
