// Stage-level timing of one training pair forward.
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sqtk_core::decoder::forward_teacher_forced;
use sqtk_core::encoder::{encode_joint, select_search_features};
use sqtk_core::model::{Model, ModelConfig};
use sqtk_core::synth::{generate_sequence, SceneSpec};
use sqtk_core::tensor::Tape;
use sqtk_core::trainer::{make_training_pair, TrainConfig};
use std::time::Instant;

fn main() {
    let model = Model::new(ModelConfig::default(), 42);
    let cfg = TrainConfig { batch_size: 1, ..TrainConfig::default() };
    let frames = generate_sequence(&SceneSpec { seed: 7, ..SceneSpec::default() }, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = make_training_pair(&model, &cfg, &frames, &mut rng).unwrap();

    let reps = 50;
    let (mut t_enc, mut t_dec, mut t_ce, mut t_bwd) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..reps {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let t0 = Instant::now();
        let feats = encode_joint(&mut tape, &model, &bound, &[&s.template, &s.dynamic], &s.search, None, None);
        let visual = select_search_features(&mut tape, &feats, model.cfg.feature_variant);
        t_enc += t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        let logits = forward_teacher_forced(&mut tape, &model, &bound, visual, &s.input_ids);
        t_dec += t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        let loss = tape.cross_entropy(logits, &s.target_ids);
        t_ce += t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        tape.backward(loss);
        t_bwd += t0.elapsed().as_secs_f64();
    }
    let ms = |t: f64| t / reps as f64 * 1e3;
    println!("encoder fwd {:.2} ms | decoder fwd {:.2} ms | CE {:.2} ms | backward {:.2} ms",
        ms(t_enc), ms(t_dec), ms(t_ce), ms(t_bwd));
}
