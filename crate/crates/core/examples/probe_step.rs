use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sqtk_core::model::{Model, ModelConfig};
use sqtk_core::synth::{generate_sequence, SceneSpec};
use sqtk_core::trainer::{make_training_pair, train_step, TrainConfig, TrainSample};
use std::time::Instant;

fn main() {
    for batch_size in [1usize, 2, 4] {
        let mut model = Model::new(ModelConfig::default(), 42);
        let cfg = TrainConfig { batch_size, ..TrainConfig::default() };
        let frames = generate_sequence(&SceneSpec { seed: 7, ..SceneSpec::default() }, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch: Vec<TrainSample> = (0..batch_size)
            .map(|_| make_training_pair(&model, &cfg, &frames, &mut rng).unwrap())
            .collect();
        for step in 0..5u64 {
            train_step(&mut model, &batch, &cfg, step).unwrap();
        }
        let t0 = Instant::now();
        for step in 0..30u64 {
            train_step(&mut model, &batch, &cfg, step).unwrap();
        }
        let ms = t0.elapsed().as_secs_f64() / 30.0 * 1e3;
        println!("B={batch_size}: {ms:.1} ms/step -> 20k steps = {:.1} min", ms * 20_000.0 / 60_000.0);
    }
}
