// Probe: desk-config single-pair overfit speed + step timing.
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sqtk_core::model::{Model, ModelConfig};
use sqtk_core::synth::{generate_sequence, SceneSpec};
use sqtk_core::trainer::{make_training_pair, train_step, TrainConfig, TrainSample};
use std::time::Instant;

fn main() {
    let mut model = Model::new(ModelConfig::default(), 42);
    let cfg = TrainConfig { steps: 500, batch_size: 1, ..TrainConfig::default() };
    let frames = generate_sequence(&SceneSpec { seed: 7, ..SceneSpec::default() }, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pair = make_training_pair(&model, &cfg, &frames, &mut rng).unwrap();
    let batch: Vec<TrainSample> = vec![pair];
    let t0 = Instant::now();
    let mut reached = None;
    for step in 0..500u64 {
        let rec = train_step(&mut model, &batch, &cfg, step).unwrap();
        if step % 50 == 0 || step == 499 {
            println!("step {:4}  loss {:.5}  ({:.1} ms/step)", step, rec.loss,
                t0.elapsed().as_millis() as f64 / (step + 1) as f64);
        }
        if rec.loss < 0.05 && reached.is_none() {
            reached = Some(step);
            println!("loss < 0.05 at step {step}");
            break;
        }
    }
    println!("total {:.1}s, reached: {:?}", t0.elapsed().as_secs_f64(), reached);
}
