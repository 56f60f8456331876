// Microbenchmarks: raw kernel throughput and forward/backward split.
use sqtk_core::model::{Model, ModelConfig};
use sqtk_core::synth::{generate_sequence, SceneSpec};
use sqtk_core::tensor::Tape;
use sqtk_core::trainer::{make_training_pair, TrainConfig};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn bench_matmul(m: usize, k: usize, n: usize, iters: usize) {
    let a: Vec<f32> = (0..m * k).map(|i| (i as f32 * 0.37).sin()).collect();
    let b: Vec<f32> = (0..k * n).map(|i| (i as f32 * 0.21).cos()).collect();
    let mut out = vec![0.0f32; m * n];
    let t0 = Instant::now();
    for _ in 0..iters {
        out.iter_mut().for_each(|v| *v = 0.0);
        sqtk_core::tensor::tape_bench_nn(&a, &b, m, k, n, &mut out);
    }
    let el = t0.elapsed().as_secs_f64();
    let gf = (2.0 * m as f64 * k as f64 * n as f64 * iters as f64) / el / 1e9;
    println!("nn {m}x{k}x{n}: {gf:.2} GFLOP/s");
}

fn main() {
    bench_matmul(192, 64, 64, 2000);
    bench_matmul(192, 64, 256, 1000);
    bench_matmul(192, 256, 64, 1000);
    bench_matmul(10, 64, 4001, 500);
    bench_matmul(192, 192, 16, 2000);

    // forward vs backward split of one desk training pair
    let model = Model::new(ModelConfig::default(), 42);
    let cfg = TrainConfig { batch_size: 1, ..TrainConfig::default() };
    let frames = generate_sequence(&SceneSpec { seed: 7, ..SceneSpec::default() }, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pair = make_training_pair(&model, &cfg, &frames, &mut rng).unwrap();

    let reps = 30;
    let mut fwd = 0.0;
    let mut bwd = 0.0;
    let mut bind_t = 0.0;
    for _ in 0..reps {
        let t0 = Instant::now();
        let mut tape = Tape::new();
        let _bound = model.bind(&mut tape);
        bind_t += t0.elapsed().as_secs_f64();
        drop(tape);

        let t0 = Instant::now();
        let mut tape = Tape::new();
        let loss = sqtk_core::trainer::bench_batch_loss(&mut tape, &model, std::slice::from_ref(&pair));
        fwd += t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        tape.backward(loss);
        bwd += t1.elapsed().as_secs_f64();
    }
    println!("bind {:.1} ms  forward {:.1} ms  backward {:.1} ms",
        bind_t / reps as f64 * 1e3, fwd / reps as f64 * 1e3, bwd / reps as f64 * 1e3);
}
