// Short training run + tracking evaluation to gauge criterion-7 feasibility.
use sqtk_core::metrics::evaluate;
use sqtk_core::model::{Model, ModelConfig};
use sqtk_core::runtime::{track_sequence, TrackerConfig};
use sqtk_core::synth::{generate_sequence, SceneSpec, FrameSample};
use sqtk_core::trainer::{train_rgb, TrainConfig};
use std::time::Instant;

fn main() {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let train_seqs: Vec<Vec<FrameSample>> = (0..200u64)
        .map(|s| generate_sequence(&SceneSpec { occluder_prob: 0.25, ..SceneSpec::sampled(s) }, 24))
        .collect();
    let mut model = Model::new(ModelConfig::default(), 42);
    let cfg = TrainConfig { steps, batch_size: 1, seed: 9, ..TrainConfig::default() };
    let t0 = Instant::now();
    let mut last_losses: Vec<f32> = Vec::new();
    train_rgb(&mut model, &train_seqs, &cfg, |r| {
        if r.step % 200 == 0 {
            println!("step {:5}  loss {:.4}  [{:.0}s]", r.step, r.loss, t0.elapsed().as_secs_f64());
        }
        last_losses.push(r.loss);
        if last_losses.len() > 100 { last_losses.remove(0); }
    }).unwrap();
    let avg: f32 = last_losses.iter().sum::<f32>() / last_losses.len() as f32;
    println!("train done in {:.1} min, last-100 avg loss {avg:.4}", t0.elapsed().as_secs_f64() / 60.0);

    // held-out evaluation
    let mut aos = Vec::new();
    for seed in 10_000..10_020u64 {
        let frames = generate_sequence(&SceneSpec { occluder_prob: 0.25, ..SceneSpec::sampled(seed) }, 40);
        let traj = track_sequence(&model, &frames, TrackerConfig::default());
        let gts: Vec<_> = frames.iter().map(|f| f.gt).collect();
        let r = evaluate(&traj.boxes, &gts).unwrap();
        aos.push(r.ao);
        println!("seed {seed}: AO {:.3}  SR50 {:.3}  P20 {:.3}", r.ao, r.sr50, r.precision20);
    }
    let mean: f64 = aos.iter().sum::<f64>() / aos.len() as f64;
    println!("mean AO over {} sequences: {:.4}", aos.len(), mean);

    // window on/off directional check over 5 seed groups
    let mut on_sum = 0.0f64;
    let mut off_sum = 0.0f64;
    for group in 0..5u64 {
        for k in 0..4u64 {
            let seed = 20_000 + group * 4 + k;
            let frames = generate_sequence(&SceneSpec { occluder_prob: 0.25, ..SceneSpec::sampled(seed) }, 40);
            let gts: Vec<_> = frames.iter().map(|f| f.gt).collect();
            let on = track_sequence(&model, &frames, TrackerConfig::default());
            on_sum += evaluate(&on.boxes, &gts).unwrap().ao;
            let off_cfg = TrackerConfig { window_enabled: false, ..TrackerConfig::default() };
            let off = track_sequence(&model, &frames, off_cfg);
            off_sum += evaluate(&off.boxes, &gts).unwrap().ao;
        }
    }
    println!("window ON mean AO {:.4} | OFF {:.4}", on_sum / 20.0, off_sum / 20.0);
}
