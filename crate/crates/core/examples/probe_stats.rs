use sqtk_core::synth::{generate_sequence, SceneSpec};

fn main() {
    let mut sum = [0.0f64; 3];
    let mut sumsq = [0.0f64; 3];
    let mut n = 0u64;
    for seed in 0..60u64 {
        let frames = generate_sequence(&SceneSpec { occluder_prob: 0.25, ..SceneSpec::sampled(seed) }, 8);
        for f in &frames {
            let plane = f.rgb.height * f.rgb.width;
            for c in 0..3 {
                for &v in &f.rgb.data[c * plane..(c + 1) * plane] {
                    sum[c] += v as f64;
                    sumsq[c] += (v as f64) * (v as f64);
                }
            }
            n += plane as u64;
        }
    }
    for c in 0..3 {
        let mean = sum[c] / n as f64;
        let var = sumsq[c] / n as f64 - mean * mean;
        println!("channel {c}: mean {:.4} std {:.4}", mean, var.sqrt());
    }
}
