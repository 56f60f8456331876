use sqtk_core::tensor::{fast_exp, gelu_scalar};
use std::time::Instant;

fn main() {
    let xs: Vec<f32> = (0..196_608).map(|i| ((i * 37) % 401) as f32 * 0.02 - 4.0).collect();
    let mut out = vec![0.0f32; xs.len()];

    for _ in 0..3 {
        let t0 = Instant::now();
        for _ in 0..100 {
            for (o, &x) in out.iter_mut().zip(&xs) {
                *o = gelu_scalar(x);
            }
        }
        println!("gelu slice throughput: {:.2} ns/elem", t0.elapsed().as_secs_f64() * 1e9 / (100.0 * xs.len() as f64));
    }
    let t0 = Instant::now();
    for _ in 0..100 {
        for (o, &x) in out.iter_mut().zip(&xs) {
            *o = fast_exp(x);
        }
    }
    println!("exp  slice throughput: {:.2} ns/elem (sink {})", t0.elapsed().as_secs_f64() * 1e9 / (100.0 * xs.len() as f64), out[5]);
}
