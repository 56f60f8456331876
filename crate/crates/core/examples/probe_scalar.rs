use sqtk_core::tensor::{fast_exp, fast_tanh, gelu_scalar};
use std::time::Instant;

fn main() {
    let xs: Vec<f32> = (0..1_000_000).map(|i| (i % 2000) as f32 * 0.004 - 4.0).collect();
    let mut sink = 0.0f32;

    let t0 = Instant::now();
    for &x in &xs { sink += fast_exp(x); }
    println!("fast_exp      {:6.2} ns/call (sink {sink})", t0.elapsed().as_secs_f64() * 1e9 / xs.len() as f64);

    let t0 = Instant::now();
    for &x in &xs { sink += fast_tanh(x); }
    println!("fast_tanh     {:6.2} ns/call", t0.elapsed().as_secs_f64() * 1e9 / xs.len() as f64);

    let t0 = Instant::now();
    for &x in &xs { sink += gelu_scalar(x); }
    println!("gelu_scalar   {:6.2} ns/call", t0.elapsed().as_secs_f64() * 1e9 / xs.len() as f64);

    let t0 = Instant::now();
    for &x in &xs { sink += x.exp(); }
    println!("std exp       {:6.2} ns/call", t0.elapsed().as_secs_f64() * 1e9 / xs.len() as f64);

    let t0 = Instant::now();
    for &x in &xs { sink += x.tanh(); }
    println!("std tanh      {:6.2} ns/call (sink {sink})", t0.elapsed().as_secs_f64() * 1e9 / xs.len() as f64);
}
