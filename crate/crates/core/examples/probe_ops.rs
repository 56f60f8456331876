// Per-op micro timing: forward+backward cost of each op at model shapes.
use sqtk_core::tensor::Tape;
use std::time::Instant;

fn time_op(name: &str, reps: usize, mut f: impl FnMut()) {
    let t0 = Instant::now();
    for _ in 0..reps {
        f();
    }
    println!("{name:28} {:8.1} us/rep", t0.elapsed().as_secs_f64() / reps as f64 * 1e6);
}

fn main() {
    let data: Vec<f32> = (0..192 * 192).map(|i| ((i * 37) % 101) as f32 * 0.01 - 0.5).collect();

    time_op("softmax 192x192 fwd+bwd", 200, || {
        let mut t = Tape::new();
        let x = t.input(192, 192, data.clone());
        let s = t.softmax(x);
        let l = t.sum_all(s);
        t.backward(l);
    });
    time_op("layer_norm 192x64 fwd+bwd", 200, || {
        let mut t = Tape::new();
        let x = t.input(192, 64, data[..192 * 64].to_vec());
        let g = t.input(1, 64, vec![1.0; 64]);
        let b = t.input(1, 64, vec![0.0; 64]);
        let s = t.layer_norm(x, g, b);
        let l = t.sum_all(s);
        t.backward(l);
    });
    time_op("gelu 192x256 fwd+bwd", 200, || {
        let mut t = Tape::new();
        let g256: Vec<f32> = (0..192 * 256).map(|i| ((i * 37) % 101) as f32 * 0.01 - 0.5).collect();
        let x = t.input(192, 256, g256);
        let s = t.gelu(x);
        let l = t.sum_all(s);
        t.backward(l);
    });
    time_op("add 192x64 fwd+bwd", 500, || {
        let mut t = Tape::new();
        let x = t.input(192, 64, data[..192 * 64].to_vec());
        let y = t.input(192, 64, data[..192 * 64].to_vec());
        let s = t.add(x, y);
        let l = t.sum_all(s);
        t.backward(l);
    });
    time_op("slice+concat 4 heads", 300, || {
        let mut t = Tape::new();
        let x = t.input(192, 64, data[..192 * 64].to_vec());
        let hs: Vec<_> = (0..4).map(|h| t.slice_cols(x, h * 16, 16)).collect();
        let c = t.concat_cols(&hs);
        let l = t.sum_all(c);
        t.backward(l);
    });
    time_op("matmul 192x64x64 fwd+bwd", 200, || {
        let mut t = Tape::new();
        let a = t.input(192, 64, data[..192 * 64].to_vec());
        let b = t.input(64, 64, data[..64 * 64].to_vec());
        let c = t.matmul(a, b);
        let l = t.sum_all(c);
        t.backward(l);
    });
    time_op("embedding 4002x64 bwd", 100, || {
        let mut t = Tape::new();
        let table = t.input(4002, 64, vec![0.01; 4002 * 64]);
        let e = t.embedding(table, &[5, 17, 400, 2000, 4001]);
        let l = t.sum_all(e);
        t.backward(l);
    });
    time_op("cross_entropy 5x4001", 100, || {
        let mut t = Tape::new();
        let logits = t.input(5, 4001, vec![0.01; 5 * 4001]);
        let l = t.cross_entropy(logits, &[1, 2, 3, 4, 5]);
        t.backward(l);
    });
}
