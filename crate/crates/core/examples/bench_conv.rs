// Rough throughput probe for the conv kernels (not a criterion bench).
use fastvgan::tensor::{Graph, Tensor};
use std::time::Instant;

fn main() {
    // GEMM shape typical of the widest generator block at T=128.
    let (m, k, n) = (10240usize, 1008usize, 112usize);
    let a = vec![0.5f32; m * k];
    let b = vec![0.25f32; k * n];
    let mut c = vec![0.0f32; m * n];
    let start = Instant::now();
    let reps = 5;
    for _ in 0..reps {
        use fastvgan::tensor::Elem;
        f32::gemm(
            m, k, n, 1.0, &a, k as isize, 1, &b, n as isize, 1, 0.0, &mut c, n as isize, 1,
        );
    }
    let el = start.elapsed().as_secs_f64();
    let gflops = (2.0 * m as f64 * k as f64 * n as f64 * reps as f64) / el / 1e9;
    println!("sgemm {m}x{k}x{n}: {gflops:.1} GFLOP/s");

    // Conv forward+backward at a block-4-like shape.
    let t = 128;
    let x = Tensor::<f32>::from_fn(&[t, 80, 112], |i| ((i % 17) as f32 - 8.0) * 0.01);
    let w = Tensor::<f32>::from_fn(&[3, 3, 112, 112], |i| ((i % 13) as f32 - 6.0) * 0.005);
    let bias = Tensor::<f32>::zeros(&[112]);
    let start = Instant::now();
    let reps = 3;
    for _ in 0..reps {
        let mut g = Graph::<f32>::new();
        let xn = g.var(x.clone());
        let wn = g.var(w.clone());
        let bn = g.var(bias.clone());
        let y = g.conv2d(xn, wn, Some(bn), (1, 1));
        let l = g.mse_const(y, 0.0);
        g.backward(l).unwrap();
    }
    let el = start.elapsed().as_secs_f64() / reps as f64;
    let macs = (t * 80 * 9 * 112 * 112) as f64;
    println!(
        "conv fwd+bwd [128,80,112]x[3,3,112,112]: {:.3} s/iter, {:.1} eff GFLOP/s",
        el,
        3.0 * 2.0 * macs / el / 1e9
    );
}
