#![allow(dead_code)]

use mmloc::geometry::{measurement_len, true_measurements, wrap_angle};
use mmloc::nn::MlpParams;
use mmloc::{Scenario, Vec3};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random non-degenerate geometry: every UE-RRH range above 20 m and every
/// arrival at least ~6 degrees away from the vertical.
pub fn random_scenario<R: Rng>(rng: &mut R, n_rrh: usize) -> Scenario {
    loop {
        let rrhs: Vec<Vec3> = (0..n_rrh)
            .map(|_| Vec3::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0), rng.random_range(0.0..30.0)))
            .collect();
        let u = Vec3::new(rng.random_range(-300.0..300.0), rng.random_range(-300.0..300.0), rng.random_range(-50.0..50.0));
        let v = Vec3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        let ok = rrhs.iter().all(|b| {
            let d = u - b;
            d.norm() > 20.0 && d.x.hypot(d.y) / d.norm() > 0.1
        });
        if ok {
            if let Ok(s) = Scenario::new(rrhs, u, v) {
                return s;
            }
        }
    }
}

/// Central differences of `m°` in each state coordinate.
pub fn fd_jacobian(s: &Scenario, na: usize, h: f64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(measurement_len(na), 6);
    for k in 0..6 {
        let shifted = |delta: f64| {
            let mut p = s.clone();
            if k < 3 {
                p.ue_pos[k] += delta;
            } else {
                p.ue_vel[k - 3] += delta;
            }
            true_measurements(&p, na).unwrap()
        };
        let (plus, minus) = (shifted(h), shifted(-h));
        for i in 0..plus.len() {
            let diff = if i >= 2 * (na - 1) { wrap_angle(plus[i] - minus[i]) } else { plus[i] - minus[i] };
            out[(i, k)] = diff / (2.0 * h);
        }
    }
    out
}

/// Signs of every hidden pre-activation over the batch, computed independently
/// of the crate's forward pass.
fn relu_pattern(p: &MlpParams, x: &DMatrix<f64>) -> Vec<bool> {
    let mut out = Vec::new();
    let mut a = x.clone();
    let last = p.weights.len() - 1;
    for (l, (w, b)) in p.weights.iter().zip(&p.biases).enumerate() {
        let mut z = w * &a;
        for mut col in z.column_iter_mut() {
            col += b;
        }
        if l == last {
            break;
        }
        out.extend(z.iter().map(|v| *v > 0.0));
        a = z.map(|v| v.max(0.0));
    }
    out
}

/// Max relative error between backprop and central differences of the loss,
/// skipping parameters whose perturbation crosses a ReLU kink.
pub fn gradient_check(sizes: &[usize], batch: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = MlpParams::random(sizes, seed).unwrap();
    let x = DMatrix::from_fn(sizes[0], batch, |_, _| rng.random_range(-1.0..1.0));
    let t = DMatrix::from_fn(*sizes.last().unwrap(), batch, |_, _| rng.random_range(0.0..1.0));
    let (_, grad) = params.loss_and_gradient(&x, &t);
    let g = grad.flatten();
    let flat = params.flatten();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for k in 0..flat.len() {
        let mut p = flat.clone();
        p[k] += h;
        params.set_flat(&p).unwrap();
        let up = params.loss(&x, &t);
        let pattern_up = relu_pattern(&params, &x);
        p[k] -= 2.0 * h;
        params.set_flat(&p).unwrap();
        let down = params.loss(&x, &t);
        if pattern_up != relu_pattern(&params, &x) {
            continue;
        }
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    params.set_flat(&flat).unwrap();
    worst
}

