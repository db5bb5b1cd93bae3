#![allow(dead_code)]

use normlab::linalg::{RngState, Vector};
use normlab::network::{cross_entropy, gradients, init_network, loss, InitScheme, NetworkConfig, ReluNet};

/// Worst discrepancy between backprop and central differences over every
/// hidden-layer weight.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub checked: usize,
    pub failures: usize,
    /// Largest `|g − fd| / max(|g|, |fd|)` among entries with a non-negligible gradient.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

/// Central differences with step `h`. An entry passes when
/// `|g − fd| ≤ rel_tol · max(|g|, |fd|) + abs_floor`; the floor absorbs the
/// `~ε_mach·|ℓ|/h` cancellation error of the difference quotient.
pub fn fd_check(net: &ReluNet, x: &Vector, label: usize, h: f64, rel_tol: f64, abs_floor: f64) -> FdReport {
    let (_, grads) = gradients(net, x, label).unwrap();
    let mut report = FdReport {
        checked: 0,
        failures: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
    };
    let mut work = net.clone();
    for (l, dw) in grads.dw.iter().enumerate() {
        let layer = l + 1;
        for i in 0..dw.rows() {
            for j in 0..dw.cols() {
                work.perturb_weight(layer, i, j, h);
                let up = loss(&work, x, label).unwrap();
                work.perturb_weight(layer, i, j, -2.0 * h);
                let down = loss(&work, x, label).unwrap();
                work.perturb_weight(layer, i, j, h);
                let fd = (up - down) / (2.0 * h);
                let g = dw.get(i, j);
                let err = (g - fd).abs();
                let scale = g.abs().max(fd.abs());
                report.checked += 1;
                report.max_abs_err = report.max_abs_err.max(err);
                if scale > 1e-6 {
                    report.max_rel_err = report.max_rel_err.max(err / scale);
                }
                if err > rel_tol * scale + abs_floor {
                    report.failures += 1;
                }
            }
        }
    }
    report
}

pub fn small_net(widths: Vec<usize>, classes: usize, seed: u64) -> ReluNet {
    let config = NetworkConfig::new(widths, classes, seed).unwrap();
    init_network(&config, InitScheme::HeFanOut, RngState::from_seed(seed)).unwrap()
}

/// Loss as a function of the top pre-activation `a^L`.
pub fn loss_from_top_preact(net: &ReluNet, a: &[f64], label: usize) -> f64 {
    let h: Vec<f64> = a.iter().map(|v| v.max(0.0)).collect();
    let logits = net.head().matvec(&h).unwrap();
    cross_entropy(&logits, label).unwrap()
}

/// Largest relative gap between `‖∂ℓ/∂W^l‖_F` computed from the materialized
/// outer product and the factorized `‖∂ℓ/∂a^l‖ · ‖h^{l-1}‖`, over `pairs`
/// random (network, input) pairs.
pub fn factorization_gap(pairs: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for p in 0..pairs {
        let rng = RngState::from_seed(1000 + p);
        let mut d = rng.derive_tag("shape").draws();
        let depth = d.between(1, 4);
        let mut widths = vec![d.between(2, 40)];
        widths.extend((0..depth).map(|_| d.between(2, 40)));
        let classes = d.between(2, 6);
        let label = d.below(classes);
        let net = small_net(widths.clone(), classes, 1000 + p);
        let x = Vector::gaussian(widths[0], 1.0, rng.derive_tag("x")).unwrap();
        let (trace, grads) = gradients(&net, &x, label).unwrap();
        for (l, dw) in grads.dw.iter().enumerate() {
            let direct = dw.frobenius_norm();
            let factored = grads.da[l].norm() * trace.act(l).norm();
            if direct == 0.0 && factored == 0.0 {
                continue;
            }
            worst = worst.max((direct - factored).abs() / direct.max(factored));
        }
    }
    worst
}
