use normlab::bounds::subspace_min_width;
use normlab::cli::format_csv;
use normlab::experiments::{
    run_norm_per_layer, run_subspace_sweep, run_width_variation, subspace_basis, ExperimentConfig, Preset, WidthSpec,
};
use normlab::linalg::Vector;
use normlab::network::{forward, init_network, InitScheme, NetworkConfig};

fn small_fig1() -> ExperimentConfig {
    ExperimentConfig {
        depth: 4,
        input_dim: 40,
        num_samples: 30,
        widths: vec![WidthSpec::Uniform(60), WidthSpec::Uniform(120)],
        ..ExperimentConfig::norm_per_layer(Preset::Desk)
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let cfg = small_fig1();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| format_csv(&run_norm_per_layer(&cfg).unwrap().combined()).unwrap());
    let b = four.install(|| format_csv(&run_norm_per_layer(&cfg).unwrap().combined()).unwrap());
    assert_eq!(a, b);
}

#[test]
fn zero_spread_reproduces_uniform_gradient_ratios() {
    let mut uniform = small_fig1();
    uniform.widths = vec![WidthSpec::Uniform(100)];
    uniform.schemes = vec![InitScheme::HeFanOut];
    let mut jitter = uniform.clone();
    jitter.widths = vec![
        WidthSpec::Jitter { base: 100, spread: 0 },
        WidthSpec::Jitter { base: 100, spread: 50 },
    ];
    let a = run_norm_per_layer(&uniform).unwrap();
    let b = run_width_variation(&jitter).unwrap();
    for l in 1..=4 {
        let x = a.grad.get("grad_ratio/he_n100", l).unwrap();
        let y = b.get("grad_ratio/v0", l).unwrap();
        assert_eq!((x.mean, x.std), (y.mean, y.std));
        assert_eq!(b.get("layer_width/v0", l).unwrap().mean, 100.0);
    }
    assert_eq!(b.series("grad_ratio_pooled/all").len(), 2);
}

#[test]
fn one_dimensional_subspace_has_two_ratios() {
    // Inputs are z·b with scalar z, so by positive homogeneity every ratio
    // equals the ratio of b (z > 0) or of −b (z < 0).
    let cfg = ExperimentConfig {
        input_dim: 12,
        num_samples: 400,
        subspace_dim: Some(1),
        widths: vec![WidthSpec::Uniform(50)],
        ..ExperimentConfig::subspace(Preset::Desk)
    };
    let sweep = run_subspace_sweep(&cfg).unwrap();
    let basis = subspace_basis(&cfg).unwrap();
    let b: Vec<f64> = (0..12).map(|i| basis.get(i, 0)).collect();
    let net_cfg = NetworkConfig::new(vec![12, 50, 50, 50], cfg.num_classes, cfg.seed).unwrap();
    let net = init_network(&net_cfg, InitScheme::HeFanOut, cfg.rng().derive_tag("network")).unwrap();
    let pos = forward(&net, &Vector::new(b.clone()).unwrap()).unwrap();
    let neg = forward(&net, &Vector::new(b.iter().map(|v| -v).collect()).unwrap()).unwrap();
    let w = &sweep.per_width[0];
    for l in 1..=3 {
        let rp = pos.act(l).norm().powi(2);
        let rn = neg.act(l).norm().powi(2);
        assert!((w.min_sq_ratio[l - 1] - rp.min(rn)).abs() < 1e-12);
        assert!((w.max_sq_ratio[l - 1] - rp.max(rn)).abs() < 1e-12);
    }
}

#[test]
fn formula_width_has_no_violations_on_a_ten_dimensional_subspace() {
    let width = subspace_min_width(10, 0.3, 0.05, 1).unwrap();
    assert_eq!(width, 51_601);
    let cfg = ExperimentConfig {
        depth: 1,
        input_dim: 20,
        num_samples: 100_000,
        subspace_dim: Some(10),
        epsilon: vec![0.3],
        widths: vec![WidthSpec::Uniform(width)],
        ..ExperimentConfig::subspace(Preset::Desk)
    };
    let sweep = run_subspace_sweep(&cfg).unwrap();
    assert_eq!(sweep.formula_width, width);
    let w = &sweep.per_width[0];
    assert_eq!(w.violations, 0);
    assert!(w.max_sq_ratio[0] < 1.3 && w.min_sq_ratio[0] > 0.7);
}

#[test]
fn dataset_is_shared_across_schemes() {
    let r = run_norm_per_layer(&small_fig1()).unwrap();
    // He and Glorot nets draw the same Gaussian matrices up to scale, so at
    // layer 1 the ratio differs by the constant sqrt(var_glorot / var_he).
    let he = r.act.get("act_ratio/he_n60", 1).unwrap().mean;
    let gl = r.act.get("act_ratio/glorot_n60", 1).unwrap().mean;
    let expected = (InitScheme::Glorot.variance(40, 60) / InitScheme::HeFanOut.variance(40, 60)).sqrt();
    assert!((gl / he - expected).abs() < 1e-12);
}
