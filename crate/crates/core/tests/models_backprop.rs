use mupre::linalg::{stable_rank, Matrix};
use mupre::models::{
    coord_probe, probe_inputs, synth_batch, Activation, ArchConfig, Model, Teacher,
};

fn sigmas(arch: &ArchConfig) -> Vec<f64> {
    // nonzero everywhere so every gradient path is exercised
    arch.manifest()
        .layers
        .iter()
        .map(|l| match l.d_in {
            mupre::scaling::Dim::Fixed(d) => 1.0 / (d as f64).sqrt(),
            _ => 1.0 / (arch.width as f64).sqrt(),
        })
        .collect()
}

fn finite_difference_check(arch: &ArchConfig, residual_mult: f64) {
    let model = Model::init(arch, &sigmas(arch), residual_mult, 3).unwrap();
    let teacher = Teacher::new(arch.input_dim, 1);
    let batch = synth_batch(7, 5, &teacher, arch.input_dim).unwrap();
    let (_, cache) = model.forward(&batch.inputs, Some(&batch.targets)).unwrap();
    let grads = model.backward(&cache).unwrap();
    let h = 1e-5;
    for (li, g) in grads.iter().enumerate() {
        for r in 0..g.rows() {
            for c in 0..g.cols() {
                let mut plus = model.clone();
                plus.weights[li][(r, c)] += h;
                let mut minus = model.clone();
                minus.weights[li][(r, c)] -= h;
                let lp = plus.forward(&batch.inputs, Some(&batch.targets)).unwrap().0;
                let lm = minus
                    .forward(&batch.inputs, Some(&batch.targets))
                    .unwrap()
                    .0;
                let fd = (lp - lm) / (2.0 * h);
                let scale = g[(r, c)].abs().max(1e-6);
                assert!(
                    (fd - g[(r, c)]).abs() <= 1e-5 * scale.max(g.max_abs()),
                    "layer {li} ({r},{c}): analytic {} fd {fd}",
                    g[(r, c)]
                );
            }
        }
    }
}

#[test]
fn mlp_gradients_match_finite_differences() {
    finite_difference_check(&ArchConfig::mlp(8, 3), 1.0);
    let mut relu = ArchConfig::mlp(6, 4);
    relu.activation = Activation::Relu;
    relu.input_dim = 2;
    finite_difference_check(&relu, 1.0);
}

#[test]
fn residual_gradients_match_finite_differences() {
    finite_difference_check(&ArchConfig::res_mlp(8, 3), 1.0 / 3.0);
}

#[test]
fn single_example_gradients_are_rank_one() {
    for arch in [ArchConfig::mlp(16, 4), ArchConfig::res_mlp(16, 3)] {
        let model = Model::init(&arch, &sigmas(&arch), 0.5, 2).unwrap();
        let teacher = Teacher::new(1, 0);
        let batch = synth_batch(1, 1, &teacher, 1).unwrap();
        let (_, cache) = model.forward(&batch.inputs, Some(&batch.targets)).unwrap();
        for g in model.backward(&cache).unwrap() {
            if g.is_zero() {
                continue;
            }
            assert!((stable_rank(&g).unwrap() - 1.0).abs() < 1e-8);
        }
    }
}

#[test]
fn zero_residual_gives_zero_gradients() {
    let arch = ArchConfig::mlp(8, 3);
    let model = Model::init(&arch, &sigmas(&arch), 1.0, 0).unwrap();
    let x = probe_inputs(1, 4);
    let (_, out) = model.forward(&x, None).unwrap();
    let targets = out.output().row(0).to_vec();
    let (loss, cache) = model.forward(&x, Some(&targets)).unwrap();
    assert_eq!(loss, 0.0);
    assert!(model.backward(&cache).unwrap().iter().all(Matrix::is_zero));
}

#[test]
fn zero_blocks_reduce_to_identity_map() {
    let arch = ArchConfig::res_mlp(8, 6);
    let mut s = sigmas(&arch);
    for v in s.iter_mut().skip(1).take(6) {
        *v = 0.0;
    }
    let model = Model::init(&arch, &s, 1.0 / 6.0, 4).unwrap();
    let x = probe_inputs(1, 5);
    let (_, cache) = model.forward(&x, None).unwrap();
    let embed = model.weights[0].matmul(&x).unwrap();
    let direct = model.weights[7].matmul(&embed).unwrap();
    assert_eq!(cache.output(), &direct);
}

#[test]
fn probe_scales_linearly_in_linear_model() {
    let mut arch = ArchConfig::mlp(8, 3);
    arch.activation = Activation::Identity;
    let model = Model::init(&arch, &sigmas(&arch), 1.0, 5).unwrap();
    let x = probe_inputs(1, 3);
    let (_, c0) = model.forward(&x, None).unwrap();
    let pert = Matrix::from_fn(8, 8, |i, j| ((i + 2 * j) % 3) as f64 - 1.0);
    let probe = |s: f64| {
        let mut m = model.clone();
        m.weights[1].axpby(1.0, s, &pert).unwrap();
        let (_, c1) = m.forward(&x, None).unwrap();
        coord_probe(&c0, &c1, 1).unwrap()
    };
    assert!((probe(0.2) - 2.0 * probe(0.1)).abs() < 1e-12);
}

#[test]
fn batches_are_reproducible() {
    let t = Teacher::new(1, 9);
    assert_eq!(
        synth_batch(3, 8, &t, 1).unwrap(),
        synth_batch(3, 8, &t, 1).unwrap()
    );
    assert_ne!(
        synth_batch(3, 8, &t, 1).unwrap(),
        synth_batch(4, 8, &t, 1).unwrap()
    );
}

/// Coefficient of variation over seeds of `xᵀx'/d` for the first hidden
/// representation at initialisation.
fn kernel_cv(width: usize) -> f64 {
    let arch = ArchConfig::mlp(width, 3);
    let x = Matrix::from_vec(1, 2, vec![0.7, -0.4]).unwrap();
    let vals: Vec<f64> = (0..32)
        .map(|seed| {
            let model =
                Model::init(&arch, &[1.0, 1.0 / (width as f64).sqrt(), 0.0], 1.0, seed).unwrap();
            let (_, c) = model.forward(&x, None).unwrap();
            let h = &c.post[0];
            (0..width).map(|i| h[(i, 0)] * h[(i, 1)]).sum::<f64>() / width as f64
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
    var.sqrt() / mean.abs()
}

#[test]
fn feature_kernel_concentrates_with_width() {
    let cvs: Vec<f64> = [64, 256, 1024].iter().map(|&w| kernel_cv(w)).collect();
    for w in cvs.windows(2) {
        assert!(w[1] < w[0] * 1.2, "{cvs:?}");
    }
    assert!(cvs[2] < cvs[0], "{cvs:?}");
}
