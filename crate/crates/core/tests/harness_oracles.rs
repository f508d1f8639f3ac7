use mupre::harness::{
    dense_rank1_update, dense_shampoo_update, gram_oracle_shampoo, gram_suite, rank1_oracle,
    rank1_suite, OracleTolerances,
};
use mupre::linalg::{dot, norm2, sym_eig, Matrix};
use mupre::optim::{EpsMode, Normalize, OptimizerConfig, Rule};
use mupre::rng::SeededRng;
use proptest::prelude::*;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let diff: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
    norm2(&diff) <= tol * norm2(b).max(f64::MIN_POSITIVE)
}

/// `(A + εI)^(-e)` by eigendecomposition.
fn inv_power(a: &Matrix, eps: f64, e: f64) -> Matrix {
    sym_eig(a)
        .unwrap()
        .reconstruct_with(|l| (l.max(0.0) + eps).powf(-e))
}

/// First-step Shampoo on `G = ΔXᵀ/B` straight from the definition.
fn shampoo_by_definition(delta: &Matrix, x: &Matrix, eps: f64, e_l: f64, e_r: f64) -> Matrix {
    let g = delta.matmul_t(x).unwrap().scale(1.0 / delta.cols() as f64);
    let l = g.matmul_t(&g).unwrap();
    let r = g.t_matmul(&g).unwrap();
    inv_power(&l, eps, e_l)
        .matmul(&g)
        .unwrap()
        .matmul(&inv_power(&r, eps, e_r))
        .unwrap()
}

fn rel_frob(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().frob_norm() / b.frob_norm()
}

#[test]
fn shampoo_quarter_example() {
    let cfg = OptimizerConfig::new(Rule::Shampoo)
        .with_exponents(0.25, 0.25)
        .with_betas(0.0, 0.0)
        .with_eps(1.0, EpsMode::Absolute);
    let x = [1.0, 1.0];
    let q = rank1_oracle(&cfg, &[1.0, 0.0], &x, &x, 1.0).unwrap();
    assert!((q[0] - 1.15470).abs() < 1e-5 && q[1] == 0.0);
    assert!((q[0] - 2.0 / 3f64.sqrt()).abs() < 1e-12);
    let dense = dense_rank1_update(&cfg, &[1.0, 0.0], &x, &x, 1.0).unwrap();
    assert!(close(&q, &dense, 1e-12));
}

#[test]
fn soap_both_sided_is_normalised_sgd() {
    let cfg = OptimizerConfig::new(Rule::Soap).with_eps(0.0, EpsMode::Absolute);
    let (delta, x, xp) = (
        [0.3, -1.2, 2.0],
        [1.0, 0.5, -0.25, 2.0],
        [0.2, 0.1, 1.0, -0.7],
    );
    let q = rank1_oracle(&cfg, &delta, &x, &xp, 1.0).unwrap();
    let s = dot(&x, &xp) / (norm2(&delta) * norm2(&x));
    let expect: Vec<f64> = delta.iter().map(|d| s * d).collect();
    assert!(close(&q, &expect, 1e-14));
}

#[test]
fn zero_exponents_give_sgd() {
    let cfg = OptimizerConfig::new(Rule::Shampoo)
        .with_exponents(0.0, 0.0)
        .with_betas(0.0, 0.0);
    let (delta, x, xp) = ([1.5, -2.0], [0.5, 1.0, 3.0], [1.0, -1.0, 0.5]);
    let q = rank1_oracle(&cfg, &delta, &x, &xp, 0.5).unwrap();
    let c = 0.5 * dot(&x, &xp);
    assert_eq!(q, vec![c * 1.5, c * -2.0]);
}

#[test]
fn oracle_rejects_bad_input() {
    let cfg = OptimizerConfig::new(Rule::Shampoo);
    assert!(rank1_oracle(&cfg, &[0.0, 0.0], &[1.0], &[1.0], 1.0).is_err());
    assert!(rank1_oracle(&cfg, &[1.0], &[0.0, 0.0], &[1.0, 1.0], 1.0).is_err());
    assert!(rank1_oracle(&cfg, &[1.0], &[1.0, 2.0], &[1.0], 1.0).is_err());
    let cfg = cfg.with_normalize(Normalize::Spectral);
    assert!(rank1_oracle(&cfg, &[1.0], &[1.0], &[1.0], 1.0).is_err());
}

fn box_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shampoo_closed_form_matches_scalar_formula_and_dense_step(
        (delta, x, xp) in (2usize..9, 2usize..9).prop_flat_map(|(o, i)| (box_vec(o), box_vec(i), box_vec(i))),
        e_l in prop::sample::select(vec![0.25, 0.5]),
        e_r in prop::sample::select(vec![0.25, 0.5]),
        beta1 in 0.0f64..0.95,
        eps in 1e-3f64..1.0,
    ) {
        prop_assume!(norm2(&delta) > 1e-3 && norm2(&x) > 1e-3);
        prop_assume!(dot(&x, &xp).abs() > 1e-2 * norm2(&x) * norm2(&xp));
        let cfg = OptimizerConfig::new(Rule::Shampoo)
            .with_exponents(e_l, e_r)
            .with_betas(beta1, 0.0)
            .with_eps(eps, EpsMode::Absolute);
        let lambda = dot(&delta, &delta) * dot(&x, &x);
        let c = (1.0 - beta1) * (lambda + eps).powf(-e_l - e_r) * dot(&x, &xp);
        let by_hand: Vec<f64> = delta.iter().map(|d| c * d).collect();
        let q = rank1_oracle(&cfg, &delta, &x, &xp, 1.0).unwrap();
        prop_assert!(close(&q, &by_hand, 1e-12));
        let dense = dense_rank1_update(&cfg, &delta, &x, &xp, 1.0).unwrap();
        prop_assert!(close(&q, &dense, 1e-8));
    }

    #[test]
    fn soap_side_cases_match_dense_step(
        (delta, x, xp) in (2usize..9, 2usize..9).prop_flat_map(|(o, i)| (box_vec(o), box_vec(i), box_vec(i))),
        sides in prop::sample::select(vec![(1.0, 1.0), (1.0, 0.0), (0.0, 1.0), (0.0, 0.0)]),
        eps in 1e-4f64..1.0,
    ) {
        prop_assume!(norm2(&delta) > 1e-3 && norm2(&x) > 1e-3);
        let cfg = OptimizerConfig::new(Rule::Soap)
            .with_exponents(sides.0, sides.1)
            .with_eps(eps, EpsMode::Absolute);
        let q = rank1_oracle(&cfg, &delta, &x, &xp, 1.0).unwrap();
        let dense = dense_rank1_update(&cfg, &delta, &x, &xp, 1.0).unwrap();
        let diff: Vec<f64> = q.iter().zip(&dense).map(|(a, b)| a - b).collect();
        prop_assert!(norm2(&diff) <= 1e-10 * (1.0 + norm2(&dense)) * norm2(&xp));
    }
}

#[test]
fn gram_matches_definition_on_random_batches() {
    let mut rng = SeededRng::new(11);
    for b in [1, 2, 4] {
        for d in [8, 16, 32] {
            let delta = Matrix::from_fn(d, b, |_, _| rng.normal());
            let x = Matrix::from_fn(d + 5, b, |_, _| rng.normal());
            for (e_l, e_r) in [(0.25, 0.25), (0.5, 0.5), (0.5, 0.25)] {
                let q = gram_oracle_shampoo(&delta, &x, 0.5, e_l, e_r).unwrap();
                let reference = shampoo_by_definition(&delta, &x, 0.5, e_l, e_r);
                assert!(rel_frob(&q, &reference) < 1e-8, "B={b} d={d}");
                let dense = dense_shampoo_update(&delta, &x, 0.5, e_l, e_r).unwrap();
                assert!(rel_frob(&q, &dense) < 1e-8, "B={b} d={d}");
            }
        }
    }
}

#[test]
fn gram_handles_duplicated_columns() {
    let mut rng = SeededRng::new(12);
    let base_d = Matrix::from_fn(16, 2, |_, _| rng.normal());
    let base_x = Matrix::from_fn(20, 2, |_, _| rng.normal());
    let delta = Matrix::from_fn(16, 4, |r, c| base_d[(r, c % 2)]);
    let x = Matrix::from_fn(20, 4, |r, c| base_x[(r, c % 2)]);
    let q = gram_oracle_shampoo(&delta, &x, 1.0, 0.25, 0.25).unwrap();
    assert!(q.is_finite());
    assert!(rel_frob(&q, &shampoo_by_definition(&delta, &x, 1.0, 0.25, 0.25)) < 1e-6);
}

#[test]
fn gram_single_column_is_rank_one_oracle() {
    let mut rng = SeededRng::new(13);
    let (delta, x, xp) = (rng.normal_vec(9), rng.normal_vec(7), rng.normal_vec(7));
    let q =
        gram_oracle_shampoo(&Matrix::column(&delta), &Matrix::column(&x), 0.3, 0.5, 0.25).unwrap();
    let cfg = OptimizerConfig::new(Rule::Shampoo)
        .with_exponents(0.5, 0.25)
        .with_betas(0.0, 0.0)
        .with_eps(0.3, EpsMode::Absolute);
    let r1 = rank1_oracle(&cfg, &delta, &x, &xp, 1.0).unwrap();
    assert!(close(&q.matvec(&xp).unwrap(), &r1, 1e-10));
}

#[test]
fn gram_rejects_mismatched_batches() {
    assert!(
        gram_oracle_shampoo(&Matrix::zeros(4, 2), &Matrix::zeros(4, 3), 1.0, 0.25, 0.25).is_err()
    );
}

#[test]
fn suites_pass_at_default_tolerances() {
    let tol = OracleTolerances::default();
    let checks = rank1_suite(20, 3, &tol).unwrap();
    assert!(checks.iter().any(|c| c.name.starts_with("soap")));
    for c in checks.iter().chain(&gram_suite(3, &tol).unwrap()) {
        assert!(c.pass, "{} {:e}", c.name, c.max_rel_err);
    }
}
