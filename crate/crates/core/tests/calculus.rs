//! Finite-difference checks of the loss, risk and prediction derivatives.

use flipset::dataset::{DatasetSplit, Instance, SplitKind};
use flipset::features::Features;
use flipset::model::{
    instance_loss, loss_grad, risk, risk_gradient, risk_hessian, sigmoid, Hyperparams, TrainedModel,
};
use proptest::prelude::*;

const H: f64 = 1e-5;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-3)
}

fn instance_strategy(d: usize) -> impl Strategy<Value = (Vec<f64>, u8)> {
    (prop::collection::vec(-2.0..2.0f64, d), 0u8..=1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn loss_gradient_matches_central_differences(
        (x, y, theta) in (1usize..=20).prop_flat_map(|d| (instance_strategy(d), prop::collection::vec(-1.5..1.5f64, d)))
            .prop_map(|((x, y), t)| (x, y, t))
    ) {
        let z = Instance::new(0, x, y);
        let g = loss_grad(&z, &theta).unwrap();
        for j in 0..theta.len() {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[j] += H;
            down[j] -= H;
            let fd = (instance_loss(&z, &up) - instance_loss(&z, &down)) / (2.0 * H);
            prop_assert!(rel_close(g[j], fd, 1e-5), "j={j}: analytic {} vs fd {fd}", g[j]);
        }
    }

    #[test]
    fn prediction_gradient_matches_central_differences(
        (x, theta) in (1usize..=20).prop_flat_map(|d| (prop::collection::vec(-2.0..2.0f64, d), prop::collection::vec(-1.5..1.5f64, d)))
    ) {
        let f = Features::Dense(x);
        let model = TrainedModel { theta: theta.clone(), hyper: Hyperparams::default(), final_grad_norm: 0.0, iterations: 0 };
        let p = model.prediction_gradient(&f).unwrap();
        for j in 0..theta.len() {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[j] += H;
            down[j] -= H;
            let fd = (sigmoid(f.dot(&up)) - sigmoid(f.dot(&down))) / (2.0 * H);
            prop_assert!(rel_close(p[j], fd, 1e-5), "j={j}: analytic {} vs fd {fd}", p[j]);
        }
    }

    #[test]
    fn risk_gradient_and_hessian_match_central_differences(
        (rows, theta, lambda) in (1usize..=20).prop_flat_map(|d| (
            prop::collection::vec(instance_strategy(d), 1..=8),
            prop::collection::vec(-1.0..1.0f64, d),
            prop::sample::select(vec![0.01, 0.1, 1.0]),
        ))
    ) {
        let d = theta.len();
        let split = DatasetSplit::from_parts(SplitKind::Train, d, rows.into_iter().map(|(x, y)| (Features::Dense(x), y))).unwrap();
        let g = risk_gradient(&split.rows(), &theta, lambda);
        let hess = risk_hessian(&split, &theta, lambda).unwrap();
        for j in 0..d {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[j] += H;
            down[j] -= H;
            let fd = (risk(&split.rows(), &up, lambda) - risk(&split.rows(), &down, lambda)) / (2.0 * H);
            prop_assert!(rel_close(g[j], fd, 1e-5), "grad j={j}: {} vs {fd}", g[j]);
            let gu = risk_gradient(&split.rows(), &up, lambda);
            let gd = risk_gradient(&split.rows(), &down, lambda);
            for i in 0..d {
                let fd_h = (gu[i] - gd[i]) / (2.0 * H);
                prop_assert!(rel_close(hess[(i, j)], fd_h, 1e-5), "H[{i},{j}]: {} vs {fd_h}", hess[(i, j)]);
            }
        }
    }

    #[test]
    fn hessian_minus_lambda_is_psd(
        (rows, theta) in (1usize..=6).prop_flat_map(|d| (
            prop::collection::vec(instance_strategy(d), 1..=6),
            prop::collection::vec(-3.0..3.0f64, d),
        ))
    ) {
        let d = theta.len();
        let lambda = 0.05;
        let split = DatasetSplit::from_parts(SplitKind::Train, d, rows.into_iter().map(|(x, y)| (Features::Dense(x), y))).unwrap();
        let h = risk_hessian(&split, &theta, lambda).unwrap();
        prop_assert!((&h - h.transpose()).abs().max() == 0.0);
        let eig = nalgebra::SymmetricEigen::new(h).eigenvalues;
        prop_assert!(eig.iter().all(|&e| e >= lambda - 1e-12), "{eig:?}");
    }
}

#[test]
fn training_is_monotone_in_risk() {
    let split = DatasetSplit::from_parts(
        SplitKind::Train,
        3,
        (0..40).map(|i| {
            let t = i as f64 / 7.0;
            (Features::Dense(vec![t.sin() * 3.0, t.cos(), 1.0]), u8::from(t.sin() + 0.3 * t.cos() > 0.1))
        }),
    )
    .unwrap();
    let (model, trace) = flipset::model::train_traced(&split, &Hyperparams::with_lambda(0.01)).unwrap();
    assert!(model.final_grad_norm <= 1e-8);
    for w in trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{w:?}");
    }
}
