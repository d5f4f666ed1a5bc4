use crate::dataset::{normalize_indices, DatasetSplit, Instance};
use crate::error::{Error, Result};
use crate::model::{train_rows, Hyperparams, TrainedModel};
use crate::search::{FlipOutcome, FlipsetResult, Verification};

/// Exact retrain, from `θ = 0`, on the training set minus `removed`.
///
/// The reduced objective averages over the remaining points and keeps λ.
pub fn retrain_without(
    train: &DatasetSplit,
    removed: &[usize],
    hyper: &Hyperparams,
) -> Result<TrainedModel> {
    let removed = normalize_indices(removed, train.len())?;
    let rows = train.rows_without(&removed);
    check_remainder(&rows)?;
    train_rows(&rows, train.dim(), hyper)
}

fn check_remainder(rows: &[&Instance]) -> Result<()> {
    let Some(first) = rows.first() else {
        return Err(Error::DegenerateRemainder(
            "removal leaves no training points".into(),
        ));
    };
    if rows.iter().all(|z| z.label == first.label) {
        return Err(Error::DegenerateRemainder(format!(
            "removal leaves only class {} in the training set",
            first.label
        )));
    }
    Ok(())
}

/// Retrains without `result.members` and records whether the prediction for
/// `x_t` actually changed side of τ.
pub fn verify_flip(
    result: &FlipsetResult,
    train: &DatasetSplit,
    x_t: &Instance,
    hyper: &Hyperparams,
) -> Result<FlipsetResult> {
    if !result.found() {
        return Err(Error::Input(format!(
            "test point {} has no flipset to verify",
            result.test_index
        )));
    }
    let retrained = retrain_without(train, &result.members, hyper)?;
    let retrained_prob = retrained.predict_proba(&x_t.features)?;
    let outcome = if hyper.label(retrained_prob) != result.original_label {
        FlipOutcome::Flipped
    } else {
        FlipOutcome::NotFlipped
    };
    Ok(FlipsetResult {
        verified: Some(Verification {
            outcome,
            retrained_prob,
        }),
        ..result.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SplitKind;
    use crate::features::Features;
    use crate::model::train;
    use crate::search::greedy_flipset;

    fn split(rows: &[(&[f64], u8)]) -> DatasetSplit {
        DatasetSplit::from_parts(
            SplitKind::Train,
            rows[0].0.len(),
            rows.iter().map(|(x, y)| (Features::Dense(x.to_vec()), *y)),
        )
        .unwrap()
    }

    #[test]
    fn empty_removal_is_bitwise_identical() {
        let s = split(&[(&[1.0, 0.3], 1), (&[-0.2, 1.0], 0), (&[0.4, -1.0], 1), (&[-1.0, 0.1], 0)]);
        let h = Hyperparams::with_lambda(0.2);
        assert_eq!(retrain_without(&s, &[], &h).unwrap(), train(&s, &h).unwrap());
    }

    #[test]
    fn zero_feature_removal_only_renormalizes() {
        let s = split(&[(&[1.0, 0.5], 1), (&[-1.0, 0.2], 0), (&[0.7, -0.4], 1), (&[0.0, 0.0], 0)]);
        let h = Hyperparams::with_lambda(0.3);
        let reduced = retrain_without(&s, &[3], &h).unwrap();
        // Dropping a zero row is the same as keeping only the first three
        // with their own mean.
        let three = split(&[(&[1.0, 0.5], 1), (&[-1.0, 0.2], 0), (&[0.7, -0.4], 1)]);
        let direct = train(&three, &h).unwrap();
        assert_eq!(reduced, direct);
        // The full model is the same objective with λ scaled by 4/3.
        let full = train(&s, &h).unwrap();
        let rescaled = train(&three, &Hyperparams::with_lambda(0.3 * 4.0 / 3.0)).unwrap();
        for (a, b) in full.theta.iter().zip(&rescaled.theta) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn breaking_a_mirrored_pair_moves_toward_survivor() {
        // Two mirrored pairs plus a bias column: the fit is symmetric, so the
        // all-zero input sits on the boundary until one side loses a point.
        let s = split(&[
            (&[1.0, 2.0, 1.0], 1),
            (&[-1.0, -2.0, 1.0], 0),
            (&[2.0, -1.0, 1.0], 1),
            (&[-2.0, 1.0, 1.0], 0),
        ]);
        let h = Hyperparams::with_lambda(0.5);
        let origin = Features::Dense(vec![0.0, 0.0, 1.0]);
        let full = train(&s, &h).unwrap().predict_proba(&origin).unwrap();
        assert!((full - 0.5).abs() < 1e-12);
        let without_neg = retrain_without(&s, &[1], &h).unwrap();
        let without_pos = retrain_without(&s, &[0], &h).unwrap();
        assert!(without_neg.predict_proba(&origin).unwrap() > 0.5 + 1e-3);
        assert!(without_pos.predict_proba(&origin).unwrap() < 0.5 - 1e-3);
    }

    #[test]
    fn degenerate_remainders_are_named() {
        let s = split(&[(&[1.0], 1), (&[-1.0], 0), (&[2.0], 1)]);
        let h = Hyperparams::default();
        match retrain_without(&s, &[0, 1, 2], &h) {
            Err(Error::DegenerateRemainder(msg)) => assert!(msg.contains("no training points")),
            other => panic!("{other:?}"),
        }
        match retrain_without(&s, &[1], &h) {
            Err(Error::DegenerateRemainder(msg)) => assert!(msg.contains("only class 1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_feature_member_does_not_flip_comfortable_margin() {
        let s = split(&[
            (&[2.0, 1.0], 1),
            (&[1.5, 1.0], 1),
            (&[-2.0, 1.0], 0),
            (&[-1.5, 1.0], 0),
            (&[0.0, 0.0], 1),
        ]);
        let h = Hyperparams::with_lambda(0.1);
        let m = train(&s, &h).unwrap();
        let xt = Instance::new(0, vec![2.0, 1.0], 1);
        let p = m.predict_proba(&xt.features).unwrap();
        let fake = FlipsetResult {
            test_index: 0,
            original_prob: p,
            original_label: 1,
            members: vec![4],
            member_deltas: vec![0.0],
            estimate_base: p,
            estimated_prob: p,
            algorithm: crate::search::Algorithm::Greedy,
            outer_passes: 1,
            verified: None,
        };
        let v = verify_flip(&fake, &s, &xt, &h).unwrap();
        assert_eq!(v.verified.unwrap().outcome, FlipOutcome::NotFlipped);
        assert_eq!(v.flipped(), Some(false));
    }

    #[test]
    fn verifying_an_empty_result_is_an_error() {
        let s = split(&[(&[1.0], 1), (&[-1.0], 0)]);
        let h = Hyperparams::default();
        let m = train(&s, &h).unwrap();
        let xt = Instance::new(0, vec![5.0], 1);
        let r = greedy_flipset(&m, &s, &xt, 0.5).unwrap();
        if !r.found() {
            assert!(verify_flip(&r, &s, &xt, &h).is_err());
        }
    }
}
