use crate::dataset::{DatasetSplit, Instance};
use crate::error::{Error, Result};
use crate::lab::retrain::retrain_without;
use crate::model::{train, Hyperparams};

pub const BRUTE_FORCE_MAX_N: usize = 15;
pub const BRUTE_FORCE_MAX_K: usize = 4;

/// Advances `combo` to the next `k`-combination of `0..n` in lexicographic
/// order; false when exhausted.
fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    for pos in (0..k).rev() {
        if combo[pos] < n - k + pos {
            combo[pos] += 1;
            for later in pos + 1..k {
                combo[later] = combo[later - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Smallest training subset whose removal flips the prediction for `x_t`,
/// found by retraining on every subset in order of size, then
/// lexicographically. Subsets that leave a single class (or nothing) cannot
/// be retrained and count as non-flipping.
pub fn brute_force_min_flipset(
    train_split: &DatasetSplit,
    x_t: &Instance,
    hyper: &Hyperparams,
    max_k: usize,
) -> Result<Option<Vec<usize>>> {
    let n = train_split.len();
    if n > BRUTE_FORCE_MAX_N || max_k > BRUTE_FORCE_MAX_K {
        return Err(Error::Input(format!(
            "brute force is limited to N <= {BRUTE_FORCE_MAX_N} and max_k <= {BRUTE_FORCE_MAX_K} \
             (got N = {n}, max_k = {max_k})"
        )));
    }
    let original = train(train_split, hyper)?.predict_label(&x_t.features)?;
    for k in 1..=max_k.min(n) {
        let mut combo: Vec<usize> = (0..k).collect();
        loop {
            match retrain_without(train_split, &combo, hyper) {
                Ok(model) => {
                    if model.predict_label(&x_t.features)? != original {
                        return Ok(Some(combo));
                    }
                }
                Err(Error::DegenerateRemainder(_)) => {}
                Err(e) => return Err(e),
            }
            if !next_combination(&mut combo, n) {
                break;
            }
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SplitKind;
    use crate::features::Features;

    #[test]
    fn combinations_are_lexicographic() {
        let mut c = vec![0, 1];
        let mut all = vec![c.clone()];
        while next_combination(&mut c, 4) {
            all.push(c.clone());
        }
        assert_eq!(all, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
    }

    #[test]
    fn bounds_are_enforced() {
        let s = DatasetSplit::from_parts(
            SplitKind::Train,
            1,
            (0..16).map(|i| (Features::Dense(vec![i as f64]), (i % 2) as u8)),
        )
        .unwrap();
        let x = Instance::new(0, vec![0.0], 0);
        assert!(brute_force_min_flipset(&s, &x, &Hyperparams::default(), 2).is_err());
        let small = DatasetSplit::from_parts(
            SplitKind::Train,
            1,
            (0..4).map(|i| (Features::Dense(vec![i as f64]), (i % 2) as u8)),
        )
        .unwrap();
        assert!(brute_force_min_flipset(&small, &x, &Hyperparams::default(), 5).is_err());
    }

    #[test]
    fn any_single_removal_flips_returns_lowest_index() {
        // Bias-only model: the prediction is the regularized class balance.
        // Three positives vs two negatives sits just above 0.5; dropping any
        // positive makes negatives the majority.
        let rows = [1u8, 1, 0, 1, 0];
        let s = DatasetSplit::from_parts(
            SplitKind::Train,
            1,
            rows.iter().map(|&y| (Features::Dense(vec![1.0]), y)),
        )
        .unwrap();
        let h = Hyperparams::with_lambda(0.01);
        let x = Instance::new(0, vec![1.0], 1);
        assert_eq!(brute_force_min_flipset(&s, &x, &h, 2).unwrap(), Some(vec![0]));
    }

    #[test]
    fn symmetric_dataset_never_flips() {
        // Perfectly balanced mirrored data with a probe far on the positive
        // side: no small removal moves it across.
        let pts: [(f64, u8); 8] = [
            (3.0, 1),
            (2.5, 1),
            (3.5, 1),
            (2.0, 1),
            (-3.0, 0),
            (-2.5, 0),
            (-3.5, 0),
            (-2.0, 0),
        ];
        let s = DatasetSplit::from_parts(
            SplitKind::Train,
            1,
            pts.iter().map(|&(x, y)| (Features::Dense(vec![x]), y)),
        )
        .unwrap();
        let x = Instance::new(0, vec![4.0], 1);
        assert_eq!(brute_force_min_flipset(&s, &x, &Hyperparams::with_lambda(0.1), 3).unwrap(), None);
    }
}
