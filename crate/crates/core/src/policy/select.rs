use super::PolicyError;

/// Two-phase checkpoint search.
///
/// Every acting candidate is scored against the last stabilizing candidate;
/// then every stabilizing candidate is scored against the best acting one.
/// Ties go to the later candidate, NaN scores never win. Returns the chosen
/// `(acting, stabilizing)` indices after exactly `|A| + |S|` evaluations.
pub fn select_checkpoints<A, S, F>(acting: &[A], stabilizing: &[S], mut evaluate: F) -> Result<(usize, usize), PolicyError>
where
    F: FnMut(&A, &S) -> f64,
{
    if acting.is_empty() || stabilizing.is_empty() {
        return Err(PolicyError::NoCandidates);
    }
    let last = stabilizing.len() - 1;
    let best_a = best_index(acting.iter().map(|a| evaluate(a, &stabilizing[last])));
    let best_s = best_index(stabilizing.iter().map(|s| evaluate(&acting[best_a], s)));
    Ok((best_a, best_s))
}

fn best_index(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, s) in scores.enumerate() {
        let s = if s.is_nan() { f64::NEG_INFINITY } else { s };
        if s >= best.1 {
            best = (i, s);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_candidates() {
        let mut calls = 0;
        let r = select_checkpoints(&[1], &[2], |_, _| {
            calls += 1;
            0.0
        });
        assert_eq!(r.unwrap(), (0, 0));
        assert_eq!(calls, 2);
    }

    #[test]
    fn empty_lists() {
        assert!(select_checkpoints::<u8, u8, _>(&[], &[1], |_, _| 0.0).is_err());
        assert!(select_checkpoints::<u8, u8, _>(&[1], &[], |_, _| 0.0).is_err());
    }

    #[test]
    fn scripted_scores() {
        let a = [5.0, 9.0, 7.0];
        let s = [1.0, 3.0, 2.0, 0.5];
        let mut calls = 0;
        let r = select_checkpoints(&a, &s, |x, y| {
            calls += 1;
            x + y
        });
        assert_eq!(r.unwrap(), (1, 1));
        assert_eq!(calls, a.len() + s.len());
    }

    #[test]
    fn ties_prefer_later() {
        assert_eq!(select_checkpoints(&[1, 1, 1], &[0, 0], |_, _| 1.0).unwrap(), (2, 1));
    }

    proptest! {
        #[test]
        fn separable_scores_reach_exhaustive_optimum(
            a in prop::collection::vec(-100i32..100, 1..=5),
            s in prop::collection::vec(-100i32..100, 1..=5),
        ) {
            let f = |x: &i32, y: &i32| (*x as f64) + (*y as f64);
            let (ia, is) = select_checkpoints(&a, &s, f).unwrap();
            let best = a.iter().flat_map(|x| s.iter().map(move |y| f(x, y))).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(f(&a[ia], &s[is]), best);
        }
    }
}
