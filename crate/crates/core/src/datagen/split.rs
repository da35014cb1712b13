use rand::seq::SliceRandom;

use crate::{util::rng_stream, Error, Result};

/// Largest-remainder apportionment of `total` over `targets` (which must sum
/// to `total`). Remainder ties go to the earlier index.
pub(crate) fn apportion(total: usize, targets: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = targets.iter().map(|t| t.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = targets[a] - targets[a].floor();
        let rb = targets[b] - targets[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Assigns each sample to one of `fractions.len()` splits so that every
/// split holds its share of the positives to within one sample.
///
/// Split sizes are apportioned first; each split's positive quota is then
/// apportioned from `positive_rate * size`. Members of each class are
/// shuffled with `seed` before being dealt out, so membership (but not the
/// counts) depends on the seed. Returns the split index of every sample.
pub fn stratified_split(positive: &[bool], fractions: &[f64], seed: u64) -> Result<Vec<usize>> {
    let k = fractions.len();
    if k == 0 {
        return Err(Error::Config("at least one split fraction is required".into()));
    }
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::Config("split fractions must be nonnegative".into()));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions sum to {sum}, not 1")));
    }

    let n = positive.len();
    let pos: Vec<usize> = (0..n).filter(|&i| positive[i]).collect();
    let neg: Vec<usize> = (0..n).filter(|&i| !positive[i]).collect();
    for (members, name) in [(&pos, "positive"), (&neg, "negative")] {
        if members.len() < k {
            return Err(Error::Config(format!(
                "{name} class has {} members, fewer than the {k} splits",
                members.len()
            )));
        }
    }

    let sizes = apportion(n, &fractions.iter().map(|f| f * n as f64).collect::<Vec<_>>());
    let rate = pos.len() as f64 / n as f64;
    let pos_targets: Vec<f64> = sizes.iter().map(|&s| s as f64 * rate).collect();
    let pos_counts = apportion(pos.len(), &pos_targets);
    let neg_counts: Vec<usize> = sizes.iter().zip(&pos_counts).map(|(s, p)| s - p).collect();

    let mut assignment = vec![0usize; n];
    for (stream, (mut members, counts)) in [(pos, pos_counts), (neg, neg_counts)]
        .into_iter()
        .enumerate()
    {
        members.shuffle(&mut rng_stream(seed, stream as u64));
        let mut cursor = 0;
        for (split, &count) in counts.iter().enumerate() {
            for &i in &members[cursor..cursor + count] {
                assignment[i] = split;
            }
            cursor += count;
        }
    }
    Ok(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn positives_per_split(labels: &[bool], assign: &[usize], k: usize) -> (Vec<usize>, Vec<usize>) {
        let mut sizes = vec![0; k];
        let mut pos = vec![0; k];
        for (l, &s) in labels.iter().zip(assign) {
            sizes[s] += 1;
            if *l {
                pos[s] += 1;
            }
        }
        (sizes, pos)
    }

    #[test]
    fn tbx_scale_split_keeps_stratification() {
        let labels: Vec<bool> = (0..4430).map(|i| i < 630).collect();
        let n = 4430.0;
        let fractions = [2767.0 / n, 706.0 / n, 957.0 / n];
        let assign = stratified_split(&labels, &fractions, 7).unwrap();
        let (sizes, pos) = positives_per_split(&labels, &assign, 3);
        assert_eq!(sizes, vec![2767, 706, 957]);
        for (s, p) in sizes.iter().zip(&pos) {
            let expected = 630.0 / n * *s as f64;
            assert!((*p as f64 - expected).abs() <= 1.0, "{p} vs {expected}");
        }
    }

    /// Enumerates every allocation of positives to two splits of known
    /// size and keeps the one with the smallest worst-case deviation,
    /// preferring more positives in the earlier split on ties.
    fn enumerate_two_way(n_pos: usize, sizes: [usize; 2]) -> [usize; 2] {
        let rate = n_pos as f64 / (sizes[0] + sizes[1]) as f64;
        let mut best: Option<([usize; 2], f64)> = None;
        for a in (0..=n_pos.min(sizes[0])).rev() {
            let b = n_pos - a;
            if b > sizes[1] {
                continue;
            }
            let dev = (a as f64 - rate * sizes[0] as f64)
                .abs()
                .max((b as f64 - rate * sizes[1] as f64).abs());
            if best.is_none_or(|(_, d)| dev < d - 1e-12) {
                best = Some(([a, b], dev));
            }
        }
        best.unwrap().0
    }

    #[test]
    fn ten_samples_half_split_matches_enumeration() {
        let labels: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        let assign = stratified_split(&labels, &[0.5, 0.5], 3).unwrap();
        let (sizes, pos) = positives_per_split(&labels, &assign, 2);
        assert_eq!(sizes, vec![5, 5]);
        assert_eq!(pos, enumerate_two_way(5, [5, 5]).to_vec());
        assert_eq!(pos, vec![3, 2]);
    }

    #[test]
    fn single_split_takes_everything() {
        let labels = vec![true, false, false, true, false];
        let a = stratified_split(&labels, &[1.0], 1).unwrap();
        let b = stratified_split(&labels, &[1.0], 99).unwrap();
        assert!(a.iter().all(|&s| s == 0));
        assert_eq!(a, b);
    }

    #[test]
    fn deterministic_given_seed() {
        let labels: Vec<bool> = (0..50).map(|i| i % 7 == 0).collect();
        let a = stratified_split(&labels, &[0.6, 0.2, 0.2], 11).unwrap();
        let b = stratified_split(&labels, &[0.6, 0.2, 0.2], 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_members_is_an_error() {
        let labels = vec![true, false, false, false];
        assert!(stratified_split(&labels, &[0.5, 0.5], 0).is_err());
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let labels = vec![true, true, false, false];
        assert!(stratified_split(&labels, &[0.5, 0.4], 0).is_err());
    }

    #[test]
    fn apportion_ties_prefer_earlier() {
        assert_eq!(apportion(5, &[2.5, 2.5]), vec![3, 2]);
        assert_eq!(apportion(3, &[1.0, 1.0, 1.0]), vec![1, 1, 1]);
    }
}
