use std::collections::BTreeMap;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Stratified three-way split. Each class (and the unlabeled rows, as their
/// own stratum) is shuffled and cut by largest remainder, with every
/// partition receiving at least one row of every stratum.
pub fn split(
    ds: &LabeledDataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    let f = [fractions.0, fractions.1, fractions.2];
    if f.iter().any(|&x| !(x > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let mut strata: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, l) in ds.raw_labels().iter().enumerate() {
        strata.entry(*l).or_default().push(i);
    }
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (stratum, mut idx) in strata {
        let n = idx.len();
        if n < 3 {
            return Err(Error::contract(format!(
                "stratum {stratum:?} has {n} rows, fewer than 3 partitions"
            )));
        }
        let tag = stratum.map_or(u64::MAX, |s| s as u64);
        Rng::derived(seed, "split", tag).shuffle(&mut idx);

        let exact: Vec<f64> = f.iter().map(|x| x * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut order: Vec<usize> = vec![0, 1, 2];
        order.sort_by(|&a, &b| {
            let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        let mut left = n - counts.iter().sum::<usize>();
        for &p in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[p] += 1;
            left -= 1;
        }
        for p in 0..3 {
            if counts[p] == 0 {
                let donor = (0..3).max_by_key(|&q| (counts[q], usize::MAX - q)).unwrap();
                counts[donor] -= 1;
                counts[p] = 1;
            }
        }
        let mut start = 0;
        for p in 0..3 {
            parts[p].extend_from_slice(&idx[start..start + counts[p]]);
            start += counts[p];
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok((ds.subset(&parts[0]), ds.subset(&parts[1]), ds.subset(&parts[2])))
}

/// Row indices for one epoch: a permutation keyed by `(seed, epoch)`, cut
/// into chunks of `batch_size` with the short remainder kept last.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let perm = Rng::derived(seed, "batches", epoch).permutation(n);
    perm.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{default_class_names, Domain};
    use crate::diffcore::Matrix;

    fn balanced(n_per: usize, k: usize) -> LabeledDataset {
        let n = n_per * k;
        let vals = (0..n).map(|i| i as f64).collect();
        let labels = (0..n).map(|i| Some(i % k)).collect();
        LabeledDataset::new(
            Matrix::from_vec(n, 1, vals).unwrap(),
            labels,
            Domain::Source,
            default_class_names(k),
        )
        .unwrap()
    }

    fn class_count(d: &LabeledDataset, c: usize) -> usize {
        d.raw_labels().iter().filter(|l| **l == Some(c)).count()
    }

    #[test]
    fn sixty_twenty_twenty() {
        let (a, b, c) = split(&balanced(50, 2), (0.6, 0.2, 0.2), 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (60, 20, 20));
        for k in 0..2 {
            assert_eq!(
                (class_count(&a, k), class_count(&b, k), class_count(&c, k)),
                (30, 10, 10)
            );
        }
    }

    #[test]
    fn partitions_are_disjoint_cover_and_deterministic() {
        let d = balanced(37, 3);
        let (a, b, c) = split(&d, (0.5, 0.3, 0.2), 9).unwrap();
        let mut all: Vec<f64> = [a.features(), b.features(), c.features()]
            .iter()
            .flat_map(|m| m.as_slice().to_vec())
            .collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..111).map(|i| i as f64).collect::<Vec<_>>());
        let (a2, _, _) = split(&d, (0.5, 0.3, 0.2), 9).unwrap();
        assert_eq!(a, a2);
    }

    #[test]
    fn invalid_requests() {
        let d = balanced(10, 2);
        assert!(split(&d, (1.0, 0.0, 0.0), 1).is_err());
        assert!(split(&d, (0.5, 0.5, 0.5), 1).is_err());
        assert!(split(&balanced(2, 2), (0.6, 0.2, 0.2), 1).is_err());
    }

    #[test]
    fn batch_remainder_and_determinism() {
        let b = batches(10, 3, 5, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
        assert_eq!(b, batches(10, 3, 5, 0));
        let mut flat: Vec<usize> = b.concat();
        flat.sort_unstable();
        assert_eq!(flat, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn epochs_reshuffle() {
        let orders: Vec<Vec<usize>> = (0..10).map(|e| batches(100, 100, 3, e).concat()).collect();
        for i in 0..orders.len() {
            for j in i + 1..orders.len() {
                assert_ne!(orders[i], orders[j]);
            }
        }
    }
}
