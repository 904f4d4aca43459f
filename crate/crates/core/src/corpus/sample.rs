//! Deduplication, length-preserving downsampling, and split assignment.

use std::collections::HashSet;

use crate::corpus::{Corpus, DataSplits, Split};
use crate::error::{Error, Result};
use crate::tensor::rng::SplitRng;

/// Token-length histogram bin width and cap used by the downsampler.
pub const LENGTH_BIN_WIDTH: usize = 5;
pub const LENGTH_BIN_COUNT: usize = 40;

fn length_bin(token_len: usize) -> usize {
    (token_len / LENGTH_BIN_WIDTH).min(LENGTH_BIN_COUNT - 1)
}

/// Drop later exact-text duplicates, keeping first occurrences in order.
pub fn dedup_exact(corpus: &Corpus) -> Corpus {
    let mut seen: HashSet<&str> = HashSet::with_capacity(corpus.len());
    let reviews = corpus
        .reviews
        .iter()
        .filter(|r| seen.insert(r.text.as_str()))
        .cloned()
        .collect();
    Corpus {
        reviews,
        split: corpus.split,
        provenance: corpus.provenance.clone(),
    }
}

/// Apportion `target` across buckets proportionally to `counts` using the
/// largest-remainder rule (ties to the lower index). Guarantees each quota
/// never exceeds its bucket count when `target <= sum(counts)`.
pub fn apportion(counts: &[usize], target: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total == 0 || target == 0 {
        return vec![0; counts.len()];
    }
    assert!(target <= total, "apportion target exceeds total");
    let mut quotas: Vec<usize> = Vec::with_capacity(counts.len());
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(counts.len());
    let mut assigned = 0;
    for (i, &c) in counts.iter().enumerate() {
        let exact = target as f64 * c as f64 / total as f64;
        let floor = exact.floor() as usize;
        let floor = floor.min(c);
        quotas.push(floor);
        assigned += floor;
        remainders.push((exact - floor as f64, i));
    }
    // hand out the remainder to the largest fractional parts
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut left = target - assigned;
    let mut k = 0;
    while left > 0 {
        let (_, i) = remainders[k % remainders.len()];
        if quotas[i] < counts[i] {
            quotas[i] += 1;
            left -= 1;
        }
        k += 1;
    }
    quotas
}

/// Sample `target_size` reviews without replacement so the token-length
/// histogram of the sample tracks the pool's. Each length bin receives a
/// quota weighted by its empirical probability in the pool; members are
/// drawn uniformly within the bin. Deterministic per seed; output preserves
/// pool order. The pool must be single-label.
pub fn length_preserving_downsample(
    pool: &Corpus,
    target_size: usize,
    seed: u64,
) -> Result<Corpus> {
    if target_size > pool.len() {
        return Err(Error::contract(format!(
            "downsample target {target_size} exceeds pool size {}",
            pool.len()
        )));
    }
    let mut labels: HashSet<_> = pool.reviews.iter().map(|r| r.label).collect();
    if labels.len() > 1 {
        labels.remove(&None);
        if labels.len() > 1 {
            return Err(Error::contract(
                "downsample pool must be single-label".to_string(),
            ));
        }
        return Err(Error::contract(
            "downsample pool mixes labelled and unlabelled reviews".to_string(),
        ));
    }

    // bucket indices by length bin
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); LENGTH_BIN_COUNT];
    for (i, r) in pool.reviews.iter().enumerate() {
        bins[length_bin(r.token_len())].push(i);
    }
    let counts: Vec<usize> = bins.iter().map(|b| b.len()).collect();
    let quotas = apportion(&counts, target_size);

    let rng = SplitRng::new(seed);
    let mut chosen: Vec<usize> = Vec::with_capacity(target_size);
    for (b, members) in bins.iter().enumerate() {
        let q = quotas[b];
        if q == 0 {
            continue;
        }
        let mut idx = members.clone();
        rng.derive(b as u64).shuffle(&mut idx);
        chosen.extend(idx.into_iter().take(q));
    }
    chosen.sort_unstable();

    Ok(Corpus {
        reviews: chosen.iter().map(|&i| pool.reviews[i].clone()).collect(),
        split: pool.split,
        provenance: pool.provenance.clone(),
    })
}

/// Partition a corpus into train/validation/test with the given integer
/// ratio (applied per label when labels are present), after a seeded
/// shuffle. Splits are disjoint by construction.
pub fn split_ratio(
    corpus: &Corpus,
    ratio: (usize, usize, usize),
    seed: u64,
) -> Result<DataSplits> {
    let (rt, rv, rs) = ratio;
    let denom = rt + rv + rs;
    if denom == 0 {
        return Err(Error::contract("split ratio sums to zero".to_string()));
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();

    // group indices by label so each label is split at the same ratio
    let mut groups: Vec<(Option<crate::corpus::Label>, Vec<usize>)> = Vec::new();
    for (i, r) in corpus.reviews.iter().enumerate() {
        match groups.iter_mut().find(|(l, _)| *l == r.label) {
            Some((_, v)) => v.push(i),
            None => groups.push((r.label, vec![i])),
        }
    }

    let rng = SplitRng::new(seed);
    for (gi, (_, mut idx)) in groups.into_iter().enumerate() {
        rng.derive(gi as u64).shuffle(&mut idx);
        let n = idx.len();
        let quotas = apportion(&[rt, rv, rs].map(|r| r * n), n);
        let (nt, nv) = (quotas[0], quotas[1]);
        for (k, &i) in idx.iter().enumerate() {
            let r = corpus.reviews[i].clone();
            if k < nt {
                train.push(r);
            } else if k < nt + nv {
                val.push(r);
            } else {
                test.push(r);
            }
        }
    }

    let mk = |reviews: Vec<crate::corpus::Review>, split: Split| Corpus {
        reviews,
        split: Some(split),
        provenance: corpus.provenance.clone(),
    };
    Ok(DataSplits {
        train: mk(train, Split::Train),
        validation: mk(val, Split::Validation),
        test: mk(test, Split::Test),
    })
}
