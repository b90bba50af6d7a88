use crate::error::{Error, Result};
use crate::label::NUM_CLASSES;

/// Majority vote among the `k` nearest training points (Euclidean).
///
/// Neighbours at equal distance are taken in training order. A tied vote
/// goes to the tied class owning the nearest neighbour, then to the lower
/// class index.
pub fn knn_classify(train: &[(Vec<f64>, usize)], query: &[f64], k: usize) -> Result<usize> {
    if train.is_empty() {
        return Err(Error::Empty("kNN training set"));
    }
    if k == 0 || k > train.len() {
        return Err(Error::Config(format!("k = {k} must be in 1..={}", train.len())));
    }
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(train.len());
    for (i, (x, class)) in train.iter().enumerate() {
        if x.len() != query.len() {
            return Err(Error::Shape { op: "knn_classify", expected: vec![query.len()], got: vec![x.len()] });
        }
        if *class >= NUM_CLASSES {
            return Err(Error::Label(*class));
        }
        let d2: f64 = x.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
        dist.push((d2, i));
    }
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut votes = [0usize; NUM_CLASSES];
    let mut nearest = [f64::INFINITY; NUM_CLASSES];
    for &(d2, i) in dist.iter().take(k) {
        let c = train[i].1;
        votes[c] += 1;
        nearest[c] = nearest[c].min(d2);
    }
    let best = (0..NUM_CLASSES)
        .max_by(|&a, &b| votes[a].cmp(&votes[b]).then(nearest[b].total_cmp(&nearest[a])).then(b.cmp(&a)))
        .expect("at least one class");
    Ok(best)
}
