//! Nearest-embedding ("histogram") rule and k-nearest-neighbour voting.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::{ClassifyError, NeuralCodes};
use crate::ClassId;

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_query(nc: &NeuralCodes, query: &[f64]) -> Result<(), ClassifyError> {
    if nc.is_empty() {
        return Err(ClassifyError::EmptyCodes);
    }
    if query.len() != nc.dim() {
        return Err(ClassifyError::Dimension {
            expected: nc.dim(),
            found: query.len(),
        });
    }
    Ok(())
}

/// Label of the training code closest to `query`; the lowest row index wins
/// ties.
pub fn histogram_predict(nc: &NeuralCodes, query: &[f64]) -> Result<ClassId, ClassifyError> {
    check_query(nc, query)?;
    let mut best = (f64::INFINITY, 0);
    for (i, row) in nc.embeddings.iter().enumerate() {
        let d = squared_distance(row, query);
        if d < best.0 {
            best = (d, i);
        }
    }
    Ok(nc.labels[best.1])
}

/// Majority label among the `k` nearest codes (distance ties ordered by row
/// index). Vote ties go to whichever tied class has the nearest member.
pub fn knn_predict(nc: &NeuralCodes, query: &[f64], k: usize) -> Result<ClassId, ClassifyError> {
    check_query(nc, query)?;
    if k == 0 || k > nc.len() {
        return Err(ClassifyError::K { k, rows: nc.len() });
    }
    let mut order: Vec<(f64, usize)> = nc
        .embeddings
        .iter()
        .enumerate()
        .map(|(i, row)| (squared_distance(row, query), i))
        .collect();
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, by_distance);
        order.truncate(k);
    }
    order.sort_unstable_by(by_distance);

    let mut votes: BTreeMap<ClassId, usize> = BTreeMap::new();
    for &(_, i) in &order {
        *votes.entry(nc.labels[i]).or_insert(0) += 1;
    }
    let top = *votes.values().max().unwrap();
    let winner = order
        .iter()
        .map(|&(_, i)| nc.labels[i])
        .find(|c| votes[c] == top)
        .unwrap();
    Ok(winner)
}
