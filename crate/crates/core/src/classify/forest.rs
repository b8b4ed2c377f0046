//! Random forest of bagged CART trees (Gini impurity, `⌊√dim⌋` candidate
//! features per split, grown to purity).

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{ClassifyError, NeuralCodes};
use crate::rng::{self, Rng};
use crate::ClassId;

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(ClassId),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, query: &[f64]) -> ClassId {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(c) => return c,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if query[feature] <= threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

fn gini(counts: &BTreeMap<ClassId, usize>, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts
        .values()
        .map(|&c| (c as f64 / t).powi(2))
        .sum::<f64>()
}

fn majority(labels: impl Iterator<Item = ClassId>) -> ClassId {
    let mut counts: BTreeMap<ClassId, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    // first maximum in class order: ties go to the lowest id
    let mut best = (0, ClassId::MAX);
    for (&c, &n) in &counts {
        if n > best.0 {
            best = (n, c);
        }
    }
    best.1
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [ClassId],
    max_features: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    /// Best `(feature, threshold, impurity decrease)` over candidate features.
    fn best_split(&self, rows: &[usize], rng: &mut Rng) -> Option<(usize, f64)> {
        let dim = self.x[0].len();
        let mut features: Vec<usize> = (0..dim).collect();
        features.shuffle(rng);
        let mut parent: BTreeMap<ClassId, usize> = BTreeMap::new();
        for &r in rows {
            *parent.entry(self.y[r]).or_insert(0) += 1;
        }
        let n = rows.len();
        let parent_gini = gini(&parent, n);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut visited = 0;
        for f in features {
            if visited >= self.max_features {
                break;
            }
            let mut sorted: Vec<(f64, ClassId)> =
                rows.iter().map(|&r| (self.x[r][f], self.y[r])).collect();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            if sorted[0].0 == sorted[n - 1].0 {
                // constant here: does not count toward the candidate budget
                continue;
            }
            visited += 1;
            let mut left: BTreeMap<ClassId, usize> = BTreeMap::new();
            let mut right = parent.clone();
            for i in 0..n - 1 {
                let c = sorted[i].1;
                *left.entry(c).or_insert(0) += 1;
                *right.get_mut(&c).unwrap() -= 1;
                if sorted[i].0 == sorted[i + 1].0 {
                    continue;
                }
                let nl = i + 1;
                let nr = n - nl;
                let impurity =
                    (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
                let gain = parent_gini - impurity;
                if best.is_none_or(|b| gain > b.2) {
                    let threshold = sorted[i].0 + (sorted[i + 1].0 - sorted[i].0) / 2.0;
                    best = Some((f, threshold, gain));
                }
            }
        }
        best.map(|(f, t, _)| (f, t))
    }

    fn grow(&mut self, rows: &[usize], rng: &mut Rng) -> usize {
        let id = self.nodes.len();
        let first = self.y[rows[0]];
        if rows.iter().all(|&r| self.y[r] == first) {
            self.nodes.push(Node::Leaf(first));
            return id;
        }
        match self.best_split(rows, rng) {
            None => {
                self.nodes
                    .push(Node::Leaf(majority(rows.iter().map(|&r| self.y[r]))));
                id
            }
            Some((feature, threshold)) => {
                self.nodes.push(Node::Leaf(first)); // placeholder
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&r| self.x[r][feature] <= threshold);
                let left = self.grow(&l, rng);
                let right = self.grow(&r, rng);
                self.nodes[id] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                id
            }
        }
    }
}

pub fn rf_fit(nc: &NeuralCodes, trees: usize, seed: u64) -> Result<Forest, ClassifyError> {
    if nc.is_empty() {
        return Err(ClassifyError::EmptyCodes);
    }
    if trees == 0 {
        return Err(ClassifyError::Spec(alloc::string::String::from(
            "forest needs at least one tree",
        )));
    }
    let n = nc.len();
    let max_features = (Float::sqrt(nc.dim() as f64) as usize).max(1);
    let forest = (0..trees)
        .map(|t| {
            let mut r = rng::stream(seed, t as u64);
            let rows: Vec<usize> = (0..n).map(|_| r.gen_range(0..n)).collect();
            let mut b = Builder {
                x: &nc.embeddings,
                y: &nc.labels,
                max_features,
                nodes: Vec::new(),
            };
            b.grow(&rows, &mut r);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(Forest { trees: forest })
}

impl Forest {
    /// Votes per class; they sum to the number of trees.
    pub fn votes(&self, query: &[f64]) -> BTreeMap<ClassId, usize> {
        let mut votes = BTreeMap::new();
        for t in &self.trees {
            *votes.entry(t.predict(query)).or_insert(0) += 1;
        }
        votes
    }

    /// Majority vote; ties go to the lowest class id.
    pub fn predict(&self, query: &[f64]) -> ClassId {
        let votes = self.votes(query);
        let top = *votes.values().max().unwrap();
        *votes.iter().find(|(_, &v)| v == top).unwrap().0
    }
}

pub fn rf_predict(model: &Forest, query: &[f64]) -> ClassId {
    model.predict(query)
}
