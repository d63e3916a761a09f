//! Axis-aligned binary trees and the greedy grower shared by both ensemble modes.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    /// Rows with `x[feature] <= threshold` go left.
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub split: Option<Split>,
    /// Class probabilities (classification leaves) or a single score.
    pub value: Vec<f64>,
    /// Training weight that reached the node.
    pub cover: f64,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        while let Some(s) = &self.nodes[i].split {
            i = if x[s.feature] <= s.threshold { s.left } else { s.right };
        }
        i
    }

    pub fn predict(&self, x: &[f64]) -> &[f64] {
        &self.nodes[self.leaf_index(x)].value
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.split.is_none()).count()
    }

    /// Features used by at least one split.
    pub fn used_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self.nodes.iter().filter_map(|n| n.split.as_ref().map(|s| s.feature)).collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Criterion {
    /// Per-row stats are class weights; leaves hold class frequencies.
    Gini,
    /// Per-row stats are (gradient residual, hessian); leaves hold `scale * G / (H + lambda)`.
    Newton { lambda: f64, scale: f64 },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Limits {
    pub max_depth: Option<usize>,
    pub max_leaves: Option<usize>,
    pub min_samples_leaf: f64,
    pub min_child_weight: f64,
    pub max_features: Option<usize>,
}

/// Quantile bin edges and per-row bin codes for histogram split search.
pub(crate) struct Binning {
    edges: Vec<Vec<f64>>,
    codes: Vec<Vec<u16>>,
}

impl Binning {
    pub fn new(x: &[Vec<f64>], max_bins: usize) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let mut edges = Vec::with_capacity(d);
        for f in 0..d {
            let mut v: Vec<f64> = x.iter().map(|r| r[f]).collect();
            v.sort_by(f64::total_cmp);
            let mut distinct = v.clone();
            distinct.dedup();
            let mut e = Vec::new();
            if distinct.len() <= max_bins {
                for w in distinct.windows(2) {
                    e.push(midpoint(w[0], w[1]));
                }
            } else {
                for q in 1..max_bins {
                    let a = v[q * v.len() / max_bins];
                    let pos = distinct.partition_point(|&u| u <= a);
                    if pos < distinct.len() {
                        e.push(midpoint(a, distinct[pos]));
                    }
                }
                e.dedup();
            }
            edges.push(e);
        }
        let codes = x
            .iter()
            .map(|r| {
                (0..d)
                    .map(|f| edges[f].partition_point(|&e| e < r[f]) as u16)
                    .collect()
            })
            .collect();
        Self { edges, codes }
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m < b {
        m
    } else {
        a
    }
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

pub(crate) struct Grower<'a> {
    pub x: &'a [Vec<f64>],
    /// Row indices sorted by each feature (exact mode).
    pub order: &'a [Vec<usize>],
    pub binning: Option<&'a Binning>,
    /// Row-major per-row statistics, `m` per row, already multiplied by the row weight.
    pub stats: &'a [f64],
    pub m: usize,
    pub weight: &'a [f64],
    pub criterion: Criterion,
    pub limits: Limits,
}

/// Accumulated statistics: `m` sums followed by the total weight.
type Acc = Vec<f64>;

impl Grower<'_> {
    fn add(&self, acc: &mut Acc, row: usize) {
        let s = &self.stats[row * self.m..(row + 1) * self.m];
        for (a, v) in acc.iter_mut().zip(s) {
            *a += v;
        }
        acc[self.m] += self.weight[row];
    }

    fn total(&self, rows: &[usize]) -> Acc {
        let mut acc = vec![0.0; self.m + 1];
        for &r in rows {
            self.add(&mut acc, r);
        }
        acc
    }

    fn score(&self, acc: &Acc) -> f64 {
        match self.criterion {
            Criterion::Gini => {
                let n = acc[self.m];
                if n <= 0.0 {
                    0.0
                } else {
                    acc[..self.m].iter().map(|c| c * c).sum::<f64>() / n
                }
            }
            Criterion::Newton { lambda, .. } => {
                let den = acc[1] + lambda;
                if den > 0.0 {
                    acc[0] * acc[0] / den
                } else {
                    0.0
                }
            }
        }
    }

    fn leaf_value(&self, acc: &Acc) -> Vec<f64> {
        match self.criterion {
            Criterion::Gini => {
                let n = acc[self.m];
                acc[..self.m].iter().map(|c| if n > 0.0 { c / n } else { 0.0 }).collect()
            }
            Criterion::Newton { lambda, scale } => {
                let den = acc[1] + lambda;
                vec![if den > 0.0 { scale * acc[0] / den } else { 0.0 }]
            }
        }
    }

    fn child_ok(&self, acc: &Acc) -> bool {
        let hess_ok = match self.criterion {
            Criterion::Gini => true,
            Criterion::Newton { .. } => acc[1] >= self.limits.min_child_weight,
        };
        acc[self.m] >= self.limits.min_samples_leaf && acc[self.m] > 0.0 && hess_ok
    }

    fn is_pure(&self, acc: &Acc) -> bool {
        match self.criterion {
            Criterion::Gini => acc[..self.m].iter().filter(|&&c| c > 0.0).count() <= 1,
            Criterion::Newton { .. } => false,
        }
    }

    fn features(&self, rng: &mut Option<&mut ChaCha8Rng>) -> Vec<usize> {
        let d = self.x.first().map_or(0, Vec::len);
        let mut all: Vec<usize> = (0..d).collect();
        match (self.limits.max_features, rng.as_deref_mut()) {
            (Some(k), Some(rng)) if k < d => {
                for i in 0..k {
                    let j = rng.random_range(i..d);
                    all.swap(i, j);
                }
                let mut chosen = all[..k].to_vec();
                chosen.sort_unstable();
                chosen
            }
            _ => all,
        }
    }

    /// Best split of a node; zero-gain splits are accepted so symmetric
    /// problems such as XOR can be resolved one level further down.
    fn best_split(
        &self,
        node: usize,
        rows: &[usize],
        node_of: &[usize],
        parent: &Acc,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Option<Candidate> {
        if self.is_pure(parent) {
            return None;
        }
        let parent_score = self.score(parent);
        let mut best: Option<Candidate> = None;
        let mut consider = |gain: f64, feature: usize, threshold: f64| {
            if gain >= 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(Candidate { gain, feature, threshold });
            }
        };
        for f in self.features(rng) {
            match self.binning {
                None => {
                    let seq: Vec<usize> = self.order[f].iter().copied().filter(|&r| node_of[r] == node).collect();
                    let mut left = vec![0.0; self.m + 1];
                    for w in seq.windows(2) {
                        self.add(&mut left, w[0]);
                        let (a, b) = (self.x[w[0]][f], self.x[w[1]][f]);
                        if b <= a {
                            continue;
                        }
                        let right: Acc = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
                        if self.child_ok(&left) && self.child_ok(&right) {
                            let gain = self.score(&left) + self.score(&right) - parent_score;
                            consider(gain, f, midpoint(a, b));
                        }
                    }
                }
                Some(bins) => {
                    let nb = bins.edges[f].len() + 1;
                    let mut hist = vec![0.0; nb * (self.m + 1)];
                    for &r in rows {
                        let c = bins.codes[r][f] as usize;
                        let h = &mut hist[c * (self.m + 1)..(c + 1) * (self.m + 1)];
                        let s = &self.stats[r * self.m..(r + 1) * self.m];
                        for (a, v) in h.iter_mut().zip(s) {
                            *a += v;
                        }
                        h[self.m] += self.weight[r];
                    }
                    let mut left = vec![0.0; self.m + 1];
                    for b in 0..nb - 1 {
                        let h = &hist[b * (self.m + 1)..(b + 1) * (self.m + 1)];
                        if h[self.m] == 0.0 {
                            continue;
                        }
                        for (a, v) in left.iter_mut().zip(h) {
                            *a += v;
                        }
                        let right: Acc = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
                        if self.child_ok(&left) && self.child_ok(&right) {
                            let gain = self.score(&left) + self.score(&right) - parent_score;
                            consider(gain, f, bins.edges[f][b]);
                        }
                    }
                }
            }
        }
        best
    }

    pub fn grow(&self, mut rng: Option<&mut ChaCha8Rng>) -> Tree {
        let n = self.x.len();
        let rows: Vec<usize> = (0..n).filter(|&r| self.weight[r] > 0.0).collect();
        let mut node_of = vec![usize::MAX; n];
        for &r in &rows {
            node_of[r] = 0;
        }
        let root = self.total(&rows);
        let mut nodes = vec![Node {
            split: None,
            value: self.leaf_value(&root),
            cover: root[self.m],
            depth: 0,
        }];
        let depth_ok = |d: usize| self.limits.max_depth.is_none_or(|m| d < m);

        match self.limits.max_leaves {
            None => {
                let mut queue = VecDeque::from([(0usize, rows, root)]);
                while let Some((id, rows, acc)) = queue.pop_front() {
                    if !depth_ok(nodes[id].depth) {
                        continue;
                    }
                    if let Some(c) = self.best_split(id, &rows, &node_of, &acc, &mut rng) {
                        for child in self.split_node(&mut nodes, &mut node_of, id, &rows, &c) {
                            queue.push_back(child);
                        }
                    }
                }
            }
            Some(max_leaves) => {
                let mut open: Vec<(usize, Vec<usize>, Option<Candidate>)> = Vec::new();
                let first = depth_ok(0)
                    .then(|| self.best_split(0, &rows, &node_of, &root, &mut rng))
                    .flatten();
                open.push((0, rows, first));
                let mut leaves = 1;
                while leaves < max_leaves {
                    let pick = open
                        .iter()
                        .enumerate()
                        .filter_map(|(i, (id, _, c))| c.as_ref().map(|c| (i, *id, c.gain)))
                        .max_by(|a, b| a.2.total_cmp(&b.2).then(b.1.cmp(&a.1)));
                    let Some((i, _, _)) = pick else { break };
                    let (id, rows, c) = open.swap_remove(i);
                    let c = c.expect("picked candidate");
                    for (cid, crows, cacc) in self.split_node(&mut nodes, &mut node_of, id, &rows, &c) {
                        let cand = depth_ok(nodes[cid].depth)
                            .then(|| self.best_split(cid, &crows, &node_of, &cacc, &mut rng))
                            .flatten();
                        open.push((cid, crows, cand));
                    }
                    leaves += 1;
                }
            }
        }
        Tree { nodes }
    }

    fn split_node(
        &self,
        nodes: &mut Vec<Node>,
        node_of: &mut [usize],
        id: usize,
        rows: &[usize],
        c: &Candidate,
    ) -> [(usize, Vec<usize>, Acc); 2] {
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i][c.feature] <= c.threshold);
        let depth = nodes[id].depth + 1;
        let (lid, rid) = (nodes.len(), nodes.len() + 1);
        let (la, ra) = (self.total(&l), self.total(&r));
        for (acc, _) in [(&la, lid), (&ra, rid)] {
            nodes.push(Node {
                split: None,
                value: self.leaf_value(acc),
                cover: acc[self.m],
                depth,
            });
        }
        nodes[id].split = Some(Split {
            feature: c.feature,
            threshold: c.threshold,
            left: lid,
            right: rid,
        });
        for &i in &l {
            node_of[i] = lid;
        }
        for &i in &r {
            node_of[i] = rid;
        }
        [(lid, l, la), (rid, r, ra)]
    }
}

/// Row indices sorted by each feature, ties by row index.
pub(crate) fn presort(x: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let d = x.first().map_or(0, Vec::len);
    (0..d)
        .map(|f| {
            let mut idx: Vec<usize> = (0..x.len()).collect();
            idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
            idx
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gini_grower<'a>(
        x: &'a [Vec<f64>],
        order: &'a [Vec<usize>],
        stats: &'a [f64],
        weight: &'a [f64],
        max_depth: Option<usize>,
    ) -> Grower<'a> {
        Grower {
            x,
            order,
            binning: None,
            stats,
            m: 2,
            weight,
            criterion: Criterion::Gini,
            limits: Limits {
                max_depth,
                max_leaves: None,
                min_samples_leaf: 1.0,
                min_child_weight: 0.0,
                max_features: None,
            },
        }
    }

    #[test]
    fn pure_node_is_leaf_with_probability_one() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let order = presort(&x);
        let stats = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let w = vec![1.0; 3];
        let t = gini_grower(&x, &order, &stats, &w, None).grow(None);
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.nodes[0].value, vec![0.0, 1.0]);
    }

    #[test]
    fn threshold_separates_classes() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let order = presort(&x);
        let stats = vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let w = vec![1.0; 4];
        let t = gini_grower(&x, &order, &stats, &w, None).grow(None);
        let s = t.nodes[0].split.as_ref().unwrap();
        assert_eq!((s.feature, s.threshold), (0, 1.5));
        assert_eq!(t.predict(&[0.2]), &[1.0, 0.0]);
        assert_eq!(t.predict(&[2.7]), &[0.0, 1.0]);
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn histogram_edges_match_exact_on_few_values() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![(i % 4) as f64]).collect();
        let b = Binning::new(&x, 64);
        assert_eq!(b.edges[0], vec![0.5, 1.5, 2.5]);
        assert_eq!(b.codes[3][0], 3);
        let many: Vec<Vec<f64>> = (0..1000).map(|i| vec![i as f64]).collect();
        let b = Binning::new(&many, 64);
        assert!(b.edges[0].len() <= 63);
        assert!(b.edges[0].windows(2).all(|w| w[0] < w[1]));
    }
}
