//! Raw-space k-nearest-neighbor graphs and anchor-pair selection.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::autodiff::NORM_GUARD;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub similarity: f64,
}

/// Directed neighbor lists; `edges` is grouped by `from` in ascending order and,
/// within a node, sorted by descending similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    pub k: usize,
    pub nodes: usize,
    pub edges: Vec<Edge>,
}

impl KnnGraph {
    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.from == node)
    }

    /// Unique unordered edges `(min, max) → similarity`.
    pub fn undirected(&self) -> BTreeMap<(usize, usize), f64> {
        let mut out = BTreeMap::new();
        for e in &self.edges {
            let key = (e.from.min(e.to), e.from.max(e.to));
            out.entry(key).or_insert(e.similarity);
        }
        out
    }
}

/// Unordered high-confidence similar pairs, each stored as `(min, max)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnchorSet {
    pub pairs: Vec<(usize, usize)>,
}

impl AnchorSet {
    pub fn new(pairs: Vec<(usize, usize)>) -> Self {
        AnchorSet {
            pairs: pairs
                .into_iter()
                .map(|(i, j)| (i.min(j), i.max(j)))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        let key = (i.min(j), i.max(j));
        self.pairs.contains(&key)
    }
}

/// Cosine k-NN graph over the rows of `x`.
///
/// Neighbors tie on similarity are ordered by ascending index.
pub fn build_knn_graph(x: &Matrix, k: usize) -> Result<KnnGraph> {
    if k == 0 {
        return Err(Error::Config("k-NN graph needs k >= 1".into()));
    }
    let n = x.rows();
    if n < k + 1 {
        return Err(Error::BatchTooSmall {
            size: n,
            needed: k + 1,
        });
    }
    let unit = x.normalize_rows(NORM_GUARD)?;
    let sims = unit.gram();
    let mut edges = Vec::with_capacity(n * k);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        let row = sims.row(i);
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        let cmp = |a: &usize, b: &usize| {
            row[*b]
                .partial_cmp(&row[*a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(b))
        };
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, cmp);
            order.truncate(k);
        }
        order.sort_by(cmp);
        edges.extend(order.iter().map(|&j| Edge {
            from: i,
            to: j,
            similarity: row[j].clamp(-1.0, 1.0),
        }));
    }
    Ok(KnnGraph { k, nodes: n, edges })
}

/// Number of anchors taken for `edges` unique pairs: `⌈fraction · edges⌉`.
pub fn anchor_count(edges: usize, fraction: f64) -> usize {
    // absorb float noise such as 0.02 * 100 = 2.0000000000000004
    let raw = fraction * edges as f64;
    let c = (raw - 1e-9 * raw.max(1.0)).ceil().max(0.0) as usize;
    c.clamp(1, edges)
}

/// The `⌈fraction · m⌉` most similar of the graph's `m` unique unordered edges.
///
/// Ties are broken by `(min index, max index)` ascending, so the result does not
/// depend on edge order.
pub fn extract_anchors(graph: &KnnGraph, fraction: f64) -> Result<AnchorSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "anchor fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let unique = graph.undirected();
    if unique.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let mut ranked: Vec<((usize, usize), f64)> = unique.into_iter().collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let take = anchor_count(ranked.len(), fraction);
    Ok(AnchorSet {
        pairs: ranked.into_iter().take(take).map(|(p, _)| p).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edges(list: &[(usize, usize, f64)]) -> KnnGraph {
        KnnGraph {
            k: 1,
            nodes: 10,
            edges: list
                .iter()
                .map(|&(from, to, similarity)| Edge {
                    from,
                    to,
                    similarity,
                })
                .collect(),
        }
    }

    #[test]
    fn identical_points_are_fully_similar() {
        let x = Matrix::filled(3, 4, 0.5);
        let g = build_knn_graph(&x, 1).unwrap();
        assert_eq!(g.edges.len(), 3);
        for e in &g.edges {
            assert_ne!(e.from, e.to);
            assert!((e.similarity - 1.0).abs() < 1e-12);
        }
        // tie-break: smallest other index
        assert_eq!(g.edges[0].to, 1);
        assert_eq!(g.edges[1].to, 0);
        assert_eq!(g.edges[2].to, 0);
    }

    #[test]
    fn nearest_by_cosine() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1e-3]]).unwrap();
        let g = build_knn_graph(&x, 1).unwrap();
        assert_eq!(g.neighbors(0).next().unwrap().to, 2);
    }

    #[test]
    fn errors() {
        let x = Matrix::filled(2, 3, 1.0);
        assert!(matches!(
            build_knn_graph(&x, 2),
            Err(Error::BatchTooSmall { size: 2, needed: 3 })
        ));
        let z = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(
            build_knn_graph(&z, 1),
            Err(Error::DegenerateRow { row: 1, .. })
        ));
        let empty = edges(&[]);
        assert!(matches!(extract_anchors(&empty, 0.5), Err(Error::EmptyGraph)));
        let g = edges(&[(0, 1, 0.5)]);
        assert!(extract_anchors(&g, 0.0).is_err());
        assert!(extract_anchors(&g, 1.5).is_err());
    }

    #[test]
    fn full_fraction_returns_every_unique_edge() {
        let g = edges(&[(0, 1, 0.9), (1, 0, 0.9), (2, 3, 0.5), (3, 1, 0.1)]);
        let a = extract_anchors(&g, 1.0).unwrap();
        assert_eq!(a.len(), 3);
        assert!(a.contains(1, 0) && a.contains(3, 2) && a.contains(1, 3));
    }

    #[test]
    fn third_of_three_takes_the_best() {
        let g = edges(&[(4, 2, 0.1), (0, 1, 0.9), (2, 3, 0.5)]);
        let a = extract_anchors(&g, 1.0 / 3.0).unwrap();
        assert_eq!(a.pairs, vec![(0, 1)]);
    }

    #[test]
    fn ties_broken_by_pair_order() {
        let g = edges(&[(5, 6, 0.7), (2, 9, 0.7), (2, 3, 0.7), (1, 8, 0.2)]);
        let a = extract_anchors(&g, 0.5).unwrap();
        assert_eq!(a.pairs, vec![(2, 3), (2, 9)]);
    }

    #[test]
    fn anchor_count_rounding() {
        assert_eq!(anchor_count(100, 0.02), 2);
        assert_eq!(anchor_count(101, 0.02), 3);
        assert_eq!(anchor_count(3, 1.0 / 3.0), 1);
        assert_eq!(anchor_count(10, 1e-6), 1);
        assert_eq!(anchor_count(10, 1.0), 10);
    }
}
