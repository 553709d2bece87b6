//! Disjoint multilinear interaction expressions (sums of products over
//! pairwise-disjoint variable sets) and their one-to-one correspondence with
//! connectivity classes of feature graphs.
//!
//! A class of graphs that induce the same reachability relation is
//! represented by the partition of the features into connected components,
//! and a partition maps to the expression with one product term per block.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fgraph::{Edge, FeatureGraph};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DmieError {
    #[error("syntax error at byte {at}: {msg}")]
    Syntax { at: usize, msg: String },
    #[error("variable x{0} occurs more than once")]
    NotDisjoint(usize),
    #[error("feature index {index} out of range for {num_features} features")]
    OutOfRange { index: usize, num_features: usize },
    #[error("empty term or block")]
    EmptyTerm,
    #[error("blocks do not cover feature {0}")]
    Uncovered(usize),
    #[error("graphs have {0} and {1} features")]
    FeatureMismatch(usize, usize),
}

/// A sum of products of distinct variables `x0 .. x{d-1}`, no variable
/// appearing twice. Terms are kept sorted internally and by minimum element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawTerms", into = "RawTerms")]
pub struct DmieExpression {
    num_features: usize,
    terms: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct RawTerms {
    num_features: usize,
    terms: Vec<Vec<usize>>,
}

impl TryFrom<RawTerms> for DmieExpression {
    type Error = DmieError;
    fn try_from(raw: RawTerms) -> Result<Self, DmieError> {
        DmieExpression::new(raw.num_features, raw.terms)
    }
}

impl From<DmieExpression> for RawTerms {
    fn from(e: DmieExpression) -> Self {
        RawTerms {
            num_features: e.num_features,
            terms: e.terms,
        }
    }
}

fn canonical_blocks(num_features: usize, mut blocks: Vec<Vec<usize>>) -> Result<Vec<Vec<usize>>, DmieError> {
    let mut used = vec![false; num_features];
    for block in &mut blocks {
        if block.is_empty() {
            return Err(DmieError::EmptyTerm);
        }
        block.sort_unstable();
        for &i in block.iter() {
            if i >= num_features {
                return Err(DmieError::OutOfRange { index: i, num_features });
            }
            if core::mem::replace(&mut used[i], true) {
                return Err(DmieError::NotDisjoint(i));
            }
        }
    }
    blocks.sort_unstable_by_key(|b| b[0]);
    Ok(blocks)
}

impl DmieExpression {
    pub fn new(num_features: usize, terms: Vec<Vec<usize>>) -> Result<Self, DmieError> {
        Ok(Self {
            num_features,
            terms: canonical_blocks(num_features, terms)?,
        })
    }

    /// Parses `"x0*x1*x2 + x3*x4 + x5"`; the feature count is the largest
    /// index plus one. `"0"` is the empty expression.
    pub fn parse(text: &str) -> Result<Self, DmieError> {
        let terms = parse_terms(text)?;
        let d = terms.iter().flatten().max().map_or(0, |m| m + 1);
        Self::new(d, terms)
    }

    /// Like [`parse`](Self::parse) with an explicit feature count, so
    /// trailing features may be absent from every term.
    pub fn parse_with_features(text: &str, num_features: usize) -> Result<Self, DmieError> {
        Self::new(num_features, parse_terms(text)?)
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn terms(&self) -> &[Vec<usize>] {
        &self.terms
    }

    /// Sum over terms of the product of `row` entries at the term's indices.
    pub fn evaluate(&self, row: &[f64]) -> Result<f64, DmieError> {
        let mut total = 0.0;
        for term in &self.terms {
            let mut prod = 1.0;
            for &i in term {
                prod *= *row.get(i).ok_or(DmieError::OutOfRange {
                    index: i,
                    num_features: row.len(),
                })?;
            }
            total += prod;
        }
        Ok(total)
    }

    /// The partition with one block per term plus a singleton for every
    /// feature no term mentions.
    pub fn to_partition(&self) -> FeaturePartition {
        let mut blocks = self.terms.clone();
        let mut used = vec![false; self.num_features];
        for &i in self.terms.iter().flatten() {
            used[i] = true;
        }
        blocks.extend((0..self.num_features).filter(|&i| !used[i]).map(|i| vec![i]));
        blocks.sort_unstable_by_key(|b| b[0]);
        FeaturePartition {
            num_features: self.num_features,
            blocks,
        }
    }
}

impl fmt::Display for DmieExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (t, term) in self.terms.iter().enumerate() {
            if t > 0 {
                f.write_str(" + ")?;
            }
            for (k, i) in term.iter().enumerate() {
                if k > 0 {
                    f.write_str("*")?;
                }
                write!(f, "x{i}")?;
            }
        }
        Ok(())
    }
}

fn parse_terms(text: &str) -> Result<Vec<Vec<usize>>, DmieError> {
    let syntax = |at: usize, msg: &str| DmieError::Syntax {
        at,
        msg: String::from(msg),
    };
    if text.trim() == "0" {
        return Ok(Vec::new());
    }
    let bytes = text.as_bytes();
    let mut pos = 0;
    let skip_ws = |pos: &mut usize| {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
    };
    let mut terms = Vec::new();
    let mut term = Vec::new();
    loop {
        skip_ws(&mut pos);
        if pos >= bytes.len() || bytes[pos] != b'x' {
            return Err(syntax(pos, "expected variable 'x<k>'"));
        }
        pos += 1;
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(syntax(pos, "expected variable index"));
        }
        let index: usize = text[start..pos].parse().map_err(|_| syntax(start, "index too large"))?;
        term.push(index);
        skip_ws(&mut pos);
        match bytes.get(pos) {
            Some(b'*') => pos += 1,
            Some(b'+') => {
                pos += 1;
                terms.push(core::mem::take(&mut term));
            }
            None => {
                terms.push(term);
                return Ok(terms);
            }
            Some(_) => return Err(syntax(pos, "expected '*', '+' or end of input")),
        }
    }
}

/// A partition of the features `0..d` into non-empty blocks, sorted within
/// each block and by minimum element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeaturePartition {
    num_features: usize,
    blocks: Vec<Vec<usize>>,
}

impl FeaturePartition {
    pub fn new(num_features: usize, blocks: Vec<Vec<usize>>) -> Result<Self, DmieError> {
        let blocks = canonical_blocks(num_features, blocks)?;
        let covered: usize = blocks.iter().map(Vec::len).sum();
        if covered != num_features {
            let mut used = vec![false; num_features];
            for &i in blocks.iter().flatten() {
                used[i] = true;
            }
            let missing = used.iter().position(|u| !u).unwrap_or(0);
            return Err(DmieError::Uncovered(missing));
        }
        Ok(Self { num_features, blocks })
    }

    pub fn singletons(num_features: usize) -> Self {
        Self {
            num_features,
            blocks: (0..num_features).map(|i| vec![i]).collect(),
        }
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// One product term per block; singleton blocks become unary terms.
    pub fn to_expression(&self) -> DmieExpression {
        DmieExpression {
            num_features: self.num_features,
            terms: self.blocks.clone(),
        }
    }

    /// Canonical class member: a star centred on each block's minimum.
    pub fn representative(&self) -> FeatureGraph {
        let mut g = FeatureGraph::null(self.num_features);
        for block in &self.blocks {
            for &other in &block[1..] {
                g.insert(Edge::new(block[0], other).expect("distinct members"))
                    .expect("members in range");
            }
        }
        g
    }
}

pub fn expression_to_partition(expr: &DmieExpression) -> FeaturePartition {
    expr.to_partition()
}

pub fn partition_to_expression(partition: &FeaturePartition) -> DmieExpression {
    partition.to_expression()
}

pub fn class_representative(partition: &FeaturePartition) -> FeatureGraph {
    partition.representative()
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        // Smaller index as root keeps the later grouping pass simple.
        if ra < rb {
            self.parent[rb] = ra;
        } else {
            self.parent[ra] = rb;
        }
    }
}

/// Connected components of `graph` as a partition.
pub fn graph_to_partition(graph: &FeatureGraph) -> FeaturePartition {
    let d = graph.num_features();
    let mut sets = DisjointSets::new(d);
    for e in graph.edges() {
        sets.union(e.lo(), e.hi());
    }
    let mut blocks: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..d {
        let root = sets.find(i);
        blocks.entry(root).or_default().push(i);
    }
    FeaturePartition {
        num_features: d,
        blocks: blocks.into_values().collect(),
    }
}

/// Whether the graphs induce the same reachability relation.
pub fn graphs_equivalent(a: &FeatureGraph, b: &FeatureGraph) -> Result<bool, DmieError> {
    if a.num_features() != b.num_features() {
        return Err(DmieError::FeatureMismatch(a.num_features(), b.num_features()));
    }
    Ok(graph_to_partition(a) == graph_to_partition(b))
}

/// Every set partition of `0..d`, generated from restricted growth strings.
pub fn enumerate_partitions(num_features: usize) -> Vec<FeaturePartition> {
    let mut out = Vec::new();
    if num_features == 0 {
        out.push(FeaturePartition::singletons(0));
        return out;
    }
    let mut labels = vec![0usize; num_features];
    loop {
        let nblocks = labels.iter().max().map_or(0, |m| m + 1);
        let mut blocks = vec![Vec::new(); nblocks];
        for (i, &b) in labels.iter().enumerate() {
            blocks[b].push(i);
        }
        out.push(FeaturePartition {
            num_features,
            blocks,
        });
        // Next restricted growth string: labels[i] <= 1 + max(labels[..i]).
        let mut i = num_features - 1;
        loop {
            if i == 0 {
                return out;
            }
            let prefix_max = labels[..i].iter().copied().max().unwrap_or(0);
            if labels[i] <= prefix_max {
                labels[i] += 1;
                for l in &mut labels[i + 1..] {
                    *l = 0;
                }
                break;
            }
            i -= 1;
        }
    }
}

/// Counts over the exhaustive enumeration of graphs on `d` nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCensus {
    pub num_features: usize,
    pub graphs: u64,
    pub classes: usize,
}

/// Enumerates all `2^C(d,2)` graphs and groups them by connectivity class.
pub fn census(num_features: usize) -> ClassCensus {
    let pairs = crate::fgraph::all_pairs(num_features);
    assert!(pairs.len() < 32, "enumeration over {} edges is too large", pairs.len());
    let mut classes: BTreeMap<FeaturePartition, u64> = BTreeMap::new();
    for mask in 0u64..1 << pairs.len() {
        let mut g = FeatureGraph::null(num_features);
        for (i, &e) in pairs.iter().enumerate() {
            if mask >> i & 1 == 1 {
                g.insert(e).expect("pairs in range");
            }
        }
        *classes.entry(graph_to_partition(&g)).or_default() += 1;
    }
    ClassCensus {
        num_features,
        graphs: 1 << pairs.len(),
        classes: classes.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn graph(d: usize, edges: &[(usize, usize)]) -> FeatureGraph {
        FeatureGraph::from_edges(d, edges.iter().copied()).unwrap()
    }

    #[test]
    fn parse_canonical() {
        let e = DmieExpression::parse("x0*x1*x2 + x3*x4 + x5 + x6").unwrap();
        assert_eq!(e.terms(), [vec![0, 1, 2], vec![3, 4], vec![5], vec![6]]);
        assert_eq!(e.num_features(), 7);
        let single = DmieExpression::parse("x0").unwrap();
        assert_eq!(single.terms(), [vec![0]]);
        let shuffled = DmieExpression::parse("x4 + x2*x0+x1 ").unwrap();
        assert_eq!(shuffled.terms(), [vec![0, 2], vec![1], vec![4]]);
        assert_eq!(shuffled.num_features(), 5);
    }

    #[test]
    fn parse_rejects_repeats_and_garbage() {
        assert_eq!(DmieExpression::parse("x0*x1 + x1*x2"), Err(DmieError::NotDisjoint(1)));
        assert_eq!(DmieExpression::parse("x3*x3"), Err(DmieError::NotDisjoint(3)));
        assert!(matches!(DmieExpression::parse("x0 + "), Err(DmieError::Syntax { .. })));
        assert!(matches!(DmieExpression::parse("y0"), Err(DmieError::Syntax { .. })));
        assert!(matches!(DmieExpression::parse("x0 x1"), Err(DmieError::Syntax { .. })));
        assert!(matches!(
            DmieExpression::parse_with_features("x5", 3),
            Err(DmieError::OutOfRange { index: 5, .. })
        ));
    }

    #[test]
    fn display_round_trips() {
        let text = "x0*x1*x2 + x3*x4 + x5 + x6";
        assert_eq!(DmieExpression::parse(text).unwrap().to_string(), text);
        assert_eq!(DmieExpression::new(3, vec![]).unwrap().to_string(), "0");
        assert_eq!(DmieExpression::parse_with_features("0", 3).unwrap().num_features(), 3);
    }

    #[test]
    fn expression_partition_correspondence() {
        let e = DmieExpression::parse("x0*x1*x2 + x3*x4 + x5 + x6").unwrap();
        let p = expression_to_partition(&e);
        assert_eq!(p.blocks(), [vec![0, 1, 2], vec![3, 4], vec![5], vec![6]]);
        let empty = DmieExpression::new(3, vec![]).unwrap();
        assert_eq!(expression_to_partition(&empty), FeaturePartition::singletons(3));
        let pairs = DmieExpression::new(4, vec![vec![0, 1], vec![2, 3]]).unwrap();
        assert_eq!(expression_to_partition(&pairs).blocks(), [vec![0, 1], vec![2, 3]]);
        // Missing features become unary terms.
        let sparse = DmieExpression::parse_with_features("x1*x3", 5).unwrap();
        assert_eq!(sparse.to_partition().blocks(), [vec![0], vec![1, 3], vec![2], vec![4]]);
    }

    #[test]
    fn partition_to_expression_examples() {
        let p = FeaturePartition::new(7, vec![vec![5], vec![0, 1, 2], vec![6], vec![3, 4]]).unwrap();
        assert_eq!(partition_to_expression(&p).to_string(), "x0*x1*x2 + x3*x4 + x5 + x6");
        assert_eq!(partition_to_expression(&FeaturePartition::singletons(3)).to_string(), "x0 + x1 + x2");
        let pair = FeaturePartition::new(2, vec![vec![0, 1]]).unwrap();
        assert_eq!(partition_to_expression(&pair).to_string(), "x0*x1");
        assert_eq!(FeaturePartition::new(3, vec![vec![0, 1]]), Err(DmieError::Uncovered(2)));
    }

    #[test]
    fn components_from_graphs() {
        let e1 = graph(7, &[(0, 1), (0, 2), (1, 2), (3, 4)]);
        let e2 = graph(7, &[(0, 1), (1, 2), (3, 4)]);
        let want = [vec![0, 1, 2], vec![3, 4], vec![5], vec![6]];
        assert_eq!(graph_to_partition(&e1).blocks(), want);
        assert_eq!(graph_to_partition(&e2).blocks(), want);
        assert_eq!(graph_to_partition(&FeatureGraph::null(4)), FeaturePartition::singletons(4));
    }

    #[test]
    fn equivalence_examples() {
        let e1 = graph(7, &[(0, 1), (0, 2), (1, 2), (3, 4)]);
        let e2 = graph(7, &[(0, 1), (1, 2), (3, 4)]);
        assert_eq!(graphs_equivalent(&e1, &e2), Ok(true));
        assert_eq!(graphs_equivalent(&FeatureGraph::complete(3), &FeatureGraph::null(3)), Ok(false));
        assert_eq!(graphs_equivalent(&e1, &e1), Ok(true));
        assert_eq!(
            graphs_equivalent(&FeatureGraph::null(2), &FeatureGraph::null(3)),
            Err(DmieError::FeatureMismatch(2, 3))
        );
    }

    #[test]
    fn star_representatives() {
        let p = FeaturePartition::new(5, vec![vec![0, 1, 2], vec![3, 4]]).unwrap();
        assert_eq!(class_representative(&p), graph(5, &[(0, 1), (0, 2), (3, 4)]));
        assert_eq!(class_representative(&FeaturePartition::singletons(4)).edge_count(), 0);
        let one = FeaturePartition::new(4, vec![vec![0, 1, 2, 3]]).unwrap();
        assert_eq!(class_representative(&one), graph(4, &[(0, 1), (0, 2), (0, 3)]));
    }

    #[test]
    fn evaluate_products() {
        let e = DmieExpression::parse("x0*x1 + x2").unwrap();
        assert_eq!(e.evaluate(&[2.0, 3.0, 5.0]), Ok(11.0));
        assert_eq!(DmieExpression::new(2, vec![]).unwrap().evaluate(&[1.0, 2.0]), Ok(0.0));
        assert!(e.evaluate(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn serde_validates() {
        let raw = RawTerms {
            num_features: 3,
            terms: vec![vec![0, 1], vec![1]],
        };
        assert_eq!(DmieExpression::try_from(raw), Err(DmieError::NotDisjoint(1)));
    }
}
