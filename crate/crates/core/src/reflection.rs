//! Reflective reasoning paths built from a finished tree.
//!
//! A node `s` of the effective path is swapped for the triple
//! `(s_neg, prompt_reflect, s)`, where `s_neg` is the sibling of `s` with the
//! lowest UCB. Siblings removed by error positioning count: they are the
//! negatives the tree recorded.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::backend::Step;
use crate::dataset::SearchRecord;
use crate::seed::SeedMixer;
use crate::tree::{NodeId, ReasoningTree, TreeError};

#[derive(Debug, Error, PartialEq)]
pub enum ReflectError {
    #[error("node {0} is not on the effective path")]
    NotOnPath(NodeId),
    #[error("effective path is empty")]
    EmptyPath,
    #[error("invalid sample size: {0}")]
    InvalidSize(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// `Y_reflect` together with how it was derived from `Y`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectivePath {
    pub base_path: Vec<NodeId>,
    pub replaced_node: NodeId,
    pub negative_node: NodeId,
    pub reflect_prompt: String,
    /// Step texts of `Y_reflect`; the last is the terminal answer.
    pub sequence: Vec<String>,
}

impl ReflectivePath {
    pub fn to_steps(&self) -> Vec<Step> {
        let last = self.sequence.len().saturating_sub(1);
        self.sequence
            .iter()
            .enumerate()
            .map(|(i, s)| Step::new(s.clone(), i == last))
            .collect()
    }

    /// Position of the inserted `s_neg` within `sequence`.
    pub fn insertion_index(&self) -> usize {
        self.base_path
            .iter()
            .position(|&n| n == self.replaced_node)
            .expect("replaced node lies on the base path")
    }

    /// Drops the `(s_neg, prompt)` pair, recovering the texts of `Y`.
    pub fn without_insertion(&self) -> Vec<String> {
        let at = self.insertion_index();
        let mut seq = self.sequence.clone();
        seq.drain(at..at + 2);
        seq
    }
}

/// `argmin_{s_l ∈ Sibling(s)} UCB(s_l) − UCB(s)` with ties to the lowest id.
/// Subtracting the constant `UCB(s)` leaves the argmin unchanged; it is kept
/// to mirror the definition. Returns `None` when `node` has no siblings.
pub fn negative_sibling(
    tree: &ReasoningTree,
    effective_path: &[NodeId],
    node: NodeId,
    c: f64,
) -> Result<Option<NodeId>, ReflectError> {
    if !effective_path.contains(&node) {
        return Err(ReflectError::NotOnPath(node));
    }
    let own = tree.ucb(node, c)?;
    let mut best: Option<(NodeId, f64)> = None;
    for sib in tree.all_siblings_of(node)? {
        let gap = tree.ucb(sib, c)? - own;
        // siblings come in id order, so strict < keeps the lowest id on ties
        if best.is_none_or(|(_, b)| gap < b) {
            best = Some((sib, gap));
        }
    }
    Ok(best.map(|(id, _)| id))
}

/// Samples one node of `Y` that has a sibling and rewrites `Y` around it.
/// `None` when no node of `Y` has siblings.
pub fn build_reflective_path(
    tree: &ReasoningTree,
    effective_path: &[NodeId],
    seed: u64,
    c: f64,
    reflect_prompt: &str,
) -> Result<Option<ReflectivePath>, ReflectError> {
    if effective_path.is_empty() {
        return Err(ReflectError::EmptyPath);
    }
    let mut eligible = Vec::new();
    for &node in effective_path {
        if node == tree.root() {
            continue;
        }
        if !tree.all_siblings_of(node)?.is_empty() {
            eligible.push(node);
        }
    }
    if eligible.is_empty() {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let replaced = eligible[rng.random_range(0..eligible.len())];
    let negative = negative_sibling(tree, effective_path, replaced, c)?
        .expect("eligible nodes have siblings");

    let mut sequence = Vec::with_capacity(effective_path.len() + 2);
    for &node in effective_path {
        if node == replaced {
            sequence.push(tree.node(negative)?.step_text.clone());
            sequence.push(reflect_prompt.to_string());
        }
        sequence.push(tree.node(node)?.step_text.clone());
    }
    Ok(Some(ReflectivePath {
        base_path: effective_path.to_vec(),
        replaced_node: replaced,
        negative_node: negative,
        reflect_prompt: reflect_prompt.to_string(),
        sequence,
    }))
}

/// Per-record seed so a record's reflective path does not depend on which
/// other records were sampled.
pub fn record_seed(seed: u64, question_id: &str) -> u64 {
    SeedMixer::new("reflect").u64(seed).str(question_id).finish()
}

/// Share of records that get a reflective path by default: 15K of 260K.
pub const DEFAULT_REFLECTION_RATIO: f64 = 15_000.0 / 260_000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleSize {
    Count(usize),
    /// Fraction of the whole record population.
    Ratio(f64),
}

impl SampleSize {
    pub fn resolve(self, population: usize) -> Result<usize, ReflectError> {
        match self {
            SampleSize::Count(0) => Err(ReflectError::InvalidSize("count must be positive".into())),
            SampleSize::Count(n) => Ok(n),
            SampleSize::Ratio(r) if r > 0.0 && r <= 1.0 => {
                Ok((r * population as f64).round() as usize)
            }
            SampleSize::Ratio(r) => Err(ReflectError::InvalidSize(format!("ratio {r} must be in (0, 1]"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexSample {
    /// Selected positions into the eligible list, ascending.
    pub picked: Vec<usize>,
    pub requested: usize,
    pub shortfall: bool,
}

/// Seeded uniform sample without replacement of `requested` out of
/// `eligible` items; clamps to everything when too few are eligible.
pub fn sample_eligible(eligible: usize, requested: usize, seed: u64) -> IndexSample {
    if requested >= eligible {
        return IndexSample {
            picked: (0..eligible).collect(),
            requested,
            shortfall: requested > eligible,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, eligible, requested).into_vec();
    picked.sort_unstable();
    IndexSample { picked, requested, shortfall: false }
}

/// Selects which records receive a reflective path. Returns record indices
/// (ascending) paired with their path.
pub fn sample_reflection_subset(
    records: &[SearchRecord],
    size: SampleSize,
    seed: u64,
    c: f64,
    reflect_prompt: &str,
) -> Result<Vec<(usize, ReflectivePath)>, ReflectError> {
    let requested = size.resolve(records.len())?;
    let mut eligible = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let Some(path) = r.effective_path.as_ref().filter(|p| !p.is_empty()) else {
            continue;
        };
        let built = build_reflective_path(
            &r.tree,
            &path.node_ids,
            record_seed(seed, &r.question.id),
            c,
            reflect_prompt,
        )?;
        if let Some(p) = built {
            eligible.push((i, p));
        }
    }
    let sample = sample_eligible(eligible.len(), requested, seed);
    if sample.shortfall {
        warn!(
            requested,
            eligible = eligible.len(),
            "fewer records eligible for reflection than requested; using all of them"
        );
    }
    let mut eligible: Vec<Option<(usize, ReflectivePath)>> = eligible.into_iter().map(Some).collect();
    Ok(sample
        .picked
        .into_iter()
        .map(|i| eligible[i].take().expect("indices are distinct"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::TreeQuestion;

    fn base() -> ReasoningTree {
        ReasoningTree::new(TreeQuestion { text: "q".into(), image: None }, "4", 0)
    }

    #[test]
    fn argmin_sibling() {
        let mut t = base();
        let s = t.add_child(NodeId::ROOT, "s", "m", false).unwrap();
        let a = t.add_child(NodeId::ROOT, "a", "m", false).unwrap();
        let b = t.add_child(NodeId::ROOT, "b", "m", false).unwrap();
        let c = t.add_child(NodeId::ROOT, "c", "m", false).unwrap();
        for (n, v) in [(a, 0.9), (b, 0.3), (c, 0.7)] {
            t.nodes[n.index()].value_v = v;
        }
        assert_eq!(negative_sibling(&t, &[s], s, 1.0).unwrap(), Some(b));
        t.nodes[c.index()].value_v = 0.3;
        assert_eq!(negative_sibling(&t, &[s], s, 1.0).unwrap(), Some(b));
        t.prune_subtree(b).unwrap();
        // pruned siblings stay eligible
        assert_eq!(negative_sibling(&t, &[s], s, 1.0).unwrap(), Some(b));
        assert_eq!(negative_sibling(&t, &[s], a, 1.0), Err(ReflectError::NotOnPath(a)));
    }

    #[test]
    fn no_siblings_no_negative() {
        let mut t = base();
        let s = t.add_child(NodeId::ROOT, "s", "m", true).unwrap();
        assert_eq!(negative_sibling(&t, &[s], s, 1.0).unwrap(), None);
        assert_eq!(build_reflective_path(&t, &[s], 0, 1.0, "r").unwrap(), None);
    }

    #[test]
    fn substitution_in_the_middle() {
        let mut t = base();
        let s1 = t.add_child(NodeId::ROOT, "s1", "m", false).unwrap();
        let s2 = t.add_child(s1, "s2", "m", false).unwrap();
        let n = t.add_child(s1, "n", "m", false).unwrap();
        let s3 = t.add_child(s2, "s3", "m", true).unwrap();
        t.prune_subtree(n).unwrap();
        for seed in 0..20 {
            let p = build_reflective_path(&t, &[s1, s2, s3], seed, 1.0, "rethink").unwrap().unwrap();
            assert_eq!(p.replaced_node, s2);
            assert_eq!(p.negative_node, n);
            assert_eq!(p.sequence, ["s1", "n", "rethink", "s2", "s3"]);
            assert_eq!(p.without_insertion(), ["s1", "s2", "s3"]);
        }
    }

    #[test]
    fn only_branching_node_is_sampled() {
        let mut t = base();
        let s1 = t.add_child(NodeId::ROOT, "s1", "m", false).unwrap();
        let s2 = t.add_child(s1, "s2", "m", false).unwrap();
        let s3 = t.add_child(s2, "s3", "m", true).unwrap();
        let _alt = t.add_child(s2, "alt", "m", true).unwrap();
        for seed in 0..20 {
            let p = build_reflective_path(&t, &[s1, s2, s3], seed, 2.0, "r").unwrap().unwrap();
            assert_eq!(p.replaced_node, s3);
            assert_eq!(p.sequence.len(), 5);
        }
    }

    #[test]
    fn sizes() {
        assert_eq!(SampleSize::Ratio(0.1).resolve(100).unwrap(), 10);
        assert_eq!(SampleSize::Ratio(0.15).resolve(100).unwrap(), 15);
        assert_eq!(SampleSize::Ratio(15_000.0 / 260_000.0).resolve(260_000).unwrap(), 15_000);
        assert!((15_000.0_f64 / 260_000.0 - 0.0577).abs() < 1e-4);
        assert!(SampleSize::Ratio(0.0).resolve(10).is_err());
        assert!(SampleSize::Ratio(1.5).resolve(10).is_err());
        assert!(SampleSize::Ratio(f64::NAN).resolve(10).is_err());
        assert_eq!(SampleSize::Ratio(1.0).resolve(7).unwrap(), 7);
        assert!(SampleSize::Count(0).resolve(10).is_err());
    }

    #[test]
    fn index_sampling() {
        let a = sample_eligible(100, 10, 9);
        assert_eq!(a.picked.len(), 10);
        assert_eq!(a, sample_eligible(100, 10, 9));
        assert!(a.picked.windows(2).all(|w| w[0] < w[1]));
        let b = sample_eligible(5, 10, 9);
        assert_eq!(b.picked, vec![0, 1, 2, 3, 4]);
        assert!(b.shortfall);
    }
}
