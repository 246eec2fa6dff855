//! The four per-iteration operations: expansion, simulation with error
//! positioning, backpropagation and selection.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use tracing::warn;

use super::{Ensemble, ExpansionMode, SearchConfig, SearchError};
use crate::backend::{evaluate_node, generate_continuation};
use crate::dataset::QuestionRecord;
use crate::seed::SeedMixer;
use crate::tree::{NodeId, ReasoningTree, TreeError};

#[derive(Debug, Clone, Default)]
pub struct Expansion {
    /// One chain per successful generation, each ordered top-down.
    pub chains: Vec<Vec<NodeId>>,
    pub failures: usize,
    pub backend_time: Duration,
}

impl Expansion {
    pub fn nodes_added(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }
}

/// Asks every model for `candidates_per_model` continuations from `start`
/// and grafts each under `start` as a chain.
pub fn expand(
    tree: &mut ReasoningTree,
    start: NodeId,
    question: &QuestionRecord,
    ensemble: &Ensemble,
    config: &SearchConfig,
    iteration: u32,
    mode: ExpansionMode,
) -> Result<Expansion, SearchError> {
    let node = tree.node(start)?;
    if node.pruned {
        return Err(TreeError::ParentPruned(start).into());
    }
    if node.is_terminal {
        return Err(TreeError::TerminalParent(start).into());
    }
    let prefix = tree.steps_to(start)?;

    let jobs: Vec<(usize, u64)> = (0..ensemble.len())
        .flat_map(|m| {
            (0..config.candidates_per_model).map(move |c| {
                let sample = SeedMixer::new("sample")
                    .u64(config.seed)
                    .u64(iteration as u64)
                    .u64(m as u64)
                    .u64(c as u64)
                    .finish();
                (m, sample)
            })
        })
        .collect();
    let results = ensemble.fan_out(jobs, |(m, sample)| {
        let t0 = Instant::now();
        let out = generate_continuation(ensemble.members()[m].as_ref(), question, &prefix, sample);
        (m, out, t0.elapsed())
    });

    let mut expansion = Expansion::default();
    for (m, out, took) in results {
        expansion.backend_time += took;
        let model = ensemble.members()[m].name();
        let result = match out {
            Ok(r) => r,
            Err(e) => {
                warn!(model, question = %question.id, error = %e, "generation failed");
                expansion.failures += 1;
                continue;
            }
        };
        let steps = match mode {
            ExpansionMode::FullChain => &result.steps[..],
            ExpansionMode::SingleStep => &result.steps[..1],
        };
        let mut parent = start;
        let mut chain = Vec::with_capacity(steps.len());
        for step in steps {
            parent = tree.add_child(parent, step.text.clone(), model, step.terminal)?;
            chain.push(parent);
        }
        expansion.chains.push(chain);
    }
    Ok(expansion)
}

#[derive(Debug, Clone, Default)]
pub struct Simulation {
    /// `S*_candidate`: the candidates that survived, ascending id.
    pub retained: Vec<NodeId>,
    pub pruned: usize,
    pub vote_failures: usize,
    pub backend_time: Duration,
}

/// Scores every new node with the mean vote of all models, then prunes each
/// node below `threshold_t` together with everything under it.
pub fn simulate_and_prune(
    tree: &mut ReasoningTree,
    chains: &[Vec<NodeId>],
    question: &QuestionRecord,
    ensemble: &Ensemble,
    config: &SearchConfig,
) -> Result<Simulation, SearchError> {
    let nodes: Vec<NodeId> = chains.iter().flatten().copied().collect();
    let mut contexts = Vec::with_capacity(nodes.len());
    for &n in &nodes {
        let parent = tree.node(n)?.parent_id.ok_or(TreeError::RootUcb)?;
        contexts.push((tree.steps_to(parent)?, tree.node(n)?.step()));
    }
    let jobs: Vec<(usize, usize)> = (0..nodes.len())
        .flat_map(|i| (0..ensemble.len()).map(move |m| (i, m)))
        .collect();
    let votes = ensemble.fan_out(jobs, |(i, m)| {
        let (prefix, candidate) = &contexts[i];
        let t0 = Instant::now();
        let vote = evaluate_node(ensemble.members()[m].as_ref(), question, prefix, candidate);
        (i, m, vote, t0.elapsed())
    });

    let mut sim = Simulation::default();
    let mut sums = vec![(0.0f64, 0usize); nodes.len()];
    for (i, m, vote, took) in votes {
        sim.backend_time += took;
        match vote {
            Ok(v) => {
                sums[i].0 += v;
                sums[i].1 += 1;
            }
            Err(e) => {
                warn!(
                    model = ensemble.members()[m].name(),
                    node = %nodes[i],
                    error = %e,
                    "evaluation vote failed"
                );
                sim.vote_failures += 1;
            }
        }
    }
    for (i, &n) in nodes.iter().enumerate() {
        let (sum, count) = sums[i];
        // a failed vote shrinks the denominator instead of counting as zero
        tree.node_mut(n)?.score_r = (count > 0).then(|| sum / count as f64);
        if count == 0 {
            warn!(node = %n, question = %question.id, "every evaluation vote failed; pruning");
        }
    }

    for chain in chains {
        for &n in chain {
            let node = tree.node(n)?;
            if node.pruned {
                continue;
            }
            let keep = node.score_r.is_some_and(|r| r >= config.threshold_t);
            if !keep {
                sim.pruned += tree.prune_subtree(n)?;
            }
        }
    }
    sim.retained = nodes.into_iter().filter(|&n| !tree.nodes[n.index()].pruned).collect();
    sim.retained.sort_unstable();
    Ok(sim)
}

/// Folds the scores of the newly retained nodes into their parents:
/// `V ← (N·V + ΣR) / (N + count)`, `N ← N + count`. Parents with no new
/// retained child are left alone.
pub fn backpropagate(tree: &mut ReasoningTree, retained: &[NodeId]) -> Result<(), SearchError> {
    let mut by_parent: BTreeMap<NodeId, (u64, f64)> = BTreeMap::new();
    for &n in retained {
        let node = tree.node(n)?;
        let parent = node.parent_id.ok_or(TreeError::RootUcb)?;
        let r = node
            .score_r
            .ok_or_else(|| SearchError::Unscored(n))?;
        let e = by_parent.entry(parent).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += r;
    }
    // children always have larger ids, so descending order is bottom-up
    for (parent, (count, sum)) in by_parent.into_iter().rev() {
        let p = tree.node_mut(parent)?;
        let visits = p.visits_n as f64;
        p.value_v = (visits * p.value_v + sum) / (visits + count as f64);
        p.visits_n += count;
    }
    Ok(())
}

/// Score used to rank selection candidates. The root has no parent, so it
/// only ever competes (alone) through its value.
fn selection_score(tree: &ReasoningTree, id: NodeId, c: f64) -> Result<f64, TreeError> {
    if id == tree.root() {
        return Ok(tree.node(id)?.value_v);
    }
    tree.ucb(id, c)
}

/// The nodes selection ranks: the latest retained non-terminal candidates,
/// or, when none are left, every retained non-terminal node without a
/// retained child.
pub fn selection_candidates(tree: &ReasoningTree, latest: &[NodeId]) -> Vec<NodeId> {
    let mut cands: Vec<NodeId> = latest
        .iter()
        .copied()
        .filter(|&n| {
            let node = &tree.nodes[n.index()];
            !node.pruned && !node.is_terminal
        })
        .collect();
    if cands.is_empty() {
        cands = tree
            .iter()
            .filter(|n| {
                !n.pruned
                    && !n.is_terminal
                    && n.child_ids.iter().all(|c| tree.nodes[c.index()].pruned)
            })
            .map(|n| n.id)
            .collect();
    }
    cands.sort_unstable();
    cands.dedup();
    cands
}

/// Highest-UCB candidate, ties to the lowest id.
pub fn select(tree: &ReasoningTree, latest: &[NodeId], c: f64) -> Result<NodeId, SearchError> {
    let mut best: Option<(NodeId, f64)> = None;
    for id in selection_candidates(tree, latest) {
        let score = selection_score(tree, id, c)?;
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((id, score));
        }
    }
    best.map(|(id, _)| id).ok_or(SearchError::Exhausted)
}
