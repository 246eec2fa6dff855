//! Reasoning tree: an insertion-ordered arena of reasoning steps rooted at the
//! question.
//!
//! Nodes are never removed. Error positioning marks a node (and its subtree)
//! as pruned, which hides it from [`ReasoningTree::siblings_of`], selection and
//! path extraction while keeping ids stable, so the serialized tree still
//! carries the negative nodes that reflection needs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Step;

/// Origin tag carried by the root node.
pub const ROOT_ORIGIN: &str = "root";

/// Insertion-ordered node identifier. The root is always `NodeId(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("parent pruned: {0}")]
    ParentPruned(NodeId),
    #[error("root has no siblings")]
    RootHasNoSiblings,
    #[error("ucb is undefined for the root node")]
    RootUcb,
    #[error("cannot expand terminal node {0}")]
    TerminalParent(NodeId),
    #[error("malformed tree: {0}")]
    Malformed(String),
}

/// One reasoning step `s` with its search statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningNode {
    pub id: NodeId,
    pub step_text: String,
    pub origin_model: String,
    /// Collective evaluation `R(s)`; `None` until simulated.
    pub score_r: Option<f64>,
    pub value_v: f64,
    pub visits_n: u64,
    pub is_terminal: bool,
    pub pruned: bool,
    pub parent_id: Option<NodeId>,
    pub child_ids: Vec<NodeId>,
}

impl ReasoningNode {
    pub fn step(&self) -> Step {
        Step::new(self.step_text.clone(), self.is_terminal)
    }
}

/// The question the tree is rooted at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeQuestion {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

/// The question-rooted tree `S` built across search iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTree {
    pub question: TreeQuestion,
    pub ground_truth: String,
    pub rng_seed: u64,
    pub root_id: NodeId,
    pub nodes: Vec<ReasoningNode>,
}

impl ReasoningTree {
    pub fn new(question: TreeQuestion, ground_truth: impl Into<String>, rng_seed: u64) -> Self {
        let root = ReasoningNode {
            id: NodeId::ROOT,
            step_text: String::new(),
            origin_model: ROOT_ORIGIN.to_string(),
            score_r: None,
            value_v: 0.0,
            visits_n: 0,
            is_terminal: false,
            pruned: false,
            parent_id: None,
            child_ids: Vec::new(),
        };
        Self {
            question,
            ground_truth: ground_truth.into(),
            rng_seed,
            root_id: NodeId::ROOT,
            nodes: vec![root],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> NodeId {
        self.root_id
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.nodes.len()
    }

    pub fn node(&self, id: NodeId) -> Result<&ReasoningNode, TreeError> {
        self.nodes.get(id.index()).ok_or(TreeError::UnknownNode(id))
    }

    pub fn node_mut(&mut self, id: NodeId) -> Result<&mut ReasoningNode, TreeError> {
        self.nodes.get_mut(id.index()).ok_or(TreeError::UnknownNode(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &ReasoningNode> {
        self.nodes.iter()
    }

    /// Appends a step under `parent` and returns its id.
    pub fn add_child(
        &mut self,
        parent: NodeId,
        step_text: impl Into<String>,
        origin_model: impl Into<String>,
        is_terminal: bool,
    ) -> Result<NodeId, TreeError> {
        let p = self.node(parent)?;
        if p.pruned {
            return Err(TreeError::ParentPruned(parent));
        }
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(ReasoningNode {
            id,
            step_text: step_text.into(),
            origin_model: origin_model.into(),
            score_r: None,
            value_v: 0.0,
            visits_n: 0,
            is_terminal,
            pruned: false,
            parent_id: Some(parent),
            child_ids: Vec::new(),
        });
        self.nodes[parent.index()].child_ids.push(id);
        Ok(id)
    }

    /// `Parent(s) ∪ {s}`, ordered root first.
    pub fn path_to_root(&self, id: NodeId) -> Result<Vec<NodeId>, TreeError> {
        let mut path = vec![id];
        let mut cur = self.node(id)?;
        while let Some(parent) = cur.parent_id {
            if path.len() > self.nodes.len() {
                return Err(TreeError::Malformed(format!("cycle through {id}")));
            }
            path.push(parent);
            cur = self.node(parent)?;
        }
        path.reverse();
        Ok(path)
    }

    pub fn depth(&self, id: NodeId) -> Result<usize, TreeError> {
        Ok(self.path_to_root(id)?.len() - 1)
    }

    /// The reasoning steps from the root (exclusive) down to `id` (inclusive).
    pub fn steps_to(&self, id: NodeId) -> Result<Vec<Step>, TreeError> {
        Ok(self
            .path_to_root(id)?
            .into_iter()
            .skip(1)
            .map(|n| self.nodes[n.index()].step())
            .collect())
    }

    /// Retained children in insertion order.
    pub fn retained_children(&self, id: NodeId) -> Result<Vec<NodeId>, TreeError> {
        Ok(self
            .node(id)?
            .child_ids
            .iter()
            .copied()
            .filter(|c| !self.nodes[c.index()].pruned)
            .collect())
    }

    fn parent_of_non_root(&self, id: NodeId) -> Result<NodeId, TreeError> {
        self.node(id)?.parent_id.ok_or(TreeError::RootHasNoSiblings)
    }

    /// Other retained children of the same parent, insertion ordered.
    pub fn siblings_of(&self, id: NodeId) -> Result<Vec<NodeId>, TreeError> {
        let parent = self.parent_of_non_root(id)?;
        Ok(self.nodes[parent.index()]
            .child_ids
            .iter()
            .copied()
            .filter(|&c| c != id && !self.nodes[c.index()].pruned)
            .collect())
    }

    /// Every other child of the same parent, pruned ones included.
    pub fn all_siblings_of(&self, id: NodeId) -> Result<Vec<NodeId>, TreeError> {
        let parent = self.parent_of_non_root(id)?;
        Ok(self.nodes[parent.index()]
            .child_ids
            .iter()
            .copied()
            .filter(|&c| c != id)
            .collect())
    }

    /// `V(s) + c·sqrt(ln N(ŝ) / (1 + N(s)))`, with the exploration term taken
    /// as zero while the parent is unvisited.
    pub fn ucb(&self, id: NodeId, c: f64) -> Result<f64, TreeError> {
        let node = self.node(id)?;
        let parent = node.parent_id.ok_or(TreeError::RootUcb)?;
        let parent_visits = self.nodes[parent.index()].visits_n;
        Ok(ucb_value(node.value_v, node.visits_n, parent_visits, c))
    }

    /// Marks `id` and its whole subtree as pruned. Returns how many nodes
    /// changed state.
    pub fn prune_subtree(&mut self, id: NodeId) -> Result<usize, TreeError> {
        self.node(id)?;
        let mut stack = vec![id];
        let mut changed = 0;
        while let Some(n) = stack.pop() {
            let node = &mut self.nodes[n.index()];
            if !node.pruned {
                node.pruned = true;
                changed += 1;
            }
            stack.extend(node.child_ids.iter().copied());
        }
        Ok(changed)
    }

    /// Checks the structural invariants. Used when loading trees from disk.
    pub fn validate(&self) -> Result<(), TreeError> {
        if self.nodes.is_empty() {
            return Err(TreeError::Malformed("tree has no root".into()));
        }
        if self.root_id != NodeId::ROOT || self.nodes[0].parent_id.is_some() {
            return Err(TreeError::Malformed("root must be node 0 with no parent".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id.index() != i {
                return Err(TreeError::Malformed(format!("node at slot {i} has id {}", node.id)));
            }
            if i > 0 {
                let parent = node
                    .parent_id
                    .ok_or_else(|| TreeError::Malformed(format!("{} has no parent", node.id)))?;
                // parents always precede children, which also rules out cycles
                if parent.index() >= i {
                    return Err(TreeError::Malformed(format!("{} precedes its parent", node.id)));
                }
                let p = &self.nodes[parent.index()];
                if !p.child_ids.contains(&node.id) {
                    return Err(TreeError::Malformed(format!("{parent} does not list {}", node.id)));
                }
                if p.pruned && !node.pruned {
                    return Err(TreeError::Malformed(format!(
                        "{} is retained under pruned {parent}",
                        node.id
                    )));
                }
            }
            for c in &node.child_ids {
                match self.nodes.get(c.index()) {
                    Some(child) if child.parent_id == Some(node.id) => {}
                    _ => {
                        return Err(TreeError::Malformed(format!(
                            "{} lists {c} which is not its child",
                            node.id
                        )))
                    }
                }
            }
        }
        Ok(())
    }
}

/// Plain UCB arithmetic shared by selection and reflection.
pub fn ucb_value(value: f64, visits: u64, parent_visits: u64, c: f64) -> f64 {
    if parent_visits == 0 {
        return value;
    }
    let explore = ((parent_visits as f64).ln() / (1.0 + visits as f64)).sqrt();
    value + c * explore
}
