//! The tracer's frontier and the rules for choosing what to query next.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::contagion::{InfectionTree, NodeId};
use crate::error::{Error, Result};
use crate::qlearn::{self, TruncationLimits, VTable};

/// What the tracer sees of an unqueried node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierEntry {
    pub node: NodeId,
    pub p: f64,
    pub q: f64,
    pub tau: u32,
}

/// Unqueried children of queried infected nodes. Storage order carries no
/// meaning; every policy is invariant under permutations of it.
#[derive(Clone, Debug, Default)]
pub struct Frontier {
    entries: Vec<FrontierEntry>,
}

impl Frontier {
    pub fn new() -> Self {
        Self::default()
    }

    /// The frontier at step `k`: just the root.
    pub fn with_root(tree: &InfectionTree) -> Self {
        let mut frontier = Self::new();
        frontier.push(entry_for(tree, tree.root()));
        frontier
    }

    pub fn from_entries(entries: Vec<FrontierEntry>) -> Self {
        Self { entries }
    }

    pub fn push(&mut self, entry: FrontierEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[FrontierEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, node: NodeId) -> Option<usize> {
        self.entries.iter().position(|e| e.node == node)
    }

    /// Arrival times, sorted.
    pub fn taus(&self) -> Vec<u32> {
        let mut taus: Vec<u32> = self.entries.iter().map(|e| e.tau).collect();
        taus.sort_unstable();
        taus
    }

    fn remove(&mut self, index: usize) -> FrontierEntry {
        self.entries.swap_remove(index)
    }
}

fn entry_for(tree: &InfectionTree, id: NodeId) -> FrontierEntry {
    let node = tree.node(id);
    FrontierEntry {
        node: id,
        p: node.params.p,
        q: node.params.q,
        tau: node.tau,
    }
}

/// Outcome of one query.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryResult {
    pub infected: bool,
    pub revealed: Vec<FrontierEntry>,
}

/// Queries the frontier entry at `index`.
///
/// An infected node is stabilized and its current children join the
/// frontier; an uninfected one is only marked queried.
pub(crate) fn query_at(
    tree: &mut InfectionTree,
    frontier: &mut Frontier,
    index: usize,
) -> (bool, usize) {
    let entry = frontier.remove(index);
    let infected = tree.mark_queried(entry.node);
    let mut revealed = 0;
    if infected {
        for child in tree.children(entry.node) {
            frontier.push(entry_for(tree, child));
            revealed += 1;
        }
    }
    (infected, revealed)
}

/// Queries `node`, which must be in the frontier.
pub fn query(tree: &mut InfectionTree, frontier: &mut Frontier, node: NodeId) -> Result<QueryResult> {
    let index = frontier
        .position(node)
        .ok_or_else(|| Error::Contract(format!("{node} is not in the frontier")))?;
    let before = frontier.len() - 1;
    let (infected, count) = query_at(tree, frontier, index);
    let revealed = frontier.entries()[before..before + count].to_vec();
    Ok(QueryResult { infected, revealed })
}

/// Query-selection rules.
#[derive(Clone, Debug, PartialEq)]
pub enum PolicyKind {
    AscendingTime,
    DescendingTime,
    DescendingP,
    DescendingQ,
    UniformRandom,
    Learned(LearnedPolicy),
}

impl PolicyKind {
    /// The five built-in, table-free policies.
    pub const BUILTIN: [PolicyKind; 5] = [
        PolicyKind::AscendingTime,
        PolicyKind::DescendingTime,
        PolicyKind::DescendingP,
        PolicyKind::DescendingQ,
        PolicyKind::UniformRandom,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::AscendingTime => "ascending-time",
            PolicyKind::DescendingTime => "descending-time",
            PolicyKind::DescendingP => "descending-p",
            PolicyKind::DescendingQ => "descending-q",
            PolicyKind::UniformRandom => "uniform-random",
            PolicyKind::Learned(learned) => match *learned.terminal {
                PolicyKind::AscendingTime => "learn-ascend",
                PolicyKind::DescendingTime => "learn-descend",
                _ => "learned",
            },
        }
    }

    pub fn is_learned(&self) -> bool {
        matches!(self, PolicyKind::Learned(_))
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ascending-time" => Ok(PolicyKind::AscendingTime),
            "descending-time" => Ok(PolicyKind::DescendingTime),
            "descending-p" => Ok(PolicyKind::DescendingP),
            "descending-q" => Ok(PolicyKind::DescendingQ),
            "uniform-random" => Ok(PolicyKind::UniformRandom),
            other => Err(Error::invalid("policy", format!("unknown policy `{other}`"))),
        }
    }
}

/// A trained value table plus the policy it falls back to outside the
/// trained state space.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnedPolicy {
    pub table: Arc<VTable>,
    pub terminal: Box<PolicyKind>,
    pub limits: TruncationLimits,
}

impl LearnedPolicy {
    pub fn new(table: Arc<VTable>, terminal: PolicyKind, limits: TruncationLimits) -> Result<Self> {
        if terminal.is_learned() {
            return Err(Error::invalid("terminal", "terminal policy must not be learned"));
        }
        Ok(Self {
            table,
            terminal: Box::new(terminal),
            limits,
        })
    }
}

/// Picks the frontier entry to query and returns its index.
///
/// Ties on the policy's key are broken uniformly at random. Callers must
/// treat an empty frontier as containment and never get here with one.
pub fn select<R: Rng + ?Sized>(
    policy: &PolicyKind,
    frontier: &Frontier,
    t: u32,
    rng: &mut R,
) -> usize {
    let entries = frontier.entries();
    assert!(!entries.is_empty(), "select called on an empty frontier");
    match policy {
        PolicyKind::AscendingTime => argmax_by(entries, |e| -(e.tau as f64), rng),
        PolicyKind::DescendingTime => argmax_by(entries, |e| e.tau as f64, rng),
        PolicyKind::DescendingP => argmax_by(entries, |e| e.p, rng),
        PolicyKind::DescendingQ => argmax_by(entries, |e| e.q, rng),
        PolicyKind::UniformRandom => {
            if entries.len() == 1 {
                0
            } else {
                rng.gen_range(0..entries.len())
            }
        }
        PolicyKind::Learned(learned) => {
            match qlearn::learned_select(&learned.table, &learned.limits, frontier, t, rng) {
                Some(index) => index,
                None => select(&learned.terminal, frontier, t, rng),
            }
        }
    }
}

/// Index of a maximal entry under `key`, uniform over ties (reservoir
/// sampling, so exactly one draw per tie beyond the first).
#[inline]
fn argmax_by<R: Rng + ?Sized>(
    entries: &[FrontierEntry],
    key: impl Fn(&FrontierEntry) -> f64,
    rng: &mut R,
) -> usize {
    let mut best = 0;
    let mut best_key = key(&entries[0]);
    let mut ties = 1u32;
    for (i, entry) in entries.iter().enumerate().skip(1) {
        let k = key(entry);
        if k > best_key {
            best = i;
            best_key = k;
            ties = 1;
        } else if k == best_key {
            ties += 1;
            if rng.gen_range(0..ties) == 0 {
                best = i;
            }
        }
    }
    best
}
