//! The infection tree and its growth process.
//!
//! Each node carries a transmission probability `p` and a contact
//! probability `q`. Every round, every active node meets one new contact
//! with probability `q`; an infected node passes the infection on with
//! probability `p`. Only infected nodes and their direct children are
//! stored: a child of an uninfected node can never be infected or reach the
//! tracer's frontier, so materializing it would only cost memory.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};
use crate::rng::bernoulli;

/// Index of a node inside its [`InfectionTree`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    /// Per-round transmission probability.
    pub p: f64,
    /// Per-round contact probability.
    pub q: f64,
}

impl NodeParams {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        check_probability("p", p)?;
        check_probability("q", q)?;
        Ok(Self { p, q })
    }
}

/// Distribution a node parameter is drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ParamDistribution {
    PointMass(f64),
    /// Uniform on `[min, 1)`. `UniformMin(1.0)` is the point mass at 1.
    UniformMin(f64),
}

impl ParamDistribution {
    pub fn validate(&self, name: &'static str) -> Result<()> {
        match *self {
            ParamDistribution::PointMass(v) | ParamDistribution::UniformMin(v) => {
                check_probability(name, v)
            }
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ParamDistribution::PointMass(v) => v,
            ParamDistribution::UniformMin(min) if min >= 1.0 => 1.0,
            ParamDistribution::UniformMin(min) => min + (1.0 - min) * rng.gen::<f64>(),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ParamDistribution::PointMass(v) => v,
            ParamDistribution::UniformMin(min) => (min + 1.0) / 2.0,
        }
    }

    pub fn is_point_mass(&self) -> bool {
        matches!(self, ParamDistribution::PointMass(_) | ParamDistribution::UniformMin(1.0))
    }
}

impl fmt::Display for ParamDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamDistribution::PointMass(v) => write!(f, "point({v})"),
            ParamDistribution::UniformMin(m) => write!(f, "uniform[{m},1)"),
        }
    }
}

/// A contagion setting: parameter distributions plus the round tracing starts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub d_p: ParamDistribution,
    pub d_q: ParamDistribution,
    pub k: u32,
}

impl Instance {
    pub fn new(d_p: ParamDistribution, d_q: ParamDistribution, k: u32) -> Result<Self> {
        let instance = Self { d_p, d_q, k };
        instance.validate()?;
        Ok(instance)
    }

    /// Every node has parameters `(p, q)`.
    pub fn point(p: f64, q: f64, k: u32) -> Result<Self> {
        Self::new(ParamDistribution::PointMass(p), ParamDistribution::PointMass(q), k)
    }

    /// `p ~ U[p_min, 1)`, `q ~ U[q_min, 1)`.
    pub fn uniform(p_min: f64, q_min: f64, k: u32) -> Result<Self> {
        Self::new(
            ParamDistribution::UniformMin(p_min),
            ParamDistribution::UniformMin(q_min),
            k,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.d_p.validate("d_p")?;
        self.d_q.validate("d_q")
    }

    pub fn is_point_mass(&self) -> bool {
        self.d_p.is_point_mass() && self.d_q.is_point_mass()
    }
}

#[inline]
pub fn sample_params<R: Rng + ?Sized>(
    d_p: &ParamDistribution,
    d_q: &ParamDistribution,
    rng: &mut R,
) -> NodeParams {
    let p = d_p.sample(rng);
    let q = d_q.sample(rng);
    NodeParams { p, q }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub params: NodeParams,
    /// Round in which the node joined the tree.
    pub tau: u32,
    pub infected: bool,
    pub stabilized: bool,
    pub queried: bool,
    first_child: Option<NodeId>,
    last_child: Option<NodeId>,
    next_sibling: Option<NodeId>,
}

/// The growing tree. Nodes are stored in creation order; `NodeId(0)` is the
/// root.
#[derive(Clone, Debug)]
pub struct InfectionTree {
    nodes: Vec<Node>,
    /// Infected nodes that may still be unstabilized; compacted lazily.
    active: Vec<NodeId>,
    active_infected: usize,
    total_infected: usize,
    t: u32,
    d_p: ParamDistribution,
    d_q: ParamDistribution,
}

impl InfectionTree {
    /// A tree holding only the root at `t = 0`. The root is infected with
    /// probability equal to its own sampled `p`.
    pub fn init<R: Rng + ?Sized>(instance: &Instance, rng: &mut R) -> Self {
        let params = sample_params(&instance.d_p, &instance.d_q, rng);
        let infected = bernoulli(rng, params.p);
        let mut tree = Self {
            nodes: Vec::with_capacity(32),
            active: Vec::with_capacity(16),
            active_infected: 0,
            total_infected: 0,
            t: 0,
            d_p: instance.d_p,
            d_q: instance.d_q,
        };
        tree.push_node(None, params, infected);
        tree
    }

    fn push_node(&mut self, parent: Option<NodeId>, params: NodeParams, infected: bool) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node {
            id,
            parent,
            params,
            tau: self.t,
            infected,
            stabilized: false,
            queried: false,
            first_child: None,
            last_child: None,
            next_sibling: None,
        });
        if let Some(parent) = parent {
            let prev_last = self.nodes[parent.index()].last_child.replace(id);
            match prev_last {
                Some(prev) => self.nodes[prev.index()].next_sibling = Some(id),
                None => self.nodes[parent.index()].first_child = Some(id),
            }
        }
        if infected {
            self.active.push(id);
            self.active_infected += 1;
            self.total_infected += 1;
        }
        id
    }

    /// One round of the infection process.
    ///
    /// Advances `t`; every active infected node meets a contact with
    /// probability `q` and infects it with probability `p`. Nodes born in
    /// this round do not act until the next one.
    pub fn infection_round<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.t += 1;
        let nodes = &self.nodes;
        self.active.retain(|id| !nodes[id.index()].stabilized);
        let spreaders = self.active.len();
        for i in 0..spreaders {
            let id = self.active[i];
            let NodeParams { p, q } = self.nodes[id.index()].params;
            if !bernoulli(rng, q) {
                continue;
            }
            let infected = bernoulli(rng, p);
            let params = sample_params(&self.d_p, &self.d_q, rng);
            self.push_node(Some(id), params, infected);
        }
    }

    /// Runs the uninhibited head start: rounds `1..k`, leaving `t = k - 1`,
    /// the state the tracer finds at the start of step `k`.
    pub fn grow_uninhibited<R: Rng + ?Sized>(&mut self, k: u32, rng: &mut R) -> Result<()> {
        if k < 1 {
            return Err(Error::invalid("k", "the head start needs k >= 1"));
        }
        if self.t != 0 {
            return Err(Error::invalid("t", "head start must begin at t = 0"));
        }
        for _ in 1..k {
            self.infection_round(rng);
        }
        Ok(())
    }

    /// Marks a node as queried; infected nodes are also stabilized.
    pub(crate) fn mark_queried(&mut self, id: NodeId) -> bool {
        let node = &mut self.nodes[id.index()];
        debug_assert!(!node.queried, "{id} queried twice");
        node.queried = true;
        if node.infected {
            node.stabilized = true;
            self.active_infected -= 1;
        }
        node.infected
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn children(&self, id: NodeId) -> Children<'_> {
        Children {
            tree: self,
            next: self.nodes[id.index()].first_child,
        }
    }

    /// Infected, unstabilized nodes.
    pub fn active_infected(&self) -> usize {
        self.active_infected
    }

    pub fn total_infected(&self) -> usize {
        self.total_infected
    }

    /// Number of stored nodes: infected nodes and their children.
    pub fn materialized_size(&self) -> usize {
        self.nodes.len()
    }

    /// Recounts active infections by a full scan.
    pub fn count_active_infected(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.infected && !n.stabilized)
            .count()
    }
}

pub struct Children<'a> {
    tree: &'a InfectionTree,
    next: Option<NodeId>,
}

impl Iterator for Children<'_> {
    type Item = NodeId;

    fn next(&mut self) -> Option<NodeId> {
        let id = self.next?;
        self.next = self.tree.nodes[id.index()].next_sibling;
        Some(id)
    }
}
