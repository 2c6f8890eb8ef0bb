//! Exact containment probabilities by exhaustive enumeration.
//!
//! Self-contained: nothing here touches the simulator. The process state
//! is reduced to what can still influence the outcome: the subtrees hanging
//! below the tracer's frontier (infection flags, and taus relative to the
//! current round) and the materialized-node count. Every Bernoulli outcome and
//! every tie choice is branched on with its exact weight.

use std::collections::HashMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OraclePolicy {
    /// Oldest frontier entry first.
    Ascending,
    /// Newest frontier entry first.
    Descending,
    /// Any frontier entry, uniformly (also what descending-p and
    /// descending-q reduce to when every node shares p and q).
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct Sub {
    /// Arrival round minus the current round.
    tau: i32,
    infected: bool,
    /// Sorted; only infected, unqueried nodes have children.
    kids: Vec<Sub>,
}

impl Sub {
    fn leaf(tau: i32, infected: bool) -> Self {
        Sub { tau, infected, kids: Vec::new() }
    }

    fn infected_count(&self) -> usize {
        usize::from(self.infected) + self.kids.iter().map(Sub::infected_count).sum::<usize>()
    }

    /// Sorts children recursively and moves every tau back by `shift`.
    fn normalize(&mut self, shift: i32) {
        self.tau -= shift;
        for k in &mut self.kids {
            k.normalize(shift);
        }
        self.kids.sort();
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct State {
    materialized: usize,
    /// Sorted frontier subtrees.
    frontier: Vec<Sub>,
}

#[derive(Clone, Copy, Debug)]
pub struct OracleConfig {
    pub p: f64,
    pub q: f64,
    pub k: u32,
    pub z_c: usize,
    pub z_t: usize,
}

pub struct Oracle {
    config: OracleConfig,
    policy: OraclePolicy,
    memo: HashMap<State, f64>,
}

/// Every way one round can go for the infected nodes of a forest, with
/// probabilities. Each infected unqueried node adds nothing, an uninfected
/// child or an infected child with relative tau 1.
fn grow(forest: &[Sub], p: f64, q: f64) -> Vec<(f64, Vec<Sub>, usize)> {
    let mut out = vec![(1.0, Vec::new(), 0usize)];
    for tree in forest {
        let options = grow_tree(tree, p, q);
        let mut next = Vec::with_capacity(out.len() * options.len());
        for (w, acc, born) in &out {
            for (w2, sub, born2) in &options {
                let mut acc = acc.clone();
                acc.push(sub.clone());
                next.push((w * w2, acc, born + born2));
            }
        }
        out = next;
    }
    out
}

fn grow_tree(tree: &Sub, p: f64, q: f64) -> Vec<(f64, Sub, usize)> {
    let kid_options = grow(&tree.kids, p, q);
    let mut out = Vec::new();
    for (w, kids, born) in kid_options {
        let base = Sub { tau: tree.tau, infected: tree.infected, kids };
        if !tree.infected {
            out.push((w, base, born));
            continue;
        }
        let branches = [
            (1.0 - q, None),
            (q * (1.0 - p), Some(false)),
            (q * p, Some(true)),
        ];
        for (w2, child) in branches {
            if w2 == 0.0 {
                continue;
            }
            let mut sub = base.clone();
            let mut b = born;
            if let Some(infected) = child {
                sub.kids.push(Sub::leaf(1, infected));
                b += 1;
            }
            out.push((w * w2, sub, b));
        }
    }
    out
}

impl Oracle {
    pub fn new(config: OracleConfig, policy: OraclePolicy) -> Self {
        assert!(config.k >= 1);
        Oracle { config, policy, memo: HashMap::new() }
    }

    /// Probability that a trial ends contained.
    pub fn containment(&mut self) -> f64 {
        let c = self.config;
        let mut total = 0.0;
        for (w, infected) in [(c.p, true), (1.0 - c.p, false)] {
            if w == 0.0 {
                continue;
            }
            total += w * self.head_start(Sub::leaf(0, infected), 1, c.k - 1);
        }
        total
    }

    /// `rounds` uninhibited rounds, then tracing.
    fn head_start(&mut self, root: Sub, materialized: usize, rounds: u32) -> f64 {
        let c = self.config;
        if rounds == 0 {
            return self.trace(State { materialized, frontier: vec![root] });
        }
        let mut total = 0.0;
        for (w, mut forest, born) in grow(std::slice::from_ref(&root), c.p, c.q) {
            let mut root = forest.pop().unwrap();
            let m = materialized + born;
            if root.infected_count() > c.z_c || m > c.z_t {
                continue;
            }
            root.normalize(1);
            total += w * self.head_start(root, m, rounds - 1);
        }
        total
    }

    /// Containment probability from the start of a tracing step.
    fn trace(&mut self, state: State) -> f64 {
        if state.frontier.is_empty() {
            return 1.0;
        }
        if let Some(&v) = self.memo.get(&state) {
            return v;
        }
        let choices: Vec<usize> = match self.policy {
            OraclePolicy::Ascending => {
                let best = state.frontier.iter().map(|s| s.tau).min().unwrap();
                (0..state.frontier.len()).filter(|&i| state.frontier[i].tau == best).collect()
            }
            OraclePolicy::Descending => {
                let best = state.frontier.iter().map(|s| s.tau).max().unwrap();
                (0..state.frontier.len()).filter(|&i| state.frontier[i].tau == best).collect()
            }
            OraclePolicy::Uniform => (0..state.frontier.len()).collect(),
        };
        let share = 1.0 / choices.len() as f64;
        let mut total = 0.0;
        for i in choices {
            let mut frontier = state.frontier.clone();
            let picked = frontier.remove(i);
            if picked.infected {
                frontier.extend(picked.kids);
            }
            total += share * self.after_query(state.materialized, frontier);
        }
        self.memo.insert(state, total);
        total
    }

    fn after_query(&mut self, materialized: usize, frontier: Vec<Sub>) -> f64 {
        let c = self.config;
        let mut total = 0.0;
        for (w, mut forest, born) in grow(&frontier, c.p, c.q) {
            let m = materialized + born;
            let active: usize = forest.iter().map(Sub::infected_count).sum();
            if active > c.z_c || m > c.z_t {
                continue;
            }
            for s in &mut forest {
                s.normalize(1);
            }
            forest.sort();
            total += w * self.trace(State { materialized: m, frontier: forest });
        }
        total
    }
}

pub fn exact_containment(config: OracleConfig, policy: OraclePolicy) -> f64 {
    Oracle::new(config, policy).containment()
}
