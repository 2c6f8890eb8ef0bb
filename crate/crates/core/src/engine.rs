//! Complete trials and batches of trials.
//!
//! A trial runs the head start, then alternates one query with one
//! infection round until it reaches one of three terminal states:
//! contained (empty frontier), not contained (more than `z_c` active
//! infections) or non-converged (more than `z_t` stored nodes).

use std::fmt;
use std::ops::AddAssign;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contagion::{Instance, InfectionTree};
use crate::error::{Error, Result};
use crate::policy::{query_at, select, Frontier, FrontierEntry, PolicyKind};
use crate::rng::{derive_seed, stream};

pub const DEFAULT_Z_C: usize = 10;
pub const DEFAULT_Z_T: usize = 1000;

/// Termination thresholds. Both comparisons are strict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Active infections above this mean the trial is not contained.
    pub z_c: usize,
    /// Stored nodes above this mean the trial did not converge.
    pub z_t: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            z_c: DEFAULT_Z_C,
            z_t: DEFAULT_Z_T,
        }
    }
}

impl Thresholds {
    pub fn new(z_c: usize, z_t: usize) -> Result<Self> {
        if z_c < 1 {
            return Err(Error::invalid("z_c", "must be at least 1"));
        }
        if z_t < z_c {
            return Err(Error::invalid("z_t", format!("must be at least z_c = {z_c}")));
        }
        Ok(Self { z_c, z_t })
    }
}

#[derive(Clone, Debug)]
pub struct TrialConfig {
    pub instance: Instance,
    pub policy: PolicyKind,
    pub thresholds: Thresholds,
    pub seed: u64,
}

impl TrialConfig {
    pub fn new(instance: Instance, policy: PolicyKind, seed: u64) -> Self {
        Self {
            instance,
            policy,
            thresholds: Thresholds::default(),
            seed,
        }
    }

    pub fn with_thresholds(mut self, thresholds: Thresholds) -> Self {
        self.thresholds = thresholds;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.instance.validate()?;
        if self.instance.k < 1 {
            return Err(Error::invalid("k", "tracing must start at k >= 1"));
        }
        Thresholds::new(self.thresholds.z_c, self.thresholds.z_t).map(|_| ())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrialState {
    Contained,
    NotContained,
    NonConverged,
}

impl TrialState {
    /// +1 for containment, -1 for every other terminal state.
    pub fn reward(self) -> i64 {
        match self {
            TrialState::Contained => 1,
            TrialState::NotContained | TrialState::NonConverged => -1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrialState::Contained => "contained",
            TrialState::NotContained => "not-contained",
            TrialState::NonConverged => "non-converged",
        }
    }
}

impl fmt::Display for TrialState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub state: TrialState,
    /// Value of `t` at termination.
    pub rounds: u32,
    pub queries: u32,
    pub total_infected: usize,
    pub peak_active_infected: usize,
}

/// One tracing step, as recorded by [`Trial::run_traced`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u32,
    pub queried: FrontierEntry,
    pub infected: bool,
    pub revealed: usize,
    /// Frontier arrival times after the query.
    pub frontier_taus: Vec<u32>,
    /// Active infections after this step's infection round.
    pub active_infected: usize,
    pub materialized: usize,
}

/// A trial in progress: the full hidden state plus the tracer's frontier.
#[derive(Clone, Debug)]
pub struct Trial {
    tree: InfectionTree,
    frontier: Frontier,
    thresholds: Thresholds,
    queries: u32,
    peak_active: usize,
    finished: Option<TrialState>,
}

impl Trial {
    /// Grows the head start and puts the root in the frontier. The head
    /// start itself may already end the trial.
    pub fn start<R: Rng + ?Sized>(instance: &Instance, thresholds: Thresholds, rng: &mut R) -> Self {
        let tree = InfectionTree::init(instance, rng);
        let mut trial = Self {
            peak_active: tree.active_infected(),
            frontier: Frontier::with_root(&tree),
            tree,
            thresholds,
            queries: 0,
            finished: None,
        };
        for _ in 1..instance.k.max(1) {
            trial.tree.infection_round(rng);
            trial.finished = trial.check_after_round();
            if trial.finished.is_some() {
                break;
            }
        }
        trial
    }

    #[inline]
    fn check_after_round(&mut self) -> Option<TrialState> {
        let active = self.tree.active_infected();
        self.peak_active = self.peak_active.max(active);
        if active > self.thresholds.z_c {
            Some(TrialState::NotContained)
        } else if self.tree.materialized_size() > self.thresholds.z_t {
            Some(TrialState::NonConverged)
        } else if self.frontier.is_empty() {
            Some(TrialState::Contained)
        } else {
            None
        }
    }

    pub fn tree(&self) -> &InfectionTree {
        &self.tree
    }

    pub fn frontier(&self) -> &Frontier {
        &self.frontier
    }

    pub fn queries(&self) -> u32 {
        self.queries
    }

    /// The step about to be taken (the tracer queries at step `t + 1`).
    pub fn step_index(&self) -> u32 {
        self.tree.t() + 1
    }

    pub fn finished(&self) -> Option<TrialState> {
        self.finished
    }

    /// Queries the frontier entry at `index`, then runs one infection round.
    pub fn step_at<R: Rng + ?Sized>(&mut self, index: usize, rng: &mut R) -> Option<TrialState> {
        debug_assert!(self.finished.is_none(), "stepping a finished trial");
        query_at(&mut self.tree, &mut self.frontier, index);
        self.queries += 1;
        self.tree.infection_round(rng);
        self.finished = self.check_after_round();
        self.finished
    }

    pub fn step<R: Rng + ?Sized>(&mut self, policy: &PolicyKind, rng: &mut R) -> Option<TrialState> {
        let index = select(policy, &self.frontier, self.step_index(), rng);
        self.step_at(index, rng)
    }

    /// Runs to a terminal state.
    pub fn run<R: Rng + ?Sized>(&mut self, policy: &PolicyKind, rng: &mut R) -> TrialOutcome {
        while self.finished.is_none() {
            self.step(policy, rng);
        }
        self.outcome()
    }

    /// Like [`Trial::run`], recording every step.
    pub fn run_traced<R: Rng + ?Sized>(
        &mut self,
        policy: &PolicyKind,
        rng: &mut R,
    ) -> (TrialOutcome, Vec<StepRecord>) {
        let mut records = Vec::new();
        while self.finished.is_none() {
            let step = self.step_index();
            let index = select(policy, &self.frontier, step, rng);
            let queried = self.frontier.entries()[index];
            let before = self.frontier.len() - 1;
            let (infected, revealed) = query_at(&mut self.tree, &mut self.frontier, index);
            debug_assert_eq!(self.frontier.len(), before + revealed);
            let frontier_taus = self.frontier.taus();
            self.queries += 1;
            self.tree.infection_round(rng);
            self.finished = self.check_after_round();
            records.push(StepRecord {
                step,
                queried,
                infected,
                revealed,
                frontier_taus,
                active_infected: self.tree.active_infected(),
                materialized: self.tree.materialized_size(),
            });
        }
        (self.outcome(), records)
    }

    /// # Panics
    /// If the trial has not finished.
    pub fn outcome(&self) -> TrialOutcome {
        TrialOutcome {
            state: self.finished.expect("trial has not finished"),
            rounds: self.tree.t(),
            queries: self.queries,
            total_infected: self.tree.total_infected(),
            peak_active_infected: self.peak_active,
        }
    }
}

/// Runs one trial; a pure function of `config`.
pub fn run_trial(config: &TrialConfig) -> Result<TrialOutcome> {
    config.validate()?;
    Ok(run_seeded(&config.instance, &config.policy, config.thresholds, config.seed))
}

/// Runs one trial and returns its step log.
pub fn run_trial_traced(config: &TrialConfig) -> Result<(TrialOutcome, Vec<StepRecord>)> {
    config.validate()?;
    let mut rng = stream(config.seed);
    let mut trial = Trial::start(&config.instance, config.thresholds, &mut rng);
    Ok(trial.run_traced(&config.policy, &mut rng))
}

#[inline]
fn run_seeded(instance: &Instance, policy: &PolicyKind, thresholds: Thresholds, seed: u64) -> TrialOutcome {
    let mut rng = stream(seed);
    Trial::start(instance, thresholds, &mut rng).run(policy, &mut rng)
}

/// Aggregated terminal-state counts. Merging is commutative, so batches
/// give the same summary under any scheduling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub n: u64,
    pub contained: u64,
    pub not_contained: u64,
    pub non_converged: u64,
    /// Sum of per-trial rewards (+1 contained, -1 otherwise).
    pub reward_sum: i64,
}

impl BatchSummary {
    pub fn record(&mut self, outcome: &TrialOutcome) {
        self.n += 1;
        match outcome.state {
            TrialState::Contained => self.contained += 1,
            TrialState::NotContained => self.not_contained += 1,
            TrialState::NonConverged => self.non_converged += 1,
        }
        self.reward_sum += outcome.state.reward();
    }

    pub fn observed_containment(&self) -> f64 {
        observed_containment(self)
    }

    /// `(R + 1) / 2` for the mean reward `R`.
    pub fn containment_from_reward(&self) -> f64 {
        (self.reward_sum as f64 / self.n as f64 + 1.0) / 2.0
    }
}

impl AddAssign for BatchSummary {
    fn add_assign(&mut self, other: Self) {
        self.n += other.n;
        self.contained += other.contained;
        self.not_contained += other.not_contained;
        self.non_converged += other.non_converged;
        self.reward_sum += other.reward_sum;
    }
}

/// Fraction of trials that ended contained.
///
/// # Panics
/// If the batch is empty.
pub fn observed_containment(batch: &BatchSummary) -> f64 {
    assert!(batch.n >= 1, "observed containment of an empty batch");
    batch.contained as f64 / batch.n as f64
}

/// Trials per parallel work item. Work items are indexed ranges, so the
/// grouping never changes which seed a trial gets.
const CHUNK: u64 = 2048;

/// Runs `n` trials; trial `i` is seeded with `derive_seed(master_seed, i)`.
/// Runs on the current rayon pool; results do not depend on its size.
pub fn run_batch(template: &TrialConfig, n: u64, master_seed: u64) -> Result<BatchSummary> {
    template.validate()?;
    if n < 1 {
        return Err(Error::invalid("n", "a batch needs at least one trial"));
    }
    let chunks = n.div_ceil(CHUNK);
    let summary = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = BatchSummary::default();
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let outcome = run_seeded(
                    &template.instance,
                    &template.policy,
                    template.thresholds,
                    derive_seed(master_seed, i),
                );
                acc.record(&outcome);
            }
            acc
        })
        .reduce(BatchSummary::default, |mut a, b| {
            a += b;
            a
        });
    Ok(summary)
}

/// Runs `f` on a dedicated pool with `threads` workers (0 = rayon default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
