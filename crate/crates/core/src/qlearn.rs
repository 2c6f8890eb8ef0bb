//! Tabular Q-learning over truncated partial states.
//!
//! With point-mass parameters the tracer can only tell frontier nodes apart
//! by arrival time, so the table is keyed by the multiset of frontier
//! arrival times plus the current step, and an action is an arrival time.
//! Episodes are cut short at small limits; a truncated episode is scored by
//! the mean reward of full rollouts under a fixed terminal policy.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::contagion::Instance;
use crate::engine::{run_batch, BatchSummary, Thresholds, Trial, TrialConfig};
use crate::error::{Error, Result};
use crate::policy::{Frontier, PolicyKind};
use crate::rng::{bernoulli, derive_seed, stream};

/// Partial-state limits. A state past any of them is outside the table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationLimits {
    pub max_t: u32,
    pub max_frontier: usize,
    pub max_tau: u32,
}

impl Default for TruncationLimits {
    fn default() -> Self {
        Self {
            max_t: 4,
            max_frontier: 3,
            max_tau: 3,
        }
    }
}

impl TruncationLimits {
    /// Taus must be sorted.
    fn admits(&self, taus: &[u32], t: u32) -> bool {
        t <= self.max_t
            && taus.len() <= self.max_frontier
            && taus.last().is_none_or(|&max| max <= self.max_tau)
    }

    /// Upper bound on distinct partial states inside the limits: multisets
    /// of at most `max_frontier` values from `0..=max_tau`, times the
    /// admissible values of `t`.
    pub fn state_space_cap(&self) -> u128 {
        let values = self.max_tau as u128 + 1;
        let multisets: u128 = (0..=self.max_frontier as u128)
            .map(|size| binomial(values + size - 1, size))
            .sum();
        multisets * (self.max_t as u128 + 1)
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// `(frontier arrival-time multiset, step)`; taus are kept sorted so equal
/// multisets are equal keys.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PartialState {
    taus: Vec<u32>,
    t: u32,
}

impl PartialState {
    pub fn new(mut taus: Vec<u32>, t: u32) -> Self {
        taus.sort_unstable();
        Self { taus, t }
    }

    pub fn of(frontier: &Frontier, t: u32) -> Self {
        Self {
            taus: frontier.taus(),
            t,
        }
    }

    pub fn taus(&self) -> &[u32] {
        &self.taus
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    /// Distinct arrival times, ascending.
    fn actions(&self) -> impl Iterator<Item = u32> + '_ {
        let mut prev = None;
        self.taus.iter().copied().filter(move |&tau| {
            let fresh = prev != Some(tau);
            prev = Some(tau);
            fresh
        })
    }

    fn encode_taus(&self) -> String {
        let mut out = String::new();
        for (i, tau) in self.taus.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{tau}");
        }
        out
    }
}

/// Action values per partial state. Missing entries read as zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VTable {
    rows: BTreeMap<PartialState, BTreeMap<u32, f64>>,
}

impl VTable {
    pub fn get(&self, state: &PartialState, action: u32) -> f64 {
        self.rows
            .get(state)
            .and_then(|row| row.get(&action))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn contains_state(&self, state: &PartialState) -> bool {
        self.rows.contains_key(state)
    }

    pub fn row(&self, state: &PartialState) -> Option<&BTreeMap<u32, f64>> {
        self.rows.get(state)
    }

    pub fn state_count(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.values().map(BTreeMap::len).sum()
    }

    /// Records `V(s, a) = value`; `a` must be an arrival time in `s`.
    pub fn set(&mut self, state: PartialState, action: u32, value: f64) -> Result<()> {
        if !state.taus.contains(&action) {
            return Err(Error::invalid(
                "action",
                format!("tau {action} is not in frontier {:?}", state.taus),
            ));
        }
        self.rows.entry(state).or_default().insert(action, value);
        Ok(())
    }

    /// `max_a V(s, a)` over the actions of `s`; zero for an empty frontier.
    pub fn max_value(&self, state: &PartialState) -> f64 {
        state
            .actions()
            .map(|a| self.get(state, a))
            .fold(None, |best: Option<f64>, v| Some(best.map_or(v, |b| b.max(v))))
            .unwrap_or(0.0)
    }

    /// Writes `state_taus;t;action_tau;value` lines in sorted order.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        for (state, row) in &self.rows {
            let taus = state.encode_taus();
            for (action, value) in row {
                writeln!(out, "{taus};{};{action};{value}", state.t)?;
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("table text is ASCII")
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut table = VTable::default();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: &str| Error::Parse {
                what: "value table",
                line: i + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split(';').collect();
            let [taus, t, action, value] = fields[..] else {
                return Err(bad("expected 4 `;`-separated fields"));
            };
            let taus = if taus.is_empty() {
                Vec::new()
            } else {
                taus.split(',')
                    .map(|s| s.parse::<u32>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad("bad arrival time"))?
            };
            let t = t.parse().map_err(|_| bad("bad step"))?;
            let action = action.parse().map_err(|_| bad("bad action"))?;
            let value: f64 = value.parse().map_err(|_| bad("bad value"))?;
            table
                .set(PartialState::new(taus, t), action, value)
                .map_err(|e| bad(&e.to_string()))?;
        }
        Ok(table)
    }
}

/// Hyperparameters for [`train`].
#[derive(Clone, Debug)]
pub struct QConfig {
    pub eps: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub episodes: u64,
    pub limits: TruncationLimits,
    pub rollouts: u32,
    pub terminal: PolicyKind,
    pub thresholds: Thresholds,
}

impl Default for QConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            alpha: 0.1,
            gamma: 0.6,
            episodes: 1_000_000,
            limits: TruncationLimits::default(),
            rollouts: 100,
            terminal: PolicyKind::DescendingTime,
            thresholds: Thresholds::default(),
        }
    }
}

impl QConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eps", self.eps), ("alpha", self.alpha), ("gamma", self.gamma)] {
            crate::error::check_probability(name, v)?;
        }
        if self.rollouts < 1 {
            return Err(Error::invalid("rollouts", "at least one rollout"));
        }
        if !matches!(self.terminal, PolicyKind::AscendingTime | PolicyKind::DescendingTime) {
            return Err(Error::invalid("terminal", "must be ascending-time or descending-time"));
        }
        Thresholds::new(self.thresholds.z_c, self.thresholds.z_t).map(|_| ())
    }
}

/// `V(s,a) <- (1 - alpha) V(s,a) + alpha (r + gamma max_a' V(s',a'))`.
/// A terminal transition passes `next = None`.
pub fn q_update(
    table: &mut VTable,
    state: &PartialState,
    action: u32,
    reward: f64,
    next: Option<&PartialState>,
    alpha: f64,
    gamma: f64,
) -> Result<()> {
    let future = next.map_or(0.0, |s| table.max_value(s));
    let old = table.get(state, action);
    table.set(
        state.clone(),
        action,
        (1.0 - alpha) * old + alpha * (reward + gamma * future),
    )
}

/// Greedy arrival time for `state`, uniform over ties.
fn greedy_tau<R: Rng + ?Sized>(table: &VTable, state: &PartialState, rng: &mut R) -> u32 {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    let mut ties = 0u32;
    for action in state.actions() {
        let v = table.get(state, action);
        if v > best_value {
            best = action;
            best_value = v;
            ties = 1;
        } else if v == best_value {
            ties += 1;
            if rng.gen_range(0..ties) == 0 {
                best = action;
            }
        }
    }
    best
}

/// Uniform frontier index among entries with arrival time `tau`.
fn entry_with_tau<R: Rng + ?Sized>(frontier: &Frontier, tau: u32, rng: &mut R) -> usize {
    let mut chosen = usize::MAX;
    let mut seen = 0u32;
    for (i, entry) in frontier.entries().iter().enumerate() {
        if entry.tau == tau {
            seen += 1;
            if seen == 1 || rng.gen_range(0..seen) == 0 {
                chosen = i;
            }
        }
    }
    debug_assert!(seen > 0, "tau {tau} not in frontier");
    chosen
}

/// Frontier index chosen by the table, or `None` when the state is outside
/// the trained state space (past the limits or never visited).
pub fn learned_select<R: Rng + ?Sized>(
    table: &VTable,
    limits: &TruncationLimits,
    frontier: &Frontier,
    t: u32,
    rng: &mut R,
) -> Option<usize> {
    let state = PartialState::of(frontier, t);
    if !limits.admits(&state.taus, t) || !table.contains_state(&state) {
        return None;
    }
    let tau = greedy_tau(table, &state, rng);
    Some(entry_with_tau(frontier, tau, rng))
}

/// Mean reward of `rollouts` copies of `trial` run to completion.
fn rollout_reward<R: Rng + ?Sized>(trial: &Trial, config: &QConfig, rng: &mut R) -> f64 {
    let base = rng.gen::<u64>();
    let total: i64 = (0..config.rollouts as u64)
        .map(|j| {
            let mut copy = trial.clone();
            let mut r = stream(derive_seed(base, j));
            copy.run(&config.terminal, &mut r).state.reward()
        })
        .sum();
    total as f64 / config.rollouts as f64
}

/// A training decision, as passed to [`train_observed`].
#[derive(Clone, Debug)]
pub struct Decision<'a> {
    pub state: &'a PartialState,
    pub frontier: &'a Frontier,
    pub chosen: usize,
    pub explored: bool,
}

pub fn train(instance: &Instance, config: &QConfig, master_seed: u64) -> Result<VTable> {
    train_observed(instance, config, master_seed, |_| {})
}

/// [`train`], calling `observe` before every action is taken.
pub fn train_observed(
    instance: &Instance,
    config: &QConfig,
    master_seed: u64,
    mut observe: impl FnMut(&Decision<'_>),
) -> Result<VTable> {
    instance.validate()?;
    config.validate()?;
    if !instance.is_point_mass() {
        return Err(Error::invalid(
            "instance",
            "Q-learning over arrival times needs point-mass parameters",
        ));
    }
    let mut table = VTable::default();
    for episode in 0..config.episodes {
        let mut rng = stream(derive_seed(master_seed, episode));
        let mut trial = Trial::start(instance, config.thresholds, &mut rng);
        if trial.finished().is_some() {
            continue;
        }
        let mut state = PartialState::of(trial.frontier(), trial.step_index());
        if !config.limits.admits(&state.taus, state.t) {
            continue;
        }
        loop {
            let explored = bernoulli(&mut rng, config.eps);
            let chosen = if explored {
                rng.gen_range(0..trial.frontier().len())
            } else {
                let tau = greedy_tau(&table, &state, &mut rng);
                entry_with_tau(trial.frontier(), tau, &mut rng)
            };
            observe(&Decision {
                state: &state,
                frontier: trial.frontier(),
                chosen,
                explored,
            });
            let action = trial.frontier().entries()[chosen].tau;
            if let Some(end) = trial.step_at(chosen, &mut rng) {
                let reward = end.reward() as f64;
                q_update(&mut table, &state, action, reward, None, config.alpha, config.gamma)?;
                break;
            }
            let next = PartialState::of(trial.frontier(), trial.step_index());
            if !config.limits.admits(&next.taus, next.t) {
                let reward = rollout_reward(&trial, config, &mut rng);
                q_update(&mut table, &state, action, reward, None, config.alpha, config.gamma)?;
                break;
            }
            q_update(&mut table, &state, action, 0.0, Some(&next), config.alpha, config.gamma)?;
            state = next;
        }
    }
    Ok(table)
}

/// Result of [`evaluate`]: the batch and both containment readings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub summary: BatchSummary,
    /// `contained / n`.
    pub containment: f64,
    /// `(mean reward + 1) / 2`.
    pub from_reward: f64,
}

/// Evaluates `policy` over `n` engine trials.
pub fn evaluate(
    policy: &PolicyKind,
    instance: &Instance,
    thresholds: Thresholds,
    n: u64,
    master_seed: u64,
) -> Result<Evaluation> {
    let template = TrialConfig::new(*instance, policy.clone(), 0).with_thresholds(thresholds);
    let summary = run_batch(&template, n, master_seed)?;
    // (R + 1) / 2 = contained / n  <=>  reward_sum + n = 2 contained
    if summary.reward_sum + summary.n as i64 != 2 * summary.contained as i64 {
        return Err(Error::Contract(format!(
            "reward sum {} inconsistent with {} contained of {}",
            summary.reward_sum, summary.contained, summary.n
        )));
    }
    Ok(Evaluation {
        summary,
        containment: summary.observed_containment(),
        from_reward: summary.containment_from_reward(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contagion::NodeId;
    use crate::policy::{FrontierEntry, LearnedPolicy};
    use std::sync::Arc;

    fn state(taus: &[u32], t: u32) -> PartialState {
        PartialState::new(taus.to_vec(), t)
    }

    fn frontier(taus: &[u32]) -> Frontier {
        Frontier::from_entries(
            taus.iter()
                .enumerate()
                .map(|(i, &tau)| FrontierEntry {
                    node: NodeId(i as u32 + 1),
                    p: 0.5,
                    q: 0.5,
                    tau,
                })
                .collect(),
        )
    }

    #[test]
    fn canonical_state_keys() {
        assert_eq!(state(&[2, 1, 2], 4), state(&[1, 2, 2], 4));
        assert_eq!(state(&[2, 1, 2], 4).actions().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn update_terminal_reward() {
        let mut v = VTable::default();
        let s = state(&[0], 3);
        q_update(&mut v, &s, 0, 1.0, None, 0.1, 0.6).unwrap();
        assert!((v.get(&s, 0) - 0.1).abs() < 1e-15);
        let empty = state(&[], 4);
        q_update(&mut v, &s, 0, 1.0, Some(&empty), 0.1, 0.6).unwrap();
        assert!((v.get(&s, 0) - 0.19).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_is_inert() {
        let mut v = VTable::default();
        let s = state(&[1, 2], 4);
        v.set(s.clone(), 2, 0.3).unwrap();
        let next = state(&[2, 3], 5);
        v.set(next.clone(), 3, 5.0).unwrap();
        q_update(&mut v, &s, 2, 7.0, Some(&next), 0.0, 0.6).unwrap();
        assert_eq!(v.get(&s, 2), 0.3);
    }

    #[test]
    fn update_bootstraps_from_next_max() {
        let mut v = VTable::default();
        let s = state(&[1, 2], 4);
        let next = state(&[1, 3], 5);
        v.set(s.clone(), 1, 0.5).unwrap();
        v.set(next.clone(), 1, 0.2).unwrap();
        v.set(next.clone(), 3, 1.0).unwrap();
        q_update(&mut v, &s, 1, 0.0, Some(&next), 0.1, 0.6).unwrap();
        assert!((v.get(&s, 1) - 0.51).abs() < 1e-12);
    }

    #[test]
    fn invalid_action_rejected() {
        let mut v = VTable::default();
        assert!(q_update(&mut v, &state(&[1, 2], 4), 3, 1.0, None, 0.1, 0.6).is_err());
    }

    #[test]
    fn learned_select_argmax_and_delegation() {
        let limits = TruncationLimits::default();
        let mut v = VTable::default();
        let s = state(&[1, 2], 4);
        v.set(s.clone(), 1, 0.2).unwrap();
        v.set(s.clone(), 2, 0.7).unwrap();
        let f = frontier(&[1, 2]);
        let mut rng = stream(1);
        for _ in 0..20 {
            let i = learned_select(&v, &limits, &f, 4, &mut rng).unwrap();
            assert_eq!(f.entries()[i].tau, 2);
        }
        // unseen state and out-of-limits state delegate
        assert_eq!(learned_select(&v, &limits, &frontier(&[1, 3]), 4, &mut rng), None);
        assert_eq!(learned_select(&v, &limits, &f, 5, &mut rng), None);

        let policy = PolicyKind::Learned(
            LearnedPolicy::new(Arc::new(v), PolicyKind::AscendingTime, limits).unwrap(),
        );
        for _ in 0..20 {
            let i = crate::policy::select(&policy, &frontier(&[1, 3]), 4, &mut rng);
            assert_eq!(i, 0);
        }
    }

    #[test]
    fn learned_select_uniform_over_taus_on_ties() {
        let limits = TruncationLimits::default();
        let mut v = VTable::default();
        let s = state(&[1, 2, 2], 4);
        v.set(s.clone(), 1, 0.0).unwrap();
        let f = frontier(&[1, 2, 2]);
        let mut rng = stream(2);
        let n = 10_000;
        let ones = (0..n)
            .filter(|_| f.entries()[learned_select(&v, &limits, &f, 4, &mut rng).unwrap()].tau == 1)
            .count();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.02, "{ones}");
    }

    #[test]
    fn table_text_round_trip() {
        let mut v = VTable::default();
        v.set(state(&[2, 1], 4), 1, -0.125).unwrap();
        v.set(state(&[0], 3), 0, 0.1 + 0.2).unwrap();
        v.set(state(&[], 5), 0, 1.0).unwrap_err();
        let text = v.to_text();
        assert_eq!(text, "0;3;0;0.30000000000000004\n1,2;4;1;-0.125\n");
        let back = VTable::read_from(text.as_bytes()).unwrap();
        assert_eq!(back, v);
        assert!(VTable::read_from("1;2;x;0.5\n".as_bytes()).is_err());
        assert!(VTable::read_from("1;2;3\n".as_bytes()).is_err());
        assert!(VTable::read_from("1;2;3;0.5\n".as_bytes()).is_err());
    }

    #[test]
    fn state_space_cap_value() {
        assert_eq!(TruncationLimits::default().state_space_cap(), 35 * 5);
    }

    #[test]
    fn zero_episodes_give_empty_table() {
        let config = QConfig {
            episodes: 0,
            ..QConfig::default()
        };
        let v = train(&Instance::point(0.5, 0.5, 3).unwrap(), &config, 1).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn heterogeneous_instance_rejected() {
        let config = QConfig {
            episodes: 1,
            ..QConfig::default()
        };
        assert!(train(&Instance::uniform(0.5, 0.5, 3).unwrap(), &config, 1).is_err());
        let bad = QConfig {
            terminal: PolicyKind::DescendingP,
            ..config
        };
        assert!(train(&Instance::point(0.5, 0.5, 3).unwrap(), &bad, 1).is_err());
    }

    #[test]
    fn certain_containment_converges_to_one() {
        let config = QConfig {
            episodes: 10_000,
            ..QConfig::default()
        };
        let v = train(&Instance::point(0.0, 0.5, 3).unwrap(), &config, 3).unwrap();
        let root = state(&[0], 3);
        assert!(v.get(&root, 0) >= 0.99);
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn table_stays_inside_limits() {
        let config = QConfig {
            episodes: 3_000,
            rollouts: 5,
            ..QConfig::default()
        };
        let limits = config.limits;
        let v = train(&Instance::point(0.8, 0.8, 3).unwrap(), &config, 4).unwrap();
        assert!((v.state_count() as u128) <= limits.state_space_cap());
        for (s, row) in &v.rows {
            assert!(limits.admits(&s.taus, s.t));
            for a in row.keys() {
                assert!(s.taus.contains(a));
            }
        }
    }

    #[test]
    fn full_exploration_is_uniform_over_entries() {
        let config = QConfig {
            eps: 1.0,
            episodes: 20_000,
            rollouts: 1,
            ..QConfig::default()
        };
        let mut picks = BTreeMap::<usize, (usize, usize)>::new();
        train_observed(&Instance::point(1.0, 1.0, 3).unwrap(), &config, 5, |d| {
            assert!(d.explored);
            let slot = picks.entry(d.frontier.len()).or_default();
            slot.0 += 1;
            if d.chosen == 0 {
                slot.1 += 1;
            }
        })
        .unwrap();
        // At p = q = 1 the second decision always sees two entries.
        let (n, first) = picks[&2];
        assert_eq!(n, 20_000);
        assert!((first as f64 / n as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn training_is_deterministic() {
        let config = QConfig {
            episodes: 500,
            rollouts: 10,
            ..QConfig::default()
        };
        let instance = Instance::point(0.7, 0.9, 3).unwrap();
        assert_eq!(
            train(&instance, &config, 9).unwrap().to_text(),
            train(&instance, &config, 9).unwrap().to_text()
        );
    }

    #[test]
    fn reward_conversion_identity() {
        let instance = Instance::point(0.0, 0.5, 3).unwrap();
        let e = evaluate(&PolicyKind::AscendingTime, &instance, Thresholds::default(), 200, 1).unwrap();
        assert_eq!((e.containment, e.from_reward), (1.0, 1.0));

        let instance = Instance::point(1.0, 1.0, 3).unwrap();
        let e = evaluate(&PolicyKind::DescendingTime, &instance, Thresholds::default(), 200, 1).unwrap();
        assert_eq!(e.summary.reward_sum, -200);
        assert_eq!((e.containment, e.from_reward), (0.0, 0.0));
    }
}
