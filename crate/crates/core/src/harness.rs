//! Grid sweeps comparing policies cell by cell.
//!
//! Two sweeps are provided. The two-policy sweep compares ascending-time
//! against descending-time on point-mass instances with a two-round
//! protocol: round 1 measures the gap `d`, and if `d` is large enough a
//! fresh round of `second_round_size(d)` trials per policy decides the
//! winner. The three-policy sweep compares descending-p, descending-q and
//! descending-time on uniform instances in a single round.
//!
//! Trial seeds derive from `(master seed, cell index, policy index, round)`,
//! so a cell's result does not depend on which other cells were run.

use std::fmt;
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::contagion::Instance;
use crate::engine::{run_batch, BatchSummary, Thresholds, TrialConfig};
use crate::error::{Error, Result};
use crate::policy::PolicyKind;
use crate::rng::derive_path;
use crate::stats::{second_round_size, three_coin_confidence, two_coin_confidence, ConfidenceReport, NoClaim};

pub const DEFAULT_D_THRESHOLD: f64 = 0.00035;
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.5;
/// Default cap on round-1 trials for a whole sweep.
pub const DEFAULT_BUDGET_CAP: u128 = 10_000_000_000;

pub const TWO_POLICIES: [PolicyKind; 2] = [PolicyKind::AscendingTime, PolicyKind::DescendingTime];
pub const THREE_POLICIES: [PolicyKind; 3] = [
    PolicyKind::DescendingP,
    PolicyKind::DescendingQ,
    PolicyKind::DescendingTime,
];

/// Grid coordinates are rounded to this many decimals so that
/// `start + i * step` prints cleanly.
const COORD_DECIMALS: i32 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepMode {
    TwoPolicy,
    ThreePolicy,
}

impl SweepMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepMode::TwoPolicy => "two-policy",
            SweepMode::ThreePolicy => "three-policy",
        }
    }

    pub fn policies(self) -> &'static [PolicyKind] {
        match self {
            SweepMode::TwoPolicy => &TWO_POLICIES,
            SweepMode::ThreePolicy => &THREE_POLICIES,
        }
    }
}

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-policy" => Ok(SweepMode::TwoPolicy),
            "three-policy" => Ok(SweepMode::ThreePolicy),
            other => Err(Error::invalid("mode", format!("unknown sweep mode `{other}`"))),
        }
    }
}

/// An inclusive arithmetic range `start, start + step, ..., <= stop`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Axis {
    pub fn new(start: f64, stop: f64, step: f64) -> Result<Self> {
        let axis = Self { start, stop, step };
        axis.validate()?;
        Ok(axis)
    }

    pub fn single(value: f64) -> Self {
        Self {
            start: value,
            stop: value,
            step: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::invalid("step", format!("{} must be positive", self.step)));
        }
        if !(self.start <= self.stop) {
            return Err(Error::invalid(
                "axis",
                format!("start {} exceeds stop {}", self.start, self.stop),
            ));
        }
        crate::error::check_probability("axis start", self.start)?;
        crate::error::check_probability("axis stop", self.stop)
    }

    pub fn len(&self) -> usize {
        // tolerate representation error in (stop - start) / step
        ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, i: usize) -> f64 {
        let scale = 10f64.powi(COORD_DECIMALS);
        ((self.start + i as f64 * self.step) * scale).round() / scale
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.value(i))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// `p` (or `p_min`) axis; the outer, slower-varying coordinate.
    pub p_axis: Axis,
    /// `q` (or `q_min`) axis.
    pub q_axis: Axis,
    /// Round-1 trials per policy per cell.
    pub n_round1: u64,
    pub d_threshold: f64,
    pub confidence_threshold: f64,
    pub thresholds: Thresholds,
    pub k: u32,
    pub master_seed: u64,
}

impl GridSpec {
    pub fn new(p_axis: Axis, q_axis: Axis, n_round1: u64, master_seed: u64) -> Self {
        Self {
            p_axis,
            q_axis,
            n_round1,
            d_threshold: DEFAULT_D_THRESHOLD,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            thresholds: Thresholds::default(),
            k: 3,
            master_seed,
        }
    }

    /// The single cell `(p, q)`.
    pub fn cell(p: f64, q: f64, n_round1: u64, master_seed: u64) -> Self {
        Self::new(Axis::single(p), Axis::single(q), n_round1, master_seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.p_axis.validate()?;
        self.q_axis.validate()?;
        if self.n_round1 < 1 {
            return Err(Error::invalid("n", "at least one trial per policy"));
        }
        if self.k < 1 {
            return Err(Error::invalid("k", "head start must be at least one round"));
        }
        if !(self.d_threshold > 0.0) || !self.d_threshold.is_finite() {
            return Err(Error::invalid("d threshold", format!("{} must be positive", self.d_threshold)));
        }
        crate::error::check_probability("confidence threshold", self.confidence_threshold)?;
        Thresholds::new(self.thresholds.z_c, self.thresholds.z_t).map(|_| ())
    }

    pub fn cell_count(&self) -> usize {
        self.p_axis.len() * self.q_axis.len()
    }

    /// Coordinates of cell `index` in row-major order (`p` outer).
    pub fn coords(&self, index: usize) -> (f64, f64) {
        let cols = self.q_axis.len();
        (self.p_axis.value(index / cols), self.q_axis.value(index % cols))
    }

    /// Round-1 trials the sweep will run; round-2 sizes depend on the data.
    pub fn round1_budget(&self, mode: SweepMode) -> u128 {
        self.cell_count() as u128 * mode.policies().len() as u128 * self.n_round1 as u128
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    /// Index into the sweep's policy list.
    Winner(usize),
    NoConfidenceBelowThresholdD,
    NoConfidenceFailedBound,
}

impl Classification {
    pub fn code(self) -> &'static str {
        match self {
            Classification::Winner(0) => "winner-A",
            Classification::Winner(1) => "winner-B",
            Classification::Winner(_) => "winner-C",
            Classification::NoConfidenceBelowThresholdD => "no-confidence-below-threshold-d",
            Classification::NoConfidenceFailedBound => "no-confidence-failed-bound",
        }
    }

    pub const CODES: [&'static str; 5] = [
        "winner-A",
        "winner-B",
        "winner-C",
        "no-confidence-below-threshold-d",
        "no-confidence-failed-bound",
    ];

    /// Figure color for this code in `mode`.
    pub fn color(self, mode: SweepMode) -> &'static str {
        match (self, mode) {
            (Classification::Winner(0), _) => "green",
            (Classification::Winner(1), _) => "yellow",
            (Classification::Winner(_), _) => "blue",
            (Classification::NoConfidenceBelowThresholdD, _) => "purple",
            (Classification::NoConfidenceFailedBound, SweepMode::TwoPolicy) => "blue",
            (Classification::NoConfidenceFailedBound, SweepMode::ThreePolicy) => "purple",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondRound {
    pub m: u64,
    pub summaries: Vec<BatchSummary>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceResult {
    pub mode: SweepMode,
    pub cell_index: usize,
    pub p: f64,
    pub q: f64,
    pub policies: Vec<PolicyKind>,
    pub round1: Vec<BatchSummary>,
    pub round2: Option<SecondRound>,
    /// Gap between the top two round-1 containment fractions.
    pub d_round1: f64,
    /// `None` when no comparison was run (gap below threshold or `p0 = 0`).
    pub confidence: Option<ConfidenceReport>,
    pub classification: Classification,
}

impl InstanceResult {
    pub fn winner(&self) -> Option<&PolicyKind> {
        match self.classification {
            Classification::Winner(i) => Some(&self.policies[i]),
            _ => None,
        }
    }
}

/// The counts that determine a cell's result; everything else is
/// recomputed from them. This is what checkpoints store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub cell_index: usize,
    pub round1: Vec<BatchSummary>,
    pub round2: Option<SecondRound>,
}

fn top_gap(summaries: &[BatchSummary]) -> f64 {
    let mut fractions: Vec<f64> = summaries.iter().map(BatchSummary::observed_containment).collect();
    fractions.sort_by(|a, b| b.total_cmp(a));
    fractions[0] - fractions[1]
}

fn cell_instance(mode: SweepMode, spec: &GridSpec, p: f64, q: f64) -> Result<Instance> {
    match mode {
        SweepMode::TwoPolicy => Instance::point(p, q, spec.k),
        SweepMode::ThreePolicy => Instance::uniform(p, q, spec.k),
    }
}

fn batch(
    spec: &GridSpec,
    instance: &Instance,
    policy: &PolicyKind,
    n: u64,
    cell_index: usize,
    stream_id: u64,
    round: u64,
) -> Result<BatchSummary> {
    let template = TrialConfig::new(*instance, policy.clone(), 0).with_thresholds(spec.thresholds);
    let seed = derive_path(spec.master_seed, &[cell_index as u64, stream_id, round]);
    run_batch(&template, n, seed)
}

/// Runs the two-round protocol on one cell with explicit policies and seed
/// stream ids. [`sweep_two_policy`] uses stream id `i` for policy `i`.
pub fn two_policy_cell(
    spec: &GridSpec,
    cell_index: usize,
    p: f64,
    q: f64,
    policies: [&PolicyKind; 2],
    stream_ids: [u64; 2],
) -> Result<CellRecord> {
    let instance = cell_instance(SweepMode::TwoPolicy, spec, p, q)?;
    let run_round = |n: u64, round: u64| -> Result<Vec<BatchSummary>> {
        policies
            .iter()
            .zip(stream_ids)
            .map(|(policy, id)| batch(spec, &instance, policy, n, cell_index, id, round))
            .collect()
    };
    let round1 = run_round(spec.n_round1, 1)?;
    let d = top_gap(&round1);
    let round2 = if d >= spec.d_threshold {
        let m = second_round_size(d)?;
        Some(SecondRound {
            m,
            summaries: run_round(m, 2)?,
        })
    } else {
        None
    };
    Ok(CellRecord {
        cell_index,
        round1,
        round2,
    })
}

fn three_policy_cell(spec: &GridSpec, cell_index: usize, p_min: f64, q_min: f64) -> Result<CellRecord> {
    let instance = cell_instance(SweepMode::ThreePolicy, spec, p_min, q_min)?;
    let round1 = THREE_POLICIES
        .iter()
        .enumerate()
        .map(|(i, policy)| batch(spec, &instance, policy, spec.n_round1, cell_index, i as u64, 1))
        .collect::<Result<Vec<_>>>()?;
    Ok(CellRecord {
        cell_index,
        round1,
        round2: None,
    })
}

fn run_cell(mode: SweepMode, spec: &GridSpec, cell_index: usize) -> Result<CellRecord> {
    let (p, q) = spec.coords(cell_index);
    match mode {
        SweepMode::TwoPolicy => {
            two_policy_cell(spec, cell_index, p, q, [&TWO_POLICIES[0], &TWO_POLICIES[1]], [0, 1])
        }
        SweepMode::ThreePolicy => three_policy_cell(spec, cell_index, p, q),
    }
}

/// Derives confidence and classification from a cell's counts.
pub fn classify(mode: SweepMode, spec: &GridSpec, record: &CellRecord) -> Result<InstanceResult> {
    let (p, q) = spec.coords(record.cell_index);
    let policies = mode.policies().to_vec();
    let expected = policies.len();
    if record.round1.len() != expected || record.round2.as_ref().is_some_and(|r| r.summaries.len() != expected) {
        return Err(Error::Contract(format!(
            "cell {} has the wrong number of policy batches for {mode}",
            record.cell_index
        )));
    }
    let d_round1 = top_gap(&record.round1);
    let threshold = spec.confidence_threshold;
    let (confidence, classification) = match mode {
        SweepMode::TwoPolicy => match &record.round2 {
            None => (None, Classification::NoConfidenceBelowThresholdD),
            Some(round2) => {
                let p0 = 1.0 - p;
                if p0 <= 0.0 {
                    (None, Classification::NoConfidenceFailedBound)
                } else {
                    let [a, b] = [0, 1].map(|i| round2.summaries[i].observed_containment());
                    let report = two_coin_confidence(round2.m, a, b, p0)?;
                    let class = verdict(&report, threshold, Classification::NoConfidenceFailedBound);
                    (Some(report), class)
                }
            }
        },
        SweepMode::ThreePolicy => {
            let p0 = (1.0 - p) / 2.0;
            if p0 <= 0.0 {
                (None, Classification::NoConfidenceFailedBound)
            } else {
                let phats = [0, 1, 2].map(|i| record.round1[i].observed_containment());
                let report = three_coin_confidence(spec.n_round1, phats, p0)?;
                let fallback = if report.no_claim == Some(NoClaim::ZeroGap) {
                    Classification::NoConfidenceBelowThresholdD
                } else {
                    Classification::NoConfidenceFailedBound
                };
                let class = verdict(&report, threshold, fallback);
                (Some(report), class)
            }
        }
    };
    Ok(InstanceResult {
        mode,
        cell_index: record.cell_index,
        p,
        q,
        policies,
        round1: record.round1.clone(),
        round2: record.round2.clone(),
        d_round1,
        confidence,
        classification,
    })
}

fn verdict(report: &ConfidenceReport, threshold: f64, fallback: Classification) -> Classification {
    match report.winner {
        Some(w) if report.claims(threshold) => Classification::Winner(w),
        _ => fallback,
    }
}

/// Options that do not affect results.
#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub budget_cap: u128,
    /// Directory for the checkpoint files; `None` disables checkpointing.
    pub checkpoint_dir: Option<PathBuf>,
    /// Continue from existing checkpoint files instead of starting over.
    pub resume: bool,
    /// Stop after this many newly computed cells (for interruption tests).
    pub max_new_cells: Option<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            budget_cap: DEFAULT_BUDGET_CAP,
            checkpoint_dir: None,
            resume: false,
            max_new_cells: None,
        }
    }
}

pub fn sweep_two_policy(spec: &GridSpec) -> Result<Vec<InstanceResult>> {
    sweep(SweepMode::TwoPolicy, spec, &SweepOptions::default())
}

pub fn sweep_three_policy(spec: &GridSpec) -> Result<Vec<InstanceResult>> {
    sweep(SweepMode::ThreePolicy, spec, &SweepOptions::default())
}

/// Runs every cell in row-major order. Cells already in the checkpoint are
/// reloaded rather than recomputed; results are identical either way.
///
/// With `max_new_cells` set, returns only the cells finished so far.
pub fn sweep(mode: SweepMode, spec: &GridSpec, options: &SweepOptions) -> Result<Vec<InstanceResult>> {
    spec.validate()?;
    let requested = spec.round1_budget(mode);
    if requested > options.budget_cap {
        return Err(Error::BudgetExceeded {
            requested,
            cap: options.budget_cap,
        });
    }
    let mut checkpoint = match &options.checkpoint_dir {
        Some(dir) => Some(Checkpoint::open(dir, mode, spec, options.resume)?),
        None => None,
    };
    let mut results = Vec::with_capacity(spec.cell_count());
    let mut fresh = 0;
    for cell_index in 0..spec.cell_count() {
        if let Some(record) = checkpoint.as_ref().and_then(|c| c.done.get(&cell_index)) {
            results.push(classify(mode, spec, record)?);
            continue;
        }
        if options.max_new_cells.is_some_and(|max| fresh >= max) {
            break;
        }
        let record = run_cell(mode, spec, cell_index)?;
        if let Some(c) = checkpoint.as_mut() {
            c.append(spec, &record)?;
        }
        results.push(classify(mode, spec, &record)?);
        fresh += 1;
    }
    Ok(results)
}

pub const CHECKPOINT_FILE: &str = "checkpoint.csv";
pub const CELLS_FILE: &str = "cells.jsonl";
pub const SPEC_FILE: &str = "sweep-spec.json";

/// Files under the checkpoint directory:
/// - `checkpoint.csv`: `cell_index,p,q,done`, one line per finished cell;
/// - `cells.jsonl`: the counts of each finished cell;
/// - `sweep-spec.json`: the spec, so a resume with different settings is
///   refused.
///
/// A cell counts as done only once its checkpoint line is complete.
struct Checkpoint {
    lines: File,
    cells: File,
    done: BTreeMap<usize, CellRecord>,
}

#[derive(Serialize, Deserialize, PartialEq)]
struct SavedSpec {
    mode: SweepMode,
    spec: GridSpec,
}

impl Checkpoint {
    fn open(dir: &Path, mode: SweepMode, spec: &GridSpec, resume: bool) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let saved = SavedSpec {
            mode,
            spec: spec.clone(),
        };
        let spec_path = dir.join(SPEC_FILE);
        let mut done = BTreeMap::new();
        if resume && spec_path.exists() {
            let previous: SavedSpec = serde_json::from_str(&fs::read_to_string(&spec_path)?).map_err(|e| {
                Error::Parse {
                    what: "checkpoint spec",
                    line: e.line(),
                    reason: e.to_string(),
                }
            })?;
            if previous != saved {
                return Err(Error::invalid(
                    "resume",
                    "checkpoint was written by a sweep with different settings",
                ));
            }
            done = Self::load(dir, spec)?;
        } else {
            fs::write(&spec_path, serde_json::to_string_pretty(&saved).expect("spec serializes") + "\n")?;
        }
        // rewrite both files with the recovered cells only, dropping any
        // torn trailing line
        let mut lines = File::create(dir.join(CHECKPOINT_FILE))?;
        let mut cells = File::create(dir.join(CELLS_FILE))?;
        for record in done.values() {
            writeln!(cells, "{}", serde_json::to_string(record).expect("record serializes"))?;
            let (p, q) = spec.coords(record.cell_index);
            writeln!(lines, "{},{p},{q},done", record.cell_index)?;
        }
        lines.sync_data()?;
        cells.sync_data()?;
        Ok(Self { lines, cells, done })
    }

    fn load(dir: &Path, spec: &GridSpec) -> Result<BTreeMap<usize, CellRecord>> {
        let mut records = BTreeMap::new();
        let cells = File::open(dir.join(CELLS_FILE))?;
        for line in BufReader::new(cells).lines() {
            let line = line?;
            // a torn last line fails to parse and is recomputed
            if let Ok(record) = serde_json::from_str::<CellRecord>(&line) {
                records.insert(record.cell_index, record);
            }
        }
        let mut done = BTreeMap::new();
        let text = fs::read_to_string(dir.join(CHECKPOINT_FILE))?;
        for (i, line) in text.split_inclusive('\n').enumerate() {
            let Some(line) = line.strip_suffix('\n') else {
                break;
            };
            let bad = |reason: String| Error::Parse {
                what: "checkpoint",
                line: i + 1,
                reason,
            };
            let fields: Vec<&str> = line.split(',').collect();
            let [index, p, q, "done"] = fields[..] else {
                return Err(bad(format!("expected `cell_index,p,q,done`, got `{line}`")));
            };
            let index: usize = index.parse().map_err(|_| bad("bad cell index".into()))?;
            if index >= spec.cell_count() {
                return Err(bad(format!("cell {index} is outside the grid")));
            }
            let (gp, gq) = spec.coords(index);
            if p.parse::<f64>().ok() != Some(gp) || q.parse::<f64>().ok() != Some(gq) {
                return Err(bad(format!("coordinates do not match cell {index}")));
            }
            let record = records
                .remove(&index)
                .ok_or_else(|| bad(format!("no saved counts for cell {index}")))?;
            done.insert(index, record);
        }
        Ok(done)
    }

    fn append(&mut self, spec: &GridSpec, record: &CellRecord) -> Result<()> {
        writeln!(self.cells, "{}", serde_json::to_string(record).expect("record serializes"))?;
        self.cells.sync_data()?;
        let (p, q) = spec.coords(record.cell_index);
        writeln!(self.lines, "{},{p},{q},done", record.cell_index)?;
        self.lines.sync_data()?;
        Ok(())
    }
}

/// Confidence that at least one winner claim in a `side x side` square of
/// cells sharing a winner is true: `1 - (1 - c)^(side^2)`, where `c` is the
/// smallest per-cell confidence. Assumes independent cells.
pub fn region_confidence(cells: &[(Classification, f64)], side: usize) -> Result<f64> {
    if side < 1 || cells.len() != side * side {
        return Err(Error::invalid(
            "cells",
            format!("expected {} cells for side {side}, got {}", side * side, cells.len()),
        ));
    }
    let winner = match cells[0].0 {
        Classification::Winner(w) => w,
        other => return Err(Error::MixedWinners(format!("cell 0 is {}", other.code()))),
    };
    if let Some((i, (class, _))) = cells.iter().enumerate().find(|(_, (c, _))| *c != Classification::Winner(winner)) {
        return Err(Error::MixedWinners(format!(
            "cell 0 is {} but cell {i} is {}",
            Classification::Winner(winner).code(),
            class.code()
        )));
    }
    let c = cells.iter().map(|&(_, c)| c).fold(f64::INFINITY, f64::min);
    crate::error::check_probability("confidence", c)?;
    Ok(1.0 - (1.0 - c).powi((side * side) as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs::OpenOptions;

    #[test]
    fn axis_lengths() {
        let full = Axis::new(0.01, 1.0, 0.01).unwrap();
        assert_eq!(full.len(), 100);
        assert_eq!(full.value(99), 1.0);
        assert_eq!(full.value(6), 0.07);
        let with_zero = Axis::new(0.0, 1.0, 0.01).unwrap();
        assert_eq!(with_zero.len(), 101);
        assert_eq!(Axis::single(0.9).len(), 1);
        assert_eq!(Axis::new(0.1, 0.35, 0.1).unwrap().len(), 3);
        assert!(Axis::new(0.5, 0.4, 0.1).is_err());
        assert!(Axis::new(0.1, 0.4, 0.0).is_err());
        assert!(Axis::new(0.1, 1.4, 0.1).is_err());
    }

    #[test]
    fn full_three_policy_grid_size() {
        let axis = Axis::new(0.0, 1.0, 0.01).unwrap();
        let spec = GridSpec::new(axis, axis, 1, 0);
        assert_eq!(spec.cell_count(), 10_201);
        assert_eq!(spec.coords(0), (0.0, 0.0));
        assert_eq!(spec.coords(102), (0.01, 0.01));
        assert_eq!(spec.coords(10_200), (1.0, 1.0));
    }

    #[test]
    fn spec_validation() {
        let mut spec = GridSpec::cell(0.5, 0.5, 10, 0);
        spec.validate().unwrap();
        spec.n_round1 = 0;
        assert!(spec.validate().is_err());
        let mut spec = GridSpec::cell(0.5, 0.5, 10, 0);
        spec.thresholds.z_t = 1;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn budget_cap_refuses() {
        let axis = Axis::new(0.01, 1.0, 0.01).unwrap();
        let spec = GridSpec::new(axis, axis, 7_500_000, 0);
        let err = sweep(SweepMode::TwoPolicy, &spec, &SweepOptions::default()).unwrap_err();
        match err {
            Error::BudgetExceeded { requested, .. } => assert_eq!(requested, 150_000_000_000),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn tiny_parameters_are_below_threshold() {
        let results = sweep_two_policy(&GridSpec::cell(0.01, 0.01, 1000, 5)).unwrap();
        let r = &results[0];
        assert!(r.round1.iter().all(|s| s.observed_containment() >= 0.99));
        assert!(r.d_round1 < DEFAULT_D_THRESHOLD);
        assert_eq!(r.round2, None);
        assert_eq!(r.classification, Classification::NoConfidenceBelowThresholdD);
    }

    #[test]
    fn identical_streams_give_zero_gap() {
        let spec = GridSpec::cell(0.8, 0.8, 2000, 5);
        let policy = PolicyKind::AscendingTime;
        let record = two_policy_cell(&spec, 0, 0.8, 0.8, [&policy, &policy], [0, 0]).unwrap();
        assert_eq!(record.round1[0], record.round1[1]);
        assert_eq!(record.round2, None);
        let result = classify(SweepMode::TwoPolicy, &spec, &record).unwrap();
        assert_eq!(result.d_round1, 0.0);
        assert_eq!(result.classification, Classification::NoConfidenceBelowThresholdD);
    }

    #[test]
    fn certain_outcome_gives_failed_bound() {
        // p = 1: the bound needs p0 = 1 - p > 0
        let spec = GridSpec::cell(1.0, 0.5, 2000, 5);
        let record = CellRecord {
            cell_index: 0,
            round1: vec![
                BatchSummary { n: 10, contained: 5, not_contained: 5, non_converged: 0, reward_sum: 0 },
                BatchSummary { n: 10, contained: 3, not_contained: 7, non_converged: 0, reward_sum: -4 },
            ],
            round2: Some(SecondRound {
                m: 10,
                summaries: vec![
                    BatchSummary { n: 10, contained: 5, not_contained: 5, non_converged: 0, reward_sum: 0 },
                    BatchSummary { n: 10, contained: 3, not_contained: 7, non_converged: 0, reward_sum: -4 },
                ],
            }),
        };
        let r = classify(SweepMode::TwoPolicy, &spec, &record).unwrap();
        assert_eq!(r.classification, Classification::NoConfidenceFailedBound);
        assert_eq!(r.confidence, None);
    }

    #[test]
    fn winner_cells_are_confident() {
        let spec = GridSpec::new(Axis::new(0.85, 0.95, 0.05).unwrap(), Axis::single(0.95), 20_000, 11);
        for r in sweep_two_policy(&spec).unwrap() {
            if let Classification::Winner(w) = r.classification {
                let report = r.confidence.as_ref().unwrap();
                assert!(report.applicable && report.confidence >= 0.5);
                assert_eq!(report.winner, Some(w));
                assert!(r.round2.is_some());
            }
        }
    }

    #[test]
    fn three_policy_degenerate_cell() {
        let spec = GridSpec::cell(1.0, 0.5, 100, 2);
        let r = &sweep_three_policy(&spec).unwrap()[0];
        assert_eq!(r.classification, Classification::NoConfidenceFailedBound);
        assert_eq!(r.round1.len(), 3);
    }

    #[test]
    fn region_confidence_values() {
        let green = Classification::Winner(0);
        let c = region_confidence(&[(green, 0.5); 25], 5).unwrap();
        assert_eq!(c, 1.0 - 2f64.powi(-25));
        assert_eq!(region_confidence(&[(green, 0.5)], 1).unwrap(), 0.5);
        let c = region_confidence(&[(green, 0.9); 4], 2).unwrap();
        assert!((c - (1.0 - 1e-4)).abs() < 1e-12);
        let mut mixed = [(green, 0.9); 4];
        mixed[3].0 = Classification::Winner(1);
        assert!(matches!(region_confidence(&mixed, 2), Err(Error::MixedWinners(_))));
        mixed[3].0 = Classification::NoConfidenceFailedBound;
        assert!(matches!(region_confidence(&mixed, 2), Err(Error::MixedWinners(_))));
        assert!(region_confidence(&[(green, 0.9); 3], 2).is_err());
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::new(
            Axis::new(0.3, 0.6, 0.1).unwrap(),
            Axis::new(0.5, 0.6, 0.1).unwrap(),
            300,
            8,
        );
        let full = sweep_two_policy(&spec).unwrap();
        let mut options = SweepOptions {
            checkpoint_dir: Some(dir.path().to_path_buf()),
            max_new_cells: Some(3),
            ..SweepOptions::default()
        };
        let partial = sweep(SweepMode::TwoPolicy, &spec, &options).unwrap();
        assert_eq!(partial.len(), 3);
        options.resume = true;
        options.max_new_cells = Some(2);
        assert_eq!(sweep(SweepMode::TwoPolicy, &spec, &options).unwrap().len(), 5);
        // simulate a torn write of the next cell
        let mut f = OpenOptions::new().append(true).open(dir.path().join(CHECKPOINT_FILE)).unwrap();
        write!(f, "5,0.5,0.6,do").unwrap();
        options.max_new_cells = None;
        let resumed = sweep(SweepMode::TwoPolicy, &spec, &options).unwrap();
        assert_eq!(resumed, full);
        let lines = fs::read_to_string(dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(lines.lines().count(), 8);
        assert!(lines.starts_with("0,0.3,0.5,done\n1,0.3,0.6,done\n"));

        let other = GridSpec { master_seed: 9, ..spec };
        assert!(sweep(SweepMode::TwoPolicy, &other, &options).is_err());
    }
}
