//! CSV and manifest output for sweeps.

use std::io::{self, Write};

use crate::harness::{Classification, GridSpec, InstanceResult, SweepMode};

pub const RESULTS_HEADER: &str =
    "mode,p_or_pmin,q_or_qmin,policy,round,n_trials,contained,not_contained,non_converged,observed_containment";
pub const DOMINANCE_HEADER: &str = "p_or_pmin,q_or_qmin,winner,confidence,classification,d_round1,m_round2";

/// Formats `x` rounded to 6 significant digits, without trailing zeros or
/// an exponent.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{}", if x == 0.0 { 0.0 } else { x });
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("scientific notation parses");
    format!("{rounded}")
}

pub fn write_results<W: Write>(mut out: W, results: &[InstanceResult]) -> io::Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for r in results {
        let rounds = std::iter::once((1, &r.round1[..]))
            .chain(r.round2.as_ref().map(|r2| (2, &r2.summaries[..])));
        for (round, summaries) in rounds {
            for (policy, s) in r.policies.iter().zip(summaries) {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.mode,
                    sig6(r.p),
                    sig6(r.q),
                    policy,
                    round,
                    s.n,
                    s.contained,
                    s.not_contained,
                    s.non_converged,
                    sig6(s.observed_containment()),
                )?;
            }
        }
    }
    Ok(())
}

pub fn write_dominance<W: Write>(mut out: W, results: &[InstanceResult]) -> io::Result<()> {
    writeln!(out, "{DOMINANCE_HEADER}")?;
    for r in results {
        let winner = r.winner().map_or_else(|| "none".to_string(), |p| p.to_string());
        let confidence = r.confidence.as_ref().map_or(String::new(), |c| sig6(c.confidence));
        let m = r.round2.as_ref().map_or(String::new(), |r2| r2.m.to_string());
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            sig6(r.p),
            sig6(r.q),
            winner,
            confidence,
            r.classification.code(),
            sig6(r.d_round1),
            m,
        )?;
    }
    Ok(())
}

/// Ordered `key = value` pairs, written one per line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Records every field of `spec` and the color key for `mode`.
    pub fn record_sweep(&mut self, mode: SweepMode, spec: &GridSpec) -> &mut Self {
        self.set("mode", mode)
            .set("p_start", spec.p_axis.start)
            .set("p_stop", spec.p_axis.stop)
            .set("p_step", spec.p_axis.step)
            .set("q_start", spec.q_axis.start)
            .set("q_stop", spec.q_axis.stop)
            .set("q_step", spec.q_axis.step)
            .set("n_round1", spec.n_round1)
            .set("d_threshold", spec.d_threshold)
            .set("confidence_threshold", spec.confidence_threshold)
            .set("z_c", spec.thresholds.z_c)
            .set("z_t", spec.thresholds.z_t)
            .set("k", spec.k)
            .set("seed", spec.master_seed);
        for (i, policy) in mode.policies().iter().enumerate() {
            let class = Classification::Winner(i);
            self.set(&format!("policy_{}", &class.code()["winner-".len()..]), policy);
        }
        let codes = match mode {
            SweepMode::TwoPolicy => &Classification::CODES[..2],
            SweepMode::ThreePolicy => &Classification::CODES[..3],
        };
        for (i, code) in codes.iter().enumerate() {
            self.set(&format!("color.{code}"), Classification::Winner(i).color(mode));
        }
        for class in [
            Classification::NoConfidenceBelowThresholdD,
            Classification::NoConfidenceFailedBound,
        ] {
            self.set(&format!("color.{}", class.code()), class.color(mode));
        }
        self.set(
            "color_note",
            "the split of the two no-confidence causes between purple and blue is a guess",
        )
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (k, v) in &self.entries {
            writeln!(out, "{k} = {v}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("manifest is UTF-8")
    }
}
