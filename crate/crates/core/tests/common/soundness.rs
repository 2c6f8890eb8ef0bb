//! Round trip for the coin-comparison procedures: draw binomial counts from
//! known biases, ask for a winner and a confidence, and compare the
//! reported confidence with how often the named winner really is best.

use rand_distr::{Binomial, Distribution};
use trace_race::rng::{derive_seed, stream};
use trace_race::stats::{three_coin_confidence, two_coin_confidence};

#[derive(Clone, Debug)]
pub struct Scenario {
    pub biases: Vec<f64>,
    pub n: u64,
    pub p0: f64,
}

#[derive(Clone, Debug)]
pub struct SoundnessOutcome {
    pub scenario: Scenario,
    pub reps: usize,
    /// Repetitions where the bound applied.
    pub claims: usize,
    /// Claims naming the truly best coin.
    pub correct: usize,
    /// Mean of the reported confidence (floored at 0) over claims.
    pub mean_confidence: f64,
}

impl SoundnessOutcome {
    pub fn validity(&self) -> f64 {
        self.correct as f64 / self.claims as f64
    }

    pub fn sound(&self) -> bool {
        self.claims > 0 && self.validity() >= self.mean_confidence
    }
}

pub fn scenarios() -> Vec<Scenario> {
    vec![
        Scenario { biases: vec![0.52, 0.50], n: 100_000, p0: 0.4 },
        Scenario { biases: vec![0.31, 0.30], n: 200_000, p0: 0.25 },
        Scenario { biases: vec![0.90, 0.89], n: 60_000, p0: 0.8 },
        Scenario { biases: vec![0.60, 0.58, 0.50], n: 100_000, p0: 0.4 },
        Scenario { biases: vec![0.25, 0.24, 0.24], n: 300_000, p0: 0.2 },
    ]
}

pub fn run(scenario: &Scenario, reps: usize, seed: u64) -> SoundnessOutcome {
    let best = (0..scenario.biases.len())
        .max_by(|&i, &j| scenario.biases[i].total_cmp(&scenario.biases[j]))
        .unwrap();
    let mut claims = 0;
    let mut correct = 0;
    let mut confidence_sum = 0.0;
    for rep in 0..reps {
        let mut rng = stream(derive_seed(seed, rep as u64));
        let phats: Vec<f64> = scenario
            .biases
            .iter()
            .map(|&b| Binomial::new(scenario.n, b).unwrap().sample(&mut rng) as f64 / scenario.n as f64)
            .collect();
        let report = match phats.len() {
            2 => two_coin_confidence(scenario.n, phats[0], phats[1], scenario.p0).unwrap(),
            3 => three_coin_confidence(scenario.n, [phats[0], phats[1], phats[2]], scenario.p0).unwrap(),
            _ => unreachable!(),
        };
        if !report.applicable {
            continue;
        }
        claims += 1;
        confidence_sum += report.confidence.max(0.0);
        if report.winner == Some(best) {
            correct += 1;
        }
    }
    SoundnessOutcome {
        scenario: scenario.clone(),
        reps,
        claims,
        correct,
        mean_confidence: if claims == 0 { 0.0 } else { confidence_sum / claims as f64 },
    }
}
