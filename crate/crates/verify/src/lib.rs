//! Independent oracles and the acceptance checks built on them.

pub mod criteria;
pub mod oracles;

use std::fmt;
use std::time::Instant;

use chanshort::Exec;

/// Result of one acceptance check.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    /// Set on a failure that matches a documented, analysed shortfall.
    pub known: Option<&'static str>,
    pub seconds: f64,
}

impl Outcome {
    pub fn new(id: u8, name: &'static str, pass: bool, detail: String) -> Self {
        Self { id, name, pass, detail, known: None, seconds: 0.0 }
    }

    fn errored(id: u8, e: chanshort::Error) -> Self {
        Self::new(id, "check raised an error", false, e.to_string())
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match (self.pass, self.known) {
            (true, _) => "PASS".to_string(),
            (false, Some(why)) => format!("FAIL (known: {why})"),
            (false, None) => "FAIL".to_string(),
        };
        write!(f, "{status} [{}] {}: {}", self.id, self.name, self.detail)
    }
}

/// Failures analysed in the README; they persist at the full budget.
pub const KNOWN_FAILURES: [(u8, &str); 3] = [
    (3, "i_hom as defined (no feedback) ignores the cancelled tail and falls below i_hom_l"),
    (7, "measured delay gain is about 0.02 dB rather than 0.4 dB"),
    (8, "at the lowest in-range SNR, sigma_in = 0.9 edges sigma_in = 0 by 0.010-0.012"),
];

/// Monte Carlo block counts per SNR point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub delay_blocks: usize,
    pub sigma_pilot_blocks: usize,
    pub sigma_blocks: usize,
    pub crossover_blocks: usize,
}

impl Budget {
    /// Minutes on one core; fit for a regular test run.
    pub fn quick() -> Self {
        Self { delay_blocks: 60, sigma_pilot_blocks: 10, sigma_blocks: 40, crossover_blocks: 30 }
    }

    /// Uses most of each check's time allowance on one core.
    pub fn full() -> Self {
        Self { delay_blocks: 1500, sigma_pilot_blocks: 40, sigma_blocks: 300, crossover_blocks: 200 }
    }

    /// `full` when `CHANSHORT_ACCEPTANCE=full`, else `quick`.
    pub fn from_env() -> Self {
        match std::env::var("CHANSHORT_ACCEPTANCE").as_deref() {
            Ok("full") => Self::full(),
            _ => Self::quick(),
        }
    }
}

fn timed(id: u8, f: impl FnOnce() -> chanshort::Result<Outcome>) -> Outcome {
    let start = Instant::now();
    let mut o = f().unwrap_or_else(|e| Outcome::errored(id, e));
    o.seconds = start.elapsed().as_secs_f64();
    if !o.pass {
        o.known = KNOWN_FAILURES.iter().find(|(k, _)| *k == id).map(|(_, why)| *why);
    }
    o
}

/// Runs every check in order, calling `report` as each finishes.
pub fn run_all(budget: &Budget, mut report: impl FnMut(&Outcome)) -> Vec<Outcome> {
    let mut out = Vec::new();
    let mut push = |o: Outcome| {
        report(&o);
        out.push(o);
    };
    push(timed(1, || criteria::gradient_oracle(criteria::library_gradient)));
    push(timed(2, criteria::theorem_consistency));
    match criteria::rate_sweep(Exec::Parallel) {
        Ok(sweep) => {
            push(timed(3, || Ok(criteria::rate_inequalities(&sweep))));
            push(timed(4, || Ok(criteria::ubm_stationarity(&sweep))));
        }
        Err(e) => {
            let msg = e.to_string();
            push(timed(3, || Err(e)));
            push(Outcome::new(4, "UBM optimum is stationary", false, format!("sweep failed: {msg}")));
        }
    }
    push(timed(5, criteria::brute_force_equalizer));
    push(timed(6, criteria::fom_convergence));
    push(timed(7, || criteria::delay_gain(budget)));
    push(timed(8, || criteria::sigma_choice(budget)));
    push(timed(9, || criteria::mi_crossover(budget)));
    push(timed(10, criteria::min_phase_invariance));
    out
}

/// True when every failure is a documented one.
pub fn only_known_failures(outcomes: &[Outcome]) -> bool {
    outcomes.iter().all(|o| o.pass || o.known.is_some())
}
