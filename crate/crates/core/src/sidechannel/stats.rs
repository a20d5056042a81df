//! Welch's unequal-variance t-test.

use serde::Serialize;

/// Verdict threshold on `|t|`.
pub const T_THRESHOLD: f64 = 4.5;

/// Sample sizes at which the progression is recorded.
pub const CHECKPOINTS: [usize; 5] = [100, 1_000, 10_000, 100_000, 1_000_000];

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("each sample needs at least two values (got {a} and {b})")]
    TooFewSamples { a: usize, b: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TTestResult {
    /// `+inf` or `-inf` when both samples are constant and differ.
    pub t: f64,
    pub n_a: usize,
    pub n_b: usize,
    /// `(n, t)` over prefixes of both samples.
    pub progression: Vec<(usize, f64)>,
    /// Both samples had zero variance.
    pub degenerate: bool,
}

impl TTestResult {
    pub fn distinguishable(&self) -> bool {
        self.t.abs() >= T_THRESHOLD
    }
}

/// Running mean and variance (Welford).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Running {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Running {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn from_slice(xs: &[f64]) -> Running {
        let mut r = Running::default();
        xs.iter().for_each(|&x| r.push(x));
        r
    }
}

/// Welch statistic of two summaries; `None` if either has fewer than two values.
pub fn welch_from(a: &Running, b: &Running) -> Option<(f64, bool)> {
    if a.n < 2 || b.n < 2 {
        return None;
    }
    let se2 = a.variance() / a.n as f64 + b.variance() / b.n as f64;
    let diff = a.mean - b.mean;
    if se2 == 0.0 {
        // Constant samples: equal means carry no evidence, unequal ones are certain.
        let t = if diff == 0.0 { 0.0 } else { f64::INFINITY.copysign(diff) };
        return Some((t, true));
    }
    Some((diff / se2.sqrt(), false))
}

pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::TooFewSamples { a: a.len(), b: b.len() });
    }
    let mut ra = Running::default();
    let mut rb = Running::default();
    let mut progression = Vec::new();
    let max = a.len().max(b.len());
    let mut next_cp = CHECKPOINTS.iter().copied().filter(|&c| c < max).peekable();
    for i in 0..max {
        if let Some(&x) = a.get(i) {
            ra.push(x);
        }
        if let Some(&y) = b.get(i) {
            rb.push(y);
        }
        if next_cp.peek() == Some(&(i + 1)) {
            next_cp.next();
            if let Some((t, _)) = welch_from(&ra, &rb) {
                progression.push((i + 1, t));
            }
        }
    }
    let (t, degenerate) = welch_from(&ra, &rb).expect("both samples have two values");
    progression.push((max, t));
    Ok(TTestResult { t, n_a: a.len(), n_b: b.len(), progression, degenerate })
}
