//! Telling two source blocks apart from attacker views.
//!
//! Ground truth says where each occurrence of the two targets starts; the
//! attacks themselves read only the views.
//!
//! * Count: pair the i-th occurrence of A with the i-th of B and compare the
//!   retired-instruction count of every code block both chains share. The
//!   attack succeeds when every pair differs somewhere.
//! * Latency: Welch's t per (chain index, retired position) between all A
//!   and all B samples. The attack succeeds when some `|t|` reaches the
//!   threshold.
//! * Ciphertext: for consecutive occurrences within one run, guess "same
//!   source block" exactly when the first code block's tags agree. Balanced
//!   accuracy over same and different pairs is 0.5 for a blind guess.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write;

use serde::Serialize;
use thiserror::Error;

use super::stats::{welch_from, Running, CHECKPOINTS, T_THRESHOLD};
use super::view::AttackerView;
use crate::oram::Tag;

/// Balanced accuracy at which labelling counts as successful.
pub const LABELLING_SUCCESS: f64 = 0.9;
/// Histogram bin width in latency units.
pub const HISTOGRAM_BIN: f64 = 10.0;
const HISTOGRAM_BINS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Target {
    A,
    B,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttackError {
    #[error("need at least two occurrences of each target (got {a} and {b})")]
    InsufficientTraces { a: usize, b: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CountAttack {
    pub pairs: usize,
    pub distinguished: usize,
    /// Largest count difference seen at any shared chain index.
    pub max_difference: u64,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlotT {
    pub chain_index: usize,
    pub position: usize,
    pub t: f64,
    pub n_a: u64,
    pub n_b: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LatencyAttack {
    pub slots: Vec<SlotT>,
    pub max_abs_t: f64,
    pub worst: Option<(usize, usize)>,
    /// `(occurrences per target, max |t|)` at sample checkpoints.
    pub progression: Vec<(u64, f64)>,
    pub success: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CiphertextAttack {
    pub same_pairs: u64,
    pub different_pairs: u64,
    pub same_detected: u64,
    pub different_detected: u64,
    pub balanced_accuracy: f64,
    /// Occurrences whose first tag was seen before on the same target.
    pub tag_reuses: u64,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackReport {
    pub executions: usize,
    pub occurrences_a: usize,
    pub occurrences_b: usize,
    pub count: CountAttack,
    pub latency: LatencyAttack,
    pub ciphertext: CiphertextAttack,
}

impl AttackReport {
    pub fn succeeded(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.count.success {
            out.push("count");
        }
        if self.latency.success {
            out.push("latency");
        }
        if self.ciphertext.success {
            out.push("ciphertext");
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let verdict = |b: bool| if b { "success" } else { "failure" };
        let _ = writeln!(o, "executions {}", self.executions);
        let _ = writeln!(o, "occurrences a={} b={}", self.occurrences_a, self.occurrences_b);
        let c = &self.count;
        let _ = writeln!(
            o,
            "count {} pairs={} distinguished={} max_difference={}",
            verdict(c.success),
            c.pairs,
            c.distinguished,
            c.max_difference
        );
        let l = &self.latency;
        let worst = l.worst.map_or("-".to_string(), |(j, s)| format!("{j}:{s}"));
        let _ = writeln!(o, "latency {} max_abs_t={:.3} worst={worst} threshold={T_THRESHOLD}", verdict(l.success), l.max_abs_t);
        for (n, t) in &l.progression {
            let _ = writeln!(o, "latency.progression n={n} max_abs_t={t:.3}");
        }
        for s in &l.slots {
            let _ = writeln!(o, "latency.slot {}:{} t={:.3} n_a={} n_b={}", s.chain_index, s.position, s.t, s.n_a, s.n_b);
        }
        let x = &self.ciphertext;
        let _ = writeln!(
            o,
            "ciphertext {} balanced_accuracy={:.4} same={}/{} different={}/{} tag_reuses={}",
            verdict(x.success),
            x.balanced_accuracy,
            x.same_detected,
            x.same_pairs,
            x.different_detected,
            x.different_pairs,
            x.tag_reuses
        );
        let s = self.succeeded();
        let _ = writeln!(o, "succeeded {}", if s.is_empty() { "none".to_string() } else { s.join(",") });
        o
    }
}

/// Streaming accumulator over executions.
#[derive(Clone, Debug)]
pub struct Distinguisher {
    len_a: usize,
    len_b: usize,
    executions: usize,
    counts_a: Vec<Vec<u32>>,
    counts_b: Vec<Vec<u32>>,
    lat: BTreeMap<(usize, usize), [Running; 2]>,
    hist: BTreeMap<(usize, usize), [Vec<u32>; 2]>,
    progression: Vec<(u64, f64)>,
    next_checkpoint: usize,
    tags_seen: [HashSet<Tag>; 2],
    cipher: CiphertextAttack,
}

impl Distinguisher {
    /// `len_a`, `len_b`: code blocks per occurrence of each target.
    pub fn new(len_a: usize, len_b: usize) -> Distinguisher {
        Distinguisher {
            len_a,
            len_b,
            executions: 0,
            counts_a: Vec::new(),
            counts_b: Vec::new(),
            lat: BTreeMap::new(),
            hist: BTreeMap::new(),
            progression: Vec::new(),
            next_checkpoint: 0,
            tags_seen: [HashSet::new(), HashSet::new()],
            cipher: CiphertextAttack::default(),
        }
    }

    fn occurrence(&mut self, view: &AttackerView, start: usize, target: Target) {
        let (len, side) = match target {
            Target::A => (self.len_a, 0),
            Target::B => (self.len_b, 1),
        };
        let chain = &view.blocks[start..(start + len).min(view.blocks.len())];
        let counts: Vec<u32> = chain.iter().map(|b| b.instruction_count() as u32).collect();
        for (j, b) in chain.iter().enumerate() {
            for (s, &l) in b.latencies.iter().enumerate() {
                self.lat.entry((j, s)).or_default()[side].push(l as f64);
                let h = self.hist.entry((j, s)).or_insert_with(|| [vec![0; HISTOGRAM_BINS], vec![0; HISTOGRAM_BINS]]);
                let bin = ((l as f64 / HISTOGRAM_BIN).max(0.0) as usize).min(HISTOGRAM_BINS - 1);
                h[side][bin] += 1;
            }
        }
        if let Some(first) = chain.first() {
            if !self.tags_seen[side].insert(first.code_tag) {
                self.cipher.tag_reuses += 1;
            }
        }
        match target {
            Target::A => self.counts_a.push(counts),
            Target::B => self.counts_b.push(counts),
        }
    }

    /// Adds one execution; `a` and `b` are the block indices where each
    /// occurrence starts.
    pub fn observe(&mut self, view: &AttackerView, a: &[usize], b: &[usize]) {
        self.executions += 1;
        let mut marks: Vec<(usize, Target)> = a.iter().map(|&i| (i, Target::A)).chain(b.iter().map(|&i| (i, Target::B))).collect();
        marks.sort();
        for &(i, t) in &marks {
            self.occurrence(view, i, t);
        }
        for w in marks.windows(2) {
            let same_type = w[0].1 == w[1].1;
            let same_tag = view.blocks[w[0].0].code_tag == view.blocks[w[1].0].code_tag;
            if same_type {
                self.cipher.same_pairs += 1;
                self.cipher.same_detected += same_tag as u64;
            } else {
                self.cipher.different_pairs += 1;
                self.cipher.different_detected += !same_tag as u64;
            }
        }
        let n = self.counts_a.len().min(self.counts_b.len()) as u64;
        while self.next_checkpoint < CHECKPOINTS.len() && n >= CHECKPOINTS[self.next_checkpoint] as u64 {
            self.progression.push((CHECKPOINTS[self.next_checkpoint] as u64, self.latency_slots().1));
            self.next_checkpoint += 1;
        }
    }

    fn latency_slots(&self) -> (Vec<SlotT>, f64, Option<(usize, usize)>) {
        let mut slots = Vec::new();
        let mut max = 0.0f64;
        let mut worst = None;
        for (&(j, s), [ra, rb]) in &self.lat {
            if let Some((t, _)) = welch_from(ra, rb) {
                if t.abs() > max || worst.is_none() {
                    max = max.max(t.abs());
                    worst = Some((j, s));
                }
                slots.push(SlotT { chain_index: j, position: s, t, n_a: ra.n, n_b: rb.n });
            }
        }
        (slots, max, worst)
    }

    pub fn report(&self) -> Result<AttackReport, AttackError> {
        let (na, nb) = (self.counts_a.len(), self.counts_b.len());
        if na < 2 || nb < 2 {
            return Err(AttackError::InsufficientTraces { a: na, b: nb });
        }
        let mut count = CountAttack::default();
        for (ca, cb) in self.counts_a.iter().zip(&self.counts_b) {
            count.pairs += 1;
            let diffs: Vec<u64> = ca.iter().zip(cb).map(|(x, y)| x.abs_diff(*y) as u64).collect();
            let d = diffs.iter().copied().max().unwrap_or(0);
            count.max_difference = count.max_difference.max(d);
            if d >= 1 {
                count.distinguished += 1;
            }
        }
        count.success = count.pairs > 0 && count.distinguished == count.pairs;

        let (slots, max_abs_t, worst) = self.latency_slots();
        let mut progression = self.progression.clone();
        let n = na.min(nb) as u64;
        if progression.last().is_none_or(|p| p.0 != n) {
            progression.push((n, max_abs_t));
        }
        let latency = LatencyAttack { slots, max_abs_t, worst, progression, success: max_abs_t >= T_THRESHOLD };

        let mut cipher = self.cipher.clone();
        let rate = |hit: u64, total: u64| if total == 0 { 0.5 } else { hit as f64 / total as f64 };
        cipher.balanced_accuracy =
            (rate(cipher.same_detected, cipher.same_pairs) + rate(cipher.different_detected, cipher.different_pairs)) / 2.0;
        cipher.success = cipher.balanced_accuracy >= LABELLING_SUCCESS;

        Ok(AttackReport { executions: self.executions, occurrences_a: na, occurrences_b: nb, count, latency, ciphertext: cipher })
    }

    /// `bin_start,a,b` rows for one (chain index, position), or the most
    /// separating one when `at` is `None`.
    pub fn histogram_csv(&self, at: Option<(usize, usize)>) -> String {
        let key = at.or_else(|| self.latency_slots().2);
        let mut out = String::from("bin_start,a,b\n");
        if let Some(h) = key.and_then(|k| self.hist.get(&k)) {
            for i in 0..HISTOGRAM_BINS {
                let _ = writeln!(out, "{},{},{}", i as f64 * HISTOGRAM_BIN, h[0][i], h[1][i]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sidechannel::ObservedBlock;

    fn block(tag: Tag, lat: &[f32]) -> ObservedBlock {
        ObservedBlock { location: 0, code_tag: tag, fetch_touches: 1, latencies: lat.to_vec(), accesses: vec![] }
    }

    #[test]
    fn count_difference_is_caught() {
        let mut d = Distinguisher::new(1, 1);
        for _ in 0..3 {
            let blocks = vec![block(1, &[1.0, 2.0]), block(1, &[1.0, 2.0]), block(2, &[1.0, 2.0, 3.0])];
            d.observe(&AttackerView { blocks, final_tags: vec![] }, &[0, 1], &[2]);
        }
        let r = d.report().unwrap();
        assert!(r.count.success);
        assert_eq!(r.count.max_difference, 1);
        assert!(r.ciphertext.success);
        assert_eq!(r.ciphertext.tag_reuses, 7);
        assert_eq!(r.ciphertext.balanced_accuracy, 1.0);
    }

    #[test]
    fn too_few_occurrences() {
        let d = Distinguisher::new(1, 1);
        assert_eq!(d.report(), Err(AttackError::InsufficientTraces { a: 0, b: 0 }));
    }
}
