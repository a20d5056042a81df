//! Linear ORAM: every access reads and rewrites every entry.

use super::ct::ct_eq_mask;
use super::{AccessStats, OramBlock, ObliviousStore, Touch, TouchKind};

#[derive(Clone, Debug)]
pub struct LinearOram<B> {
    entries: Vec<B>,
    fresh: bool,
    stats: AccessStats,
    trace: Option<Vec<Touch>>,
}

impl<B: OramBlock> LinearOram<B> {
    /// `fresh` re-encrypts every entry on every scan by bumping its counters.
    pub fn new(entries: Vec<B>, fresh: bool) -> LinearOram<B> {
        LinearOram { entries, fresh, stats: AccessStats::default(), trace: None }
    }

    pub fn record_trace(&mut self, on: bool) {
        self.trace = on.then(Vec::new);
    }

    pub fn trace(&self) -> &[Touch] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn take_trace(&mut self) -> Vec<Touch> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }
}

impl<B: OramBlock> ObliviousStore<B> for LinearOram<B> {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn access(&mut self, idx: usize, write: Option<&B>) -> B {
        assert!(idx < self.entries.len(), "index {idx} outside store of {}", self.entries.len());
        let seq = self.stats.accesses;
        self.stats.accesses += 1;
        let write_mask = if write.is_some() { u64::MAX } else { 0 };
        // Seeded from entry 0 so variable-width blocks keep their width.
        let mut out = self.entries[0].clone();
        for (i, e) in self.entries.iter_mut().enumerate() {
            let hit = ct_eq_mask(i as u64, idx as u64);
            out = B::ct_select(hit, e, &out);
            // Loads rewrite their entry with itself so the scan is kind-independent.
            let incoming = write.unwrap_or(e);
            let mut next = B::ct_select(hit & write_mask, incoming, e);
            if self.fresh {
                next.bump();
            }
            *e = next;
            self.stats.touches += 1;
            if let Some(t) = &mut self.trace {
                t.push(Touch { seq, index: i, kind: TouchKind::Scan });
            }
        }
        out
    }

    fn push(&mut self, block: B) -> usize {
        self.entries.push(block);
        self.entries.len() - 1
    }

    fn peek(&self, idx: usize) -> &B {
        &self.entries[idx]
    }

    fn stats(&self) -> &AccessStats {
        &self.stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_access_touches_every_entry_once() {
        let mut o = LinearOram::new(vec![[0u64; 2]; 32], false);
        o.record_trace(true);
        for idx in [0, 5, 31] {
            o.access(idx, None);
            o.access(idx, Some(&[idx as u64, 1]));
        }
        assert_eq!(o.stats().touches, 6 * 32);
        for seq in 0..6 {
            let idxs: Vec<usize> = o.trace().iter().filter(|t| t.seq == seq).map(|t| t.index).collect();
            assert_eq!(idxs, (0..32).collect::<Vec<_>>());
        }
    }

    #[test]
    fn write_then_read() {
        let mut o = LinearOram::new(vec![[0u64; 2]; 8], false);
        o.access(3, Some(&[7, 8]));
        assert_eq!(o.access(3, None), [7, 8]);
        assert_eq!(o.access(4, None), [0, 0]);
    }
}
