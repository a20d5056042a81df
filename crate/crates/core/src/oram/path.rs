//! Path ORAM client with a flat position map.
//!
//! The tree has `levels` bucket levels, so a path holds `levels * B`
//! blocks. The client model charges `(levels * B)^2` buffer touches for a
//! write-back because greedy eviction must consider every buffered block for
//! every slot of the path without branching on the result.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AccessStats, OramBlock, OramError, ObliviousStore, Touch, TouchKind};

pub const DEFAULT_BUCKET_SIZE: usize = 4;
pub const DEFAULT_STASH_BOUND: usize = 64;

/// Number of bucket levels for `n` blocks.
pub fn levels_for(n: usize) -> usize {
    (n.max(2) as f64).log2().ceil() as usize
}

#[derive(Clone, Debug)]
pub struct PathOram<B> {
    bucket_size: usize,
    levels: usize,
    /// Heap-ordered buckets; index 0 is unused so that node `k` has children `2k`, `2k+1`.
    buckets: Vec<Vec<Option<(usize, B)>>>,
    position: Vec<usize>,
    stash: Vec<(usize, B)>,
    stash_bound: usize,
    fresh: bool,
    rng: ChaCha8Rng,
    stats: AccessStats,
    leaves: Vec<usize>,
    trace: Option<Vec<Touch>>,
}

impl<B: OramBlock> PathOram<B> {
    pub fn new(blocks: Vec<B>, bucket_size: usize, stash_bound: usize, fresh: bool, seed: u64) -> Result<PathOram<B>, OramError> {
        if bucket_size == 0 {
            return Err(OramError::ZeroBucketSize);
        }
        let mut o = PathOram {
            bucket_size,
            levels: 1,
            buckets: Vec::new(),
            position: Vec::new(),
            stash: Vec::new(),
            stash_bound,
            fresh,
            rng: ChaCha8Rng::seed_from_u64(seed),
            stats: AccessStats::default(),
            leaves: Vec::new(),
            trace: None,
        };
        o.rebuild(blocks);
        Ok(o)
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn bucket_size(&self) -> usize {
        self.bucket_size
    }

    pub fn leaf_count(&self) -> usize {
        1 << (self.levels - 1)
    }

    /// Leaf label of every access so far, in order.
    pub fn leaf_sequence(&self) -> &[usize] {
        &self.leaves
    }

    pub fn stash_len(&self) -> usize {
        self.stash.len()
    }

    pub fn record_trace(&mut self, on: bool) {
        self.trace = on.then(Vec::new);
    }

    pub fn trace(&self) -> &[Touch] {
        self.trace.as_deref().unwrap_or(&[])
    }

    /// Physical slots on the path to `leaf`, root first.
    pub fn path_slots(&self, leaf: usize) -> Vec<usize> {
        (0..self.levels).flat_map(|d| {
            let node = self.node(leaf, d);
            (0..self.bucket_size).map(move |s| node * self.bucket_size + s)
        }).collect()
    }

    fn node(&self, leaf: usize, depth: usize) -> usize {
        (self.leaf_count() + leaf) >> (self.levels - 1 - depth)
    }

    fn rebuild(&mut self, blocks: Vec<B>) {
        self.levels = levels_for(blocks.len());
        let nodes = 1usize << self.levels;
        self.buckets = vec![vec![None; self.bucket_size]; nodes];
        let leaves = self.leaf_count();
        self.position = (0..blocks.len()).map(|_| self.rng.random_range(0..leaves)).collect();
        // Place each block as deep as possible on its own path.
        self.stash = blocks.into_iter().enumerate().collect();
        let ids: Vec<usize> = (0..self.position.len()).collect();
        let mut leftover = Vec::new();
        for id in ids {
            let entry = self.stash.iter().position(|(i, _)| *i == id).map(|p| self.stash.swap_remove(p)).unwrap();
            let leaf = self.position[id];
            let mut placed = Some(entry);
            for d in (0..self.levels).rev() {
                let node = self.node(leaf, d);
                if let Some(slot) = self.buckets[node].iter_mut().find(|s| s.is_none()) {
                    *slot = placed.take();
                    break;
                }
            }
            leftover.extend(placed);
        }
        self.stash = leftover;
    }

    fn all_blocks(&mut self) -> Vec<B> {
        let mut out: Vec<Option<B>> = vec![None; self.position.len()];
        for bucket in &mut self.buckets {
            for (id, b) in bucket.iter_mut().filter_map(Option::take) {
                out[id] = Some(b);
            }
        }
        for (id, b) in self.stash.drain(..) {
            out[id] = Some(b);
        }
        out.into_iter().map(|b| b.expect("every block is stored exactly once")).collect()
    }
}

impl<B: OramBlock> ObliviousStore<B> for PathOram<B> {
    fn len(&self) -> usize {
        self.position.len()
    }

    fn access(&mut self, id: usize, write: Option<&B>) -> B {
        assert!(id < self.position.len(), "block {id} outside store of {}", self.position.len());
        let seq = self.stats.accesses;
        self.stats.accesses += 1;
        let leaf = self.position[id];
        self.leaves.push(leaf);
        self.position[id] = self.rng.random_range(0..self.leaf_count());

        let path = self.path_slots(leaf);
        for d in 0..self.levels {
            let node = self.node(leaf, d);
            for slot in &mut self.buckets[node] {
                self.stash.extend(slot.take());
            }
        }
        self.stats.touches += path.len() as u64;
        if let Some(t) = &mut self.trace {
            t.extend(path.iter().map(|&index| Touch { seq, index, kind: TouchKind::PathRead }));
        }

        let found = self.stash.iter_mut().find(|(i, _)| *i == id).expect("block is on its path or in the stash");
        let out = found.1.clone();
        if let Some(w) = write {
            found.1 = w.clone();
        }

        // Greedy eviction, deepest bucket first.
        for d in (0..self.levels).rev() {
            let node = self.node(leaf, d);
            for s in 0..self.bucket_size {
                let fits = self.stash.iter().position(|(i, _)| self.node(self.position[*i], d) == node);
                if let Some(p) = fits {
                    let (i, mut b) = self.stash.swap_remove(p);
                    if self.fresh {
                        b.bump();
                    }
                    self.buckets[node][s] = Some((i, b));
                }
            }
        }
        let path_len = path.len() as u64;
        self.stats.writeback_touches += path_len * path_len;
        if let Some(t) = &mut self.trace {
            t.extend(path.iter().map(|&index| Touch { seq, index, kind: TouchKind::PathWrite }));
        }
        self.stats.stash_max = self.stats.stash_max.max(self.stash.len());
        if self.stash.len() > self.stash_bound {
            self.stats.stash_overflows += 1;
        }
        out
    }

    fn push(&mut self, block: B) -> usize {
        let id = self.position.len();
        if levels_for(id + 1) != self.levels {
            let mut blocks = self.all_blocks();
            blocks.push(block);
            self.rebuild(blocks);
        } else {
            let leaf = self.rng.random_range(0..self.leaf_count());
            self.position.push(leaf);
            self.stash.push((id, block));
        }
        id
    }

    fn peek(&self, id: usize) -> &B {
        self.buckets
            .iter()
            .flatten()
            .flatten()
            .chain(self.stash.iter())
            .find(|(i, _)| *i == id)
            .map(|(_, b)| b)
            .expect("every block is stored exactly once")
    }

    fn stats(&self) -> &AccessStats {
        &self.stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn eight_blocks_with_bucket_four_fetch_twelve() {
        let mut o = PathOram::new(vec![[0u64; 2]; 8], 4, 64, false, 1).unwrap();
        assert_eq!(o.levels(), 3);
        o.access(2, None);
        assert_eq!(o.stats().touches, 12);
        assert_eq!(o.stats().writeback_touches, 144);
    }

    #[test]
    fn leaf_is_redrawn_every_access() {
        let mut o = PathOram::new(vec![[0u64; 2]; 64], 4, 64, false, 3).unwrap();
        for _ in 0..200 {
            o.access(7, None);
        }
        let distinct: std::collections::HashSet<_> = o.leaf_sequence().iter().collect();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn coherent_with_a_map_and_through_growth() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut o = PathOram::new(vec![[0u64; 2]; 5], 4, 64, false, 2).unwrap();
        let mut oracle: HashMap<usize, [u64; 2]> = (0..5).map(|i| (i, [0, 0])).collect();
        for step in 0..3000u64 {
            if step % 100 == 0 {
                let id = o.push([step, 1]);
                oracle.insert(id, [step, 1]);
            }
            let id = rng.random_range(0..o.len());
            if rng.random_bool(0.5) {
                o.access(id, Some(&[step, 2]));
                oracle.insert(id, [step, 2]);
            } else {
                assert_eq!(o.access(id, None), oracle[&id]);
            }
        }
        for (id, v) in &oracle {
            assert_eq!(o.peek(*id), v);
        }
    }

    #[test]
    fn zero_bucket_is_rejected() {
        assert!(matches!(PathOram::new(vec![[0u64; 2]; 4], 0, 64, false, 0), Err(OramError::ZeroBucketSize)));
    }
}
