//! Code-side store: a linear scan over per-block rows of payload indices.
//!
//! With compression the payload table holds each distinct slot once and
//! rows index into it. Without it every slot of every block has its own
//! table entry. Either way each fetch scans every row.

use std::collections::HashMap;
use std::hash::Hash;

use super::linear::LinearOram;
use super::{AccessStats, ObliviousStore, Touch};

/// Row filler for blocks shorter than the widest one.
const PAD: u64 = u64::MAX;

#[derive(Clone, Debug)]
pub struct CodeOram<T> {
    table: Vec<T>,
    rows: LinearOram<Vec<u64>>,
    compressed: bool,
}

impl<T: Clone + Eq + Hash> CodeOram<T> {
    pub fn new(blocks: &[Vec<T>], compressed: bool) -> CodeOram<T> {
        let width = blocks.iter().map(Vec::len).max().unwrap_or(0);
        let mut table = Vec::new();
        let mut index: HashMap<T, u64> = HashMap::new();
        let rows = blocks
            .iter()
            .map(|b| {
                let mut row: Vec<u64> = b
                    .iter()
                    .map(|slot| {
                        if compressed {
                            if let Some(&i) = index.get(slot) {
                                return i;
                            }
                        }
                        table.push(slot.clone());
                        let i = (table.len() - 1) as u64;
                        if compressed {
                            index.insert(slot.clone(), i);
                        }
                        i
                    })
                    .collect();
                row.resize(width, PAD);
                row
            })
            .collect();
        CodeOram { table, rows: LinearOram::new(rows, false), compressed }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.len() == 0
    }

    pub fn compressed(&self) -> bool {
        self.compressed
    }

    pub fn table_len(&self) -> usize {
        self.table.len()
    }

    pub fn fetch(&mut self, id: usize) -> Vec<T> {
        let row = self.rows.access(id, None);
        row.into_iter().take_while(|&i| i != PAD).map(|i| self.table[i as usize].clone()).collect()
    }

    pub fn stats(&self) -> &AccessStats {
        self.rows.stats()
    }

    pub fn record_trace(&mut self, on: bool) {
        self.rows.record_trace(on);
    }

    pub fn trace(&self) -> &[Touch] {
        self.rows.trace()
    }
}
