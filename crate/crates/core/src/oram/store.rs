//! Data-side store: 16-byte blocks, each half paired with its own counter.
//!
//! A block's two 8-byte data halves are interleaved with two 8-byte
//! counters, so every 16-byte encryption block holds one data chunk and one
//! counter. Bumping the counters on every write-back makes each ciphertext
//! fresh. A deterministic cipher can then repeat a tag only after the
//! counter wraps, which takes 2^64 writes.

use std::collections::BTreeMap;

use super::cipher::{CiphertextModel, Tag};
use super::ct::CtSelect;
use super::linear::LinearOram;
use super::path::PathOram;
use super::{AccessStats, OramBlock, OramError, ObliviousStore};
use crate::visa::AccessKind;

pub const DATA_BLOCK_BYTES: usize = 16;
pub const ENCRYPTION_BLOCK_BYTES: usize = 16;
/// Bytes the data scratchpad holds: two adjacent blocks.
pub const PAIR_BYTES: usize = 2 * DATA_BLOCK_BYTES;

/// Writes before a deterministic tag for a fixed slot may repeat.
pub fn repeat_bound_log2(encryption_block_bytes: usize) -> u32 {
    // Half of the encryption block is counter: 8 bits per byte.
    (8 * encryption_block_bytes / 2) as u32
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct DataEntry {
    pub halves: [u64; 2],
    pub counters: [u64; 2],
}

impl DataEntry {
    pub fn from_bytes(b: &[u8]) -> DataEntry {
        let mut buf = [0u8; DATA_BLOCK_BYTES];
        buf[..b.len()].copy_from_slice(b);
        DataEntry {
            halves: [u64::from_le_bytes(buf[..8].try_into().unwrap()), u64::from_le_bytes(buf[8..].try_into().unwrap())],
            counters: [0, 0],
        }
    }

    pub fn data_bytes(&self) -> [u8; DATA_BLOCK_BYTES] {
        let mut out = [0u8; DATA_BLOCK_BYTES];
        out[..8].copy_from_slice(&self.halves[0].to_le_bytes());
        out[8..].copy_from_slice(&self.halves[1].to_le_bytes());
        out
    }

    /// Memory image: `half0 | ctr0 | half1 | ctr1`.
    pub fn interleaved(&self) -> [u8; 2 * ENCRYPTION_BLOCK_BYTES] {
        let mut out = [0u8; 32];
        for j in 0..2 {
            out[16 * j..16 * j + 8].copy_from_slice(&self.halves[j].to_le_bytes());
            out[16 * j + 8..16 * j + 16].copy_from_slice(&self.counters[j].to_le_bytes());
        }
        out
    }
}

impl CtSelect for DataEntry {
    fn ct_select(mask: u64, a: &Self, b: &Self) -> Self {
        DataEntry {
            halves: <[u64; 2]>::ct_select(mask, &a.halves, &b.halves),
            counters: <[u64; 2]>::ct_select(mask, &a.counters, &b.counters),
        }
    }
}

impl OramBlock for DataEntry {
    fn bump(&mut self) {
        self.counters[0] = self.counters[0].wrapping_add(1);
        self.counters[1] = self.counters[1].wrapping_add(1);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataOramKind {
    #[default]
    Linear,
    Path,
}

#[derive(Clone, Debug)]
enum Backend {
    Linear(LinearOram<DataEntry>),
    Path(PathOram<DataEntry>),
}

impl Backend {
    fn store(&mut self) -> &mut dyn ObliviousStore<DataEntry> {
        match self {
            Backend::Linear(o) => o,
            Backend::Path(o) => o,
        }
    }

    fn store_ref(&self) -> &dyn ObliviousStore<DataEntry> {
        match self {
            Backend::Linear(o) => o,
            Backend::Path(o) => o,
        }
    }
}

/// An object registered for on-demand insertion.
#[derive(Clone, Debug)]
struct LazyObject {
    bytes: Vec<u8>,
}

/// Result of one data-controller entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairFetch {
    /// Address of the first block of the pair.
    pub base: u64,
    /// The primary block was inserted on demand.
    pub violation: bool,
    /// Tags of the encryption blocks written back by the flush.
    pub written_tags: Vec<Tag>,
    /// Physical entry touches for this entry, flush included.
    pub touches: u64,
}

#[derive(Clone, Debug)]
pub struct DataBlockStore {
    backend: Backend,
    map: BTreeMap<u64, usize>,
    lazy: BTreeMap<u64, LazyObject>,
    fallback: bool,
    fresh: bool,
    cipher: CiphertextModel,
    dummy: Option<usize>,
    /// Indices whose scratchpad copy must be written back at the next fetch.
    pending: Option<[usize; 2]>,
    current: Option<[usize; 2]>,
}

impl DataBlockStore {
    pub fn new(
        kind: DataOramKind,
        cipher: CiphertextModel,
        fresh: bool,
        fallback: bool,
        seed: u64,
    ) -> DataBlockStore {
        let backend = match kind {
            DataOramKind::Linear => Backend::Linear(LinearOram::new(Vec::new(), fresh)),
            DataOramKind::Path => Backend::Path(
                PathOram::new(Vec::new(), super::path::DEFAULT_BUCKET_SIZE, super::path::DEFAULT_STASH_BOUND, fresh, seed)
                    .expect("default bucket size is positive"),
            ),
        };
        DataBlockStore {
            backend,
            map: BTreeMap::new(),
            lazy: BTreeMap::new(),
            fallback,
            fresh,
            cipher,
            dummy: None,
            pending: None,
            current: None,
        }
    }

    pub fn len(&self) -> usize {
        self.backend.store_ref().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> &AccessStats {
        self.backend.store_ref().stats()
    }

    pub fn enable_trace(&mut self, on: bool) {
        if let Backend::Linear(o) = &mut self.backend {
            o.record_trace(on);
        } else if let Backend::Path(o) = &mut self.backend {
            o.record_trace(on);
        }
    }

    pub fn trace(&self) -> &[super::Touch] {
        match &self.backend {
            Backend::Linear(o) => o.trace(),
            Backend::Path(o) => o.trace(),
        }
    }

    /// Inserts an object starting at a 16-byte aligned address, one entry per block.
    pub fn insert_object(&mut self, base: u64, bytes: &[u8]) -> Result<(), OramError> {
        if base % DATA_BLOCK_BYTES as u64 != 0 {
            return Err(OramError::Misaligned(base));
        }
        for (k, chunk) in bytes.chunks(DATA_BLOCK_BYTES).enumerate() {
            let addr = base + (k * DATA_BLOCK_BYTES) as u64;
            if self.map.contains_key(&addr) {
                return Err(OramError::AlreadyMapped(addr));
            }
            let idx = self.backend.store().push(DataEntry::from_bytes(chunk));
            self.map.insert(addr, idx);
        }
        Ok(())
    }

    /// Registers an object that is inserted only when first touched.
    pub fn register_lazy(&mut self, base: u64, bytes: &[u8]) {
        self.lazy.insert(base, LazyObject { bytes: bytes.to_vec() });
    }

    /// Reserves the entry that dummy accesses hit.
    pub fn insert_dummy(&mut self, addr: u64) -> Result<(), OramError> {
        self.insert_object(addr, &[0u8; DATA_BLOCK_BYTES])?;
        self.dummy = Some(self.map[&addr]);
        Ok(())
    }

    pub fn is_mapped(&self, addr: u64) -> bool {
        self.map.contains_key(&Self::block_of(addr))
    }

    fn block_of(addr: u64) -> u64 {
        addr & !(DATA_BLOCK_BYTES as u64 - 1)
    }

    fn dummy_index(&self) -> Result<usize, OramError> {
        self.dummy.ok_or(OramError::NoDummyEntry)
    }

    fn resolve(&mut self, block: u64) -> Result<(usize, bool), OramError> {
        if let Some(&i) = self.map.get(&block) {
            return Ok((i, false));
        }
        if !self.fallback {
            return Err(OramError::AddressMissing(block));
        }
        let object = self
            .lazy
            .range(..=block)
            .next_back()
            .filter(|(b, o)| block < **b + o.bytes.len() as u64)
            .map(|(b, _)| *b);
        match object {
            Some(base) => {
                let o = self.lazy.remove(&base).unwrap();
                self.insert_object(base, &o.bytes)?;
            }
            None => self.insert_object(block, &[0u8; DATA_BLOCK_BYTES])?,
        }
        Ok((self.map[&block], true))
    }

    fn tags_of(&self, idx: usize, e: &DataEntry) -> [Tag; 2] {
        let img = e.interleaved();
        let slot = (idx * 2 * ENCRYPTION_BLOCK_BYTES) as u64;
        [self.cipher.tag(slot, &img[..16]), self.cipher.tag(slot + 16, &img[16..])]
    }

    /// Writes new data halves to `idx`, bumping its counters under freshness,
    /// and returns the tags of its two encryption blocks.
    pub fn fresh_write(&mut self, idx: usize, halves: [u64; 2]) -> [Tag; 2] {
        let store = self.backend.store();
        let old = *store.peek(idx);
        let mut e = DataEntry { halves, counters: old.counters };
        if self.fresh {
            e.bump();
        }
        store.access(idx, Some(&e));
        let written = *self.backend.store_ref().peek(idx);
        self.tags_of(idx, &written)
    }

    /// Writes the scratchpad back if the previous entry was a store. The
    /// write-back always runs so that its trace does not reveal the kind.
    fn flush_into(&mut self, scratch: &[u8; PAIR_BYTES], tags: &mut Vec<Tag>) -> Result<(), OramError> {
        let dummy = self.dummy_index()?;
        let targets = self.pending.take();
        for j in 0..2 {
            match targets {
                Some(t) => {
                    let chunk = &scratch[j * DATA_BLOCK_BYTES..(j + 1) * DATA_BLOCK_BYTES];
                    let e = DataEntry::from_bytes(chunk);
                    tags.extend(self.fresh_write(t[j], e.halves));
                }
                None => {
                    self.backend.store().access(dummy, None);
                }
            }
        }
        Ok(())
    }

    /// One data-controller entry: flushes the deferred write, then loads the
    /// pair of blocks covering `addr` into `scratch`.
    pub fn access(&mut self, addr: u64, kind: AccessKind, scratch: &mut [u8; PAIR_BYTES]) -> Result<PairFetch, OramError> {
        let before = self.stats().touches;
        let mut written_tags = Vec::new();
        self.flush_into(scratch, &mut written_tags)?;
        let base = Self::block_of(addr);
        let (first, violation) = self.resolve(base)?;
        let second = match self.map.get(&(base + DATA_BLOCK_BYTES as u64)) {
            Some(&i) => i,
            None => self.dummy_index()?,
        };
        for (j, idx) in [first, second].into_iter().enumerate() {
            let e = self.backend.store().access(idx, None);
            scratch[j * DATA_BLOCK_BYTES..(j + 1) * DATA_BLOCK_BYTES].copy_from_slice(&e.data_bytes());
        }
        self.current = Some([first, second]);
        if kind == AccessKind::Store {
            self.pending = self.current;
        }
        let touches = self.stats().touches - before;
        Ok(PairFetch { base, violation, written_tags, touches })
    }

    /// Final write-back at halt.
    pub fn flush(&mut self, scratch: &[u8; PAIR_BYTES]) -> Result<Vec<Tag>, OramError> {
        let mut tags = Vec::new();
        if self.pending.is_some() {
            self.flush_into(scratch, &mut tags)?;
        }
        Ok(tags)
    }

    /// Plaintext of the block at `addr`, for the correctness checker only.
    pub fn peek_block(&self, addr: u64) -> Option<[u8; DATA_BLOCK_BYTES]> {
        self.map.get(&Self::block_of(addr)).map(|&i| self.backend.store_ref().peek(i).data_bytes())
    }

    /// Reads `len` bytes at `addr`, for the correctness checker only.
    pub fn peek_bytes(&self, addr: u64, len: usize) -> Option<Vec<u8>> {
        let mut out = Vec::with_capacity(len);
        let mut a = addr;
        while out.len() < len {
            let block = self.peek_block(a)?;
            let off = (a - Self::block_of(a)) as usize;
            let take = (DATA_BLOCK_BYTES - off).min(len - out.len());
            out.extend_from_slice(&block[off..off + take]);
            a += take as u64;
        }
        Some(out)
    }

    /// Encryption-block tags of every entry, as a memory snooper sees them.
    pub fn ciphertext_image(&self) -> Vec<Tag> {
        let s = self.backend.store_ref();
        (0..s.len()).flat_map(|i| self.tags_of(i, s.peek(i))).collect()
    }
}

/// Offset of `addr` in a pair based at `base`, checking that `width` bytes fit.
pub fn pair_offset(base: u64, addr: u64, width: usize) -> Result<usize, OramError> {
    let off = addr.wrapping_sub(base);
    if off.saturating_add(width as u64) > PAIR_BYTES as u64 {
        return Err(OramError::UnalignedSpanBeyondPair { addr, width });
    }
    Ok(off as usize)
}
