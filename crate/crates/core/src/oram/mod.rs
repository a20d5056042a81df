//! Oblivious block stores for code and data.

pub mod cipher;
pub mod code;
pub mod ct;
pub mod linear;
pub mod path;
pub mod store;

use std::fmt;

pub use cipher::{CiphertextModel, Tag};
pub use code::CodeOram;
pub use ct::{ct_eq_mask, ct_select_u64, CtSelect};
pub use linear::LinearOram;
pub use path::{levels_for, PathOram, DEFAULT_BUCKET_SIZE, DEFAULT_STASH_BOUND};
pub use store::{pair_offset, repeat_bound_log2, DataBlockStore, DataEntry, DataOramKind, PairFetch, DATA_BLOCK_BYTES, PAIR_BYTES};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum OramError {
    #[error("address {0:#x} is not in the store and lazy insertion is disabled")]
    AddressMissing(u64),
    #[error("access of {width} bytes at {addr:#x} leaves the fetched block pair")]
    UnalignedSpanBeyondPair { addr: u64, width: usize },
    #[error("object base {0:#x} is not block aligned")]
    Misaligned(u64),
    #[error("block {0:#x} is already mapped")]
    AlreadyMapped(u64),
    #[error("store has no dummy entry")]
    NoDummyEntry,
    #[error("bucket size must be at least 1")]
    ZeroBucketSize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct AccessStats {
    pub accesses: u64,
    /// Physical entries read or written.
    pub touches: u64,
    /// Client buffer touches spent on constant-time eviction.
    pub writeback_touches: u64,
    pub stash_max: usize,
    pub stash_overflows: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TouchKind {
    Scan,
    PathRead,
    PathWrite,
}

impl TouchKind {
    pub fn name(self) -> &'static str {
        match self {
            TouchKind::Scan => "scan",
            TouchKind::PathRead => "read",
            TouchKind::PathWrite => "write",
        }
    }
}

/// One physical entry touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Touch {
    /// Access number within the store.
    pub seq: u64,
    pub index: usize,
    pub kind: TouchKind,
}

impl fmt::Display for Touch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.seq, self.index, self.kind.name())
    }
}

/// One `seq,index,kind` line per touch.
pub fn format_trace(trace: &[Touch]) -> String {
    trace.iter().map(|t| format!("{t}\n")).collect()
}

/// Blocks an ORAM can hold.
pub trait OramBlock: CtSelect + Clone + Default {
    /// Advances freshness counters, if the block has any.
    fn bump(&mut self) {}
}

impl<const N: usize> OramBlock for [u64; N] where [u64; N]: Default {}
impl OramBlock for Vec<u64> {}
impl OramBlock for u64 {}

/// Common interface of the linear and path organisations.
pub trait ObliviousStore<B> {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Reads block `idx` and, if `write` is given, replaces it. The physical
    /// trace does not depend on whether a write happens.
    fn access(&mut self, idx: usize, write: Option<&B>) -> B;
    fn push(&mut self, block: B) -> usize;
    /// Non-oblivious read for checkers.
    fn peek(&self, idx: usize) -> &B;
    fn stats(&self) -> &AccessStats;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BreakEven {
    pub n: u64,
    pub path_touches: f64,
    pub linear_touches: f64,
}

/// Modelled Path ORAM touches for `n` blocks: a fetch of `B log n` blocks
/// plus a `(B log n)^2` constant-time write-back. Locality is not modelled.
pub fn path_touch_model(bucket: usize, n: u64) -> f64 {
    let p = bucket as f64 * (n as f64).log2();
    p + p * p
}

/// Smallest `n` at which Path ORAM touches fewer entries than a linear scan.
pub fn break_even(bucket: usize) -> Result<BreakEven, OramError> {
    if bucket == 0 {
        return Err(OramError::ZeroBucketSize);
    }
    let mut n = 2u64;
    loop {
        let path = path_touch_model(bucket, n);
        if path < n as f64 {
            return Ok(BreakEven { n, path_touches: path, linear_touches: n as f64 });
        }
        n += 1;
    }
}
