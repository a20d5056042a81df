//! Scratchpad pools and their rotation.

use rand::Rng;

/// Code scratchpad pool: 160 locations of 256 bytes.
pub const CODE_SCRATCH_BASE: u64 = 0x2000_0000;
pub const CODE_POOL_BYTES: usize = 40_960;
pub const CODE_ALIGN: usize = 256;
/// Data scratchpad pool: as many 32-byte pair locations.
pub const DATA_SCRATCH_BASE: u64 = 0x3000_0000;
pub const DATA_POOL_BYTES: usize = 160 * DATA_ALIGN;
pub const DATA_ALIGN: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scratchpad {
    base: u64,
    pool_bytes: usize,
    align: usize,
    active: u64,
}

impl Scratchpad {
    pub fn new(base: u64, pool_bytes: usize, align: usize) -> Scratchpad {
        assert!(align > 0 && pool_bytes >= align, "pool holds at least one location");
        Scratchpad { base, pool_bytes, align, active: base }
    }

    pub fn code() -> Scratchpad {
        Scratchpad::new(CODE_SCRATCH_BASE, CODE_POOL_BYTES, CODE_ALIGN)
    }

    pub fn data() -> Scratchpad {
        Scratchpad::new(DATA_SCRATCH_BASE, DATA_POOL_BYTES, DATA_ALIGN)
    }

    pub fn locations(&self) -> usize {
        self.pool_bytes / self.align
    }

    pub fn active(&self) -> u64 {
        self.active
    }

    /// Draws the next active location uniformly, with replacement.
    pub fn rotate(&mut self, rng: &mut impl Rng) -> u64 {
        let k = rng.random_range(0..self.locations());
        self.active = self.base + (k * self.align) as u64;
        self.active
    }
}
