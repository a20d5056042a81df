//! Block patterns and their estimated runtime cost.

mod brute;
mod genetic;

pub use brute::{brute_force, search_space_estimate, BruteForceConfig, DEFAULT_ENUMERATION_BOUND};
pub use genetic::{genetic_search, population_size, GaConfig, GaOutcome};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profiler::BlockProfile;
use crate::visa::InstructionClass;

/// Slots taken by the block suffix.
pub const SUFFIX_SLOTS: usize = 4;
/// Slots per 160-byte block.
pub const DEFAULT_SLOT_COUNT: usize = 20;

/// A pattern element before expansion into slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SlotKind {
    Class1,
    Class2,
    Load,
    Store,
}

impl SlotKind {
    pub const ALL: [SlotKind; 4] = [SlotKind::Class1, SlotKind::Class2, SlotKind::Load, SlotKind::Store];

    /// Number of 8-byte slots the element expands to.
    pub const fn width(self) -> usize {
        match self {
            SlotKind::Class1 => 1,
            SlotKind::Class2 => 2,
            SlotKind::Load | SlotKind::Store => 3,
        }
    }

    /// The element that holds instructions of class `c`. Pointer adjustments
    /// are single-slot adds and share the class1 element.
    pub fn for_class(c: InstructionClass) -> Option<SlotKind> {
        Some(match c {
            InstructionClass::Class1 | InstructionClass::PtrAdjust => SlotKind::Class1,
            InstructionClass::Class2 => SlotKind::Class2,
            InstructionClass::Load => SlotKind::Load,
            InstructionClass::Store => SlotKind::Store,
            InstructionClass::Control | InstructionClass::Fill => return None,
        })
    }

    pub fn accepts(self, c: InstructionClass) -> bool {
        SlotKind::for_class(c) == Some(self)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            SlotKind::Class1 => "c1",
            SlotKind::Class2 => "c2",
            SlotKind::Load => "ld",
            SlotKind::Store => "st",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatternError {
    #[error("profile tag {0} has no matching slot in the pattern")]
    MissingClass(InstructionClass),
    #[error("pattern needs at least {needed} `{}` elements", .kind.short_name())]
    TooFewElements { kind: SlotKind, needed: usize },
    #[error("{slot_count} slots cannot hold the suffix and the mandatory elements ({minimum} slots)")]
    SlotCountTooSmall { slot_count: usize, minimum: usize },
    #[error("{slot_count} slots exceed the genetic search limit of {maximum}")]
    SlotCountTooLarge { slot_count: usize, maximum: usize },
    #[error("search space of about {estimate:.3e} candidates exceeds the bound of {bound}")]
    SearchSpaceTooLarge { estimate: f64, bound: u64 },
    #[error("pattern expands to {got} slots, expected {expected}")]
    WrongLength { got: usize, expected: usize },
    #[error("invalid pattern string: {0}")]
    Syntax(String),
}

/// Ordered pattern elements followed by the implicit 4-slot suffix.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockPattern {
    elements: Vec<SlotKind>,
}

impl BlockPattern {
    pub fn new(elements: Vec<SlotKind>) -> BlockPattern {
        BlockPattern { elements }
    }

    pub fn elements(&self) -> &[SlotKind] {
        &self.elements
    }

    /// Total slots including the suffix.
    pub fn slot_count(&self) -> usize {
        expanded_width(&self.elements) + SUFFIX_SLOTS
    }

    pub fn count(&self, kind: SlotKind) -> usize {
        self.elements.iter().filter(|k| **k == kind).count()
    }

    /// Checks the expanded length and the mandatory element counts.
    pub fn validate(&self, slot_count: usize, required: &Requirements) -> Result<(), PatternError> {
        if self.slot_count() != slot_count {
            return Err(PatternError::WrongLength { got: self.slot_count(), expected: slot_count });
        }
        for (&kind, &needed) in required {
            match self.count(kind) {
                0 => {
                    return Err(PatternError::MissingClass(match kind {
                        SlotKind::Class1 => InstructionClass::Class1,
                        SlotKind::Class2 => InstructionClass::Class2,
                        SlotKind::Load => InstructionClass::Load,
                        SlotKind::Store => InstructionClass::Store,
                    }))
                }
                n if n < needed => return Err(PatternError::TooFewElements { kind, needed }),
                _ => {}
            }
        }
        Ok(())
    }

    /// Deterministic ordering among equal-cost patterns: fewer stores, then
    /// lexicographic over the element sequence.
    pub fn tie_key(&self) -> (usize, &[SlotKind]) {
        (self.count(SlotKind::Store), &self.elements)
    }
}

impl fmt::Display for BlockPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in &self.elements {
            write!(f, "{}-", k.short_name())?;
        }
        f.write_str("sfx")
    }
}

impl FromStr for BlockPattern {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split('-').collect();
        let Some((last, body)) = parts.split_last() else {
            return Err(PatternError::Syntax(s.into()));
        };
        if *last != "sfx" {
            return Err(PatternError::Syntax(format!("`{s}` must end with `sfx`")));
        }
        let elements = body
            .iter()
            .map(|p| {
                SlotKind::ALL
                    .into_iter()
                    .find(|k| k.short_name() == *p)
                    .ok_or_else(|| PatternError::Syntax(format!("unknown element `{p}`")))
            })
            .collect::<Result<_, _>>()?;
        Ok(BlockPattern { elements })
    }
}

pub(crate) fn expanded_width(elements: &[SlotKind]) -> usize {
    elements.iter().map(|k| k.width()).sum()
}

/// Least number of copies of each element a pattern must hold.
pub type Requirements = BTreeMap<SlotKind, usize>;

/// Whether tag `i` starts an address materialisation whose pointer
/// adjustment must run in the same code block.
fn starts_pair(seq: &[InstructionClass], i: usize) -> bool {
    seq[i] == InstructionClass::Class1 && seq.get(i + 1) == Some(&InstructionClass::PtrAdjust)
}

/// Elements every pattern for these profiles must contain. One copy of each
/// kind in use, and two class1 copies if an address fix-up must share a
/// block with its `lea`.
pub fn required_kinds(profiles: &[BlockProfile]) -> Requirements {
    let mut out = Requirements::new();
    for p in profiles {
        for (i, c) in p.class_seq.iter().enumerate() {
            if let Some(k) = SlotKind::for_class(*c) {
                let needed = if starts_pair(&p.class_seq, i) { 2 } else { 1 };
                let e = out.entry(k).or_insert(needed);
                *e = (*e).max(needed);
            }
        }
    }
    out
}

/// Smallest slot count that fits the suffix and the mandatory elements.
pub fn minimum_slot_count(required: &Requirements) -> usize {
    SUFFIX_SLOTS + required.iter().map(|(k, n)| k.width() * n).sum::<usize>()
}

/// Emitted blocks and dummy memory accesses for one profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileCost {
    pub weight: u64,
    pub blocks: u64,
    pub dummy_loads: u64,
    pub dummy_stores: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub per_profile: Vec<ProfileCost>,
    pub total: u64,
}

/// Weights of the cost terms. Stores count double by default since they
/// cost an extra write-back.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub store_weight: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { store_weight: 2 }
    }
}

/// Earliest element at or after `from` that can take a tag of `kind`. A pair
/// start also needs a later class1 element for its pointer adjustment.
pub(crate) fn place(elements: &[SlotKind], from: usize, kind: SlotKind, pair: bool) -> Option<usize> {
    let at = from + elements[from..].iter().position(|k| *k == kind)?;
    (!pair || elements[at + 1..].contains(&SlotKind::Class1)).then_some(at)
}

/// Number of pattern copies greedy earliest-match placement needs for `seq`.
pub fn blocks_needed(elements: &[SlotKind], seq: &[InstructionClass]) -> Result<u64, PatternError> {
    let mut blocks = 1u64;
    let mut pos = 0usize;
    for (i, &tag) in seq.iter().enumerate() {
        let kind = SlotKind::for_class(tag).ok_or(PatternError::MissingClass(tag))?;
        let pair = starts_pair(seq, i);
        let at = match place(elements, pos, kind, pair) {
            Some(at) => at,
            None => {
                blocks += 1;
                place(elements, 0, kind, pair).ok_or(if pair && elements.contains(&kind) {
                    PatternError::TooFewElements { kind, needed: 2 }
                } else {
                    PatternError::MissingClass(tag)
                })?
            }
        };
        pos = at + 1;
    }
    Ok(blocks)
}

impl CostModel {
    pub fn estimate(&self, pat: &BlockPattern, profiles: &[BlockProfile]) -> Result<CostReport, PatternError> {
        let loads = pat.count(SlotKind::Load) as u64;
        let stores = pat.count(SlotKind::Store) as u64;
        let mut per_profile = Vec::with_capacity(profiles.len());
        let mut total = 0u64;
        for p in profiles {
            let blocks = blocks_needed(&pat.elements, &p.class_seq)?;
            let real = |c: InstructionClass| p.class_seq.iter().filter(|t| **t == c).count() as u64;
            let cost = ProfileCost {
                weight: p.weight,
                blocks,
                dummy_loads: blocks * loads - real(InstructionClass::Load),
                dummy_stores: blocks * stores - real(InstructionClass::Store),
            };
            total += p.weight * (cost.blocks + cost.dummy_loads + self.store_weight * cost.dummy_stores);
            per_profile.push(cost);
        }
        Ok(CostReport { per_profile, total })
    }

    pub(crate) fn total(&self, elements: &[SlotKind], profiles: &[BlockProfile]) -> Result<u64, PatternError> {
        let mut loads = 0u64;
        let mut stores = 0u64;
        for k in elements {
            match k {
                SlotKind::Load => loads += 1,
                SlotKind::Store => stores += 1,
                _ => {}
            }
        }
        let mut total = 0u64;
        for p in profiles {
            let b = blocks_needed(elements, &p.class_seq)?;
            let (mut nl, mut ns) = (0u64, 0u64);
            for t in &p.class_seq {
                match t {
                    InstructionClass::Load => nl += 1,
                    InstructionClass::Store => ns += 1,
                    _ => {}
                }
            }
            total += p.weight * (b + b * loads - nl + self.store_weight * (b * stores - ns));
        }
        Ok(total)
    }
}

/// Cost under the default model.
pub fn estimate_cost(pat: &BlockPattern, profiles: &[BlockProfile]) -> Result<CostReport, PatternError> {
    CostModel::default().estimate(pat, profiles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use InstructionClass::*;
    use SlotKind as K;

    fn prof(seq: Vec<InstructionClass>, weight: u64) -> BlockProfile {
        BlockProfile { function: "f".into(), label: "b".into(), class_seq: seq, weight }
    }

    #[test]
    fn address_fix_up_shares_a_copy_with_its_lea() {
        // The lea cannot take the last class1 element, so it opens copy 2
        // with its fix-up; the final load then spills into copy 3.
        let pat = BlockPattern::new(vec![K::Class1, K::Load, K::Class1]);
        let seq = vec![Class1, Load, Class1, PtrAdjust, Load];
        assert_eq!(blocks_needed(pat.elements(), &seq).unwrap(), 3);
        assert_eq!(blocks_needed(pat.elements(), &seq[2..]).unwrap(), 2);
        let required = required_kinds(&[prof(seq.clone(), 1)]);
        assert_eq!(required[&K::Class1], 2);
        assert_eq!(minimum_slot_count(&required), 4 + 2 + 3);
        let single = BlockPattern::new(vec![K::Class1, K::Load]);
        assert_eq!(
            blocks_needed(single.elements(), &seq),
            Err(PatternError::TooFewElements { kind: K::Class1, needed: 2 })
        );
        assert_eq!(single.validate(9, &required), Err(PatternError::WrongLength { got: 8, expected: 9 }));
        assert_eq!(single.validate(8, &required), Err(PatternError::TooFewElements { kind: K::Class1, needed: 2 }));
    }

    #[test]
    fn empty_profile_list_costs_nothing() {
        let pat = BlockPattern::new(vec![K::Class1]);
        assert_eq!(estimate_cost(&pat, &[]).unwrap().total, 0);
    }

    #[test]
    fn class1_run_spills_over_three_blocks() {
        let pat = BlockPattern::new(vec![K::Class1, K::Load, K::Store]);
        let r = estimate_cost(&pat, &[prof(vec![Class1; 3], 1)]).unwrap();
        let c = r.per_profile[0];
        assert_eq!((c.blocks, c.dummy_loads, c.dummy_stores), (3, 3, 3));
        assert_eq!(r.total, 12);
    }

    #[test]
    fn exact_match_needs_one_block() {
        let pat = BlockPattern::new(vec![K::Load, K::Class1, K::Store]);
        let r = estimate_cost(&pat, &[prof(vec![Load, Class1, Store], 2)]).unwrap();
        let c = r.per_profile[0];
        assert_eq!((c.blocks, c.dummy_loads, c.dummy_stores), (1, 0, 0));
        assert_eq!(r.total, 2);
    }

    #[test]
    fn absent_class_is_reported() {
        let pat = BlockPattern::new(vec![K::Class1]);
        assert_eq!(
            estimate_cost(&pat, &[prof(vec![Class2], 1)]),
            Err(PatternError::MissingClass(Class2))
        );
    }

    #[test]
    fn pattern_string_round_trips() {
        let pat: BlockPattern = "c1-c1-c2-ld-st-sfx".parse().unwrap();
        assert_eq!(pat.elements(), &[K::Class1, K::Class1, K::Class2, K::Load, K::Store]);
        assert_eq!(pat.to_string(), "c1-c1-c2-ld-st-sfx");
        assert_eq!(pat.slot_count(), 1 + 1 + 2 + 3 + 3 + 4);
        assert!("c1-xx-sfx".parse::<BlockPattern>().is_err());
        assert!("c1".parse::<BlockPattern>().is_err());
        assert_eq!("sfx".parse::<BlockPattern>().unwrap().slot_count(), 4);
    }

    #[test]
    fn fast_total_agrees_with_report() {
        let pat = BlockPattern::new(vec![K::Class1, K::Load, K::Class2, K::Store, K::Class1]);
        let profiles = vec![
            prof(vec![Class1, PtrAdjust, Load, Class1, Class2, Store], 8),
            prof(vec![Store, Store, Class1], 3),
            prof(vec![], 1),
        ];
        let m = CostModel::default();
        assert_eq!(m.total(pat.elements(), &profiles).unwrap(), m.estimate(&pat, &profiles).unwrap().total);
    }
}
