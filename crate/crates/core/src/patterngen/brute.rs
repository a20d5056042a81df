//! Exhaustive search over small pattern spaces.

use super::{
    minimum_slot_count, required_kinds, BlockPattern, CostModel, PatternError, Requirements, SlotKind, SUFFIX_SLOTS,
};
use crate::profiler::BlockProfile;

pub const DEFAULT_ENUMERATION_BOUND: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BruteForceConfig {
    /// Largest admissible search-space estimate.
    pub bound: u64,
    pub cost: CostModel,
}

impl Default for BruteForceConfig {
    fn default() -> Self {
        BruteForceConfig { bound: DEFAULT_ENUMERATION_BOUND, cost: CostModel::default() }
    }
}

/// Size of the search space: one of four kinds for every free slot, where
/// free slots are those left after the suffix and the mandatory elements.
pub fn search_space_estimate(slot_count: usize, required: &Requirements) -> Result<f64, PatternError> {
    let minimum = minimum_slot_count(required);
    if slot_count < minimum {
        return Err(PatternError::SlotCountTooSmall { slot_count, minimum });
    }
    Ok((SlotKind::ALL.len() as f64).powi((slot_count - minimum) as i32))
}

fn all_class1(slot_count: usize) -> BlockPattern {
    BlockPattern::new(vec![SlotKind::Class1; slot_count.saturating_sub(SUFFIX_SLOTS)])
}

/// Returns a minimum-cost pattern of exactly `slot_count` slots.
pub fn brute_force(
    slot_count: usize,
    profiles: &[BlockProfile],
    cfg: &BruteForceConfig,
) -> Result<(BlockPattern, u64), PatternError> {
    let required = required_kinds(profiles);
    let estimate = search_space_estimate(slot_count, &required)?;
    if profiles.is_empty() {
        return Ok((all_class1(slot_count), 0));
    }
    if estimate > cfg.bound as f64 {
        return Err(PatternError::SearchSpaceTooLarge { estimate, bound: cfg.bound });
    }

    struct Search<'a> {
        profiles: &'a [BlockProfile],
        required: &'a Requirements,
        cost: CostModel,
        best: Option<(u64, BlockPattern)>,
    }

    impl Search<'_> {
        fn go(&mut self, prefix: &mut Vec<SlotKind>, remaining: usize) -> Result<(), PatternError> {
            if remaining == 0 {
                if self.required.iter().all(|(k, n)| prefix.iter().filter(|e| *e == k).count() >= *n) {
                    let c = self.cost.total(prefix, self.profiles)?;
                    let candidate = BlockPattern::new(prefix.clone());
                    let better = match &self.best {
                        None => true,
                        Some((bc, bp)) => (c, candidate.tie_key()) < (*bc, bp.tie_key()),
                    };
                    if better {
                        self.best = Some((c, candidate));
                    }
                }
                return Ok(());
            }
            for k in SlotKind::ALL {
                if k.width() <= remaining {
                    prefix.push(k);
                    self.go(prefix, remaining - k.width())?;
                    prefix.pop();
                }
            }
            Ok(())
        }
    }

    let mut search = Search { profiles, required: &required, cost: cfg.cost, best: None };
    search.go(&mut Vec::new(), slot_count - SUFFIX_SLOTS)?;
    let (cost, pat) = search.best.expect("minimum slot count admits a pattern");
    Ok((pat, cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterngen::estimate_cost;
    use crate::visa::InstructionClass::{self, *};

    fn prof(seq: Vec<InstructionClass>, weight: u64) -> BlockProfile {
        BlockProfile { function: "f".into(), label: "b".into(), class_seq: seq, weight }
    }

    #[test]
    fn twelve_slots_hold_two_accesses_and_two_class_slots() {
        let profiles = vec![prof(vec![Load, Class1, Store], 4), prof(vec![Class1, Class1, Load], 1)];
        let (pat, cost) = brute_force(12, &profiles, &BruteForceConfig::default()).unwrap();
        assert_eq!(pat.slot_count(), 12);
        assert_eq!(pat.count(SlotKind::Load) + pat.count(SlotKind::Store), 2);
        assert_eq!(pat.count(SlotKind::Class1), 2);
        assert_eq!(estimate_cost(&pat, &profiles).unwrap().total, cost);
        // Independent oracle: the only admissible multiset is {ld, st, c1, c1}.
        let mut best = u64::MAX;
        for code in 0..256u32 {
            let e: Vec<SlotKind> = (0..4).map(|i| SlotKind::ALL[(code >> (2 * i)) as usize & 3]).collect();
            let mut sorted = e.clone();
            sorted.sort();
            if sorted == [SlotKind::Class1, SlotKind::Class1, SlotKind::Load, SlotKind::Store] {
                best = best.min(estimate_cost(&BlockPattern::new(e), &profiles).unwrap().total);
            }
        }
        assert_eq!(cost, best);
    }

    #[test]
    fn empty_profiles_give_all_class1() {
        let (pat, cost) = brute_force(9, &[], &BruteForceConfig::default()).unwrap();
        assert_eq!(pat.elements(), &[SlotKind::Class1; 5]);
        assert_eq!(cost, 0);
    }

    #[test]
    fn unrestricted_twenty_slots_exceed_the_bound() {
        let profiles = vec![prof(vec![Class1], 1)];
        assert!(matches!(
            brute_force(20, &profiles, &BruteForceConfig::default()),
            Err(PatternError::SearchSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn too_few_slots_is_an_error() {
        let profiles = vec![prof(vec![Load, Store], 1)];
        assert_eq!(
            brute_force(9, &profiles, &BruteForceConfig::default()),
            Err(PatternError::SlotCountTooSmall { slot_count: 9, minimum: 10 })
        );
    }
}
