//! Genetic pattern search.
//!
//! Each generation keeps the `t` best candidates `T`, a mutated copy `T'`,
//! and the `2t^2` children of crossing every member of `T` with every member
//! of `T'`, for a constant population of `2t^2 + 2t`.

use std::collections::{HashMap, HashSet};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    minimum_slot_count, required_kinds, BlockPattern, CostModel, PatternError, Requirements, SlotKind, SUFFIX_SLOTS,
};
use crate::profiler::BlockProfile;

#[derive(Clone, Debug, PartialEq)]
pub struct GaConfig {
    pub top_k: usize,
    pub generations: u64,
    pub wall_time: Duration,
    pub mutation_rate: f64,
    pub seed: u64,
    pub cost: CostModel,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            top_k: 15,
            generations: 10_000,
            wall_time: Duration::from_secs(10),
            mutation_rate: 0.5,
            seed: 0,
            cost: CostModel::default(),
        }
    }
}

pub const fn population_size(top_k: usize) -> usize {
    2 * top_k * top_k + 2 * top_k
}

/// Most pattern elements a candidate can hold.
pub const MAX_ELEMENTS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct GaOutcome {
    pub best: BlockPattern,
    pub cost: u64,
    pub generations: u64,
    pub population_size: usize,
    /// Best cost in the population after each scored generation.
    pub history: Vec<u64>,
}

const LOW_BITS: u128 = 0x5555_5555_5555_5555_5555_5555_5555_5555;

/// Element sequence packed two bits per element, first element in the top
/// bits, so that `(bits, len)` orders candidates lexicographically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Genome {
    bits: u128,
    len: u8,
}

fn code(k: SlotKind) -> u128 {
    SlotKind::ALL.iter().position(|x| *x == k).unwrap() as u128
}

/// Mask covering the first `n` elements.
fn head_mask(n: usize) -> u128 {
    if n == 0 {
        0
    } else {
        !0u128 << (128 - 2 * n)
    }
}

impl Genome {
    const EMPTY: Genome = Genome { bits: 0, len: 0 };

    fn len(self) -> usize {
        self.len as usize
    }

    fn shift(i: usize) -> usize {
        126 - 2 * i
    }

    fn get(self, i: usize) -> SlotKind {
        SlotKind::ALL[((self.bits >> Self::shift(i)) & 3) as usize]
    }

    fn set(&mut self, i: usize, k: SlotKind) {
        let s = Self::shift(i);
        self.bits = (self.bits & !(3u128 << s)) | (code(k) << s);
    }

    fn insert(&mut self, i: usize, k: SlotKind) {
        debug_assert!(self.len() < MAX_ELEMENTS);
        let head = head_mask(i);
        self.bits = (self.bits & head) | ((self.bits & !head) >> 2) | (code(k) << Self::shift(i));
        self.len += 1;
    }

    fn remove(&mut self, i: usize) -> SlotKind {
        let k = self.get(i);
        let head = head_mask(i);
        let tail = self.bits & !head_mask(i + 1);
        self.bits = (self.bits & head) | (tail << 2);
        self.len -= 1;
        k
    }

    /// First `i` elements of `a` followed by `b` from element `j`, capped.
    fn splice(a: Genome, i: usize, b: Genome, j: usize) -> Genome {
        let take = (b.len() - j).min(MAX_ELEMENTS - i);
        let tail = if j == 0 { b.bits } else { b.bits << (2 * j) } & head_mask(take);
        let moved = if i == 0 { tail } else { tail >> (2 * i) };
        Genome { bits: (a.bits & head_mask(i)) | moved, len: (i + take) as u8 }
    }

    fn counts(self) -> [usize; 4] {
        let valid = head_mask(self.len());
        let lo = self.bits & LOW_BITS & valid;
        let hi = (self.bits >> 1) & LOW_BITS & valid;
        let c2 = (lo & !hi).count_ones() as usize;
        let ld = (hi & !lo).count_ones() as usize;
        let st = (hi & lo).count_ones() as usize;
        [self.len() - c2 - ld - st, c2, ld, st]
    }

    fn width(self) -> usize {
        self.counts().iter().zip(SlotKind::ALL).map(|(n, k)| n * k.width()).sum()
    }

    fn to_vec(self) -> Vec<SlotKind> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }
}

struct Shape {
    width: usize,
    /// Least count per kind code.
    required: [usize; 4],
}

impl Shape {
    fn random_kind(rng: &mut impl Rng, max_width: usize) -> SlotKind {
        let n = match max_width {
            1 => 1,
            2 => 2,
            _ => 4,
        };
        SlotKind::ALL[rng.random_range(0..n)]
    }

    fn random(&self, rng: &mut impl Rng) -> Genome {
        let mut g = Genome::EMPTY;
        self.repair(&mut g, rng);
        g
    }

    /// Restores validity: every mandatory kind present and exact width.
    fn repair(&self, g: &mut Genome, rng: &mut impl Rng) {
        for (c, k) in SlotKind::ALL.into_iter().enumerate() {
            while g.counts()[c] < self.required[c] {
                if g.len() == MAX_ELEMENTS {
                    g.remove(rng.random_range(0..g.len()));
                }
                g.insert(rng.random_range(0..=g.len()), k);
            }
        }
        let mut width = g.width();
        while width > self.width {
            let counts = g.counts();
            let i = rng.random_range(0..g.len());
            let k = g.get(i);
            // Rejection sampling: some element is always removable here.
            if counts[code(k) as usize] > self.required[code(k) as usize] {
                width -= g.remove(i).width();
            }
        }
        while width < self.width {
            let k = Self::random_kind(rng, self.width - width);
            g.insert(rng.random_range(0..=g.len()), k);
            width += k.width();
        }
    }

    fn mutate(&self, g: &mut Genome, rng: &mut impl Rng) {
        let any = |rng: &mut dyn rand::RngCore| SlotKind::ALL[rng.random_range(0..4)];
        match rng.random_range(0..3) {
            0 if g.len() < MAX_ELEMENTS => {
                let at = rng.random_range(0..=g.len());
                let k = any(rng);
                g.insert(at, k);
            }
            1 if g.len() > 0 => {
                g.remove(rng.random_range(0..g.len()));
            }
            _ if g.len() > 0 => {
                let at = rng.random_range(0..g.len());
                let k = any(rng);
                g.set(at, k);
            }
            _ => {}
        }
        self.repair(g, rng);
    }

    fn crossover(&self, a: Genome, b: Genome, rng: &mut impl Rng) -> [Genome; 2] {
        let i = rng.random_range(0..=a.len());
        let j = rng.random_range(0..=b.len());
        let mut c1 = Genome::splice(a, i, b, j);
        let mut c2 = Genome::splice(b, j, a, i);
        self.repair(&mut c1, rng);
        self.repair(&mut c2, rng);
        [c1, c2]
    }
}

/// Order among candidates: cost, then fewer stores, then lexicographic.
fn rank_key(cost: u64, g: Genome) -> (u64, usize, Genome) {
    (cost, g.counts()[3], g)
}

/// Searches for a low-cost pattern of exactly `slot_count` slots.
pub fn genetic_search(
    slot_count: usize,
    profiles: &[BlockProfile],
    cfg: &GaConfig,
) -> Result<GaOutcome, PatternError> {
    let required: Requirements = required_kinds(profiles);
    let minimum = minimum_slot_count(&required);
    if slot_count < minimum {
        return Err(PatternError::SlotCountTooSmall { slot_count, minimum });
    }
    if slot_count - SUFFIX_SLOTS > MAX_ELEMENTS {
        return Err(PatternError::SlotCountTooLarge { slot_count, maximum: MAX_ELEMENTS + SUFFIX_SLOTS });
    }
    let mut least = [0; 4];
    for (k, n) in &required {
        least[code(*k) as usize] = *n;
    }
    let shape = Shape { width: slot_count - SUFFIX_SLOTS, required: least };
    let t = cfg.top_k.max(1);
    let size = population_size(t);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut memo: HashMap<Genome, u64> = HashMap::new();
    let mut score = |g: Genome| -> Result<u64, PatternError> {
        if let Some(c) = memo.get(&g) {
            return Ok(*c);
        }
        let c = cfg.cost.total(&g.to_vec(), profiles)?;
        memo.insert(g, c);
        Ok(c)
    };

    let mut seen: HashSet<Genome> = HashSet::with_capacity(size);
    let mut fill_unique = |pop: &mut Vec<Genome>, rng: &mut ChaCha8Rng| {
        seen.clear();
        for cand in pop.iter_mut() {
            if !seen.insert(*cand) {
                // Small spaces may not hold enough distinct candidates.
                if let Some(fresh) = (0..32).map(|_| shape.random(rng)).find(|c| !seen.contains(c)) {
                    *cand = fresh;
                    seen.insert(fresh);
                }
            }
        }
    };

    let mut population: Vec<Genome> = (0..size).map(|_| shape.random(&mut rng)).collect();
    fill_unique(&mut population, &mut rng);
    let start = Instant::now();
    let mut best: Option<(u64, usize, Genome)> = None;
    let mut history = Vec::new();
    let mut generations = 0u64;
    let mut scored: Vec<(u64, usize, Genome)> = Vec::with_capacity(size);

    while generations < cfg.generations.max(1) {
        scored.clear();
        for &g in &population {
            scored.push(rank_key(score(g)?, g));
        }
        scored.sort_unstable();
        generations += 1;
        let leader = scored[0];
        if best.is_none_or(|b| leader < b) {
            best = Some(leader);
        }
        history.push(leader.0);
        if generations >= cfg.generations || start.elapsed() >= cfg.wall_time {
            break;
        }

        let top: Vec<Genome> = scored.iter().take(t).map(|s| s.2).collect();
        let mutated: Vec<Genome> = top
            .iter()
            .map(|&g| {
                let mut m = g;
                if rng.random_bool(cfg.mutation_rate) {
                    shape.mutate(&mut m, &mut rng);
                }
                m
            })
            .collect();
        population.clear();
        for &a in &top {
            for &b in &mutated {
                population.extend(shape.crossover(a, b, &mut rng));
            }
        }
        population.extend(&top);
        population.extend(&mutated);
        fill_unique(&mut population, &mut rng);
    }

    let (cost, _, g) = best.expect("at least one generation is scored");
    Ok(GaOutcome { best: BlockPattern::new(g.to_vec()), cost, generations, population_size: size, history })
}
