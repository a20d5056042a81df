//! Translation of a call-tree unit into uniform code blocks.

mod units;

pub use units::dummy_for;

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patterngen::{BlockPattern, SlotKind, DEFAULT_SLOT_COUNT, SUFFIX_SLOTS};
use crate::profiler::CallTreeUnit;
use crate::visa::{
    AccessKind, DataDecl, DataLayout, Instruction, InstructionClass, LoweredBlock, LoweredExit, MemRef,
    Opcode, Operands, Src, SLOT_BYTES,
};
use units::{dummy_unit, suffix, SuffixKind, Target, Unit};

/// Bytes per code block for the fixed-size variants.
pub const BLOCK_BYTES: usize = DEFAULT_SLOT_COUNT * SLOT_BYTES;
/// Payload instructions per block under the fixed-count variant.
pub const FIXED_COUNT: usize = 10;
/// Original (pre-scratchpad) code address of block 0; block `i` sits at
/// `CODE_ORIG_BASE + i * CODE_BLOCK_STRIDE`.
pub const CODE_ORIG_BASE: u64 = 0x40_0000;
pub const CODE_BLOCK_STRIDE: u64 = 256;
/// Reserved data address targeted by dummy accesses.
pub const DUMMY_ADDR: u64 = 0x0f00_0000;
/// Base of the shadow return stack.
pub const SHADOW_BASE: u64 = 0x0e00_0000;
/// Shadow stack capacity in return addresses.
pub const SHADOW_DEPTH: usize = 32;
/// Next-block id that ends execution.
pub const HALT_ID: u64 = 0x7fff_ffff;

/// Bytes reserved for the suffix when packing densely.
const SUFFIX_RESERVE: usize = SUFFIX_SLOTS * SLOT_BYTES;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    FixedLength,
    FixedCount,
    FixedPattern,
    AlignedPattern,
    Ciphertext,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::FixedLength, Variant::FixedCount, Variant::FixedPattern, Variant::AlignedPattern, Variant::Ciphertext];

    pub fn numeral(self) -> &'static str {
        match self {
            Variant::FixedLength => "I",
            Variant::FixedCount => "II",
            Variant::FixedPattern => "III",
            Variant::AlignedPattern => "IV",
            Variant::Ciphertext => "V",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::FixedLength => "FixedLength",
            Variant::FixedCount => "FixedCount",
            Variant::FixedPattern => "FixedPattern",
            Variant::AlignedPattern => "AlignedPattern",
            Variant::Ciphertext => "Ciphertext",
        }
    }

    pub fn uses_pattern(self) -> bool {
        matches!(self, Variant::FixedPattern | Variant::AlignedPattern | Variant::Ciphertext)
    }

    pub fn aligned(self) -> bool {
        matches!(self, Variant::AlignedPattern | Variant::Ciphertext)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.numeral(), self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Variant::ALL
            .into_iter()
            .find(|v| {
                t.eq_ignore_ascii_case(v.numeral())
                    || t.eq_ignore_ascii_case(v.name())
                    || t.eq_ignore_ascii_case(&v.to_string())
            })
            .ok_or_else(|| format!("unknown variant `{s}` (expected I, II, III, IV or V)"))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RewriteError {
    #[error("{class} instruction in {function}:{label} has no slot in pattern {pattern}")]
    InstructionDoesNotFitPattern { class: InstructionClass, function: String, label: String, pattern: String },
    #[error("`{instruction}` in {function}:{label} uses a controller register")]
    ReservedRegisterUse { function: String, label: String, instruction: String },
    #[error("variant {0} requires a block pattern")]
    PatternRequired(Variant),
    #[error("variant {0} does not take a block pattern")]
    PatternNotAllowed(Variant),
    #[error("an address and its fix-up in {function}:{label} do not fit one block of pattern {pattern}")]
    PairDoesNotFit { function: String, label: String, pattern: String },
    #[error("pattern has {0} slots; at least {min} are needed", min = SUFFIX_SLOTS + 1)]
    PatternTooShort(usize),
}

/// One 8-byte instruction slot (natural width under the dense variants).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Slot {
    pub payload: Instruction,
    /// Class the slot is scheduled as. Pointer adjustments run in class1 slots.
    pub class: InstructionClass,
    /// Payload start relative to the block.
    pub offset: u16,
    pub fill: u8,
    pub dummy: bool,
}

impl Slot {
    pub fn access(&self) -> Option<AccessKind> {
        match self.payload.operands {
            Operands::DataCall { kind, .. } => Some(kind),
            _ => None,
        }
    }

    pub fn crosses_16_byte_boundary(&self) -> bool {
        (self.offset as usize % 16) + self.payload.len() as usize > 16
    }
}

/// Source basic block a code block was cut from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockOrigin {
    pub function: String,
    pub label: String,
    pub part: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeBlock {
    pub id: u32,
    pub slots: Vec<Slot>,
    /// Bytes occupied in the code scratchpad.
    pub size_bytes: usize,
    pub origin: BlockOrigin,
}

impl CodeBlock {
    pub fn original_address(&self) -> u64 {
        CODE_ORIG_BASE + self.id as u64 * CODE_BLOCK_STRIDE
    }

    /// `(slot offset, kind)` of every data-controller entry.
    pub fn accesses(&self) -> Vec<(u16, AccessKind)> {
        self.slots.iter().filter_map(|s| s.access().map(|k| (s.offset, k))).collect()
    }

    /// `(class, offset, access kind)` per slot.
    pub fn signature(&self) -> Vec<(InstructionClass, u16, Option<AccessKind>)> {
        self.slots.iter().map(|s| (s.class, s.offset, s.access())).collect()
    }

    /// Slots not holding dummies.
    pub fn real_slot_count(&self) -> usize {
        self.slots.iter().filter(|s| !s.dummy).count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranslatedUnit {
    pub variant: Variant,
    pub pattern: Option<BlockPattern>,
    /// Indexed by block id.
    pub blocks: Vec<CodeBlock>,
    pub entry: u32,
    pub has_calls: bool,
    pub data: Vec<DataDecl>,
}

/// Per source block: code blocks emitted, dummy loads, dummy stores.
pub type OriginStats = BTreeMap<(String, String), (u64, u64, u64)>;

impl TranslatedUnit {
    pub fn block(&self, id: u32) -> Option<&CodeBlock> {
        self.blocks.get(id as usize)
    }

    pub fn origin_stats(&self) -> OriginStats {
        let mut out = OriginStats::new();
        for b in &self.blocks {
            let e = out.entry((b.origin.function.clone(), b.origin.label.clone())).or_default();
            e.0 += 1;
            for s in b.slots.iter().filter(|s| s.dummy) {
                match s.class {
                    InstructionClass::Load => e.1 += 1,
                    InstructionClass::Store => e.2 += 1,
                    _ => {}
                }
            }
        }
        out
    }

    /// Ids of the code blocks cut from one source block, in execution order.
    pub fn blocks_of(&self, function: &str, label: &str) -> Vec<u32> {
        let mut parts: Vec<&CodeBlock> = self
            .blocks
            .iter()
            .filter(|b| b.origin.function == function && b.origin.label == label)
            .collect();
        parts.sort_by_key(|b| b.origin.part);
        parts.iter().map(|b| b.id).collect()
    }

    /// `(class, position, access kind)` per slot, where position is the byte
    /// offset under the aligned variants and the slot index otherwise.
    pub fn shape(&self, b: &CodeBlock) -> Vec<(InstructionClass, u16, Option<AccessKind>)> {
        b.slots
            .iter()
            .enumerate()
            .map(|(i, s)| (s.class, if self.variant.aligned() { s.offset } else { i as u16 }, s.access()))
            .collect()
    }

    /// Structural differences between blocks; empty when the unit is uniform
    /// (and, for the aligned variants, every payload starts on a slot base).
    pub fn uniformity_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let Some(first) = self.blocks.first() else { return out };
        let reference = self.shape(first);
        for b in &self.blocks {
            if self.shape(b) != reference {
                out.push(format!("block {} differs from block {}", b.id, first.id));
            }
            if self.variant.aligned() {
                for (i, s) in b.slots.iter().enumerate() {
                    if s.offset as usize % SLOT_BYTES != 0 || s.payload.len() as usize + s.fill as usize != SLOT_BYTES {
                        out.push(format!("block {} slot {i} is not slot-aligned", b.id));
                    }
                }
            }
        }
        out
    }

    /// One line per slot: `idx: class payload fill=N`.
    pub fn listing(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "; variant {}", self.variant);
        if let Some(p) = &self.pattern {
            let _ = writeln!(out, "; pattern {p}");
        }
        let _ = writeln!(out, "; entry {}", self.entry);
        for b in &self.blocks {
            let _ = writeln!(
                out,
                "block {} ; {}:{}#{} {} bytes",
                b.id, b.origin.function, b.origin.label, b.origin.part, b.size_bytes
            );
            for (i, s) in b.slots.iter().enumerate() {
                let _ = writeln!(out, "  {i:02}: {} {} fill={}", s.class, s.payload, s.fill);
            }
        }
        out
    }
}

struct RawBlock {
    origin: BlockOrigin,
    slots: Vec<(Instruction, bool)>,
}

impl RawBlock {
    fn push_unit(&mut self, unit: &Unit) {
        let first = self.slots.len();
        self.slots.extend(unit.expand(first).into_iter().map(|i| (i, false)));
    }

    fn push_dummy(&mut self, kind: SlotKind) {
        let first = self.slots.len();
        self.slots.extend(dummy_unit(kind, first).into_iter().map(|i| (i, true)));
    }

    fn push_suffix(&mut self, kind: &SuffixKind) {
        self.slots.extend(suffix(kind).into_iter().map(|i| (i, false)));
    }

    fn bytes(&self) -> usize {
        self.slots.iter().map(|(i, _)| i.len() as usize).sum()
    }
}

fn exit_suffix(exit: &LoweredExit, unit: &CallTreeUnit) -> SuffixKind {
    let entry_of = |f: &str| {
        let func = &unit.function(f).expect("callee is in the unit").function;
        crate::visa::CodeLabel { function: f.to_string(), label: func.blocks[0].label.clone() }
    };
    match exit {
        LoweredExit::Goto(l) => SuffixKind::Static(Target::Label(l.clone())),
        LoweredExit::Branch { cond, taken, fallthrough } => SuffixKind::Branch {
            cond: *cond,
            taken: Target::Label(taken.clone()),
            fallthrough: Target::Label(fallthrough.clone()),
        },
        LoweredExit::Call { callee } => SuffixKind::Static(Target::Label(entry_of(callee))),
        LoweredExit::Return => SuffixKind::Return,
        LoweredExit::Halt => SuffixKind::Static(Target::Halt),
    }
}

/// Whether unit `i` is an address `lea` whose pointer adjustment follows.
/// The two must share a code block, since the adjustment reads the code
/// delta of the block it runs in.
fn starts_pair(units: &[Unit], i: usize) -> bool {
    units.get(i + 1).is_some_and(|u| u.inst.opcode == Opcode::PtrAdj)
}

/// Cuts one lowered block into raw code blocks appended to `out`.
fn layout_block(
    lb: &LoweredBlock,
    exit: SuffixKind,
    variant: Variant,
    pattern: Option<&BlockPattern>,
    out: &mut Vec<RawBlock>,
) -> Result<(), RewriteError> {
    let units: Vec<Unit> = lb.body.iter().map(Unit::of).collect();
    // Units that go in together with unit `i`.
    let group = |i: usize| if starts_pair(&units, i) { 2 } else { 1 };
    let mut next = 0usize;
    let mut part = 0usize;
    loop {
        let mut raw = RawBlock {
            origin: BlockOrigin { function: lb.label.function.clone(), label: lb.label.label.clone(), part },
            slots: Vec::new(),
        };
        let start = next;
        match variant {
            Variant::FixedLength => {
                for kind in [SlotKind::Load, SlotKind::Store] {
                    if units.get(next).is_some_and(|u| u.kind == kind) {
                        raw.push_unit(&units[next]);
                        next += 1;
                    } else {
                        raw.push_dummy(kind);
                    }
                }
                while let Some(u) = units.get(next) {
                    let g = &units[next..next + group(next)];
                    let fits = raw.bytes() + g.iter().map(Unit::bytes).sum::<usize>() + SUFFIX_RESERVE <= BLOCK_BYTES;
                    if matches!(u.kind, SlotKind::Load | SlotKind::Store) || !fits {
                        break;
                    }
                    for u in g {
                        raw.push_unit(u);
                    }
                    next += g.len();
                }
            }
            Variant::FixedCount => {
                while units.get(next).is_some() {
                    let g = &units[next..next + group(next)];
                    if raw.slots.len() + g.iter().map(Unit::slot_count).sum::<usize>() > FIXED_COUNT {
                        break;
                    }
                    for u in g {
                        raw.push_unit(u);
                    }
                    next += g.len();
                }
                while raw.slots.len() < FIXED_COUNT {
                    raw.push_dummy(SlotKind::Class1);
                }
            }
            _ => {
                let elements = pattern.expect("checked by translate").elements();
                for (e, &kind) in elements.iter().enumerate() {
                    let takes = units.get(next).is_some_and(|u| {
                        u.kind == kind && crate::patterngen::place(elements, e, kind, starts_pair(&units, next)) == Some(e)
                    });
                    if takes {
                        raw.push_unit(&units[next]);
                        next += 1;
                    } else {
                        raw.push_dummy(kind);
                    }
                }
            }
        }
        if next == start && next < units.len() {
            let p = pattern.map(|p| p.to_string()).unwrap_or_default();
            return Err(RewriteError::PairDoesNotFit { function: lb.label.function.clone(), label: lb.label.label.clone(), pattern: p });
        }
        let done = next >= units.len();
        let kind = if done { exit.clone() } else { SuffixKind::Static(Target::Part(out.len() + 1)) };
        raw.push_suffix(&kind);
        out.push(raw);
        if done {
            return Ok(());
        }
        part += 1;
    }
}

fn slot_class(inst: &Instruction) -> InstructionClass {
    match inst.class() {
        InstructionClass::PtrAdjust => InstructionClass::Class1,
        c => c,
    }
}

/// Translates every block of `u` into code blocks for variant `v`.
pub fn translate(
    u: &CallTreeUnit,
    pattern: Option<&BlockPattern>,
    v: Variant,
    seed: u64,
) -> Result<TranslatedUnit, RewriteError> {
    match (v.uses_pattern(), pattern) {
        (true, None) => return Err(RewriteError::PatternRequired(v)),
        (false, Some(_)) => return Err(RewriteError::PatternNotAllowed(v)),
        _ => {}
    }
    for uf in &u.functions {
        for bb in &uf.function.blocks {
            if let Some(inst) = bb.body.iter().find(|i| i.registers().iter().any(|r| r.is_reserved())) {
                return Err(RewriteError::ReservedRegisterUse {
                    function: uf.function.name.clone(),
                    label: bb.label.clone(),
                    instruction: inst.to_string(),
                });
            }
        }
    }
    let lowered = u.lowered_blocks();
    if let Some(p) = pattern {
        if p.elements().is_empty() {
            return Err(RewriteError::PatternTooShort(p.slot_count()));
        }
        for lb in &lowered {
            if let Some(i) = lb.body.iter().find(|i| !p.elements().iter().any(|k| k.accepts(i.class()))) {
                return Err(RewriteError::InstructionDoesNotFitPattern {
                    class: i.class(),
                    function: lb.label.function.clone(),
                    label: lb.label.label.clone(),
                    pattern: p.to_string(),
                });
            }
        }
    }

    let mut raw = Vec::new();
    let mut first_of = HashMap::new();
    for lb in &lowered {
        first_of.insert(lb.label.clone(), raw.len());
        layout_block(lb, exit_suffix(&lb.exit, u), v, pattern, &mut raw)?;
    }

    let mut ids: Vec<u32> = (0..raw.len() as u32).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let layout = DataLayout::new(&u.data);
    let resolve = |label: &crate::visa::CodeLabel| -> u64 {
        if label.function.is_empty() {
            match label.label.strip_prefix('#') {
                Some("halt") => HALT_ID,
                Some(part) => ids[part.parse::<usize>().expect("part placeholder")] as u64,
                None => unreachable!("placeholders start with #"),
            }
        } else {
            ids[first_of[label]] as u64
        }
    };

    let mut blocks: Vec<Option<CodeBlock>> = vec![None; raw.len()];
    for (idx, rb) in raw.into_iter().enumerate() {
        let id = ids[idx];
        let orig_base = CODE_ORIG_BASE + id as u64 * CODE_BLOCK_STRIDE;
        let mut slots = Vec::with_capacity(rb.slots.len());
        let mut offset = 0usize;
        for (i, (inst, dummy)) in rb.slots.into_iter().enumerate() {
            if v.aligned() {
                offset = i * SLOT_BYTES;
            }
            let payload = match inst.operands {
                Operands::BlockTarget { dst, ref target } => Instruction::binary(Opcode::MovI, dst, Src::Imm(resolve(target) as i64)),
                Operands::Load { dst, mem: MemRef::Global { ref name, disp } } => {
                    let addr = layout.address_of(name).expect("parser checked globals");
                    let rel = addr as i64 + disp as i64 - (orig_base + offset as u64) as i64;
                    Instruction::new(inst.opcode, Operands::Load { dst, mem: MemRef::RipRel { rel } })
                }
                _ => inst,
            };
            let len = payload.len() as usize;
            let fill = if v.aligned() { (SLOT_BYTES - len) as u8 } else { 0 };
            slots.push(Slot { class: slot_class(&payload), payload, offset: offset as u16, fill, dummy });
            offset += len;
        }
        let size_bytes = match v {
            Variant::FixedPattern => offset,
            Variant::AlignedPattern | Variant::Ciphertext => slots.len() * SLOT_BYTES,
            Variant::FixedLength | Variant::FixedCount => BLOCK_BYTES.max(offset),
        };
        blocks[id as usize] = Some(CodeBlock { id, slots, size_bytes, origin: rb.origin });
    }
    let root = &u.function(&u.root).expect("root in unit").function;
    let entry_label = crate::visa::CodeLabel { function: root.name.clone(), label: root.blocks[0].label.clone() };
    Ok(TranslatedUnit {
        variant: v,
        pattern: pattern.cloned(),
        blocks: blocks.into_iter().map(|b| b.expect("every id assigned")).collect(),
        entry: ids[first_of[&entry_label]],
        has_calls: u.has_calls(),
        data: u.data.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiler::build_call_tree;
    use crate::visa::parse_program;

    fn unit(src: &str) -> CallTreeUnit {
        let p = parse_program(src).unwrap();
        let root = p.protected_roots().next().unwrap().name.clone();
        build_call_tree(&p, &root, 16).unwrap()
    }

    fn pat(s: &str) -> BlockPattern {
        s.parse().unwrap()
    }

    const MODEXP: &str = include_str!("../../samples/modexp.s");
    const FULL: &str = "c1-c1-c1-c1-c1-ld-c1-c2-c1-c1-st-sfx";

    #[test]
    fn pointer_adjustments_run_in_the_block_of_their_lea() {
        let u = unit(MODEXP);
        let tight = pat("c1-ld-c1-c1-st-c2-sfx");
        for (v, p) in [
            (Variant::FixedLength, None),
            (Variant::FixedCount, None),
            (Variant::FixedPattern, Some(&tight)),
            (Variant::Ciphertext, Some(&tight)),
        ] {
            let t = translate(&u, p, v, 0).unwrap();
            for b in &t.blocks {
                for (i, s) in b.slots.iter().enumerate() {
                    if s.payload.opcode == Opcode::PtrAdj && !s.dummy {
                        let prev = b.slots[..i].iter().rev().find(|s| !s.dummy).expect("lea precedes");
                        assert_eq!(prev.payload.opcode, Opcode::Lea, "{v} block {}", b.id);
                    }
                }
            }
        }
        let err = translate(&u, Some(&pat("c1-ld-st-c2-sfx")), Variant::FixedPattern, 0).unwrap_err();
        assert!(matches!(err, RewriteError::PairDoesNotFit { .. }), "{err}");
    }

    #[test]
    fn pattern_variants_are_uniform() {
        let u = unit(MODEXP);
        for v in [Variant::FixedPattern, Variant::AlignedPattern, Variant::Ciphertext] {
            let t = translate(&u, Some(&pat(FULL)), v, 3).unwrap();
            assert!(t.uniformity_violations().is_empty(), "{v}: {:?}", t.uniformity_violations());
            assert!(t.blocks.iter().all(|b| b.slots.len() == t.blocks[0].slots.len()));
        }
        let aligned = translate(&u, Some(&pat(FULL)), Variant::AlignedPattern, 3).unwrap();
        for b in &aligned.blocks {
            assert_eq!(b.size_bytes, 20 * SLOT_BYTES);
            assert!(b.slots.iter().all(|s| s.offset as usize % SLOT_BYTES == 0 && s.fill >= 1));
        }
    }

    #[test]
    fn dense_variants_are_not_uniform() {
        let u = unit(MODEXP);
        let one = translate(&u, None, Variant::FixedLength, 0).unwrap();
        assert!(!one.uniformity_violations().is_empty());
        let two = translate(&u, None, Variant::FixedCount, 0).unwrap();
        // Same slot count everywhere, but classes differ by position.
        assert!(two.blocks.iter().all(|b| b.slots.len() == FIXED_COUNT + SUFFIX_SLOTS));
        assert!(!two.uniformity_violations().is_empty());
    }

    #[test]
    fn fixed_length_blocks_keep_the_byte_budget() {
        let u = unit(MODEXP);
        let t = translate(&u, None, Variant::FixedLength, 0).unwrap();
        for b in &t.blocks {
            assert_eq!(b.size_bytes, BLOCK_BYTES);
            let first = &b.slots[..6];
            assert_eq!(first.iter().filter(|s| s.access() == Some(AccessKind::Load)).count(), 1);
            assert_eq!(first.iter().filter(|s| s.access() == Some(AccessKind::Store)).count(), 1);
        }
        // The multiply body spills into more than one block.
        assert!(t.blocks_of("modexp", "multiply").len() > 1);
    }

    #[test]
    fn global_access_is_relocated_before_use() {
        let u = unit(".data g, 8\n@protect\nfunc f\n    ld r1, [g]\n    ret\n");
        let t = translate(&u, Some(&pat("c1-c1-ld-sfx")), Variant::AlignedPattern, 0).unwrap();
        let slots = &t.blocks[0].slots;
        let lea = slots.iter().position(|s| matches!(s.payload.operands, Operands::Load { mem: MemRef::RipRel { .. }, .. })).unwrap();
        let adj = slots.iter().position(|s| s.payload.opcode == Opcode::PtrAdj).unwrap();
        let access = slots.iter().position(|s| s.access() == Some(AccessKind::Load) && !s.dummy).unwrap();
        assert!(lea < adj && adj < access);
        assert_eq!(slots[adj].class, InstructionClass::Class1);
    }

    #[test]
    fn empty_block_becomes_one_dummy_block() {
        let u = unit("@protect\nfunc f\n    ret\n");
        let t = translate(&u, Some(&pat("c1-c2-ld-st-sfx")), Variant::Ciphertext, 0).unwrap();
        assert_eq!(t.blocks.len(), 1);
        let body = &t.blocks[0].slots[..t.blocks[0].slots.len() - SUFFIX_SLOTS];
        assert!(body.iter().all(|s| s.dummy));
        assert_eq!(t.origin_stats().into_values().collect::<Vec<_>>(), vec![(1, 1, 1)]);
    }

    #[test]
    fn dummies_exist_for_payload_classes_only() {
        assert_eq!(dummy_for(InstructionClass::Class1).unwrap().len(), 1);
        assert_eq!(dummy_for(InstructionClass::Class2).unwrap().len(), 2);
        assert_eq!(dummy_for(InstructionClass::Load).unwrap().len(), 3);
        assert_eq!(dummy_for(InstructionClass::Store).unwrap().len(), 3);
        assert!(dummy_for(InstructionClass::Control).is_none());
        for c in [InstructionClass::Class1, InstructionClass::Class2, InstructionClass::Load, InstructionClass::Store] {
            for i in dummy_for(c).unwrap() {
                assert!(i.registers().iter().all(|r| r.is_reserved()), "{i} touches an application register");
            }
        }
    }

    #[test]
    fn reserved_registers_are_rejected() {
        let u = unit("@protect\nfunc f\n    mov r1, cs0\n    ret\n");
        assert!(matches!(translate(&u, None, Variant::FixedLength, 0), Err(RewriteError::ReservedRegisterUse { .. })));
    }

    #[test]
    fn pattern_must_cover_every_class() {
        let u = unit(MODEXP);
        assert!(matches!(
            translate(&u, Some(&pat("c1-ld-st-sfx")), Variant::Ciphertext, 0),
            Err(RewriteError::InstructionDoesNotFitPattern { class: InstructionClass::Class2, .. })
        ));
        assert!(matches!(translate(&u, None, Variant::Ciphertext, 0), Err(RewriteError::PatternRequired(_))));
        assert!(matches!(translate(&u, Some(&pat(FULL)), Variant::FixedCount, 0), Err(RewriteError::PatternNotAllowed(_))));
    }

    #[test]
    fn layout_seed_only_permutes_ids() {
        let u = unit(MODEXP);
        let a = translate(&u, Some(&pat(FULL)), Variant::Ciphertext, 1).unwrap();
        let b = translate(&u, Some(&pat(FULL)), Variant::Ciphertext, 2).unwrap();
        assert_eq!(a.origin_stats(), b.origin_stats());
        assert_eq!(a.blocks.len(), b.blocks.len());
    }

    #[test]
    fn variant_names_parse() {
        assert_eq!("iv".parse::<Variant>().unwrap(), Variant::AlignedPattern);
        assert_eq!("Ciphertext".parse::<Variant>().unwrap(), Variant::Ciphertext);
        assert_eq!("II-FixedCount".parse::<Variant>().unwrap(), Variant::FixedCount);
        assert!("VI".parse::<Variant>().is_err());
    }
}
