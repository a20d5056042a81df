//! Slot-level expansions: memory trampolines, division scaffolding, dummies
//! and the block suffix.

use crate::patterngen::SlotKind;
use crate::visa::{
    AccessKind, CodeLabel, Cond, Instruction, InstructionClass, MemRef, Opcode, Operands, Reg, Src,
};

use super::DUMMY_ADDR;

/// A lowered instruction together with the pattern element it occupies.
#[derive(Clone, Debug)]
pub(crate) struct Unit {
    pub kind: SlotKind,
    pub inst: Instruction,
}

impl Unit {
    pub fn of(inst: &Instruction) -> Unit {
        let kind = SlotKind::for_class(inst.class()).expect("lowered instructions carry payload classes");
        Unit { kind, inst: inst.clone() }
    }

    pub fn slot_count(&self) -> usize {
        self.kind.width()
    }

    /// Expanded instructions; `first` is the slot index the unit starts at.
    pub fn expand(&self, first: usize) -> Vec<Instruction> {
        match self.kind {
            SlotKind::Class1 => vec![self.inst.clone()],
            SlotKind::Class2 => vec![flag_save(), self.inst.clone()],
            SlotKind::Load | SlotKind::Store => memory_unit(&self.inst, first),
        }
    }

    /// Expanded byte length, independent of placement.
    pub fn bytes(&self) -> usize {
        self.expand(0).iter().map(|i| i.len() as usize).sum()
    }
}

fn flag_save() -> Instruction {
    Instruction::new(Opcode::FlagSave, Operands::None)
}

fn data_call(kind: AccessKind, first: usize) -> Instruction {
    let resume = u16::try_from(first + 2).expect("slot index fits u16");
    Instruction::new(Opcode::DataCall, Operands::DataCall { kind, resume })
}

fn memory_unit(inst: &Instruction, first: usize) -> Vec<Instruction> {
    let lea_addr = |mem: &MemRef| Instruction::new(Opcode::Lea, Operands::Load { dst: Reg::ADDR, mem: mem.clone() });
    match &inst.operands {
        Operands::Load { dst, mem } => vec![
            lea_addr(mem),
            data_call(AccessKind::Load, first),
            Instruction::new(inst.opcode, Operands::Load { dst: *dst, mem: MemRef::Scratch }),
        ],
        Operands::Store { mem, src } => vec![
            lea_addr(mem),
            data_call(AccessKind::Store, first),
            Instruction::new(inst.opcode, Operands::Store { mem: MemRef::Scratch, src: *src }),
        ],
        _ => unreachable!("memory units wrap loads and stores"),
    }
}

fn dummy_memory(kind: AccessKind, first: usize) -> Vec<Instruction> {
    let set_addr = Instruction::binary(Opcode::MovI, Reg::ADDR, Src::Imm(DUMMY_ADDR as i64));
    let access = match kind {
        AccessKind::Load => Instruction::new(Opcode::Ld, Operands::Load { dst: Reg::SCRATCH1, mem: MemRef::Scratch }),
        AccessKind::Store => {
            Instruction::new(Opcode::St, Operands::Store { mem: MemRef::Scratch, src: Reg::SCRATCH1 })
        }
    };
    vec![set_addr, data_call(kind, first), access]
}

fn class1_dummy() -> Instruction {
    Instruction::new(
        Opcode::Lea,
        Operands::Load { dst: Reg::SCRATCH1, mem: MemRef::Base { base: Reg::SCRATCH1, disp: 0 } },
    )
}

fn class2_dummy() -> Instruction {
    Instruction::new(
        Opcode::DivGuarded,
        Operands::Div { quot: Reg::SCRATCH1, rem: Reg::TARGET, divisor: Src::Imm(1) },
    )
}

/// Inert instructions filling one pattern element of `kind` starting at
/// slot `first`.
pub(crate) fn dummy_unit(kind: SlotKind, first: usize) -> Vec<Instruction> {
    match kind {
        SlotKind::Class1 => vec![class1_dummy()],
        // The leading slot must not touch the flag shadow: a dummy may sit
        // between a save and its restore.
        SlotKind::Class2 => vec![class1_dummy(), class2_dummy()],
        SlotKind::Load => dummy_memory(AccessKind::Load, first),
        SlotKind::Store => dummy_memory(AccessKind::Store, first),
    }
}

/// Semantically inert instructions of class `c`: none of them changes
/// application registers, flags or memory.
pub fn dummy_for(c: InstructionClass) -> Option<Vec<Instruction>> {
    Some(match c {
        InstructionClass::Class1 => vec![class1_dummy()],
        InstructionClass::Class2 => dummy_unit(SlotKind::Class2, 0),
        InstructionClass::Load => dummy_unit(SlotKind::Load, 0),
        InstructionClass::Store => dummy_unit(SlotKind::Store, 0),
        InstructionClass::PtrAdjust => vec![Instruction::new(Opcode::PtrAdj, Operands::Reg(Reg::SCRATCH1))],
        InstructionClass::Control | InstructionClass::Fill => return None,
    })
}

/// Where a suffix sends control.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Target {
    Label(CodeLabel),
    /// The next code block of the same basic block.
    Part(usize),
    Halt,
}

/// Placeholder label that finalisation turns into a block id.
pub(crate) fn target_placeholder(t: &Target) -> CodeLabel {
    match t {
        Target::Label(l) => l.clone(),
        Target::Part(i) => CodeLabel { function: String::new(), label: format!("#{i}") },
        Target::Halt => CodeLabel { function: String::new(), label: "#halt".into() },
    }
}

fn movi_target(dst: Reg, t: &Target) -> Instruction {
    Instruction::new(Opcode::MovI, Operands::BlockTarget { dst, target: target_placeholder(t) })
}

fn cmov(cond: Cond) -> Instruction {
    Instruction::binary(cond.cmov_opcode(), Reg::NEXT, Src::Reg(Reg::TARGET))
}

fn exit() -> Instruction {
    Instruction::new(Opcode::Exit, Operands::None)
}

/// Block exits as seen by the suffix builder.
#[derive(Clone, Debug)]
pub(crate) enum SuffixKind {
    Static(Target),
    Branch { cond: Cond, taken: Target, fallthrough: Target },
    Return,
}

/// Three next-id selection slots and the exit.
pub(crate) fn suffix(kind: &SuffixKind) -> Vec<Instruction> {
    match kind {
        SuffixKind::Static(t) => vec![movi_target(Reg::NEXT, t), movi_target(Reg::TARGET, t), cmov(Cond::Z), exit()],
        SuffixKind::Branch { cond, taken, fallthrough } => vec![
            movi_target(Reg::NEXT, fallthrough),
            movi_target(Reg::TARGET, taken),
            cmov(*cond),
            exit(),
        ],
        SuffixKind::Return => vec![
            Instruction::binary(Opcode::Mov, Reg::NEXT, Src::Reg(Reg::SCRATCH0)),
            Instruction::binary(Opcode::Mov, Reg::TARGET, Src::Reg(Reg::SCRATCH0)),
            cmov(Cond::Z),
            exit(),
        ],
    }
}
