//! Pre-splitting of a basic block into slot-sized instructions.
//!
//! After lowering, every instruction fits a slot, memory is touched only by
//! `ld`/`ldb`/`st`/`stb` through a base register, every reference to a global
//! goes through `lea` + `ptradj`, and calls and returns use the shadow stack
//! addressed by `csp`.

use super::{
    BasicBlock, CodeLabel, Cond, Function, Instruction, MemRef, Opcode, Operands, Reg, Src,
    Terminator,
};

/// Control transfer at the end of a lowered block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LoweredExit {
    Goto(CodeLabel),
    Branch { cond: Cond, taken: CodeLabel, fallthrough: CodeLabel },
    /// Enter `callee`; the return label was pushed by the block body.
    Call { callee: String },
    /// Continue at the block id popped into `cs0`.
    Return,
    /// Return from the root function.
    Halt,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoweredBlock {
    pub label: CodeLabel,
    pub body: Vec<Instruction>,
    pub exit: LoweredExit,
}

fn lea(dst: Reg, mem: MemRef) -> Instruction {
    Instruction::new(Opcode::Lea, Operands::Load { dst, mem })
}

fn base(r: Reg, disp: i32) -> MemRef {
    MemRef::Base { base: r, disp }
}

/// Materialises the address of `mem` in `dst` and returns a base-register
/// operand for it, or returns `mem` unchanged if it already is one.
fn address_into(out: &mut Vec<Instruction>, dst: Reg, mem: &MemRef) -> MemRef {
    match mem {
        MemRef::Global { .. } => {
            out.push(lea(dst, mem.clone()));
            out.push(Instruction::new(Opcode::PtrAdj, Operands::Reg(dst)));
            base(dst, 0)
        }
        other => other.clone(),
    }
}

/// Loads a memory source operand into `cs0`.
fn load_src(out: &mut Vec<Instruction>, mem: &MemRef) -> Src {
    let s = Reg::SCRATCH0;
    let m = address_into(out, s, mem);
    out.push(Instruction::new(Opcode::Ld, Operands::Load { dst: s, mem: m }));
    Src::Reg(s)
}

fn split_movi(out: &mut Vec<Instruction>, dst: Reg, v: i64) {
    let imm = |x: i64| Src::Imm(x);
    // The shifts and ors clobber flags, which `movi` must not.
    out.push(Instruction::new(Opcode::FlagSave, Operands::None));
    out.push(Instruction::binary(Opcode::MovI, dst, imm(v >> 32)));
    out.push(Instruction::binary(Opcode::Shl, dst, imm(16)));
    out.push(Instruction::binary(Opcode::Or, dst, imm((v >> 16) & 0xffff)));
    out.push(Instruction::binary(Opcode::Shl, dst, imm(16)));
    out.push(Instruction::binary(Opcode::Or, dst, imm(v & 0xffff)));
    out.push(Instruction::new(Opcode::FlagRestore, Operands::None));
}

fn lower_instruction(out: &mut Vec<Instruction>, inst: &Instruction) {
    use Opcode::*;
    match (inst.opcode, &inst.operands) {
        (MovI, Operands::Binary { dst, src: Src::Imm(v) }) if !inst.fits_slot() => {
            split_movi(out, *dst, *v)
        }
        (op, Operands::Binary { dst, src: Src::Mem(m) }) => {
            let src = load_src(out, m);
            out.push(Instruction::binary(op, *dst, src));
        }
        (op, Operands::Div { quot, rem, divisor: Src::Mem(m) }) => {
            let divisor = load_src(out, m);
            out.push(Instruction::new(op, Operands::Div { quot: *quot, rem: *rem, divisor }));
        }
        (Lea, Operands::Load { dst, mem: mem @ MemRef::Global { .. } }) => {
            out.push(lea(*dst, mem.clone()));
            out.push(Instruction::new(PtrAdj, Operands::Reg(*dst)));
        }
        (op @ (Ld | Ldb), Operands::Load { dst, mem }) => {
            let mut m = address_into(out, Reg::SCRATCH0, mem);
            let candidate = Instruction::new(op, Operands::Load { dst: *dst, mem: m.clone() });
            if !candidate.fits_slot() {
                out.push(lea(Reg::SCRATCH0, m));
                m = base(Reg::SCRATCH0, 0);
            }
            out.push(Instruction::new(op, Operands::Load { dst: *dst, mem: m }));
        }
        (op @ (St | Stb), Operands::Store { mem, src }) => {
            let m = address_into(out, Reg::SCRATCH0, mem);
            out.push(Instruction::new(op, Operands::Store { mem: m, src: *src }));
        }
        _ => out.push(inst.clone()),
    }
}

/// Lowers one basic block of `func`. `is_root` selects whether a return
/// leaves the protected unit.
pub fn lower_block(func: &Function, bb: &BasicBlock, is_root: bool) -> LoweredBlock {
    let label = |l: &str| CodeLabel { function: func.name.clone(), label: l.to_string() };
    let mut body = Vec::with_capacity(bb.body.len() + 4);
    for inst in &bb.body {
        lower_instruction(&mut body, inst);
    }
    let sp = Reg::SHADOW_SP;
    let s = Reg::SCRATCH0;
    let exit = match &bb.term {
        Terminator::Jump(l) => LoweredExit::Goto(label(l)),
        Terminator::Branch { cond, taken, fallthrough } => LoweredExit::Branch {
            cond: *cond,
            taken: label(taken),
            fallthrough: label(fallthrough),
        },
        Terminator::Call { callee, ret } => {
            body.push(Instruction::new(
                Opcode::MovI,
                Operands::BlockTarget { dst: s, target: label(ret) },
            ));
            body.push(Instruction::new(Opcode::St, Operands::Store { mem: base(sp, 0), src: s }));
            body.push(lea(sp, base(sp, 8)));
            LoweredExit::Call { callee: callee.clone() }
        }
        Terminator::Return if is_root => LoweredExit::Halt,
        Terminator::Return => {
            body.push(lea(sp, base(sp, -8)));
            body.push(Instruction::new(Opcode::Ld, Operands::Load { dst: s, mem: base(sp, 0) }));
            LoweredExit::Return
        }
    };
    LoweredBlock { label: label(&bb.label), body, exit }
}
