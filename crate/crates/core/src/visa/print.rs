//! Canonical assembly printer. Every block is labelled and every terminator
//! names all of its successors, so printing is a right inverse of parsing.

use std::fmt::{self, Write};

use super::{Instruction, MemRef, Operands, Program, Src, Terminator};

fn write_disp(f: &mut impl Write, disp: i64) -> fmt::Result {
    match disp {
        0 => Ok(()),
        d if d < 0 => write!(f, "-{}", d.unsigned_abs()),
        d => write!(f, "+{d}"),
    }
}

pub(crate) fn write_mem(f: &mut impl Write, mem: &MemRef) -> fmt::Result {
    match mem {
        MemRef::Base { base, disp } => {
            write!(f, "[{base}")?;
            write_disp(f, *disp as i64)?;
            f.write_char(']')
        }
        MemRef::Global { name, disp } => {
            write!(f, "[{name}")?;
            write_disp(f, *disp as i64)?;
            f.write_char(']')
        }
        MemRef::RipRel { rel } => {
            f.write_str("[rip")?;
            write_disp(f, *rel)?;
            f.write_char(']')
        }
        MemRef::Scratch => f.write_str("[scratch]"),
    }
}

fn write_src(f: &mut impl Write, src: &Src) -> fmt::Result {
    match src {
        Src::Reg(r) => write!(f, "{r}"),
        Src::Imm(v) => write!(f, "{v}"),
        Src::Mem(m) => write_mem(f, m),
    }
}

pub(crate) fn write_instruction(f: &mut impl Write, inst: &Instruction) -> fmt::Result {
    f.write_str(inst.opcode.mnemonic())?;
    match &inst.operands {
        Operands::None => Ok(()),
        Operands::Reg(r) => write!(f, " {r}"),
        Operands::Binary { dst, src } => {
            write!(f, " {dst}, ")?;
            write_src(f, src)
        }
        Operands::Load { dst, mem } => {
            write!(f, " {dst}, ")?;
            write_mem(f, mem)
        }
        Operands::Store { mem, src } => {
            f.write_char(' ')?;
            write_mem(f, mem)?;
            write!(f, ", {src}")
        }
        Operands::Div { quot, rem, divisor } => {
            write!(f, " {quot}, {rem}, ")?;
            write_src(f, divisor)
        }
        Operands::Target(t) => write!(f, " {t}"),
        Operands::BlockTarget { dst, target } => {
            write!(f, " {dst}, @{}:{}", target.function, target.label)
        }
        Operands::DataCall { kind, resume } => write!(f, " {}, {resume}", kind.name()),
        Operands::Fill(k) => write!(f, " {k}"),
    }
}

/// Renders a program in the assembly syntax accepted by
/// [`parse_program`](super::parse_program).
pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    let _ = writeln!(out, ".entry {}", p.entry);
    for d in &p.data {
        let _ = write!(out, ".data {}, {}", d.name, d.size);
        for b in &d.init {
            let _ = write!(out, ", {b}");
        }
        out.push('\n');
    }
    for func in &p.functions {
        out.push('\n');
        if func.protect {
            out.push_str("@protect\n");
        }
        let _ = writeln!(out, "func {}", func.name);
        for bb in &func.blocks {
            let _ = writeln!(out, "{}:", bb.label);
            for inst in &bb.body {
                out.push_str("    ");
                let _ = write_instruction(&mut out, inst);
                out.push('\n');
            }
            let _ = match &bb.term {
                Terminator::Jump(l) => writeln!(out, "    jmp {l}"),
                Terminator::Branch { cond, taken, fallthrough } => {
                    writeln!(out, "    {} {taken}, {fallthrough}", cond.jump_opcode())
                }
                Terminator::Call { callee, ret } => writeln!(out, "    call {callee}, {ret}"),
                Terminator::Return => writeln!(out, "    ret"),
            };
        }
    }
    out
}
