//! Encoded-length table.
//!
//! Lengths follow the shape of the corresponding x86-64 encodings (REX prefix,
//! opcode, ModRM, displacement, immediate) without producing actual bytes.

use super::{Instruction, MemRef, Opcode, Operands, Src};

/// Size of one instruction slot.
pub const SLOT_BYTES: usize = 8;
/// Longest payload that still leaves room for a one-byte fill.
pub const MAX_PAYLOAD_BYTES: usize = SLOT_BYTES - 1;

fn fits_i8(v: i64) -> bool {
    i8::try_from(v).is_ok()
}

fn fits_i32(v: i64) -> bool {
    i32::try_from(v).is_ok()
}

/// REX + opcode + ModRM + displacement.
fn mem_len(mem: &MemRef) -> u8 {
    match mem {
        MemRef::Base { disp: 0, .. } => 3,
        MemRef::Base { disp, .. } if fits_i8(*disp as i64) => 4,
        MemRef::Base { .. } => 7,
        MemRef::Global { .. } | MemRef::RipRel { .. } => 7,
        MemRef::Scratch => 4,
    }
}

fn imm_alu_len(imm: i64) -> u8 {
    if fits_i8(imm) {
        4
    } else if fits_i32(imm) {
        7
    } else {
        11
    }
}

/// Encoded length of an instruction in bytes.
///
/// Every lowered instruction is at most [`MAX_PAYLOAD_BYTES`] long; assembler
/// forms with 64-bit immediates or wide displacements report their natural
/// length, which exceeds a slot and forces pre-splitting.
pub fn encoded_length(inst: &Instruction) -> u8 {
    use Opcode::*;
    match (inst.opcode, &inst.operands) {
        (Nop, Operands::Fill(k)) => *k,
        (Ret, _) => 1,
        (Jmp | Call | DataCall | Exit, _) => 5,
        (Jz | Jnz | Jc | Jnc | Js | Jns, _) => 6,
        (MovI, Operands::Binary { src: Src::Imm(v), .. }) => {
            if fits_i32(*v) {
                7
            } else {
                10
            }
        }
        (MovI, Operands::BlockTarget { .. }) => 7,
        (Mov, _) => 3,
        (Cmovz | Cmovnz | Cmovc | Cmovnc | Cmovs | Cmovns, _) => 4,
        (Imul, Operands::Binary { src, .. }) => match src {
            Src::Reg(_) => 4,
            Src::Imm(v) => imm_alu_len(*v),
            Src::Mem(m) => mem_len(m) + 1,
        },
        (Shl | Shr, Operands::Binary { src: Src::Imm(_), .. }) => 4,
        (Shl | Shr, _) => 3,
        (Add | Sub | And | Or | Xor | Cmp | Test, Operands::Binary { src, .. }) => match src {
            Src::Reg(_) => 3,
            Src::Imm(v) => imm_alu_len(*v),
            Src::Mem(m) => mem_len(m),
        },
        (Inc | Dec | Neg | Not, _) => 3,
        (Lea | Ld | St, Operands::Load { mem, .. } | Operands::Store { mem, .. }) => mem_len(mem),
        (Ldb, Operands::Load { mem, .. }) => mem_len(mem) + 1,
        (Stb, Operands::Store { mem, .. }) => mem_len(mem),
        (Div | DivGuarded, Operands::Div { divisor, .. }) => match divisor {
            Src::Reg(_) => 3,
            Src::Imm(_) => 7,
            Src::Mem(m) => mem_len(m),
        },
        (PtrAdj, _) => 7,
        (FlagSave | FlagRestore, _) => 3,
        // Malformed combinations are rejected by the assembler; give them a
        // length that can never fit a slot.
        _ => 15,
    }
}

/// A multi-byte no-op of the given width.
pub fn nop_fill(width: u8) -> Instruction {
    Instruction::new(Opcode::Nop, Operands::Fill(width))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::visa::{Reg, Src};

    fn r(i: u8) -> Reg {
        Reg::gpr(i).unwrap()
    }

    #[test]
    fn register_register_add_is_three_bytes() {
        let add = Instruction::binary(Opcode::Add, r(1), Src::Reg(r(2)));
        assert_eq!(encoded_length(&add), 3);
    }

    #[test]
    fn load_with_wide_displacement_is_seven_bytes() {
        let ld = Instruction::new(
            Opcode::Ld,
            Operands::Load { dst: r(1), mem: MemRef::Base { base: r(2), disp: 4096 } },
        );
        assert_eq!(encoded_length(&ld), 7);
        let short = Instruction::new(
            Opcode::Ld,
            Operands::Load { dst: r(1), mem: MemRef::Base { base: r(2), disp: 8 } },
        );
        assert_eq!(encoded_length(&short), 4);
    }

    #[test]
    fn nop_fill_width_is_parameterised() {
        for k in 1..=8u8 {
            assert_eq!(encoded_length(&nop_fill(k)), k);
        }
    }

    #[test]
    fn wide_immediates_do_not_fit_a_slot() {
        let mov = Instruction::binary(Opcode::MovI, r(0), Src::Imm(1 << 40));
        assert!(!mov.fits_slot());
        let mov = Instruction::binary(Opcode::MovI, r(0), Src::Imm(-5));
        assert!(mov.fits_slot());
    }
}
