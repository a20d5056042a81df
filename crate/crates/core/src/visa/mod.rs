//! The virtual instruction set.
//!
//! A small x86-64-flavoured ISA whose only properties that matter to the
//! protection pipeline are per-opcode encoded lengths and instruction classes.
//! Programs are written in a line-oriented assembly (see [`parse_program`]) and
//! can be interpreted natively (see [`interpret`]) to obtain a reference result
//! for the protected execution path.

mod encoding;
mod interp;
mod lower;
mod parse;
mod print;

pub use encoding::{encoded_length, nop_fill, MAX_PAYLOAD_BYTES, SLOT_BYTES};
pub use interp::{
    execute, interpret, CpuState, ExecError, Flags, FlatMemory, Input, MachineState, MemoryPort,
    Step, DATA_BASE,
};
pub use lower::{lower_block, LoweredBlock, LoweredExit};
pub use parse::{parse_program, ParseError};
pub use print::print_program;

use std::fmt;

/// A register index. `r0`..`r15` belong to the application; the remaining
/// indices are reserved for the code and data controllers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(u8);

impl Reg {
    pub const APP_COUNT: u8 = 16;
    pub const COUNT: usize = 26;

    /// Effective address handed to the data controller.
    pub const ADDR: Reg = Reg(16);
    /// Slot index the data controller returns to.
    pub const RESUME: Reg = Reg(17);
    /// Write flag of the current data request.
    pub const WRITE_FLAG: Reg = Reg(18);
    /// Temporary used by pre-split address sequences and call/return lowering.
    pub const SCRATCH0: Reg = Reg(19);
    /// Sink register for dummy instructions.
    pub const SCRATCH1: Reg = Reg(20);
    /// Next block id, consumed by the code controller.
    pub const NEXT: Reg = Reg(21);
    /// Alternative next block id for conditional exits.
    pub const TARGET: Reg = Reg(22);
    /// Shadow return stack pointer.
    pub const SHADOW_SP: Reg = Reg(23);
    /// Difference between original code location and the code scratchpad.
    pub const CODE_DELTA: Reg = Reg(24);
    /// Flags saved around division.
    pub const FLAG_SHADOW: Reg = Reg(25);

    const RESERVED_NAMES: [&'static str; 10] =
        ["ca", "cr", "cw", "cs0", "cs1", "cn", "ct", "csp", "cd", "cf"];

    pub fn gpr(index: u8) -> Option<Reg> {
        (index < Self::APP_COUNT).then_some(Reg(index))
    }

    pub const fn index(self) -> usize {
        self.0 as usize
    }

    pub const fn is_reserved(self) -> bool {
        self.0 >= Self::APP_COUNT
    }

    pub fn parse(name: &str) -> Option<Reg> {
        if let Some(n) = name.strip_prefix('r') {
            return n.parse::<u8>().ok().and_then(Reg::gpr);
        }
        Self::RESERVED_NAMES
            .iter()
            .position(|r| *r == name)
            .map(|i| Reg(Self::APP_COUNT + i as u8))
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_reserved() {
            f.write_str(Self::RESERVED_NAMES[(self.0 - Self::APP_COUNT) as usize])
        } else {
            write!(f, "r{}", self.0)
        }
    }
}

/// Condition codes over the zero, sign and carry flags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cond {
    Z,
    Nz,
    C,
    Nc,
    S,
    Ns,
}

impl Cond {
    pub fn holds(self, flags: Flags) -> bool {
        match self {
            Cond::Z => flags.zero,
            Cond::Nz => !flags.zero,
            Cond::C => flags.carry,
            Cond::Nc => !flags.carry,
            Cond::S => flags.sign,
            Cond::Ns => !flags.sign,
        }
    }

    pub fn jump_opcode(self) -> Opcode {
        match self {
            Cond::Z => Opcode::Jz,
            Cond::Nz => Opcode::Jnz,
            Cond::C => Opcode::Jc,
            Cond::Nc => Opcode::Jnc,
            Cond::S => Opcode::Js,
            Cond::Ns => Opcode::Jns,
        }
    }

    pub fn cmov_opcode(self) -> Opcode {
        match self {
            Cond::Z => Opcode::Cmovz,
            Cond::Nz => Opcode::Cmovnz,
            Cond::C => Opcode::Cmovc,
            Cond::Nc => Opcode::Cmovnc,
            Cond::S => Opcode::Cmovs,
            Cond::Ns => Opcode::Cmovns,
        }
    }
}

/// Instruction classes. The first five are the payload classes a block
/// pattern is built from; `Control` and `Fill` cover controller plumbing and
/// slot padding, which never appear in a profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InstructionClass {
    Class1,
    Class2,
    Load,
    Store,
    PtrAdjust,
    Control,
    Fill,
}

impl InstructionClass {
    pub fn name(self) -> &'static str {
        match self {
            InstructionClass::Class1 => "class1",
            InstructionClass::Class2 => "class2",
            InstructionClass::Load => "load",
            InstructionClass::Store => "store",
            InstructionClass::PtrAdjust => "ptradjust",
            InstructionClass::Control => "control",
            InstructionClass::Fill => "fill",
        }
    }
}

impl fmt::Display for InstructionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Coarse semantic grouping of opcodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Semantics {
    Move,
    Arith,
    Mul,
    Shift,
    Cmov,
    LeaLike,
    Div,
    Load,
    Store,
    Jump,
    CondJump,
    Call,
    Return,
    PtrAdjust,
    NopFill,
    Controller,
}

macro_rules! opcodes {
    ($($variant:ident => $mnemonic:literal, $class:ident, $sem:ident, $internal:literal;)*) => {
        /// Every opcode of the ISA, application and internal.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Opcode {
            $($variant,)*
        }

        impl Opcode {
            pub const ALL: &'static [Opcode] = &[$(Opcode::$variant,)*];

            pub fn mnemonic(self) -> &'static str {
                match self { $(Opcode::$variant => $mnemonic,)* }
            }

            pub fn class(self) -> InstructionClass {
                match self { $(Opcode::$variant => InstructionClass::$class,)* }
            }

            pub fn semantics(self) -> Semantics {
                match self { $(Opcode::$variant => Semantics::$sem,)* }
            }

            /// Internal opcodes are emitted by the rewriter only and are not
            /// accepted by the assembler.
            pub fn is_internal(self) -> bool {
                match self { $(Opcode::$variant => $internal,)* }
            }
        }
    };
}

opcodes! {
    Mov => "mov", Class1, Move, false;
    MovI => "movi", Class1, Move, false;
    Add => "add", Class1, Arith, false;
    Sub => "sub", Class1, Arith, false;
    And => "and", Class1, Arith, false;
    Or => "or", Class1, Arith, false;
    Xor => "xor", Class1, Arith, false;
    Cmp => "cmp", Class1, Arith, false;
    Test => "test", Class1, Arith, false;
    Inc => "inc", Class1, Arith, false;
    Dec => "dec", Class1, Arith, false;
    Neg => "neg", Class1, Arith, false;
    Not => "not", Class1, Arith, false;
    Imul => "imul", Class1, Mul, false;
    Shl => "shl", Class1, Shift, false;
    Shr => "shr", Class1, Shift, false;
    Lea => "lea", Class1, LeaLike, false;
    Cmovz => "cmovz", Class1, Cmov, false;
    Cmovnz => "cmovnz", Class1, Cmov, false;
    Cmovc => "cmovc", Class1, Cmov, false;
    Cmovnc => "cmovnc", Class1, Cmov, false;
    Cmovs => "cmovs", Class1, Cmov, false;
    Cmovns => "cmovns", Class1, Cmov, false;
    Div => "div", Class2, Div, false;
    Ld => "ld", Load, Load, false;
    Ldb => "ldb", Load, Load, false;
    St => "st", Store, Store, false;
    Stb => "stb", Store, Store, false;
    Jmp => "jmp", Control, Jump, false;
    Jz => "jz", Control, CondJump, false;
    Jnz => "jnz", Control, CondJump, false;
    Jc => "jc", Control, CondJump, false;
    Jnc => "jnc", Control, CondJump, false;
    Js => "js", Control, CondJump, false;
    Jns => "jns", Control, CondJump, false;
    Call => "call", Control, Call, false;
    Ret => "ret", Control, Return, false;
    PtrAdj => "ptradj", PtrAdjust, PtrAdjust, true;
    FlagSave => "fsave", Class1, Move, true;
    FlagRestore => "frest", Class1, Move, true;
    DivGuarded => "divf", Class2, Div, true;
    DataCall => "dctl", Control, Controller, true;
    Exit => "exit", Control, Controller, true;
    Nop => "nop", Fill, NopFill, true;
}

impl Opcode {
    pub fn from_mnemonic(m: &str) -> Option<Opcode> {
        Opcode::ALL.iter().copied().find(|op| op.mnemonic() == m)
    }

    pub fn condition(self) -> Option<Cond> {
        Some(match self {
            Opcode::Jz | Opcode::Cmovz => Cond::Z,
            Opcode::Jnz | Opcode::Cmovnz => Cond::Nz,
            Opcode::Jc | Opcode::Cmovc => Cond::C,
            Opcode::Jnc | Opcode::Cmovnc => Cond::Nc,
            Opcode::Js | Opcode::Cmovs => Cond::S,
            Opcode::Jns | Opcode::Cmovns => Cond::Ns,
            _ => return None,
        })
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// Access width of loads and stores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Width {
    Byte,
    Quad,
}

impl Width {
    pub fn bytes(self) -> usize {
        match self {
            Width::Byte => 1,
            Width::Quad => 8,
        }
    }
}

/// Memory operand forms.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum MemRef {
    /// `[base+disp]`
    Base { base: Reg, disp: i32 },
    /// RIP-relative reference to a global, `[name+disp]`.
    Global { name: String, disp: i32 },
    /// RIP-relative reference resolved against a code block's original
    /// location.
    RipRel { rel: i64 },
    /// The data scratchpad at the offset selected by the address register.
    Scratch,
}

/// Second operand of binary operations.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Src {
    Reg(Reg),
    Imm(i64),
    Mem(MemRef),
}

/// Kind of a data-controller request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AccessKind {
    Load,
    Store,
}

impl AccessKind {
    pub fn name(self) -> &'static str {
        match self {
            AccessKind::Load => "load",
            AccessKind::Store => "store",
        }
    }
}

/// A symbolic reference to the first code block of a basic block.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CodeLabel {
    pub function: String,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Operands {
    None,
    Reg(Reg),
    Binary { dst: Reg, src: Src },
    /// `lea`, `ld`, `ldb`
    Load { dst: Reg, mem: MemRef },
    /// `st`, `stb`
    Store { mem: MemRef, src: Reg },
    Div { quot: Reg, rem: Reg, divisor: Src },
    /// Jump label or callee name.
    Target(String),
    /// `movi` of a not yet assigned block id.
    BlockTarget { dst: Reg, target: CodeLabel },
    DataCall { kind: AccessKind, resume: u16 },
    Fill(u8),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub opcode: Opcode,
    pub operands: Operands,
}

impl Instruction {
    pub fn new(opcode: Opcode, operands: Operands) -> Self {
        Instruction { opcode, operands }
    }

    pub fn binary(opcode: Opcode, dst: Reg, src: Src) -> Self {
        Self::new(opcode, Operands::Binary { dst, src })
    }

    pub fn class(&self) -> InstructionClass {
        self.opcode.class()
    }

    pub fn len(&self) -> u8 {
        encoded_length(self)
    }

    pub fn fits_slot(&self) -> bool {
        self.len() as usize <= MAX_PAYLOAD_BYTES
    }

    pub fn memory_operand(&self) -> Option<&MemRef> {
        match &self.operands {
            Operands::Load { mem, .. } | Operands::Store { mem, .. } => Some(mem),
            Operands::Binary { src: Src::Mem(mem), .. } => Some(mem),
            Operands::Div { divisor: Src::Mem(mem), .. } => Some(mem),
            _ => None,
        }
    }

    /// Registers read or written by this instruction, including implicit ones.
    pub fn registers(&self) -> Vec<Reg> {
        let mut regs = Vec::new();
        let mem = |m: &MemRef, regs: &mut Vec<Reg>| {
            if let MemRef::Base { base, .. } = m {
                regs.push(*base);
            }
        };
        match &self.operands {
            Operands::Reg(r) => regs.push(*r),
            Operands::Binary { dst, src } => {
                regs.push(*dst);
                match src {
                    Src::Reg(r) => regs.push(*r),
                    Src::Mem(m) => mem(m, &mut regs),
                    Src::Imm(_) => {}
                }
            }
            Operands::Load { dst, mem: m } => {
                regs.push(*dst);
                mem(m, &mut regs);
            }
            Operands::Store { mem: m, src } => {
                regs.push(*src);
                mem(m, &mut regs);
            }
            Operands::Div { quot, rem, divisor } => {
                regs.push(*quot);
                regs.push(*rem);
                match divisor {
                    Src::Reg(r) => regs.push(*r),
                    Src::Mem(m) => mem(m, &mut regs),
                    Src::Imm(_) => {}
                }
            }
            Operands::BlockTarget { dst, .. } => regs.push(*dst),
            _ => {}
        }
        match self.opcode {
            Opcode::PtrAdj => regs.push(Reg::CODE_DELTA),
            Opcode::FlagSave | Opcode::FlagRestore => regs.push(Reg::FLAG_SHADOW),
            _ => {}
        }
        regs
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        print::write_instruction(f, self)
    }
}

/// How a basic block hands over control.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Terminator {
    Jump(String),
    Branch { cond: Cond, taken: String, fallthrough: String },
    Call { callee: String, ret: String },
    Return,
}

impl Terminator {
    pub fn successors(&self) -> Vec<&str> {
        match self {
            Terminator::Jump(l) => vec![l],
            Terminator::Branch { taken, fallthrough, .. } => vec![taken, fallthrough],
            Terminator::Call { ret, .. } => vec![ret],
            Terminator::Return => vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BasicBlock {
    pub label: String,
    pub body: Vec<Instruction>,
    pub term: Terminator,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Function {
    pub name: String,
    pub protect: bool,
    pub blocks: Vec<BasicBlock>,
}

impl Function {
    pub fn block(&self, label: &str) -> Option<&BasicBlock> {
        self.blocks.iter().find(|b| b.label == label)
    }

    pub fn block_index(&self, label: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.label == label)
    }

    pub fn callees(&self) -> impl Iterator<Item = &str> {
        self.blocks.iter().filter_map(|b| match &b.term {
            Terminator::Call { callee, .. } => Some(callee.as_str()),
            _ => None,
        })
    }
}

/// A `.data` declaration.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DataDecl {
    pub name: String,
    pub size: usize,
    pub init: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Program {
    pub functions: Vec<Function>,
    pub entry: String,
    pub data: Vec<DataDecl>,
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn global(&self, name: &str) -> Option<&DataDecl> {
        self.data.iter().find(|d| d.name == name)
    }

    pub fn protected_roots(&self) -> impl Iterator<Item = &Function> {
        self.functions.iter().filter(|f| f.protect)
    }

    /// Addresses of the globals in the flat data segment, in declaration order.
    pub fn data_layout(&self) -> DataLayout {
        DataLayout::new(&self.data)
    }
}

/// Placement of globals in the flat data segment. Every object starts on a
/// 16-byte boundary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataLayout {
    regions: Vec<Region>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    pub name: String,
    pub start: u64,
    pub len: usize,
}

impl Region {
    pub fn contains(&self, addr: u64, width: usize) -> bool {
        addr >= self.start && addr + width as u64 <= self.start + self.len as u64
    }

    /// End rounded up to the next 16-byte boundary.
    pub fn padded_end(&self) -> u64 {
        (self.start + self.len as u64).div_ceil(16) * 16
    }
}

impl DataLayout {
    pub fn new(data: &[DataDecl]) -> DataLayout {
        let mut next = DATA_BASE;
        let regions = data
            .iter()
            .map(|d| {
                let r = Region { name: d.name.clone(), start: next, len: d.size };
                next = r.padded_end().max(next + 16);
                r
            })
            .collect();
        DataLayout { regions }
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn address_of(&self, name: &str) -> Option<u64> {
        self.regions.iter().find(|r| r.name == name).map(|r| r.start)
    }

    pub fn region_containing(&self, addr: u64, width: usize) -> Option<&Region> {
        self.regions.iter().find(|r| r.contains(addr, width))
    }
}
