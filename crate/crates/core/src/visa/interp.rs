//! Reference semantics: the native (unprotected) interpreter and the
//! single-instruction executor shared with the protected engine.

use std::collections::HashMap;

use thiserror::Error;

use super::{
    AccessKind, DataDecl, DataLayout, Function, Instruction, MemRef, Opcode, Operands, Program, Reg, Src,
    Terminator, Width,
};

/// Start of the flat data segment.
pub const DATA_BASE: u64 = 0x1_0000;

/// Maximum depth of the native call stack.
const MAX_CALL_DEPTH: usize = 256;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("fuel exhausted after {0} steps")]
    FuelExhausted(u64),
    #[error("memory access of {width} bytes at {addr:#x} is outside every declared object")]
    OutOfBounds { addr: u64, width: usize },
    #[error("division by zero")]
    DivideByZero,
    #[error("call to external function `{0}`")]
    ExternalCall(String),
    #[error("call depth exceeded")]
    CallDepthExceeded,
    #[error("operand form not supported here: {0}")]
    UnsupportedOperand(String),
    #[error("`{0}` cannot be executed by the instruction executor")]
    NotExecutable(Opcode),
    #[error("unknown global `{0}`")]
    UnknownGlobal(String),
    #[error("input for `{name}` has {got} bytes but the object holds {size}")]
    InputSize { name: String, size: usize, got: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Flags {
    pub zero: bool,
    pub sign: bool,
    pub carry: bool,
}

impl Flags {
    pub fn bits(self) -> u64 {
        self.zero as u64 | (self.sign as u64) << 1 | (self.carry as u64) << 2
    }

    pub fn from_bits(bits: u64) -> Flags {
        Flags { zero: bits & 1 != 0, sign: bits & 2 != 0, carry: bits & 4 != 0 }
    }

    fn result(value: u64, carry: bool) -> Flags {
        Flags { zero: value == 0, sign: (value as i64) < 0, carry }
    }
}

/// Register file and flags.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CpuState {
    pub regs: [u64; Reg::COUNT],
    pub flags: Flags,
}

impl Default for CpuState {
    fn default() -> Self {
        CpuState { regs: [0; Reg::COUNT], flags: Flags::default() }
    }
}

impl CpuState {
    pub fn get(&self, r: Reg) -> u64 {
        self.regs[r.index()]
    }

    pub fn set(&mut self, r: Reg, v: u64) {
        self.regs[r.index()] = v;
    }

    pub fn app_regs(&self) -> [u64; Reg::APP_COUNT as usize] {
        let mut out = [0; Reg::APP_COUNT as usize];
        out.copy_from_slice(&self.regs[..Reg::APP_COUNT as usize]);
        out
    }
}

/// Memory as seen by the instruction executor.
pub trait MemoryPort {
    fn address(&self, cpu: &CpuState, mem: &MemRef) -> Result<u64, ExecError>;
    fn read(&mut self, addr: u64, width: Width) -> Result<u64, ExecError>;
    fn write(&mut self, addr: u64, width: Width, value: u64) -> Result<(), ExecError>;
}

/// Byte-addressable data segment holding the program's globals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlatMemory {
    layout: DataLayout,
    bytes: Vec<u8>,
}

impl FlatMemory {
    pub fn new(program: &Program) -> FlatMemory {
        FlatMemory::from_data(&program.data)
    }

    pub fn from_data(data: &[DataDecl]) -> FlatMemory {
        let layout = DataLayout::new(data);
        let end = layout.regions().last().map_or(DATA_BASE, |r| r.padded_end());
        let mut bytes = vec![0u8; (end - DATA_BASE) as usize];
        for (decl, region) in data.iter().zip(layout.regions()) {
            let off = (region.start - DATA_BASE) as usize;
            bytes[off..off + decl.init.len()].copy_from_slice(&decl.init);
        }
        FlatMemory { layout, bytes }
    }

    pub fn layout(&self) -> &DataLayout {
        &self.layout
    }

    pub fn global(&self, name: &str) -> Option<&[u8]> {
        let r = self.layout.regions().iter().find(|r| r.name == name)?;
        let off = (r.start - DATA_BASE) as usize;
        Some(&self.bytes[off..off + r.len])
    }

    pub fn global_u64(&self, name: &str) -> Option<u64> {
        let bytes = self.global(name)?;
        let mut buf = [0u8; 8];
        let n = bytes.len().min(8);
        buf[..n].copy_from_slice(&bytes[..n]);
        Some(u64::from_le_bytes(buf))
    }

    pub fn set_global(&mut self, name: &str, value: &[u8]) -> Result<(), ExecError> {
        let r = self
            .layout
            .regions()
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| ExecError::UnknownGlobal(name.to_string()))?;
        if value.len() > r.len {
            return Err(ExecError::InputSize { name: name.into(), size: r.len, got: value.len() });
        }
        let off = (r.start - DATA_BASE) as usize;
        self.bytes[off..off + value.len()].copy_from_slice(value);
        Ok(())
    }

    /// Raw bytes in `[addr, addr+len)`, which must lie in the segment.
    pub fn span(&self, addr: u64, len: usize) -> Option<&[u8]> {
        let off = addr.checked_sub(DATA_BASE)? as usize;
        self.bytes.get(off..off + len)
    }

    pub fn span_mut(&mut self, addr: u64, len: usize) -> Option<&mut [u8]> {
        let off = addr.checked_sub(DATA_BASE)? as usize;
        self.bytes.get_mut(off..off + len)
    }

    /// Contents of every global, in declaration order.
    pub fn snapshot(&self) -> Vec<(String, Vec<u8>)> {
        self.layout
            .regions()
            .iter()
            .map(|r| (r.name.clone(), self.global(&r.name).unwrap_or_default().to_vec()))
            .collect()
    }
}

impl MemoryPort for FlatMemory {
    fn address(&self, cpu: &CpuState, mem: &MemRef) -> Result<u64, ExecError> {
        match mem {
            MemRef::Base { base, disp } => Ok(cpu.get(*base).wrapping_add(*disp as i64 as u64)),
            MemRef::Global { name, disp } => self
                .layout
                .address_of(name)
                .map(|a| a.wrapping_add(*disp as i64 as u64))
                .ok_or_else(|| ExecError::UnknownGlobal(name.clone())),
            other => Err(ExecError::UnsupportedOperand(format!("{other:?}"))),
        }
    }

    fn read(&mut self, addr: u64, width: Width) -> Result<u64, ExecError> {
        let n = width.bytes();
        if self.layout.region_containing(addr, n).is_none() {
            return Err(ExecError::OutOfBounds { addr, width: n });
        }
        let mut buf = [0u8; 8];
        buf[..n].copy_from_slice(self.span(addr, n).expect("region inside segment"));
        Ok(u64::from_le_bytes(buf))
    }

    fn write(&mut self, addr: u64, width: Width, value: u64) -> Result<(), ExecError> {
        let n = width.bytes();
        if self.layout.region_containing(addr, n).is_none() {
            return Err(ExecError::OutOfBounds { addr, width: n });
        }
        self.span_mut(addr, n)
            .expect("region inside segment")
            .copy_from_slice(&value.to_le_bytes()[..n]);
        Ok(())
    }
}

/// Result of executing one instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Next,
    /// Transfer to the data controller.
    DataCall { kind: AccessKind, resume: u16 },
    /// Transfer to the code controller.
    Exit,
}

fn src_value(cpu: &CpuState, src: &Src, mem: &mut impl MemoryPort) -> Result<u64, ExecError> {
    Ok(match src {
        Src::Reg(r) => cpu.get(*r),
        Src::Imm(v) => *v as u64,
        Src::Mem(m) => {
            let addr = mem.address(cpu, m)?;
            mem.read(addr, Width::Quad)?
        }
    })
}

fn divide(
    cpu: &mut CpuState,
    quot: Reg,
    rem: Reg,
    divisor: &Src,
    mem: &mut impl MemoryPort,
) -> Result<(), ExecError> {
    let d = src_value(cpu, divisor, mem)?;
    if d == 0 {
        return Err(ExecError::DivideByZero);
    }
    let n = cpu.get(quot);
    let (q, r) = (n / d, n % d);
    cpu.set(quot, q);
    cpu.set(rem, r);
    cpu.flags = Flags::result(q, false);
    Ok(())
}

fn malformed(inst: &Instruction) -> ExecError {
    ExecError::UnsupportedOperand(inst.to_string())
}

/// Executes a single non-terminator instruction.
pub fn execute(
    cpu: &mut CpuState,
    inst: &Instruction,
    mem: &mut impl MemoryPort,
) -> Result<Step, ExecError> {
    use Opcode::*;
    match (inst.opcode, &inst.operands) {
        (Mov | MovI, Operands::Binary { dst, src }) => {
            let v = src_value(cpu, src, mem)?;
            cpu.set(*dst, v);
        }
        (Add | Sub | And | Or | Xor | Cmp | Test | Imul, Operands::Binary { dst, src }) => {
            let a = cpu.get(*dst);
            let b = src_value(cpu, src, mem)?;
            let (res, carry) = match inst.opcode {
                Add => a.overflowing_add(b),
                Sub | Cmp => a.overflowing_sub(b),
                And | Test => (a & b, false),
                Or => (a | b, false),
                Xor => (a ^ b, false),
                _ => (a.wrapping_mul(b), false),
            };
            cpu.flags = Flags::result(res, carry);
            if !matches!(inst.opcode, Cmp | Test) {
                cpu.set(*dst, res);
            }
        }
        (Shl | Shr, Operands::Binary { dst, src }) => {
            let count = (src_value(cpu, src, mem)? & 63) as u32;
            if count > 0 {
                let a = cpu.get(*dst);
                let (res, carry) = if inst.opcode == Shl {
                    (a << count, (a >> (64 - count)) & 1 == 1)
                } else {
                    (a >> count, (a >> (count - 1)) & 1 == 1)
                };
                cpu.flags = Flags::result(res, carry);
                cpu.set(*dst, res);
            }
        }
        (Inc | Dec, Operands::Reg(r)) => {
            let a = cpu.get(*r);
            let res = if inst.opcode == Inc { a.wrapping_add(1) } else { a.wrapping_sub(1) };
            cpu.flags = Flags::result(res, cpu.flags.carry);
            cpu.set(*r, res);
        }
        (Neg, Operands::Reg(r)) => {
            let a = cpu.get(*r);
            let res = a.wrapping_neg();
            cpu.flags = Flags::result(res, a != 0);
            cpu.set(*r, res);
        }
        (Not, Operands::Reg(r)) => {
            let a = cpu.get(*r);
            cpu.set(*r, !a);
        }
        (Lea, Operands::Load { dst, mem: m }) => {
            let addr = mem.address(cpu, m)?;
            cpu.set(*dst, addr);
        }
        (Cmovz | Cmovnz | Cmovc | Cmovnc | Cmovs | Cmovns, Operands::Binary { dst, src }) => {
            let cond = inst.opcode.condition().expect("cmov has a condition");
            let v = src_value(cpu, src, mem)?;
            if cond.holds(cpu.flags) {
                cpu.set(*dst, v);
            }
        }
        (Div, Operands::Div { quot, rem, divisor }) => divide(cpu, *quot, *rem, divisor, mem)?,
        (DivGuarded, Operands::Div { quot, rem, divisor }) => {
            let flags = cpu.flags;
            divide(cpu, *quot, *rem, divisor, mem)?;
            cpu.flags = flags;
        }
        (Ld | Ldb, Operands::Load { dst, mem: m }) => {
            let width = if inst.opcode == Ld { Width::Quad } else { Width::Byte };
            let addr = mem.address(cpu, m)?;
            let v = mem.read(addr, width)?;
            cpu.set(*dst, v);
        }
        (St | Stb, Operands::Store { mem: m, src }) => {
            let width = if inst.opcode == St { Width::Quad } else { Width::Byte };
            let addr = mem.address(cpu, m)?;
            mem.write(addr, width, cpu.get(*src))?;
        }
        (PtrAdj, Operands::Reg(r)) => {
            let v = cpu.get(*r).wrapping_add(cpu.get(Reg::CODE_DELTA));
            cpu.set(*r, v);
        }
        (FlagSave, Operands::None) => {
            let bits = cpu.flags.bits();
            cpu.set(Reg::FLAG_SHADOW, bits);
        }
        (FlagRestore, Operands::None) => {
            cpu.flags = Flags::from_bits(cpu.get(Reg::FLAG_SHADOW));
        }
        (Nop, _) => {}
        (DataCall, Operands::DataCall { kind, resume }) => {
            cpu.set(Reg::RESUME, *resume as u64);
            cpu.set(Reg::WRITE_FLAG, (*kind == AccessKind::Store) as u64);
            return Ok(Step::DataCall { kind: *kind, resume: *resume });
        }
        (Exit, _) => return Ok(Step::Exit),
        (Jmp | Jz | Jnz | Jc | Jnc | Js | Jns | Call | Ret, _) => {
            return Err(ExecError::NotExecutable(inst.opcode))
        }
        _ => return Err(malformed(inst)),
    }
    Ok(Step::Next)
}

/// Initial register and memory contents.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Input {
    pub regs: Vec<(Reg, u64)>,
    pub globals: Vec<(String, Vec<u8>)>,
}

impl Input {
    pub fn new() -> Input {
        Input::default()
    }

    pub fn reg(mut self, r: Reg, v: u64) -> Input {
        self.regs.push((r, v));
        self
    }

    pub fn global(mut self, name: &str, bytes: Vec<u8>) -> Input {
        self.globals.push((name.to_string(), bytes));
        self
    }

    pub fn global_u64(self, name: &str, v: u64) -> Input {
        self.global(name, v.to_le_bytes().to_vec())
    }

    pub fn apply(&self, cpu: &mut CpuState, mem: &mut FlatMemory) -> Result<(), ExecError> {
        for (r, v) in &self.regs {
            cpu.set(*r, *v);
        }
        for (name, bytes) in &self.globals {
            mem.set_global(name, bytes)?;
        }
        Ok(())
    }
}

/// Registers, flags and data memory after (or before) a run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MachineState {
    pub cpu: CpuState,
    pub memory: FlatMemory,
}

impl MachineState {
    pub fn initial(program: &Program, input: &Input) -> Result<MachineState, ExecError> {
        MachineState::from_data(&program.data, input)
    }

    pub fn from_data(data: &[DataDecl], input: &Input) -> Result<MachineState, ExecError> {
        let mut cpu = CpuState::default();
        let mut memory = FlatMemory::from_data(data);
        input.apply(&mut cpu, &mut memory)?;
        Ok(MachineState { cpu, memory })
    }

    /// Application-visible state: `r0`..`r15`, flags and all globals.
    pub fn observable(&self) -> ([u64; Reg::APP_COUNT as usize], Flags, Vec<(String, Vec<u8>)>) {
        (self.cpu.app_regs(), self.cpu.flags, self.memory.snapshot())
    }
}

fn label_indices(f: &Function) -> HashMap<&str, usize> {
    f.blocks.iter().enumerate().map(|(i, b)| (b.label.as_str(), i)).collect()
}

/// Runs `program` natively from its entry function.
pub fn interpret(program: &Program, input: &Input, fuel: u64) -> Result<MachineState, ExecError> {
    let mut state = MachineState::initial(program, input)?;
    let funcs: HashMap<&str, (&Function, HashMap<&str, usize>)> =
        program.functions.iter().map(|f| (f.name.as_str(), (f, label_indices(f)))).collect();
    let lookup = |name: &str| funcs.get(name).ok_or_else(|| ExecError::ExternalCall(name.into()));

    let mut steps = 0u64;
    let mut tick = || {
        steps += 1;
        if steps > fuel {
            Err(ExecError::FuelExhausted(fuel))
        } else {
            Ok(())
        }
    };

    let mut current = lookup(&program.entry)?;
    let mut block = 0usize;
    let mut stack: Vec<(&(&Function, HashMap<&str, usize>), usize)> = Vec::new();
    loop {
        let (func, labels) = current;
        let bb = &func.blocks[block];
        for inst in &bb.body {
            tick()?;
            match execute(&mut state.cpu, inst, &mut state.memory)? {
                Step::Next => {}
                _ => return Err(ExecError::NotExecutable(inst.opcode)),
            }
        }
        tick()?;
        match &bb.term {
            Terminator::Jump(l) => block = labels[l.as_str()],
            Terminator::Branch { cond, taken, fallthrough } => {
                let next = if cond.holds(state.cpu.flags) { taken } else { fallthrough };
                block = labels[next.as_str()];
            }
            Terminator::Call { callee, ret } => {
                if stack.len() >= MAX_CALL_DEPTH {
                    return Err(ExecError::CallDepthExceeded);
                }
                stack.push((current, labels[ret.as_str()]));
                current = lookup(callee)?;
                block = 0;
            }
            Terminator::Return => match stack.pop() {
                Some((caller, resume)) => {
                    current = caller;
                    block = resume;
                }
                None => break,
            },
        }
    }
    Ok(state)
}
