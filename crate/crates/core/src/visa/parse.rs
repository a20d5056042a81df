//! Line-oriented assembler.
//!
//! ```text
//! .entry main                 ; optional, defaults to the first protected function
//! .data table, 16, 1, 2, 3    ; name, size, initial bytes
//! @protect                    ; marks the next function for protection
//! func main
//! top:
//!     ld r1, [table+8]
//!     add r1, r2
//!     jnz top                 ; falls through to the next block
//!     ret
//! ```
//!
//! A block ends at `jmp`, a conditional jump, `call` or `ret`, and before
//! every label. Conditional jumps and calls may name their continuation
//! explicitly (`jz taken, fall`, `call f, after`); otherwise it is the next
//! block, which receives a `.L<n>` label if it has none.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::{
    BasicBlock, Cond, DataDecl, Function, Instruction, MemRef, Opcode, Operands,
    Program, Reg, Semantics, Src, Terminator,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown opcode `{0}`")]
    UnknownOpcode(String),
    #[error("`{0}` is reserved for the rewriter")]
    InternalOpcode(String),
    #[error("immediate {0} does not fit the instruction and cannot be split")]
    ImmediateTooLarge(i64),
    #[error("unresolved label `{label}` in `{function}`")]
    UnresolvedLabel { function: String, label: String },
    #[error("unknown global `{0}`")]
    UnknownGlobal(String),
    #[error("duplicate definition of `{0}`")]
    Duplicate(String),
    #[error("initialiser of `{0}` is longer than its size")]
    InitTooLong(String),
    #[error("`{0}` at the end of a function has no fall-through block")]
    MissingFallthrough(String),
    #[error("program declares no functions")]
    NoFunctions,
    #[error("entry function `{0}` is not defined")]
    UnknownEntry(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

fn err<T>(line: usize, kind: ParseErrorKind) -> Result<T, ParseError> {
    Err(ParseError { line, kind })
}

fn syntax<T>(line: usize, msg: impl Into<String>) -> Result<T, ParseError> {
    err(line, ParseErrorKind::Syntax(msg.into()))
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && !s.starts_with(|c: char| c.is_ascii_digit())
}

fn parse_int(line: usize, s: &str) -> Result<i64, ParseError> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let magnitude = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        u64::from_str_radix(&hex.replace('_', ""), 16)
    } else {
        body.replace('_', "").parse::<u64>()
    };
    let Ok(m) = magnitude else {
        return syntax(line, format!("invalid number `{s}`"));
    };
    if neg {
        if m > 1u64 << 63 {
            return syntax(line, format!("number `{s}` out of range"));
        }
        Ok((m as i64).wrapping_neg())
    } else {
        // Hex literals may spell the full 64-bit pattern.
        Ok(m as i64)
    }
}

fn parse_reg(line: usize, s: &str) -> Result<Reg, ParseError> {
    Reg::parse(s).map_or_else(|| syntax(line, format!("expected a register, found `{s}`")), Ok)
}

fn parse_mem(line: usize, s: &str) -> Result<MemRef, ParseError> {
    let Some(inner) = s.strip_prefix('[').and_then(|t| t.strip_suffix(']')) else {
        return syntax(line, format!("expected a memory operand, found `{s}`"));
    };
    let inner: String = inner.chars().filter(|c| !c.is_whitespace()).collect();
    let split = inner.find(['+', '-']).unwrap_or(inner.len());
    let (base, rest) = inner.split_at(split);
    let disp = if rest.is_empty() { 0 } else { parse_int(line, rest)? };
    let Ok(disp) = i32::try_from(disp) else {
        return err(line, ParseErrorKind::ImmediateTooLarge(disp));
    };
    if let Some(r) = Reg::parse(base) {
        Ok(MemRef::Base { base: r, disp })
    } else if is_ident(base) {
        Ok(MemRef::Global { name: base.to_string(), disp })
    } else {
        syntax(line, format!("invalid memory operand `{s}`"))
    }
}

fn parse_src(line: usize, s: &str, allow_mem: bool) -> Result<Src, ParseError> {
    if s.starts_with('[') {
        if !allow_mem {
            return syntax(line, "memory operand not allowed here");
        }
        return Ok(Src::Mem(parse_mem(line, s)?));
    }
    if let Some(r) = Reg::parse(s) {
        return Ok(Src::Reg(r));
    }
    Ok(Src::Imm(parse_int(line, s)?))
}

fn fit_i32(line: usize, src: &Src) -> Result<(), ParseError> {
    match src {
        Src::Imm(v) if i32::try_from(*v).is_err() => err(line, ParseErrorKind::ImmediateTooLarge(*v)),
        _ => Ok(()),
    }
}

fn arity(line: usize, ops: &[&str], n: usize, mnemonic: &str) -> Result<(), ParseError> {
    if ops.len() == n {
        Ok(())
    } else {
        syntax(line, format!("`{mnemonic}` takes {n} operand(s), found {}", ops.len()))
    }
}

enum Line {
    Body(Instruction),
    Term { term: PendingTerm },
}

enum PendingTerm {
    Jump(String),
    Branch { cond: Cond, taken: String, fallthrough: Option<String> },
    Call { callee: String, ret: Option<String> },
    Return,
}

fn parse_instruction(line: usize, mnemonic: &str, ops: &[&str]) -> Result<Line, ParseError> {
    let Some(op) = Opcode::from_mnemonic(mnemonic) else {
        return err(line, ParseErrorKind::UnknownOpcode(mnemonic.into()));
    };
    if op.is_internal() {
        return err(line, ParseErrorKind::InternalOpcode(mnemonic.into()));
    }
    let label = |s: &str| -> Result<String, ParseError> {
        if is_ident(s) {
            Ok(s.to_string())
        } else {
            syntax(line, format!("invalid label `{s}`"))
        }
    };
    let inst = match op.semantics() {
        Semantics::Jump => {
            arity(line, ops, 1, mnemonic)?;
            return Ok(Line::Term { term: PendingTerm::Jump(label(ops[0])?) });
        }
        Semantics::CondJump => {
            if ops.is_empty() || ops.len() > 2 {
                return syntax(line, format!("`{mnemonic}` takes 1 or 2 operands"));
            }
            let fallthrough = ops.get(1).map(|s| label(s)).transpose()?;
            let cond = op.condition().expect("conditional jump");
            return Ok(Line::Term {
                term: PendingTerm::Branch { cond, taken: label(ops[0])?, fallthrough },
            });
        }
        Semantics::Call => {
            if ops.is_empty() || ops.len() > 2 {
                return syntax(line, "`call` takes 1 or 2 operands");
            }
            let ret = ops.get(1).map(|s| label(s)).transpose()?;
            return Ok(Line::Term { term: PendingTerm::Call { callee: label(ops[0])?, ret } });
        }
        Semantics::Return => {
            arity(line, ops, 0, mnemonic)?;
            return Ok(Line::Term { term: PendingTerm::Return });
        }
        Semantics::Move if op == Opcode::Mov => {
            arity(line, ops, 2, mnemonic)?;
            let src = Src::Reg(parse_reg(line, ops[1])?);
            Instruction::binary(op, parse_reg(line, ops[0])?, src)
        }
        Semantics::Move => {
            arity(line, ops, 2, mnemonic)?;
            let Src::Imm(v) = parse_src(line, ops[1], false)? else {
                return syntax(line, "`movi` takes an immediate");
            };
            Instruction::binary(op, parse_reg(line, ops[0])?, Src::Imm(v))
        }
        Semantics::Cmov => {
            arity(line, ops, 2, mnemonic)?;
            let src = Src::Reg(parse_reg(line, ops[1])?);
            Instruction::binary(op, parse_reg(line, ops[0])?, src)
        }
        Semantics::Arith | Semantics::Mul
            if matches!(op, Opcode::Inc | Opcode::Dec | Opcode::Neg | Opcode::Not) =>
        {
            arity(line, ops, 1, mnemonic)?;
            Instruction::new(op, Operands::Reg(parse_reg(line, ops[0])?))
        }
        Semantics::Arith | Semantics::Mul => {
            arity(line, ops, 2, mnemonic)?;
            let src = parse_src(line, ops[1], true)?;
            fit_i32(line, &src)?;
            Instruction::binary(op, parse_reg(line, ops[0])?, src)
        }
        Semantics::Shift => {
            arity(line, ops, 2, mnemonic)?;
            let src = parse_src(line, ops[1], false)?;
            if let Src::Imm(v) = src {
                if !(0..64).contains(&v) {
                    return err(line, ParseErrorKind::ImmediateTooLarge(v));
                }
            }
            Instruction::binary(op, parse_reg(line, ops[0])?, src)
        }
        Semantics::LeaLike | Semantics::Load => {
            arity(line, ops, 2, mnemonic)?;
            let dst = parse_reg(line, ops[0])?;
            Instruction::new(op, Operands::Load { dst, mem: parse_mem(line, ops[1])? })
        }
        Semantics::Store => {
            arity(line, ops, 2, mnemonic)?;
            let mem = parse_mem(line, ops[0])?;
            Instruction::new(op, Operands::Store { mem, src: parse_reg(line, ops[1])? })
        }
        Semantics::Div => {
            let (quot, rem, divisor) = match ops.len() {
                1 => (Reg::gpr(0).unwrap(), Reg::gpr(1).unwrap(), ops[0]),
                3 => (parse_reg(line, ops[0])?, parse_reg(line, ops[1])?, ops[2]),
                _ => return syntax(line, "`div` takes 1 or 3 operands"),
            };
            if quot == rem {
                return syntax(line, "quotient and remainder registers must differ");
            }
            let divisor = parse_src(line, divisor, true)?;
            fit_i32(line, &divisor)?;
            Instruction::new(op, Operands::Div { quot, rem, divisor })
        }
        Semantics::PtrAdjust | Semantics::NopFill | Semantics::Controller => {
            unreachable!("internal opcodes are rejected above")
        }
    };
    Ok(Line::Body(inst))
}

struct OpenBlock {
    label: Option<String>,
    line: usize,
    body: Vec<Instruction>,
}

struct RawBlock {
    label: Option<String>,
    line: usize,
    body: Vec<Instruction>,
    term: Option<(usize, PendingTerm)>,
}

struct FunctionBuilder {
    name: String,
    protect: bool,
    line: usize,
    blocks: Vec<RawBlock>,
    open: Option<OpenBlock>,
}

impl FunctionBuilder {
    fn open(&mut self, line: usize) -> &mut OpenBlock {
        self.open.get_or_insert_with(|| OpenBlock { label: None, line, body: Vec::new() })
    }

    fn close(&mut self, term: Option<(usize, PendingTerm)>) {
        if let Some(b) = self.open.take() {
            self.blocks.push(RawBlock { label: b.label, line: b.line, body: b.body, term });
        }
    }

    fn finish(mut self, taken: &HashSet<String>, counter: &mut usize) -> Result<Function, ParseError> {
        if self.open.is_some() {
            self.close(None);
        }
        if self.blocks.is_empty() {
            self.blocks.push(RawBlock { label: None, line: self.line, body: vec![], term: None });
        }
        let mut fresh = || loop {
            let l = format!(".L{}", *counter);
            *counter += 1;
            if !taken.contains(&l) {
                return l;
            }
        };
        let labels: Vec<String> =
            self.blocks.iter().map(|b| b.label.clone().unwrap_or_else(&mut fresh)).collect();
        let mut seen = HashSet::new();
        for (b, l) in self.blocks.iter().zip(&labels) {
            if !seen.insert(l.as_str()) {
                return err(b.line, ParseErrorKind::Duplicate(l.clone()));
            }
        }
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (i, raw) in self.blocks.into_iter().enumerate() {
            let next = labels.get(i + 1).cloned();
            let need_next = |line: usize, what: &str| {
                next.clone().ok_or(ParseError {
                    line,
                    kind: ParseErrorKind::MissingFallthrough(what.to_string()),
                })
            };
            let term = match raw.term {
                None => match &next {
                    Some(l) => Terminator::Jump(l.clone()),
                    None => Terminator::Return,
                },
                Some((_, PendingTerm::Jump(l))) => Terminator::Jump(l),
                Some((line, PendingTerm::Branch { cond, taken, fallthrough })) => {
                    let fallthrough = match fallthrough {
                        Some(f) => f,
                        None => need_next(line, cond.jump_opcode().mnemonic())?,
                    };
                    Terminator::Branch { cond, taken, fallthrough }
                }
                Some((line, PendingTerm::Call { callee, ret })) => {
                    let ret = match ret {
                        Some(r) => r,
                        None => need_next(line, "call")?,
                    };
                    Terminator::Call { callee, ret }
                }
                Some((_, PendingTerm::Return)) => Terminator::Return,
            };
            for succ in term.successors() {
                if !seen.contains(succ) {
                    return err(
                        raw.line,
                        ParseErrorKind::UnresolvedLabel {
                            function: self.name.clone(),
                            label: succ.to_string(),
                        },
                    );
                }
            }
            blocks.push(BasicBlock { label: labels[i].clone(), body: raw.body, term });
        }
        Ok(Function { name: self.name, protect: self.protect, blocks })
    }
}

fn strip_comment(line: &str) -> &str {
    let end = line.find([';', '#']).unwrap_or(line.len());
    line[..end].trim()
}

fn label_definition(line: &str) -> Option<&str> {
    line.strip_suffix(':').map(str::trim).filter(|l| !l.contains(char::is_whitespace))
}

fn parse_data(line: usize, rest: &str) -> Result<DataDecl, ParseError> {
    let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
    if parts.len() < 2 || !is_ident(parts[0]) || Reg::parse(parts[0]).is_some() {
        return syntax(line, "expected `.data name, size[, bytes...]`");
    }
    let size = parse_int(line, parts[1])?;
    let Ok(size) = usize::try_from(size) else {
        return syntax(line, "negative object size");
    };
    let mut init = Vec::with_capacity(parts.len() - 2);
    for b in &parts[2..] {
        let v = parse_int(line, b)?;
        let Ok(byte) = u8::try_from(v).or_else(|_| i8::try_from(v).map(|x| x as u8)) else {
            return syntax(line, format!("byte value `{b}` out of range"));
        };
        init.push(byte);
    }
    if init.len() > size {
        return err(line, ParseErrorKind::InitTooLong(parts[0].to_string()));
    }
    Ok(DataDecl { name: parts[0].to_string(), size, init })
}

/// Parses and validates a program.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let taken: HashSet<String> = text
        .lines()
        .filter_map(|l| label_definition(strip_comment(l)))
        .map(str::to_string)
        .collect();
    let mut counter = 0usize;
    let mut functions: Vec<Function> = Vec::new();
    let mut data: Vec<DataDecl> = Vec::new();
    let mut entry: Option<(usize, String)> = None;
    let mut protect_next = false;
    let mut current: Option<FunctionBuilder> = None;
    let mut global_uses: Vec<(usize, String)> = Vec::new();
    let mut function_lines: HashMap<String, usize> = HashMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let text = strip_comment(raw);
        if text.is_empty() {
            continue;
        }
        if let Some(rest) = text.strip_prefix(".data") {
            let decl = parse_data(line, rest)?;
            if data.iter().any(|d| d.name == decl.name) {
                return err(line, ParseErrorKind::Duplicate(decl.name));
            }
            data.push(decl);
        } else if let Some(rest) = text.strip_prefix(".entry") {
            let name = rest.trim();
            if !is_ident(name) {
                return syntax(line, "expected `.entry name`");
            }
            entry = Some((line, name.to_string()));
        } else if text == "@protect" {
            protect_next = true;
        } else if let Some(rest) = text.strip_prefix("func ") {
            let name = rest.trim();
            if !is_ident(name) {
                return syntax(line, format!("invalid function name `{name}`"));
            }
            if let Some(f) = current.take() {
                functions.push(f.finish(&taken, &mut counter)?);
            }
            if function_lines.insert(name.to_string(), line).is_some() {
                return err(line, ParseErrorKind::Duplicate(name.to_string()));
            }
            current = Some(FunctionBuilder {
                name: name.to_string(),
                protect: std::mem::take(&mut protect_next),
                line,
                blocks: Vec::new(),
                open: None,
            });
        } else {
            let Some(f) = current.as_mut() else {
                return syntax(line, "instruction outside of a function");
            };
            if let Some(label) = label_definition(text) {
                if !is_ident(label) {
                    return syntax(line, format!("invalid label `{label}`"));
                }
                if f.open.is_some() {
                    f.close(None);
                }
                f.open = Some(OpenBlock { label: Some(label.to_string()), line, body: Vec::new() });
                continue;
            }
            let (mnemonic, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
            let ops: Vec<&str> = if rest.trim().is_empty() {
                Vec::new()
            } else {
                rest.split(',').map(str::trim).collect()
            };
            match parse_instruction(line, mnemonic, &ops)? {
                Line::Body(inst) => {
                    if let Some(MemRef::Global { name, .. }) = inst.memory_operand() {
                        global_uses.push((line, name.clone()));
                    }
                    f.open(line).body.push(inst);
                }
                Line::Term { term } => {
                    f.open(line);
                    f.close(Some((line, term)));
                }
            }
        }
    }
    if let Some(f) = current.take() {
        functions.push(f.finish(&taken, &mut counter)?);
    }
    if functions.is_empty() {
        return err(text.lines().count().max(1), ParseErrorKind::NoFunctions);
    }
    for (line, name) in global_uses {
        if !data.iter().any(|d| d.name == name) {
            return err(line, ParseErrorKind::UnknownGlobal(name));
        }
    }
    let entry = match entry {
        Some((line, name)) => {
            if !functions.iter().any(|f| f.name == name) {
                return err(line, ParseErrorKind::UnknownEntry(name));
            }
            name
        }
        None => functions.iter().find(|f| f.protect).unwrap_or(&functions[0]).name.clone(),
    };
    Ok(Program { functions, entry, data })
}
