//! Protected execution: the code controller fetches one block at a time
//! into the code scratchpad and runs it. Every memory slot enters the data
//! controller, which writes back the previous pair if it was stored to and
//! loads the pair covering the requested address into the data scratchpad.
//! The block's suffix picks the next block id.

pub mod scratchpad;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use scratchpad::{Scratchpad, CODE_SCRATCH_BASE, DATA_SCRATCH_BASE};

use crate::oram::{pair_offset, CiphertextModel, CodeOram, DataBlockStore, DataOramKind, OramError, PAIR_BYTES};
use crate::rewriter::{CodeBlock, Slot, TranslatedUnit, Variant, DUMMY_ADDR, HALT_ID, SHADOW_BASE, SHADOW_DEPTH};
use crate::sidechannel::{AttackerView, LatencyModel, ObservedAccess, ObservedBlock, SampleContext};
use crate::visa::{
    execute, CpuState, ExecError, FlatMemory, Input, InstructionClass, MachineState, MemRef, MemoryPort, Opcode,
    Operands, Reg, Step, Width,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub variant: Variant,
    /// Deduplicated payload table for the code store.
    pub code_compression: bool,
    pub data_oram: DataOramKind,
    /// Drives scratchpad rotation and latency noise.
    pub seed: u64,
    /// Machine secret behind the ciphertext model; shared across runs.
    pub key_seed: u64,
    pub latency: LatencyModel,
    /// Retired instructions before the run is abandoned.
    pub step_budget: u64,
    pub lazy_fallback: bool,
    /// Globals left out of the initial data store.
    pub deferred_objects: Vec<String>,
    /// Overrides the variant's rotation policy.
    pub rotation: Option<bool>,
    pub record_touches: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            variant: Variant::Ciphertext,
            code_compression: true,
            data_oram: DataOramKind::Linear,
            seed: 0,
            key_seed: 0x5eed,
            latency: LatencyModel::default(),
            step_budget: 50_000_000,
            lazy_fallback: true,
            deferred_objects: Vec::new(),
            rotation: None,
            record_touches: false,
        }
    }
}

impl EngineConfig {
    pub fn for_variant(variant: Variant) -> EngineConfig {
        EngineConfig { variant, ..EngineConfig::default() }
    }

    pub fn rotates(&self) -> bool {
        self.rotation.unwrap_or(self.variant == Variant::Ciphertext)
    }

    /// Counter freshness in the data store.
    pub fn fresh(&self) -> bool {
        self.variant == Variant::Ciphertext
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("step budget of {0} retired instructions exhausted")]
    StepBudgetExhausted(u64),
    #[error("block {block} slot {slot} faulted: {error}")]
    SlotFault { block: u32, slot: usize, error: ExecError },
    #[error("block {0} ran off its end without an exit")]
    MissingExit(u32),
    #[error("next block id {0:#x} does not exist")]
    UnknownBlock(u64),
    #[error("data controller: {0}")]
    Oram(#[from] OramError),
    #[error("configuration is for variant {config} but the unit was built for {unit}")]
    VariantMismatch { unit: Variant, config: Variant },
    #[error("input: {0}")]
    Input(ExecError),
}

/// Facts hidden from the adversary, for correctness checks and scoring.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroundTruth {
    /// Id of every fetched block, parallel to the view's blocks.
    pub block_ids: Vec<u32>,
    /// Address requested by each data entry, per fetched block.
    pub access_addresses: Vec<Vec<u64>>,
}

impl GroundTruth {
    /// Positions where the block chain `chain` starts.
    pub fn occurrences(&self, chain: &[u32]) -> Vec<usize> {
        let Some(&first) = chain.first() else { return Vec::new() };
        (0..self.block_ids.len())
            .filter(|&i| self.block_ids[i] == first && self.block_ids[i..].starts_with(chain))
            .collect()
    }

    pub fn dummy_accesses(&self) -> usize {
        self.access_addresses.iter().flatten().filter(|&&a| a & !15 == DUMMY_ADDR).count()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExecutionTrace {
    view: AttackerView,
    truth: GroundTruth,
    pub stats: RunStats,
    /// Physical data-store touches as `seq,index,kind` when recorded.
    pub data_touches: Vec<crate::oram::Touch>,
}

impl ExecutionTrace {
    pub fn attacker_view(&self) -> &AttackerView {
        &self.view
    }

    pub fn into_attacker_view(self) -> AttackerView {
        self.view
    }

    /// Hidden fields; for the correctness checker and attack scoring only.
    pub fn ground_truth(&self) -> &GroundTruth {
        &self.truth
    }
}

/// Cost counters of one run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RunStats {
    pub retired: u64,
    pub code_fetches: u64,
    pub code_touches: u64,
    pub data_entries: u64,
    pub dummy_entries: u64,
    pub data_touches: u64,
    pub violations: u64,
}

/// Inserts globals, the shadow return stack and the dummy entry.
pub fn init_data_oram(
    unit: &TranslatedUnit,
    memory: &FlatMemory,
    cfg: &EngineConfig,
) -> Result<DataBlockStore, OramError> {
    let mut store = DataBlockStore::new(
        cfg.data_oram,
        CiphertextModel::from_seed(cfg.key_seed),
        cfg.fresh(),
        cfg.lazy_fallback,
        cfg.seed,
    );
    for r in memory.layout().regions() {
        let bytes = memory.span(r.start, r.padded_end() as usize - r.start as usize).expect("region inside segment");
        if cfg.deferred_objects.iter().any(|d| *d == r.name) {
            store.register_lazy(r.start, bytes);
        } else {
            store.insert_object(r.start, bytes)?;
        }
    }
    if unit.has_calls {
        store.insert_object(SHADOW_BASE, &[0u8; SHADOW_DEPTH * 8])?;
    }
    store.insert_dummy(DUMMY_ADDR)?;
    if cfg.record_touches {
        store.enable_trace(true);
    }
    Ok(store)
}

struct Port {
    pc: u64,
    data_loc: u64,
    pair_base: u64,
    scratch: [u8; PAIR_BYTES],
}

impl Port {
    fn offset(&self, addr: u64, width: Width) -> Result<usize, ExecError> {
        pair_offset(self.data_loc, addr, width.bytes())
            .map_err(|_| ExecError::OutOfBounds { addr, width: width.bytes() })
    }
}

impl MemoryPort for Port {
    fn address(&self, cpu: &CpuState, mem: &MemRef) -> Result<u64, ExecError> {
        match mem {
            MemRef::Base { base, disp } => Ok(cpu.get(*base).wrapping_add(*disp as i64 as u64)),
            MemRef::RipRel { rel } => Ok(self.pc.wrapping_add(*rel as u64)),
            MemRef::Scratch => Ok(self.data_loc.wrapping_add(cpu.get(Reg::ADDR).wrapping_sub(self.pair_base))),
            MemRef::Global { .. } => Err(ExecError::UnsupportedOperand(format!("{mem:?}"))),
        }
    }

    fn read(&mut self, addr: u64, width: Width) -> Result<u64, ExecError> {
        let off = self.offset(addr, width)?;
        let mut buf = [0u8; 8];
        buf[..width.bytes()].copy_from_slice(&self.scratch[off..off + width.bytes()]);
        Ok(u64::from_le_bytes(buf))
    }

    fn write(&mut self, addr: u64, width: Width, value: u64) -> Result<(), ExecError> {
        let off = self.offset(addr, width)?;
        self.scratch[off..off + width.bytes()].copy_from_slice(&value.to_le_bytes()[..width.bytes()]);
        Ok(())
    }
}

fn block_digest(b: &CodeBlock) -> [u8; 32] {
    let mut h = Sha256::new();
    for s in &b.slots {
        h.update(format!("{}|{}|{};", s.offset, s.fill, s.payload).as_bytes());
    }
    h.finalize().into()
}

/// A translated unit ready to run any number of times.
#[derive(Clone, Debug)]
pub struct Engine<'a> {
    unit: &'a TranslatedUnit,
    cfg: EngineConfig,
    digests: Vec<[u8; 32]>,
    cipher: CiphertextModel,
}

impl<'a> Engine<'a> {
    pub fn new(unit: &'a TranslatedUnit, cfg: &EngineConfig) -> Result<Engine<'a>, EngineError> {
        if unit.variant != cfg.variant {
            return Err(EngineError::VariantMismatch { unit: unit.variant, config: cfg.variant });
        }
        Ok(Engine {
            unit,
            cfg: cfg.clone(),
            digests: unit.blocks.iter().map(block_digest).collect(),
            cipher: CiphertextModel::from_seed(cfg.key_seed),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    /// Runs once with the configured seed.
    pub fn run(&self, input: &Input) -> Result<(MachineState, ExecutionTrace), EngineError> {
        self.run_seeded(input, self.cfg.seed)
    }

    pub fn run_seeded(&self, input: &Input, seed: u64) -> Result<(MachineState, ExecutionTrace), EngineError> {
        let cfg = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let initial = MachineState::from_data(&self.unit.data, input).map_err(EngineError::Input)?;
        let mut cpu = initial.cpu.clone();
        if self.unit.has_calls {
            cpu.set(Reg::SHADOW_SP, SHADOW_BASE);
        }
        let mut store = init_data_oram(self.unit, &initial.memory, cfg)?;
        let rows: Vec<Vec<Slot>> = self.unit.blocks.iter().map(|b| b.slots.clone()).collect();
        let mut code = CodeOram::new(&rows, cfg.code_compression);
        let mut code_pad = Scratchpad::code();
        let mut data_pad = Scratchpad::data();
        let rotate = cfg.rotates();

        let mut trace = ExecutionTrace::default();
        let mut port = Port { pc: 0, data_loc: data_pad.active(), pair_base: 0, scratch: [0; PAIR_BYTES] };
        let mut next = self.unit.entry as u64;
        let retire_budget = cfg.step_budget;

        while next != HALT_ID {
            let id = u32::try_from(next).ok().filter(|&i| (i as usize) < rows.len()).ok_or(EngineError::UnknownBlock(next))?;
            let before = code.stats().touches;
            let slots = code.fetch(id as usize);
            let location = if rotate { code_pad.rotate(&mut rng) } else { code_pad.active() };
            let orig = self.unit.blocks[id as usize].original_address();
            cpu.set(Reg::CODE_DELTA, orig.wrapping_sub(location));
            let fetch_touches = code.stats().touches - before;
            trace.stats.code_fetches += 1;
            trace.stats.code_touches += fetch_touches;
            let mut observed = ObservedBlock {
                location,
                code_tag: self.cipher.tag(location, &self.digests[id as usize]),
                fetch_touches,
                latencies: Vec::with_capacity(slots.len() * 2),
                accesses: Vec::new(),
            };
            let mut addresses = Vec::new();
            let mut exited = false;

            for (i, slot) in slots.iter().enumerate() {
                if trace.stats.retired >= retire_budget {
                    return Err(EngineError::StepBudgetExhausted(retire_budget));
                }
                port.pc = location + slot.offset as u64;
                let dividend = match slot.payload.operands {
                    Operands::Div { quot, .. } => cpu.get(quot),
                    _ => 0,
                };
                let ctx = SampleContext { dividend, misaligned: slot.crosses_16_byte_boundary() };
                let step = execute(&mut cpu, &slot.payload, &mut port)
                    .map_err(|error| EngineError::SlotFault { block: id, slot: i, error })?;
                observed.latencies.push(cfg.latency.sample(slot.payload.opcode, slot.class, ctx, &mut rng) as f32);
                trace.stats.retired += 1;
                match step {
                    Step::Next => {
                        if slot.fill > 0 {
                            let l = cfg.latency.sample(Opcode::Nop, InstructionClass::Fill, SampleContext::default(), &mut rng);
                            observed.latencies.push(l as f32);
                            trace.stats.retired += 1;
                        }
                    }
                    Step::DataCall { kind, .. } => {
                        let addr = cpu.get(Reg::ADDR);
                        if rotate {
                            port.data_loc = data_pad.rotate(&mut rng);
                        }
                        let fetch = store.access(addr, kind, &mut port.scratch)?;
                        port.pair_base = fetch.base;
                        trace.stats.data_entries += 1;
                        trace.stats.data_touches += fetch.touches;
                        trace.stats.violations += fetch.violation as u64;
                        if fetch.base == DUMMY_ADDR {
                            trace.stats.dummy_entries += 1;
                        }
                        addresses.push(addr);
                        observed.accesses.push(ObservedAccess {
                            kind,
                            touches: fetch.touches,
                            scratch_location: port.data_loc,
                            scratch_tag: self.cipher.tag(port.data_loc, &port.scratch),
                            written_tags: fetch.written_tags,
                            violation: fetch.violation,
                        });
                    }
                    Step::Exit => {
                        exited = true;
                        break;
                    }
                }
            }
            if !exited {
                return Err(EngineError::MissingExit(id));
            }
            next = cpu.get(Reg::NEXT);
            trace.view.blocks.push(observed);
            trace.truth.block_ids.push(id);
            trace.truth.access_addresses.push(addresses);
        }
        trace.view.final_tags = store.flush(&port.scratch)?;
        trace.data_touches = store.trace().to_vec();

        let mut memory = initial.memory.clone();
        for r in initial.memory.layout().regions() {
            if let Some(bytes) = store.peek_bytes(r.start, r.len) {
                memory.span_mut(r.start, r.len).expect("region inside segment").copy_from_slice(&bytes);
            }
        }
        Ok((MachineState { cpu, memory }, trace))
    }
}

/// Runs `unit` once on `input`.
pub fn run(unit: &TranslatedUnit, input: &Input, cfg: &EngineConfig) -> Result<(MachineState, ExecutionTrace), EngineError> {
    Engine::new(unit, cfg)?.run(input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{compile, CompileOptions};
    use crate::samples;
    use crate::visa::{interpret, parse_program};
    use rand::SeedableRng;

    fn compiled(src: &str, v: Variant) -> TranslatedUnit {
        let p = parse_program(src).unwrap();
        compile(&p, None, &CompileOptions::for_variant(v).quick(30)).unwrap().translated
    }

    #[test]
    fn modexp_three_five_seven_under_ciphertext() {
        let unit = compiled(samples::MODEXP.source, Variant::Ciphertext);
        let input = Input::new().global_u64("base", 3).global_u64("exp", 5).global_u64("modulus", 7);
        let (state, trace) = run(&unit, &input, &EngineConfig::default()).unwrap();
        assert_eq!(state.memory.global_u64("result"), Some(5));
        let native = interpret(&samples::MODEXP.program(), &input, 1_000_000).unwrap();
        assert_eq!(state.observable(), native.observable());
        assert!(trace.stats.dummy_entries > 0);
    }

    #[test]
    fn every_variant_matches_the_interpreter_on_every_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for s in samples::ALL {
            for v in Variant::ALL {
                let unit = compiled(s.source, v);
                let engine = Engine::new(&unit, &EngineConfig::for_variant(v)).unwrap();
                for k in 0..3 {
                    let input = s.random_input(&mut rng);
                    let native = interpret(&s.program(), &input, 10_000_000).unwrap();
                    let (state, _) = engine.run_seeded(&input, k).unwrap();
                    assert_eq!(state.observable(), native.observable(), "{} under {v}", s.name);
                }
            }
        }
    }

    const STRAIGHT: &str = "
        .data x, 16
        @protect
        func f
            ld r1, [x]
            add r1, 5
            st [x+8], r1
            ret
    ";

    #[test]
    fn single_block_program_fetches_once() {
        let unit = compiled(STRAIGHT, Variant::AlignedPattern);
        assert_eq!(unit.blocks.len(), 1);
        let pattern = unit.pattern.clone().unwrap();
        let (state, trace) = run(&unit, &Input::new().global_u64("x", 9), &EngineConfig::for_variant(Variant::AlignedPattern)).unwrap();
        let view = trace.attacker_view();
        assert_eq!(view.blocks.len(), 1);
        let per_block = pattern.count(crate::patterngen::SlotKind::Load) + pattern.count(crate::patterngen::SlotKind::Store);
        assert_eq!(view.blocks[0].accesses.len(), per_block);
        assert_eq!(&state.memory.global("x").unwrap()[8..], &14u64.to_le_bytes());
        // Fetch scans one row per block; data entries touch every data entry four times.
        assert_eq!(view.blocks[0].fetch_touches, 1);
    }

    #[test]
    fn data_store_holds_objects_and_the_dummy() {
        let src = ".data g, 64\n@protect\nfunc f\n    ret\n";
        let unit = compiled(src, Variant::FixedLength);
        let mem = FlatMemory::from_data(&unit.data);
        let store = init_data_oram(&unit, &mem, &EngineConfig::for_variant(Variant::FixedLength)).unwrap();
        assert_eq!(store.len(), 5);
        let empty = compiled("@protect\nfunc f\n    ret\n", Variant::FixedLength);
        let store = init_data_oram(&empty, &FlatMemory::from_data(&[]), &EngineConfig::for_variant(Variant::FixedLength)).unwrap();
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn deferred_objects_are_inserted_on_demand() {
        let unit = compiled(STRAIGHT, Variant::Ciphertext);
        let cfg = EngineConfig { deferred_objects: vec!["x".into()], ..EngineConfig::default() };
        let (state, trace) = run(&unit, &Input::new().global_u64("x", 1), &cfg).unwrap();
        assert_eq!(&state.memory.global("x").unwrap()[8..], &6u64.to_le_bytes());
        assert_eq!(trace.stats.violations, 1);
        assert!(trace.attacker_view().blocks.iter().flat_map(|b| &b.accesses).any(|a| a.violation));
        let strict = EngineConfig { lazy_fallback: false, ..cfg };
        assert!(matches!(run(&unit, &Input::new(), &strict), Err(EngineError::Oram(OramError::AddressMissing(_)))));
    }

    #[test]
    fn zero_iteration_loop_skips_the_body() {
        let src = "
            .data n, 8
            .data acc, 8
            @protect
            func f
                ld r1, [n]
                test r1, r1
                jz done
            body:
                ld r2, [acc]
                add r2, 3
                st [acc], r2
                dec r1
                jnz body
            done:
                ret
        ";
        let unit = compiled(src, Variant::AlignedPattern);
        let body = unit.blocks_of("f", "body");
        let cfg = EngineConfig::for_variant(Variant::AlignedPattern);
        let (_, trace) = run(&unit, &Input::new(), &cfg).unwrap();
        assert!(!trace.ground_truth().block_ids.iter().any(|id| body.contains(id)));
        let pat = unit.pattern.as_ref().unwrap();
        let per_block = pat.count(crate::patterngen::SlotKind::Load) + pat.count(crate::patterngen::SlotKind::Store);
        assert!(trace.attacker_view().blocks.iter().all(|b| b.accesses.len() == per_block));
        let (state, _) = run(&unit, &Input::new().global_u64("n", 4), &cfg).unwrap();
        assert_eq!(state.memory.global_u64("acc"), Some(12));
    }

    #[test]
    fn rotation_follows_the_variant() {
        let unit = compiled(samples::MODEXP.source, Variant::Ciphertext);
        let input = samples::MODEXP.random_input(&mut ChaCha8Rng::seed_from_u64(5));
        let (_, t) = run(&unit, &input, &EngineConfig::default()).unwrap();
        let locs: std::collections::HashSet<u64> = t.attacker_view().blocks.iter().map(|b| b.location).collect();
        assert!(locs.len() > 10);
        let fixed = EngineConfig { rotation: Some(false), ..EngineConfig::default() };
        let (_, t) = run(&unit, &input, &fixed).unwrap();
        assert!(t.attacker_view().blocks.iter().all(|b| b.location == CODE_SCRATCH_BASE));
    }

    #[test]
    fn mismatched_variant_is_rejected() {
        let unit = compiled(STRAIGHT, Variant::FixedLength);
        assert!(matches!(Engine::new(&unit, &EngineConfig::default()), Err(EngineError::VariantMismatch { .. })));
    }
}
