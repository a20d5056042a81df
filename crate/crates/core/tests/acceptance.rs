//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line to
//! the real stdout, so the verdicts show up even when output is captured.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use blockveil_core::engine::{Engine, EngineConfig};
use blockveil_core::experiment::{attack_experiment, chain, AttackRun};
use blockveil_core::oram::{
    break_even, CiphertextModel, DataBlockStore, DataEntry, DataOramKind, LinearOram, ObliviousStore, PathOram,
    TouchKind,
};
use blockveil_core::patterngen::{
    brute_force, genetic_search, minimum_slot_count, population_size, required_kinds, BruteForceConfig, GaConfig,
};
use blockveil_core::pipeline::{compile, CompileOptions};
use blockveil_core::profiler::BlockProfile;
use blockveil_core::rewriter::{CodeBlock, TranslatedUnit, Variant};
use blockveil_core::samples::{self, Sample};
use blockveil_core::sidechannel::{classify_default, welch_t, LatencyModel, T_THRESHOLD};
use blockveil_core::visa::{interpret, AccessKind, InstructionClass, Opcode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LADDER_EXECUTIONS: usize = 10_000;
const SQUARE: &str = "modexp:square";
const MULTIPLY: &str = "modexp:multiply";

fn verdict(criterion: u32, name: &str, ok: bool, detail: String) {
    let line = format!("criterion {criterion} {:<28} {}  {detail}\n", name, if ok { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(ok, "criterion {criterion} ({name}) failed: {detail}");
}

fn translate(sample: &Sample, v: Variant) -> TranslatedUnit {
    compile(&sample.program(), None, &CompileOptions::for_variant(v)).unwrap().translated
}

fn modexp_attack(v: Variant, rotation: Option<bool>, executions: usize) -> (TranslatedUnit, AttackRun) {
    let unit = translate(&samples::MODEXP, v);
    let cfg = EngineConfig { rotation, ..EngineConfig::for_variant(v) };
    let run = attack_experiment(&unit, &cfg, (SQUARE, MULTIPLY), executions, 7, |r| samples::MODEXP.random_input(r))
        .unwrap();
    (unit, run)
}

#[test]
fn c1_semantic_preservation() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut runs = 0;
    let mut mismatches = Vec::new();
    for s in samples::ALL {
        let program = s.program();
        for v in Variant::ALL {
            let unit = translate(&s, v);
            let engine = Engine::new(&unit, &EngineConfig::for_variant(v)).unwrap();
            for k in 0..100 {
                let input = s.random_input(&mut rng);
                let native = interpret(&program, &input, 10_000_000).unwrap();
                let (state, _) = engine.run_seeded(&input, k).unwrap();
                runs += 1;
                if state.observable() != native.observable() {
                    mismatches.push(format!("{} {v} #{k}", s.name));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "semantic preservation",
        mismatches.is_empty() && runs == 1500 && secs < 120.0,
        format!("{runs} runs, {} mismatches {mismatches:?}, {secs:.1}s", mismatches.len()),
    );
}

/// Class of every retired sample of a block, in latency order.
fn retired_classes(b: &CodeBlock) -> Vec<InstructionClass> {
    let mut out = Vec::new();
    for s in &b.slots {
        out.push(s.class);
        let ends_flow = matches!(s.payload.opcode, Opcode::DataCall | Opcode::Exit);
        if s.fill > 0 && !ends_flow {
            out.push(InstructionClass::Fill);
        }
    }
    out
}

#[test]
fn c2_variant_ladder() {
    let mut lines = Vec::new();
    let mut ok = true;

    let (_, i) = modexp_attack(Variant::FixedLength, None, LADDER_EXECUTIONS);
    let c = &i.report.count;
    ok &= c.pairs > 0 && c.distinguished == c.pairs;
    lines.push(format!("I count {}/{}", c.distinguished, c.pairs));

    let (unit, ii) = modexp_attack(Variant::FixedCount, None, LADDER_EXECUTIONS);
    ok &= !ii.report.count.success && ii.report.count.distinguished == 0;
    let (ca, cb) = (chain(&unit, SQUARE).unwrap(), chain(&unit, MULTIPLY).unwrap());
    // Positions where the two chains retire different classes, one of them a
    // class2 (division) instruction.
    let mut div_t = 0f64;
    for s in &ii.report.latency.slots {
        let a = retired_classes(unit.block(ca[s.chain_index]).unwrap());
        let b = retired_classes(unit.block(cb[s.chain_index]).unwrap());
        let (x, y) = (a.get(s.position), b.get(s.position));
        if x != y && (x == Some(&InstructionClass::Class2) || y == Some(&InstructionClass::Class2)) {
            div_t = div_t.max(s.t.abs());
        }
    }
    ok &= div_t >= T_THRESHOLD;
    lines.push(format!("II count {}/{} div-slot |t| {div_t:.1}", ii.report.count.distinguished, ii.report.count.pairs));

    for v in [Variant::AlignedPattern, Variant::Ciphertext] {
        let (_, r) = modexp_attack(v, None, LADDER_EXECUTIONS);
        let l = &r.report.latency;
        ok &= !r.report.count.success && l.max_abs_t < T_THRESHOLD;
        lines.push(format!("{v} max |t| {:.2}", l.max_abs_t));
    }
    verdict(2, "variant ladder", ok, lines.join("; "));
}

#[test]
fn c3_ciphertext_attack() {
    let (_, fixed) = modexp_attack(Variant::Ciphertext, Some(false), 10);
    let fixed_ok = fixed.report.ciphertext.success;

    let unit = translate(&samples::MODEXP, Variant::Ciphertext);
    let cfg = EngineConfig::for_variant(Variant::Ciphertext);
    let engine = Engine::new(&unit, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut owner: HashMap<u128, (u32, u64)> = HashMap::new();
    let mut collisions = 0u64;
    for _ in 0..LADDER_EXECUTIONS {
        let input = samples::MODEXP.random_input(&mut rng);
        let (_, trace) = engine.run_seeded(&input, rng.random()).unwrap();
        let ids = &trace.ground_truth().block_ids;
        for (b, id) in trace.attacker_view().blocks.iter().zip(ids) {
            let pair = (*id, b.location);
            if *owner.entry(b.code_tag).or_insert(pair) != pair {
                collisions += 1;
            }
        }
    }
    let (_, rotated) = modexp_attack(Variant::Ciphertext, None, LADDER_EXECUTIONS);
    let bal = rotated.report.ciphertext.balanced_accuracy;
    let chance = 1.0 / 2.0 + 0.05;
    verdict(
        3,
        "ciphertext attack",
        fixed_ok && collisions == 0 && bal <= chance && !rotated.report.ciphertext.success,
        format!(
            "fixed location: labelled={fixed_ok} (bal {:.3}); rotating: {} distinct tags, {collisions} cross-pair repeats, bal {bal:.3} <= {chance:.2}",
            fixed.report.ciphertext.balanced_accuracy,
            owner.len()
        ),
    );
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<BlockProfile>, usize) {
    use InstructionClass::*;
    let kinds = [Class1, Class2, Load, Store];
    let blocks = rng.random_range(1..=4);
    let profiles: Vec<BlockProfile> = (0..blocks)
        .map(|b| BlockProfile {
            function: "f".into(),
            label: format!("b{b}"),
            class_seq: (0..rng.random_range(1..=8)).map(|_| kinds[rng.random_range(0..4)]).collect(),
            weight: rng.random_range(1..=64),
        })
        .collect();
    let minimum = minimum_slot_count(&required_kinds(&profiles));
    (profiles, minimum + rng.random_range(1..=6))
}

#[test]
fn c4_genetic_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut hits = 0;
    let mut misses = Vec::new();
    for seed in 0..20u64 {
        let (profiles, slots) = random_instance(&mut rng);
        let (_, optimum) = brute_force(slots, &profiles, &BruteForceConfig::default()).unwrap();
        let ga = genetic_search(slots, &profiles, &GaConfig { seed, ..GaConfig::default() }).unwrap();
        assert!(ga.cost >= optimum);
        if ga.cost == optimum {
            hits += 1;
        } else {
            misses.push((seed, ga.cost, optimum));
        }
    }
    let pop = population_size(GaConfig::default().top_k);
    verdict(
        4,
        "genetic vs brute force",
        hits >= 19 && pop == 480,
        format!("{hits}/20 optimal, misses {misses:?}, population {pop}"),
    );
}

#[test]
fn c5_oram_obliviousness() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    // Raw linear ORAM: every access touches exactly the same sequence.
    let mut lin = LinearOram::new(vec![0u64; 64], false);
    lin.record_trace(true);
    let mut reference: Option<Vec<(usize, TouchKind)>> = None;
    let mut linear_ok = true;
    for _ in 0..1000 {
        let idx = rng.random_range(0..64);
        let write = rng.random_bool(0.5).then(|| rng.random::<u64>());
        lin.access(idx, write.as_ref());
        let mut touches: Vec<(usize, TouchKind)> = lin.take_trace().iter().map(|t| (t.index, t.kind)).collect();
        touches.sort();
        linear_ok &= *reference.get_or_insert_with(|| touches.clone()) == touches;
    }

    // Data controller over linear ORAM: loads and stores at any address.
    let mut store = DataBlockStore::new(DataOramKind::Linear, CiphertextModel::from_seed(1), true, false, 0);
    let base = 0x1_0000u64;
    store.insert_object(base, &[7u8; 512]).unwrap();
    store.insert_dummy(0x0f00_0000).unwrap();
    store.enable_trace(true);
    let mut scratch = [0u8; 32];
    let mut per_access: Vec<BTreeMap<(usize, TouchKind), usize>> = Vec::new();
    let mut seen = 0;
    for _ in 0..1000 {
        let addr = base + 16 * rng.random_range(0..32u64);
        let kind = if rng.random_bool(0.5) { AccessKind::Load } else { AccessKind::Store };
        store.access(addr, kind, &mut scratch).unwrap();
        let mut m = BTreeMap::new();
        for t in &store.trace()[seen..] {
            *m.entry((t.index, t.kind)).or_insert(0) += 1;
        }
        seen = store.trace().len();
        per_access.push(m);
    }
    let data_ok = per_access.windows(2).all(|w| w[0] == w[1]);

    // Path ORAM against a map oracle.
    let n = 1024;
    let mut path = PathOram::new(vec![0u64; n], 4, 64, false, 9).unwrap();
    let mut oracle: HashMap<usize, u64> = HashMap::new();
    let mut coherent = true;
    for _ in 0..10_000 {
        let idx = rng.random_range(0..n);
        let write = rng.random_bool(0.5).then(|| rng.random::<u64>());
        let got = path.access(idx, write.as_ref());
        coherent &= got == oracle.get(&idx).copied().unwrap_or(0);
        if let Some(w) = write {
            oracle.insert(idx, w);
        }
    }
    let s = path.stats();
    verdict(
        5,
        "oram obliviousness",
        linear_ok && data_ok && coherent && s.stash_max <= 64 && s.stash_overflows == 0,
        format!(
            "linear identical={linear_ok}, controller identical={data_ok}, path coherent={coherent}, stash max {}",
            s.stash_max
        ),
    );
}

#[test]
fn c6_break_even() {
    let b = break_even(4).unwrap();
    verdict(6, "break-even", (1700..=2100).contains(&b.n), format!("N = {} (path {:.0} touches)", b.n, b.path_touches));
}

#[test]
fn c7_freshness() {
    let mut store = DataBlockStore::new(DataOramKind::Linear, CiphertextModel::from_seed(2), true, false, 0);
    store.insert_object(0x1_0000, &[0u8; 16]).unwrap();
    let mut tags = HashSet::new();
    for _ in 0..100_000 {
        tags.insert(store.fresh_write(0, [0x4242, 0x4242])[0]);
    }
    let e = DataEntry { halves: [1, 2], counters: [3, 4] };
    let img = e.interleaved();
    let chunks: Vec<u64> = img.chunks(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
    let layout_ok = chunks == [1, 3, 2, 4];
    verdict(
        7,
        "freshness bound",
        tags.len() == 100_000 && layout_ok,
        format!("{} distinct tags, chunks {chunks:?}", tags.len()),
    );
}

#[test]
fn c8_classification() {
    let c = classify_default(&LatencyModel::default(), 100_000, 8);
    let pure = c.classes.iter().all(|cls| cls.iter().all(|o| o.class() == cls[0].class()));
    let zero = welch_t(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap().t;
    // Means 3 and 8, both variances 2.5, so t = -5 / sqrt(2.5/5 + 2.5/5) = -5.
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [6.0, 7.0, 8.0, 9.0, 10.0];
    let hand = welch_t(&a, &b).unwrap().t;
    let ok = c.classes.len() == 2 && pure && zero == 0.0 && (hand + 5.0).abs() < 1e-9;
    verdict(8, "classification", ok, format!("{} classes, identical t {zero}, example t {hand}", c.classes.len()));
}

#[test]
fn c9_uniformity() {
    let mut total = 0;
    let mut details = Vec::new();
    for s in samples::ALL {
        for v in [Variant::FixedPattern, Variant::AlignedPattern, Variant::Ciphertext] {
            let unit = translate(&s, v);
            let violations = unit.uniformity_violations();
            total += violations.len();
            details.push(format!("{} {v}: {} blocks", s.name, unit.blocks.len()));
        }
    }
    verdict(9, "uniformity", total == 0, format!("{total} violations ({})", details.join(", ")));
}
