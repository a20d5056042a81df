use std::collections::HashMap;

use blockveil_core::engine::{Engine, EngineConfig};
use blockveil_core::oram::{CiphertextModel, DataBlockStore, DataOramKind, LinearOram, ObliviousStore, PathOram};
use blockveil_core::patterngen::{genetic_search, minimum_slot_count, required_kinds, GaConfig};
use blockveil_core::pipeline::{compile, CompileOptions};
use blockveil_core::profiler::BlockProfile;
use blockveil_core::rewriter::Variant;
use blockveil_core::sidechannel::welch_t;
use blockveil_core::visa::{interpret, parse_program, print_program, AccessKind, InstructionClass, Input, Reg};
use proptest::prelude::*;

/// One random instruction over `r0`..`r5`, global `g` and pointer `r6 = &g`.
fn op() -> impl Strategy<Value = String> {
    let r = || 0u8..6;
    prop_oneof![
        (r(), r()).prop_map(|(a, b)| format!("mov r{a}, r{b}")),
        (r(), 0i64..30_000).prop_map(|(a, k)| format!("movi r{a}, {k}")),
        (r(), any::<i64>()).prop_map(|(a, k)| format!("movi r{a}, {k}")),
        (prop::sample::select(vec!["add", "sub", "and", "or", "xor", "imul"]), r(), r())
            .prop_map(|(m, a, b)| format!("{m} r{a}, r{b}")),
        (prop::sample::select(vec!["add", "sub", "xor", "cmp", "test"]), r(), -100i64..100)
            .prop_map(|(m, a, k)| format!("{m} r{a}, {k}")),
        (prop::sample::select(vec!["shl", "shr"]), r(), 0u8..63).prop_map(|(m, a, k)| format!("{m} r{a}, {k}")),
        (prop::sample::select(vec!["inc", "dec", "neg", "not"]), r()).prop_map(|(m, a)| format!("{m} r{a}")),
        (prop::sample::select(vec!["cmovz", "cmovnz", "cmovs"]), r(), r()).prop_map(|(m, a, b)| format!("{m} r{a}, r{b}")),
        (r(), 0u8..8).prop_map(|(a, k)| format!("ld r{a}, [g+{}]", 8 * k)),
        (r(), 0u8..8).prop_map(|(a, k)| format!("st [g+{}], r{a}", 8 * k)),
        (r(), 0u8..8).prop_map(|(a, k)| format!("ld r{a}, [r6+{}]", 8 * k)),
        (r(), 0u8..8).prop_map(|(a, k)| format!("st [r6+{}], r{a}", 8 * k)),
        (r(), 0u8..64).prop_map(|(a, k)| format!("ldb r{a}, [g+{k}]")),
        (r(), 0u8..64).prop_map(|(a, k)| format!("stb [g+{k}], r{a}")),
        // Division with a divisor forced odd, hence non-zero.
        (r(), r(), r()).prop_filter("distinct registers", |(q, m, d)| q != m && d != q && d != m).prop_map(
            |(q, m, d)| format!("or r{d}, 1\n    div r{q}, r{m}, r{d}")
        ),
    ]
}

#[derive(Clone, Debug)]
struct Shape {
    head: Vec<String>,
    body: Vec<String>,
    trips: u8,
    callee: Option<Vec<String>>,
}

fn shape() -> impl Strategy<Value = Shape> {
    (
        prop::collection::vec(op(), 0..6),
        prop::collection::vec(op(), 1..6),
        0u8..4,
        prop::option::of(prop::collection::vec(op(), 1..4)),
    )
        .prop_map(|(head, body, trips, callee)| Shape { head, body, trips, callee })
}

fn source(s: &Shape) -> String {
    let mut t = String::from(".data g, 64\n.data out, 8, 3\n@protect\nfunc f\n    lea r6, [g]\n");
    for l in &s.head {
        t += &format!("    {l}\n");
    }
    if s.trips > 0 {
        t += &format!("    movi r9, {}\nloop:\n", s.trips);
        for l in &s.body {
            t += &format!("    {l}\n");
        }
        t += "    dec r9\n    jnz loop\nafter:\n";
    }
    if s.callee.is_some() {
        t += "    call h\n";
    }
    t += "    st [out], r0\n    ret\n";
    if let Some(c) = &s.callee {
        t += "func h\n    lea r6, [g]\n";
        for l in c {
            t += &format!("    {l}\n");
        }
        t += "    ret\n";
    }
    t
}

fn input(regs: &[u64; 6], g: &[u8]) -> Input {
    let mut i = Input::new().global("g", g.to_vec());
    for (k, v) in regs.iter().enumerate() {
        i = i.reg(Reg::gpr(k as u8).unwrap(), *v);
    }
    i
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn printing_then_parsing_is_the_identity(s in shape()) {
        let p = parse_program(&source(&s)).unwrap();
        let again = parse_program(&print_program(&p)).unwrap();
        prop_assert_eq!(again, p);
    }

    #[test]
    fn engine_matches_interpreter_under_every_variant(
        s in shape(),
        regs in prop::array::uniform6(any::<u64>()),
        g in prop::collection::vec(any::<u8>(), 64),
        seed in any::<u64>(),
    ) {
        let p = parse_program(&source(&s)).unwrap();
        let inp = input(&regs, &g);
        let native = interpret(&p, &inp, 1_000_000).unwrap();
        for v in Variant::ALL {
            let c = compile(&p, None, &CompileOptions::for_variant(v).quick(30)).unwrap();
            let (state, _) = Engine::new(&c.translated, &EngineConfig::for_variant(v)).unwrap().run_seeded(&inp, seed).unwrap();
            prop_assert_eq!(state.observable(), native.observable(), "variant {}", v);
        }
    }

    #[test]
    fn runs_are_deterministic_in_their_seed(s in shape(), seed in any::<u64>()) {
        let p = parse_program(&source(&s)).unwrap();
        let c = compile(&p, None, &CompileOptions::default().quick(30)).unwrap();
        let e = Engine::new(&c.translated, &EngineConfig::default()).unwrap();
        let inp = input(&[1, 2, 3, 4, 5, 6], &[9; 64]);
        let (s1, t1) = e.run_seeded(&inp, seed).unwrap();
        let (s2, t2) = e.run_seeded(&inp, seed).unwrap();
        prop_assert_eq!(s1.observable(), s2.observable());
        prop_assert_eq!(t1.attacker_view().to_text(), t2.attacker_view().to_text());
        let i1 = interpret(&p, &inp, 1_000_000).unwrap();
        let i2 = interpret(&p, &inp, 1_000_000).unwrap();
        prop_assert_eq!(i1.observable(), i2.observable());
    }

    #[test]
    fn cost_report_predicts_emitted_blocks(s in shape()) {
        let p = parse_program(&source(&s)).unwrap();
        let c = compile(&p, None, &CompileOptions::for_variant(Variant::FixedPattern).quick(30)).unwrap();
        let stats = c.translated.origin_stats();
        let report = c.cost.unwrap();
        for (prof, cost) in c.profiles.iter().zip(&report.per_profile) {
            let key = (prof.function.clone(), prof.label.clone());
            prop_assert_eq!(stats[&key], (cost.blocks, cost.dummy_loads, cost.dummy_stores), "{:?}", key);
        }
        prop_assert!(c.translated.uniformity_violations().is_empty());
    }

    #[test]
    fn welch_is_antisymmetric_and_affine_invariant(
        a in prop::collection::vec(-1e3f64..1e3, 2..40),
        b in prop::collection::vec(-1e3f64..1e3, 2..40),
        scale in 0.1f64..10.0,
        shift in -100f64..100.0,
    ) {
        let t = welch_t(&a, &b).unwrap().t;
        let r = welch_t(&b, &a).unwrap().t;
        prop_assume!(t.is_finite());
        prop_assert!((t + r).abs() <= 1e-9 * t.abs().max(1.0));
        let f = |x: &f64| scale * x + shift;
        let u = welch_t(&a.iter().map(f).collect::<Vec<_>>(), &b.iter().map(f).collect::<Vec<_>>()).unwrap().t;
        prop_assert!((t - u).abs() <= 1e-6 * t.abs().max(1.0));
    }

    #[test]
    fn path_oram_agrees_with_a_map(
        n in 1usize..200,
        bucket in 1usize..6,
        ops in prop::collection::vec((any::<u16>(), prop::option::of(any::<u64>())), 1..300),
        seed in any::<u64>(),
    ) {
        let mut oram = PathOram::new(vec![0u64; n], bucket, 64, false, seed).unwrap();
        let mut oracle = HashMap::new();
        for (i, w) in ops {
            let i = i as usize % n;
            prop_assert_eq!(oram.access(i, w.as_ref()), oracle.get(&i).copied().unwrap_or(0));
            if let Some(w) = w {
                oracle.insert(i, w);
            }
        }
    }

    #[test]
    fn linear_trace_ignores_index_and_payload(
        n in 1usize..100,
        ops in prop::collection::vec((any::<u16>(), prop::option::of(any::<u64>())), 2..50),
    ) {
        let mut oram = LinearOram::new(vec![0u64; n], false);
        oram.record_trace(true);
        let mut first = None;
        for (i, w) in ops {
            oram.access(i as usize % n, w.as_ref());
            let t: Vec<_> = oram.take_trace().iter().map(|t| (t.index, t.kind)).collect();
            prop_assert_eq!(first.get_or_insert_with(|| t.clone()), &t);
        }
    }

    #[test]
    fn data_controller_cost_is_kind_independent(
        kinds in prop::collection::vec(any::<bool>(), 1..40),
        blocks in prop::collection::vec(0u64..16, 40),
        path in any::<bool>(),
    ) {
        let kind = if path { DataOramKind::Path } else { DataOramKind::Linear };
        let mut store = DataBlockStore::new(kind, CiphertextModel::from_seed(3), true, false, 1);
        store.insert_object(0x1_0000, &[0; 256]).unwrap();
        store.insert_dummy(0x0f00_0000).unwrap();
        let mut scratch = [0u8; 32];
        let mut touches = Vec::new();
        for (store_kind, blk) in kinds.iter().zip(&blocks) {
            let k = if *store_kind { AccessKind::Store } else { AccessKind::Load };
            touches.push(store.access(0x1_0000 + 16 * blk, k, &mut scratch).unwrap().touches);
        }
        prop_assert!(touches.windows(2).all(|w| w[0] == w[1]));
    }
}

fn profile_strategy() -> impl Strategy<Value = Vec<BlockProfile>> {
    use InstructionClass::*;
    // Token 4 is an address lea with its pointer adjustment.
    let tokens = prop::collection::vec(0usize..5, 1..8).prop_map(|ts| {
        ts.into_iter()
            .flat_map(|t| match t {
                4 => vec![Class1, PtrAdjust],
                t => vec![[Class1, Class2, Load, Store][t]],
            })
            .collect::<Vec<_>>()
    });
    prop::collection::vec((tokens, 1u64..50), 1..4).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (class_seq, weight))| BlockProfile { function: "f".into(), label: format!("b{i}"), class_seq, weight })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn genetic_results_are_valid_patterns(profiles in profile_strategy(), extra in 0usize..10, seed in any::<u64>()) {
        let required = required_kinds(&profiles);
        let slots = minimum_slot_count(&required) + extra;
        let cfg = GaConfig { seed, generations: 20, top_k: 5, ..GaConfig::default() };
        let out = genetic_search(slots, &profiles, &cfg).unwrap();
        out.best.validate(slots, &required).unwrap();
        prop_assert_eq!(out.best.slot_count(), slots);
        for (k, n) in &required {
            prop_assert!(out.best.count(*k) >= *n, "missing {:?}", k);
        }
        // Elites survive, so the leading cost never rises.
        prop_assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(out.cost <= *out.history.iter().min().unwrap());
    }
}
