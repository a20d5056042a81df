use blockveil_core::visa::{interpret, parse_program, Reg};
use blockveil_core::{compile, samples, BlockPattern, CompileOptions, Engine, EngineConfig, Input, PipelineError, Variant};

#[test]
fn every_sample_compiles_under_every_variant() {
    for s in samples::ALL {
        for v in Variant::ALL {
            let c = compile(&s.program(), None, &CompileOptions::for_variant(v)).unwrap();
            assert_eq!(c.pattern.is_some(), v.uses_pattern(), "{} {v}", s.name);
            assert_eq!(c.cost.is_some(), v.uses_pattern());
            assert!(!c.translated.blocks.is_empty());
        }
    }
}

#[test]
fn default_patterns_have_twenty_slots_and_a_stable_string() {
    let c = compile(&samples::MODEXP.program(), None, &CompileOptions::default()).unwrap();
    let p = c.pattern.unwrap();
    assert_eq!(p.slot_count(), 20);
    assert_eq!(p.to_string().parse::<BlockPattern>().unwrap(), p);
    assert!(p.to_string().ends_with("-sfx"));
}

#[test]
fn missing_protect_attribute_is_reported() {
    let p = parse_program("func f\n    ret\n").unwrap();
    let err = compile(&p, None, &CompileOptions::default()).unwrap_err();
    assert!(matches!(err, PipelineError::NoProtectedRoots));
    assert_eq!(err.to_string(), "no protected roots");
}

#[test]
fn user_patterns_are_validated_and_used() {
    let prog = samples::MODEXP.program();
    let pat: BlockPattern = "c1-c1-ld-c1-c2-c1-st-sfx".parse().unwrap();
    let opts = CompileOptions { pattern: Some(pat.clone()), ..CompileOptions::for_variant(Variant::AlignedPattern) };
    let c = compile(&prog, None, &opts).unwrap();
    assert_eq!(c.pattern.as_ref(), Some(&pat));
    assert!(c.search.is_none());
    assert!(c.translated.uniformity_violations().is_empty());

    let no_div: BlockPattern = "c1-c1-ld-c1-st-sfx".parse().unwrap();
    let bad = CompileOptions { pattern: Some(no_div), ..CompileOptions::for_variant(Variant::AlignedPattern) };
    assert!(matches!(compile(&prog, None, &bad), Err(PipelineError::Pattern(_))));
}

#[test]
fn round_trip_through_the_engine_on_a_hand_written_program() {
    let src = "
        .data acc, 8
        @protect
        func sum
            movi r1, 0
        top:
            add r1, r0
            dec r0
            jnz top
        out:
            st [acc], r1
            ret
    ";
    let p = parse_program(src).unwrap();
    let input = Input::new().reg(Reg::gpr(0).unwrap(), 10);
    let native = interpret(&p, &input, 10_000).unwrap();
    assert_eq!(native.memory.global_u64("acc"), Some(55));
    for v in Variant::ALL {
        let c = compile(&p, None, &CompileOptions::for_variant(v)).unwrap();
        let (state, trace) = Engine::new(&c.translated, &EngineConfig::for_variant(v)).unwrap().run(&input).unwrap();
        assert_eq!(state.observable(), native.observable(), "{v}");
        assert_eq!(trace.stats.code_fetches as usize, trace.attacker_view().blocks.len());
    }
}
