//! Command bodies. Every artifact is plain text and depends only on the
//! manifest, so identical manifests give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use blockveil_core::experiment::attack_experiment;
use blockveil_core::sidechannel::{self, default_isa_table, LatencyModel};
use blockveil_core::visa::{interpret, Opcode, Reg};
use blockveil_core::{pipeline, Compiled, Engine, Input, MachineState, Program, RunStats, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::manifest::RunManifest;

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn build(m: &RunManifest) -> Result<(Program, Compiled)> {
    let program = m.load_program()?;
    let compiled = pipeline::compile(&program, m.root.as_deref(), &m.compile_options()?)?;
    Ok((program, compiled))
}

fn cost_text(c: &Compiled) -> String {
    let mut o = String::new();
    let Some(report) = &c.cost else {
        return "pattern none\n".into();
    };
    for (p, cost) in c.profiles.iter().zip(&report.per_profile) {
        let _ = writeln!(
            o,
            "block {}:{} weight={} blocks={} dummy_loads={} dummy_stores={}",
            p.function, p.label, cost.weight, cost.blocks, cost.dummy_loads, cost.dummy_stores
        );
    }
    let _ = writeln!(o, "total {}", report.total);
    if let Some(s) = &c.search {
        let _ = writeln!(o, "search {} cost={} generations={}", s.method, s.cost, s.generations);
    }
    o
}

pub fn compile(m: &RunManifest) -> Result<()> {
    let (_, c) = build(m)?;
    let dir = m.out_dir();
    let pattern = c.pattern.as_ref().map(|p| p.to_string());
    match &pattern {
        Some(p) => write(&dir.join("pattern.txt"), &format!("{p}\n"))?,
        // Dense variants pack greedily; a stale pattern would mislead.
        None => {
            let _ = fs::remove_file(dir.join("pattern.txt"));
        }
    }
    write(&dir.join("listing.txt"), &c.translated.listing())?;
    write(&dir.join("cost.txt"), &cost_text(&c))?;
    println!(
        "variant {} pattern {} blocks {} -> {}",
        c.translated.variant,
        pattern.as_deref().unwrap_or("none"),
        c.translated.blocks.len(),
        dir.display()
    );
    Ok(())
}

fn parse_u64(s: &str) -> Result<u64> {
    let v = match s.strip_prefix("0x") {
        Some(h) => u64::from_str_radix(h, 16),
        None => s.parse(),
    };
    v.with_context(|| format!("`{s}` is not an integer"))
}

fn parse_bytes(s: &str) -> Result<Vec<u8>> {
    match s.strip_prefix("0x") {
        Some(h) if h.len() > 16 => {
            ensure!(h.len() % 2 == 0, "hex byte string `{s}` has odd length");
            (0..h.len()).step_by(2).map(|i| Ok(u8::from_str_radix(&h[i..i + 2], 16)?)).collect()
        }
        _ => Ok(parse_u64(s)?.to_le_bytes().to_vec()),
    }
}

/// Random input: the sample's generator, or random bytes in every global
/// that has no initialiser.
fn random_input(m: &RunManifest, program: &Program, rng: &mut ChaCha8Rng) -> Input {
    if let Some(s) = m.sample() {
        return s.random_input(rng);
    }
    let mut input = Input::new();
    for d in program.data.iter().filter(|d| d.init.is_empty()) {
        input = input.global(&d.name, (0..d.size).map(|_| rng.random()).collect());
    }
    input
}

fn state_text(s: &MachineState) -> String {
    let (regs, flags, globals) = s.observable();
    let mut o = String::new();
    for (i, v) in regs.iter().enumerate() {
        let _ = writeln!(o, "reg r{i} {v:#x}");
    }
    let _ = writeln!(o, "flags z={} s={} c={}", flags.zero as u8, flags.sign as u8, flags.carry as u8);
    for (name, bytes) in globals {
        let hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
        let _ = writeln!(o, "global {name} {hex}");
    }
    o
}

pub fn run(m: &RunManifest, globals: &[String], regs: &[String], random: bool) -> Result<()> {
    let (program, c) = build(m)?;
    let mut input = if random {
        random_input(m, &program, &mut ChaCha8Rng::seed_from_u64(m.seed()))
    } else {
        Input::new()
    };
    for g in globals {
        let (name, value) = g.split_once('=').with_context(|| format!("`{g}` is not NAME=VALUE"))?;
        input = input.global(name, parse_bytes(value)?);
    }
    for r in regs {
        let (name, value) = r.split_once('=').with_context(|| format!("`{r}` is not rN=VALUE"))?;
        let reg = Reg::parse(name).filter(|r| !r.is_reserved()).with_context(|| format!("unknown register `{name}`"))?;
        input = input.reg(reg, parse_u64(value)?);
    }
    let engine = Engine::new(&c.translated, &m.engine_config()?)?;
    let (state, trace) = engine.run(&input)?;
    let native = interpret(&program, &input, engine.config().step_budget)?;
    ensure!(state.observable() == native.observable(), "protected run diverged from the reference interpreter");
    if let Some(path) = &m.trace {
        write(path, &trace.attacker_view().to_text())?;
    }
    print!("{}", state_text(&state));
    let s = trace.stats;
    println!("stats retired={} code_fetches={} data_entries={} dummy_entries={}", s.retired, s.code_fetches, s.data_entries, s.dummy_entries);
    Ok(())
}

fn targets(m: &RunManifest) -> Result<(String, String)> {
    match &m.targets {
        Some(t) if t.len() == 2 => Ok((t[0].clone(), t[1].clone())),
        Some(t) => bail!("expected two target blocks, got {}", t.len()),
        None => match m.sample().and_then(|s| s.targets) {
            Some((a, b)) => Ok((a.into(), b.into())),
            None => bail!("no target blocks given (use --target-blocks f:a,f:b)"),
        },
    }
}

pub fn attack(m: &RunManifest) -> Result<()> {
    let (program, c) = build(m)?;
    let (a, b) = targets(m)?;
    let executions = m.executions.unwrap_or(1000);
    let cfg = m.engine_config()?;
    let run = attack_experiment(&c.translated, &cfg, (&a, &b), executions, m.seed(), |rng| {
        random_input(m, &program, rng)
    })?;
    let mut text = format!("variant {}\ntargets {a} {b}\n", c.translated.variant);
    text += &run.report.to_text();
    let report = m.report.clone().unwrap_or_else(|| m.out_dir().join("attack.txt"));
    write(&report, &text)?;
    if let Some(h) = &m.histogram {
        write(h, &run.distinguisher.histogram_csv(None))?;
    }
    let ok = run.report.succeeded();
    println!(
        "variant {} executions {executions}: {} -> {}",
        c.translated.variant,
        if ok.is_empty() { "no attack succeeded".to_string() } else { format!("succeeded: {}", ok.join(", ")) },
        report.display()
    );
    Ok(())
}

fn mean(total: u64, n: usize) -> String {
    format!("{:.2}", total as f64 / n as f64)
}

pub fn bench(m: &RunManifest, variants: Option<&[String]>) -> Result<()> {
    let reps = m.repetitions.unwrap_or(10);
    let variants: Vec<Variant> = match variants {
        Some(v) => v.iter().map(|s| s.parse().map_err(anyhow::Error::msg)).collect::<Result<_>>()?,
        None => Variant::ALL.to_vec(),
    };
    let mut out = String::new();
    if reps > 0 {
        let program = m.load_program()?;
        for v in variants {
            let vm = RunManifest { variant: Some(v.numeral().into()), ..m.clone() };
            let c = pipeline::compile(&program, vm.root.as_deref(), &vm.compile_options()?)?;
            let engine = Engine::new(&c.translated, &vm.engine_config()?)?;
            let mut rng = ChaCha8Rng::seed_from_u64(vm.seed());
            let mut t = RunStats::default();
            for _ in 0..reps {
                let input = random_input(&vm, &program, &mut rng);
                let (_, trace) = engine.run_seeded(&input, rng.random())?;
                let s = trace.stats;
                t.retired += s.retired;
                t.code_fetches += s.code_fetches;
                t.code_touches += s.code_touches;
                t.data_entries += s.data_entries;
                t.dummy_entries += s.dummy_entries;
                t.data_touches += s.data_touches;
                t.violations += s.violations;
            }
            let _ = writeln!(
                out,
                "variant={} blocks={} repetitions={reps} retired={} code_fetches={} code_touches={} data_entries={} dummy_entries={} data_touches={} violations={}",
                v.numeral(),
                c.translated.blocks.len(),
                mean(t.retired, reps),
                mean(t.code_fetches, reps),
                mean(t.code_touches, reps),
                mean(t.data_entries, reps),
                mean(t.dummy_entries, reps),
                mean(t.data_touches, reps),
                mean(t.violations, reps),
            );
        }
    }
    let report = m.report.clone().unwrap_or_else(|| m.out_dir().join("metrics.txt"));
    write(&report, &out)?;
    print!("{out}");
    Ok(())
}

pub fn classify(
    model: Option<&Path>,
    n: usize,
    opcodes: Option<&[String]>,
    threshold: f64,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let model = match model {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<LatencyModel>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => LatencyModel::default(),
    };
    let ops: Vec<Opcode> = match opcodes {
        Some(names) => names
            .iter()
            .map(|n| Opcode::from_mnemonic(n).with_context(|| format!("unknown opcode `{n}`")))
            .collect::<Result<_>>()?,
        None => default_isa_table(),
    };
    ensure!(n >= 2, "--samples must be at least 2");
    let c = sidechannel::classify(&model, &ops, n, threshold, seed);
    let path = out.unwrap_or_else(|| PathBuf::from("blockveil-out/classes.txt"));
    write(&path, &c.to_text())?;
    println!("{} classes -> {}", c.classes.len(), path.display());
    Ok(())
}
