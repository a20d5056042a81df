//! Repeated protected executions fed to the distinguisher.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{Engine, EngineConfig, EngineError, RunStats};
use crate::rewriter::TranslatedUnit;
use crate::sidechannel::{AttackError, AttackReport, Distinguisher};
use crate::visa::Input;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("target block `{0}` is not in the unit")]
    UnknownTarget(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Attack(#[from] AttackError),
}

/// Code-block chain of `function:label`.
pub fn chain(unit: &TranslatedUnit, target: &str) -> Result<Vec<u32>, ExperimentError> {
    let (f, l) = target.split_once(':').ok_or_else(|| ExperimentError::UnknownTarget(target.into()))?;
    let ids = unit.blocks_of(f, l);
    if ids.is_empty() {
        return Err(ExperimentError::UnknownTarget(target.into()));
    }
    Ok(ids)
}

pub struct AttackRun {
    pub report: AttackReport,
    pub distinguisher: Distinguisher,
    pub totals: RunStats,
}

/// Runs `executions` times with inputs from `gen` and per-run seeds derived
/// from `seed`, attacking targets `a` and `b`.
pub fn attack_experiment(
    unit: &TranslatedUnit,
    cfg: &EngineConfig,
    targets: (&str, &str),
    executions: usize,
    seed: u64,
    mut gen: impl FnMut(&mut ChaCha8Rng) -> Input,
) -> Result<AttackRun, ExperimentError> {
    let ca = chain(unit, targets.0)?;
    let cb = chain(unit, targets.1)?;
    let engine = Engine::new(unit, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = Distinguisher::new(ca.len(), cb.len());
    let mut totals = RunStats::default();
    for _ in 0..executions {
        let input = gen(&mut rng);
        let (_, trace) = engine.run_seeded(&input, rng.random())?;
        let truth = trace.ground_truth();
        let (oa, ob) = (truth.occurrences(&ca), truth.occurrences(&cb));
        d.observe(trace.attacker_view(), &oa, &ob);
        let s = trace.stats;
        totals.retired += s.retired;
        totals.code_fetches += s.code_fetches;
        totals.code_touches += s.code_touches;
        totals.data_entries += s.data_entries;
        totals.dummy_entries += s.dummy_entries;
        totals.data_touches += s.data_touches;
        totals.violations += s.violations;
    }
    Ok(AttackRun { report: d.report()?, distinguisher: d, totals })
}
