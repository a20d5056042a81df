//! Parse-to-blocks driver: call tree, profile, pattern search, translation.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patterngen::{
    brute_force, genetic_search, required_kinds, search_space_estimate, BlockPattern, BruteForceConfig, CostModel,
    CostReport, GaConfig, PatternError, DEFAULT_SLOT_COUNT,
};
use crate::profiler::{build_call_tree, profile, BlockProfile, CallTreeUnit, ProfileError, DEFAULT_LOOP_WEIGHT, DEFAULT_MAX_CALL_DEPTH};
use crate::rewriter::{translate, RewriteError, TranslatedUnit, Variant};
use crate::visa::Program;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMethod {
    /// Exhaustive when the space is small enough, genetic otherwise.
    #[default]
    Auto,
    Brute,
    Genetic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompileOptions {
    pub variant: Variant,
    pub slot_count: usize,
    pub loop_weight: u64,
    pub max_call_depth: usize,
    pub search: SearchMethod,
    pub ga: GaConfig,
    pub brute: BruteForceConfig,
    /// Skips the search when given.
    pub pattern: Option<BlockPattern>,
    /// Seeds the block-id shuffle.
    pub layout_seed: u64,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            variant: Variant::Ciphertext,
            slot_count: DEFAULT_SLOT_COUNT,
            loop_weight: DEFAULT_LOOP_WEIGHT,
            max_call_depth: DEFAULT_MAX_CALL_DEPTH,
            search: SearchMethod::Auto,
            ga: GaConfig::default(),
            brute: BruteForceConfig::default(),
            pattern: None,
            layout_seed: 0,
        }
    }
}

impl CompileOptions {
    pub fn for_variant(variant: Variant) -> CompileOptions {
        CompileOptions { variant, ..CompileOptions::default() }
    }

    /// Caps the genetic search for quick runs.
    pub fn quick(mut self, generations: u64) -> CompileOptions {
        self.ga.generations = generations;
        self.ga.wall_time = Duration::from_secs(60);
        self
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no protected roots")]
    NoProtectedRoots,
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchSummary {
    pub method: &'static str,
    pub cost: u64,
    pub generations: u64,
}

#[derive(Clone, Debug)]
pub struct Compiled {
    pub unit: CallTreeUnit,
    pub profiles: Vec<BlockProfile>,
    pub pattern: Option<BlockPattern>,
    pub cost: Option<CostReport>,
    pub search: Option<SearchSummary>,
    pub translated: TranslatedUnit,
}

pub fn find_pattern(
    slot_count: usize,
    profiles: &[BlockProfile],
    opts: &CompileOptions,
) -> Result<(BlockPattern, SearchSummary), PatternError> {
    let brute = |cfg: &BruteForceConfig| -> Result<(BlockPattern, SearchSummary), PatternError> {
        let (p, cost) = brute_force(slot_count, profiles, cfg)?;
        Ok((p, SearchSummary { method: "brute", cost, generations: 0 }))
    };
    let genetic = || -> Result<(BlockPattern, SearchSummary), PatternError> {
        let out = genetic_search(slot_count, profiles, &opts.ga)?;
        Ok((out.best, SearchSummary { method: "genetic", cost: out.cost, generations: out.generations }))
    };
    match opts.search {
        SearchMethod::Brute => brute(&opts.brute),
        SearchMethod::Genetic => genetic(),
        SearchMethod::Auto => {
            let estimate = search_space_estimate(slot_count, &required_kinds(profiles))?;
            if profiles.is_empty() || estimate <= opts.brute.bound as f64 {
                brute(&opts.brute)
            } else {
                genetic()
            }
        }
    }
}

/// Runs the whole pipeline for `root`, or the first protected function.
pub fn compile(p: &Program, root: Option<&str>, opts: &CompileOptions) -> Result<Compiled, PipelineError> {
    let root = match root {
        Some(r) => r.to_string(),
        None => p.protected_roots().next().ok_or(PipelineError::NoProtectedRoots)?.name.clone(),
    };
    let unit = build_call_tree(p, &root, opts.max_call_depth)?;
    let profiles = profile(&unit, opts.loop_weight);
    let (pattern, search) = if opts.variant.uses_pattern() {
        match &opts.pattern {
            Some(pat) => {
                pat.validate(pat.slot_count(), &required_kinds(&profiles))?;
                (Some(pat.clone()), None)
            }
            None => {
                let (pat, s) = find_pattern(opts.slot_count, &profiles, opts)?;
                (Some(pat), Some(s))
            }
        }
    } else {
        (None, None)
    };
    let cost = match &pattern {
        Some(pat) => Some(CostModel { store_weight: opts.ga.cost.store_weight }.estimate(pat, &profiles)?),
        None => None,
    };
    let translated = translate(&unit, pattern.as_ref(), opts.variant, opts.layout_seed)?;
    Ok(Compiled { unit, profiles, pattern, cost, search, translated })
}
