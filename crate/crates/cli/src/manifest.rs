//! Run manifests: every input that determines a run, loadable from TOML and
//! overridable from the command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use blockveil_core::patterngen::{BlockPattern, DEFAULT_SLOT_COUNT};
use blockveil_core::pipeline::SearchMethod;
use blockveil_core::samples;
use blockveil_core::{CompileOptions, DataOramKind, EngineConfig, Program, Variant};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    /// Path to an assembly file, or `sample:NAME`.
    pub program: Option<String>,
    pub root: Option<String>,
    pub variant: Option<String>,
    /// Inline pattern string, or `@path` to a file holding one.
    pub pattern: Option<String>,
    pub slots: Option<usize>,
    pub search: Option<SearchMethod>,
    pub gen_cap: Option<u64>,
    pub time_cap: Option<f64>,
    pub top_k: Option<usize>,
    pub loop_weight: Option<u64>,
    /// Seeds the pattern search, layout, engine and input generation.
    pub seed: Option<u64>,
    pub oram: Option<DataOramKind>,
    pub rotation: Option<bool>,
    pub executions: Option<usize>,
    pub targets: Option<Vec<String>>,
    pub repetitions: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub histogram: Option<PathBuf>,
    pub trace: Option<PathBuf>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($f:ident),*) => {
        $(if $top.$f.is_some() { $base.$f = $top.$f; })*
    };
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    /// Fields set in `top` replace those in `self`.
    pub fn overlay(mut self, top: RunManifest) -> RunManifest {
        overlay!(
            self, top, program, root, variant, pattern, slots, search, gen_cap, time_cap, top_k, loop_weight, seed,
            oram, rotation, executions, targets, repetitions, out_dir, report, histogram, trace
        );
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn variant(&self) -> Result<Variant> {
        match &self.variant {
            None => Ok(Variant::Ciphertext),
            Some(v) => v.parse().map_err(anyhow::Error::msg),
        }
    }

    pub fn program_name(&self) -> Result<&str> {
        self.program.as_deref().context("no program given")
    }

    /// The bundled sample the program names, if any.
    pub fn sample(&self) -> Option<samples::Sample> {
        self.program.as_deref().and_then(|p| p.strip_prefix("sample:")).and_then(samples::by_name)
    }

    pub fn load_program(&self) -> Result<Program> {
        let name = self.program_name()?;
        let source = match name.strip_prefix("sample:") {
            Some(s) => samples::by_name(s).with_context(|| format!("unknown sample `{s}`"))?.source.to_string(),
            None => fs::read_to_string(name).with_context(|| format!("reading {name}"))?,
        };
        Ok(blockveil_core::visa::parse_program(&source)?)
    }

    fn pattern(&self) -> Result<Option<BlockPattern>> {
        let Some(p) = &self.pattern else { return Ok(None) };
        let text = match p.strip_prefix('@') {
            Some(path) => fs::read_to_string(path).with_context(|| format!("reading pattern {path}"))?,
            None => p.clone(),
        };
        Ok(Some(text.trim().parse()?))
    }

    pub fn compile_options(&self) -> Result<CompileOptions> {
        let variant = self.variant()?;
        let mut o = CompileOptions::for_variant(variant);
        o.slot_count = self.slots.unwrap_or(DEFAULT_SLOT_COUNT);
        o.search = self.search.unwrap_or_default();
        if let Some(g) = self.gen_cap {
            o.ga.generations = g;
        }
        if let Some(t) = self.time_cap {
            if !(t.is_finite() && t > 0.0) {
                bail!("--time-cap must be a positive number of seconds");
            }
            o.ga.wall_time = Duration::from_secs_f64(t);
        }
        if let Some(k) = self.top_k {
            o.ga.top_k = k;
        }
        if let Some(w) = self.loop_weight {
            o.loop_weight = w;
        }
        o.ga.seed = self.seed();
        o.layout_seed = self.seed();
        o.pattern = if variant.uses_pattern() { self.pattern()? } else { None };
        Ok(o)
    }

    pub fn engine_config(&self) -> Result<EngineConfig> {
        Ok(EngineConfig {
            seed: self.seed(),
            data_oram: self.oram.unwrap_or_default(),
            rotation: self.rotation,
            ..EngineConfig::for_variant(self.variant()?)
        })
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("blockveil-out"))
    }
}
