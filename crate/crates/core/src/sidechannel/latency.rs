//! Single-stepping latency model.
//!
//! Every retired instruction yields one sample drawn from a two-component
//! mixture: the bulk `N(mean, sigma)` and, with probability
//! `tail_probability`, a context-switch tail `N(mean + tail_shift,
//! tail_sigma_factor * sigma)`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::visa::{InstructionClass, Opcode};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyParams {
    pub mean: f64,
    pub sigma: f64,
}

impl LatencyParams {
    pub const fn new(mean: f64, sigma: f64) -> LatencyParams {
        LatencyParams { mean, sigma }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyModel {
    pub class1: LatencyParams,
    pub class2: LatencyParams,
    pub load: LatencyParams,
    pub store: LatencyParams,
    pub control: LatencyParams,
    /// Alignment nops; independent of their width.
    pub fill: LatencyParams,
    pub tail_probability: f64,
    pub tail_shift: f64,
    pub tail_sigma_factor: f64,
    /// Per-mnemonic parameters that take precedence over the class.
    pub overrides: BTreeMap<String, LatencyParams>,
    /// Extra cycles per significant dividend bit for divisions.
    pub div_operand_slope: f64,
    /// Extra cycles when a payload straddles a 16-byte boundary.
    pub misalignment_penalty: f64,
    /// Linear drift added per benchmark sample, cancelled by ABBA ordering.
    pub drift_per_sample: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            class1: LatencyParams::new(100.0, 40.0),
            class2: LatencyParams::new(120.0, 40.0),
            load: LatencyParams::new(160.0, 40.0),
            store: LatencyParams::new(160.0, 40.0),
            control: LatencyParams::new(110.0, 40.0),
            fill: LatencyParams::new(100.0, 40.0),
            tail_probability: 0.05,
            tail_shift: 150.0,
            tail_sigma_factor: 3.0,
            overrides: BTreeMap::new(),
            div_operand_slope: 0.0,
            misalignment_penalty: 0.0,
            drift_per_sample: 2e-5,
        }
    }
}

impl LatencyModel {
    /// Every instruction shares one distribution.
    pub fn uniform() -> LatencyModel {
        let p = LatencyParams::new(100.0, 40.0);
        LatencyModel { class1: p, class2: p, load: p, store: p, control: p, fill: p, ..LatencyModel::default() }
    }

    pub fn params(&self, op: Opcode, class: InstructionClass) -> LatencyParams {
        if let Some(p) = self.overrides.get(op.mnemonic()) {
            return *p;
        }
        match class {
            InstructionClass::Class1 | InstructionClass::PtrAdjust => self.class1,
            InstructionClass::Class2 => self.class2,
            InstructionClass::Load => self.load,
            InstructionClass::Store => self.store,
            InstructionClass::Control => self.control,
            InstructionClass::Fill => self.fill,
        }
    }

    pub fn draw(&self, p: LatencyParams, rng: &mut impl Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        if rng.random::<f64>() < self.tail_probability {
            p.mean + self.tail_shift + self.tail_sigma_factor * p.sigma * z
        } else {
            p.mean + p.sigma * z
        }
    }

    /// Latency of one retired instruction.
    pub fn sample(&self, op: Opcode, class: InstructionClass, ctx: SampleContext, rng: &mut impl Rng) -> f64 {
        let mut v = self.draw(self.params(op, class), rng);
        if matches!(op, Opcode::Div | Opcode::DivGuarded) {
            v += self.div_operand_slope * f64::from(64 - ctx.dividend.leading_zeros());
        }
        if ctx.misaligned {
            v += self.misalignment_penalty;
        }
        v
    }
}

/// Operand and placement facts the model may react to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SampleContext {
    pub dividend: u64,
    pub misaligned: bool,
}
