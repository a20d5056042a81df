//! Bundled example programs and generators for their inputs.

use rand::Rng;

use crate::visa::{parse_program, Input, Program};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sample {
    pub name: &'static str,
    pub source: &'static str,
    /// `function:label` pairs an attacker wants to tell apart, if any.
    pub targets: Option<(&'static str, &'static str)>,
}

pub const MODEXP: Sample = Sample {
    name: "modexp",
    source: include_str!("../samples/modexp.s"),
    targets: Some(("modexp:square", "modexp:multiply")),
};

pub const MATMUL: Sample = Sample { name: "matmul", source: include_str!("../samples/matmul.s"), targets: None };

pub const BASE64: Sample = Sample { name: "base64", source: include_str!("../samples/base64.s"), targets: None };

pub const ALL: [Sample; 3] = [MODEXP, MATMUL, BASE64];

pub fn by_name(name: &str) -> Option<Sample> {
    ALL.into_iter().find(|s| s.name == name)
}

impl Sample {
    pub fn program(&self) -> Program {
        parse_program(self.source).expect("bundled samples parse")
    }

    /// A uniformly drawn input satisfying the sample's preconditions.
    pub fn random_input(&self, rng: &mut impl Rng) -> Input {
        match self.name {
            "modexp" => {
                let modulus = rng.random_range(2..1u64 << 21);
                Input::new()
                    .global_u64("base", rng.random_range(0..modulus))
                    .global_u64("exp", rng.random_range(0..1 << 16))
                    .global_u64("modulus", modulus)
            }
            "matmul" => {
                let mut words = |_: &str| -> Vec<u8> { (0..16).flat_map(|_| rng.random::<u64>().to_le_bytes()).collect() };
                let a = words("a");
                let b = words("b");
                Input::new().global("a", a).global("b", b)
            }
            "base64" => Input::new().global("input", (0..12).map(|_| rng.random()).collect()),
            _ => Input::new(),
        }
    }
}

/// Splits `function:label`.
pub fn split_target(t: &str) -> Option<(&str, &str)> {
    t.split_once(':')
}
