//! Single-stepping microbenchmark and latency classes.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::latency::{LatencyModel, SampleContext};
use super::stats::{welch_t, T_THRESHOLD};
use crate::visa::{InstructionClass, Opcode};

/// Measures `op1` and `op2` in `A B B A` rounds so that linear drift hits
/// both equally. Returns `n` samples of each.
pub fn abba_benchmark(model: &LatencyModel, op1: Opcode, op2: Opcode, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut tick = 0u64;
    let mut measure = |op: Opcode, rng: &mut ChaCha8Rng| {
        let v = model.sample(op, op.class(), SampleContext::default(), rng) + model.drift_per_sample * tick as f64;
        tick += 1;
        v
    };
    while a.len() < n {
        let x1 = measure(op1, &mut rng);
        let y1 = measure(op2, &mut rng);
        let y2 = measure(op2, &mut rng);
        let x2 = measure(op1, &mut rng);
        a.push(x1);
        b.push(y1);
        if a.len() < n {
            a.push(x2);
            b.push(y2);
        }
    }
    (a, b)
}

/// Arithmetic opcodes an application may use.
pub fn default_isa_table() -> Vec<Opcode> {
    Opcode::ALL
        .iter()
        .copied()
        .filter(|op| !op.is_internal() && matches!(op.class(), InstructionClass::Class1 | InstructionClass::Class2))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub opcodes: Vec<Opcode>,
    /// Pairwise t statistics, `t[i][j]` for opcodes `i` and `j`.
    pub t: Vec<Vec<f64>>,
    pub classes: Vec<Vec<Opcode>>,
    /// Components holding a pair that the test did separate.
    pub warnings: Vec<String>,
}

impl Classification {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, c) in self.classes.iter().enumerate() {
            let names: Vec<&str> = c.iter().map(|o| o.mnemonic()).collect();
            out.push_str(&format!("class {k}: {}\n", names.join(" ")));
        }
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out.push_str("t-matrix\n");
        let header: Vec<&str> = self.opcodes.iter().map(|o| o.mnemonic()).collect();
        out.push_str(&format!(",{}\n", header.join(",")));
        for (i, row) in self.t.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|t| format!("{t:.3}")).collect();
            out.push_str(&format!("{},{}\n", self.opcodes[i].mnemonic(), cells.join(",")));
        }
        out
    }
}

/// Groups opcodes into classes: connected components of the graph whose
/// edges join pairs the t-test cannot separate.
pub fn classify(model: &LatencyModel, opcodes: &[Opcode], n: usize, threshold: f64, seed: u64) -> Classification {
    assert!(n >= 2, "the t-test needs two samples per opcode");
    let k = opcodes.len();
    let mut t = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let (a, b) = abba_benchmark(model, opcodes[i], opcodes[j], n, seed ^ ((i * k + j) as u64).wrapping_mul(0x9e37_79b9));
            let r = welch_t(&a, &b).expect("n >= 2").t;
            t[i][j] = r;
            t[j][i] = -r;
        }
    }
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    for i in 0..k {
        for j in i + 1..k {
            if t[i][j].abs() < threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..k {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut warnings = Vec::new();
    for members in groups.values() {
        for (x, &i) in members.iter().enumerate() {
            for &j in &members[x + 1..] {
                if t[i][j].abs() >= threshold {
                    warnings.push(format!(
                        "{} and {} share a class but |t| = {:.2}",
                        opcodes[i].mnemonic(),
                        opcodes[j].mnemonic(),
                        t[i][j].abs()
                    ));
                }
            }
        }
    }
    let classes = groups.into_values().map(|m| m.into_iter().map(|i| opcodes[i]).collect()).collect();
    Classification { opcodes: opcodes.to_vec(), t, classes, warnings }
}

/// Default threshold variant of [`classify`].
pub fn classify_default(model: &LatencyModel, n: usize, seed: u64) -> Classification {
    classify(model, &default_isa_table(), n, T_THRESHOLD, seed)
}
