//! Call-tree extraction and weighted block profiles.
//!
//! A block's weight is `loop_weight^k * 2^d` where `k` is its natural-loop
//! nesting depth inside its function and `d` the call depth of the function
//! below the protected root.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::visa::{lower_block, DataDecl, Function, InstructionClass, LoweredBlock, Program};

pub const DEFAULT_LOOP_WEIGHT: u64 = 8;
pub const DEFAULT_MAX_CALL_DEPTH: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProfileError {
    #[error("function `{0}` is not defined")]
    UnknownFunction(String),
    #[error("function `{0}` is not marked @protect")]
    NotProtected(String),
    #[error("`{caller}` calls `{callee}`, which is outside the program")]
    ExternalCall { caller: String, callee: String },
    #[error("recursive call chain {0:?}")]
    Recursion(Vec<String>),
    #[error("call depth exceeds {0}")]
    TooDeep(usize),
}

/// A function copied into a protected unit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnitFunction {
    pub function: Function,
    /// Longest call chain from the root to this function.
    pub depth: usize,
}

/// A protected root together with private copies of everything it calls.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CallTreeUnit {
    pub root: String,
    /// Root first, then callees in discovery order.
    pub functions: Vec<UnitFunction>,
    /// The program's globals, shared with the unit.
    pub data: Vec<DataDecl>,
}

impl CallTreeUnit {
    pub fn function(&self, name: &str) -> Option<&UnitFunction> {
        self.functions.iter().find(|f| f.function.name == name)
    }

    pub fn has_calls(&self) -> bool {
        self.functions.len() > 1
    }

    /// Every block of the unit after pre-splitting, in unit order.
    pub fn lowered_blocks(&self) -> Vec<LoweredBlock> {
        self.functions
            .iter()
            .flat_map(|uf| {
                let is_root = uf.function.name == self.root;
                uf.function.blocks.iter().map(move |b| lower_block(&uf.function, b, is_root))
            })
            .collect()
    }
}

/// Collects `root` and its transitive callees.
pub fn build_call_tree(
    p: &Program,
    root: &str,
    max_depth: usize,
) -> Result<CallTreeUnit, ProfileError> {
    let root_fn = p.function(root).ok_or_else(|| ProfileError::UnknownFunction(root.into()))?;
    if !root_fn.protect {
        return Err(ProfileError::NotProtected(root.into()));
    }

    fn visit<'p>(
        p: &'p Program,
        f: &'p Function,
        stack: &mut Vec<&'p str>,
        depth: &mut HashMap<&'p str, usize>,
        order: &mut Vec<&'p str>,
        max_depth: usize,
    ) -> Result<(), ProfileError> {
        let d = stack.len();
        if d > max_depth {
            return Err(ProfileError::TooDeep(max_depth));
        }
        match depth.get(f.name.as_str()) {
            // Already explored at least this deep: callees cannot get deeper.
            Some(&known) if known >= d => return Ok(()),
            Some(_) => {}
            None => order.push(&f.name),
        }
        depth.insert(&f.name, d);
        stack.push(&f.name);
        let mut seen = HashSet::new();
        for callee in f.callees() {
            if !seen.insert(callee) {
                continue;
            }
            if let Some(pos) = stack.iter().position(|s| *s == callee) {
                let mut cycle: Vec<String> = stack[pos..].iter().map(|s| s.to_string()).collect();
                cycle.push(callee.to_string());
                return Err(ProfileError::Recursion(cycle));
            }
            let g = p.function(callee).ok_or_else(|| ProfileError::ExternalCall {
                caller: f.name.clone(),
                callee: callee.to_string(),
            })?;
            visit(p, g, stack, depth, order, max_depth)?;
        }
        stack.pop();
        Ok(())
    }

    let mut depth = HashMap::new();
    let mut order = Vec::new();
    visit(p, root_fn, &mut Vec::new(), &mut depth, &mut order, max_depth)?;
    let functions = order
        .iter()
        .map(|name| UnitFunction {
            function: p.function(name).expect("visited").clone(),
            depth: depth[name],
        })
        .collect();
    Ok(CallTreeUnit { root: root.to_string(), functions, data: p.data.clone() })
}

/// Class tags and weight of one basic block.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BlockProfile {
    pub function: String,
    pub label: String,
    pub class_seq: Vec<InstructionClass>,
    pub weight: u64,
}

/// Natural-loop nesting depth of every block, or `None` for an irreducible
/// control-flow graph.
pub fn loop_depths(f: &Function) -> Option<Vec<u32>> {
    let n = f.blocks.len();
    let index: HashMap<&str, usize> =
        f.blocks.iter().enumerate().map(|(i, b)| (b.label.as_str(), i)).collect();
    let succ: Vec<Vec<usize>> = f
        .blocks
        .iter()
        .map(|b| b.term.successors().iter().map(|l| index[l]).collect())
        .collect();
    let mut pred = vec![Vec::new(); n];
    for (u, ss) in succ.iter().enumerate() {
        for &v in ss {
            pred[v].push(u);
        }
    }

    // Reverse postorder from the entry block.
    let mut post = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut on_stack = vec![false; n];
    let mut retreating = Vec::new();
    let mut stack = vec![(0usize, 0usize)];
    visited[0] = true;
    on_stack[0] = true;
    while let Some(&mut (u, ref mut i)) = stack.last_mut() {
        if let Some(&v) = succ[u].get(*i) {
            *i += 1;
            if !visited[v] {
                visited[v] = true;
                on_stack[v] = true;
                stack.push((v, 0));
            } else if on_stack[v] {
                retreating.push((u, v));
            }
        } else {
            on_stack[u] = false;
            post.push(u);
            stack.pop();
        }
    }
    let mut rpo_index = vec![usize::MAX; n];
    for (i, &b) in post.iter().rev().enumerate() {
        rpo_index[b] = i;
    }
    let rpo: Vec<usize> = post.iter().rev().copied().collect();

    // Iterative dominators over reverse postorder.
    let mut idom = vec![usize::MAX; n];
    idom[0] = 0;
    let intersect = |idom: &[usize], mut a: usize, mut b: usize| {
        while a != b {
            while rpo_index[a] > rpo_index[b] {
                a = idom[a];
            }
            while rpo_index[b] > rpo_index[a] {
                b = idom[b];
            }
        }
        a
    };
    let mut changed = true;
    while changed {
        changed = false;
        for &b in rpo.iter().skip(1) {
            let mut new = usize::MAX;
            for &p in &pred[b] {
                if idom[p] == usize::MAX {
                    continue;
                }
                new = if new == usize::MAX { p } else { intersect(&idom, p, new) };
            }
            if new != idom[b] {
                idom[b] = new;
                changed = true;
            }
        }
    }
    let dominates = |h: usize, mut b: usize| loop {
        if b == h {
            return true;
        }
        if b == 0 {
            return false;
        }
        b = idom[b];
    };

    let mut bodies: HashMap<usize, HashSet<usize>> = HashMap::new();
    for (u, h) in retreating {
        if !dominates(h, u) {
            return None;
        }
        let body = bodies.entry(h).or_insert_with(|| HashSet::from([h]));
        let mut work = vec![u];
        while let Some(x) = work.pop() {
            if body.insert(x) {
                work.extend(pred[x].iter().copied().filter(|&p| visited[p]));
            }
        }
    }
    let mut depths = vec![0u32; n];
    for body in bodies.values() {
        for &b in body {
            depths[b] += 1;
        }
    }
    Some(depths)
}

/// One profile per basic block of the unit, in unit order.
pub fn profile(u: &CallTreeUnit, loop_weight: u64) -> Vec<BlockProfile> {
    let loop_weight = loop_weight.max(1);
    let mut out = Vec::new();
    for uf in &u.functions {
        let f = &uf.function;
        let depths = loop_depths(f).unwrap_or_else(|| {
            log::warn!("irreducible control flow in `{}`; loop weights disabled", f.name);
            vec![0; f.blocks.len()]
        });
        let call_factor = 1u64 << uf.depth.min(62);
        let is_root = f.name == u.root;
        for (bb, k) in f.blocks.iter().zip(depths) {
            let lowered = lower_block(f, bb, is_root);
            out.push(BlockProfile {
                function: f.name.clone(),
                label: bb.label.clone(),
                class_seq: lowered.body.iter().map(|i| i.class()).collect(),
                weight: loop_weight.saturating_pow(k).saturating_mul(call_factor),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::visa::parse_program;
    use InstructionClass::*;

    #[test]
    fn root_without_calls_is_a_single_function_unit() {
        let p = parse_program("@protect\nfunc f\n add r1, r2\n ret\n").unwrap();
        let u = build_call_tree(&p, "f", DEFAULT_MAX_CALL_DEPTH).unwrap();
        assert_eq!(u.functions.len(), 1);
    }

    #[test]
    fn call_chain_clones_every_callee_once() {
        let src = "@protect\nfunc root\n call f\n call g\n ret\nfunc f\n call g\n ret\nfunc g\n ret\n";
        let p = parse_program(src).unwrap();
        let u = build_call_tree(&p, "root", DEFAULT_MAX_CALL_DEPTH).unwrap();
        let names: Vec<_> = u.functions.iter().map(|f| f.function.name.as_str()).collect();
        assert_eq!(names, vec!["root", "f", "g"]);
        assert_eq!(u.function("g").unwrap().depth, 2);
    }

    #[test]
    fn external_calls_and_recursion_are_rejected() {
        let p = parse_program("@protect\nfunc f\n call printf\n ret\n").unwrap();
        assert!(matches!(
            build_call_tree(&p, "f", 8),
            Err(ProfileError::ExternalCall { callee, .. }) if callee == "printf"
        ));
        let p = parse_program("@protect\nfunc f\n call g\n ret\nfunc g\n call f\n ret\n").unwrap();
        assert!(matches!(build_call_tree(&p, "f", 8), Err(ProfileError::Recursion(_))));
        let p = parse_program("func f\n ret\n").unwrap();
        assert_eq!(build_call_tree(&p, "f", 8), Err(ProfileError::NotProtected("f".into())));
    }

    #[test]
    fn straight_line_block_maps_classes_directly() {
        let p = parse_program("@protect\nfunc f\n add r1, r2\n ld r3, [r4]\n st [r4], r3\n ret\n")
            .unwrap();
        let u = build_call_tree(&p, "f", 8).unwrap();
        let prof = profile(&u, DEFAULT_LOOP_WEIGHT);
        assert_eq!(prof[0].class_seq, vec![Class1, Load, Store]);
        assert_eq!(prof[0].weight, 1);
    }

    #[test]
    fn loop_blocks_are_weighted_by_nesting() {
        let src = "@protect\nfunc f\nhead:\n add r1, r2\n jnz head\nout:\n ret\n";
        let p = parse_program(src).unwrap();
        let u = build_call_tree(&p, "f", 8).unwrap();
        let prof = profile(&u, 8);
        assert_eq!(prof[0].weight, 8);
        assert_eq!(prof[1].weight, 1);

        let nested = "@protect\nfunc f\na:\n inc r1\nb:\n dec r2\n jnz b\nc:\n jnz a\nd:\n ret\n";
        let p = parse_program(nested).unwrap();
        let prof = profile(&build_call_tree(&p, "f", 8).unwrap(), 3);
        let w: Vec<u64> = prof.iter().map(|b| b.weight).collect();
        assert_eq!(w, vec![3, 9, 3, 1]);
    }

    #[test]
    fn callee_blocks_double_per_call_level() {
        let p = parse_program("@protect\nfunc f\n call g\n ret\nfunc g\n inc r1\n ret\n").unwrap();
        let prof = profile(&build_call_tree(&p, "f", 8).unwrap(), 8);
        let g: Vec<_> = prof.iter().filter(|b| b.function == "g").collect();
        assert_eq!(g[0].weight, 2);
    }

    #[test]
    fn irreducible_graph_falls_back_to_unit_weight() {
        let src = "@protect\nfunc f\n jz b, a\na:\n inc r1\n jmp b\nb:\n dec r1\n jnz a\nc:\n ret\n";
        let p = parse_program(src).unwrap();
        assert_eq!(loop_depths(&p.functions[0]), None);
        let prof = profile(&build_call_tree(&p, "f", 8).unwrap(), 8);
        assert!(prof.iter().all(|b| b.weight == 1));
    }

    #[test]
    fn rip_relative_global_adds_pointer_adjustment_after_address() {
        let p = parse_program(".data g, 8\n@protect\nfunc f\n ld r1, [g]\n add r1, r2\n ret\n")
            .unwrap();
        let prof = profile(&build_call_tree(&p, "f", 8).unwrap(), 8);
        assert_eq!(prof[0].class_seq, vec![Class1, PtrAdjust, Load, Class1]);
    }
}
