//! What a single-stepping, memory-snooping adversary records.
//!
//! The view carries only public observations. Which code block was
//! fetched, which address was accessed and every plaintext live in the
//! engine's hidden ground truth, which this type cannot reach:
//!
//! ```compile_fail
//! fn leak(v: &blockveil_core::sidechannel::AttackerView) -> u32 {
//!     v.blocks[0].block_id
//! }
//! ```

use std::fmt::Write;

use crate::oram::Tag;
use crate::visa::AccessKind;

/// One data-controller entry.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedAccess {
    pub kind: AccessKind,
    /// Physical ORAM entry touches, write-back included.
    pub touches: u64,
    pub scratch_location: u64,
    /// Ciphertext of the data scratchpad after the controller filled it.
    pub scratch_tag: Tag,
    /// Ciphertexts of the ORAM entries written back by this entry.
    pub written_tags: Vec<Tag>,
    /// The store grew on demand to serve this entry.
    pub violation: bool,
}

/// One code block from fetch to exit.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedBlock {
    /// Code scratchpad location the block ran from.
    pub location: u64,
    /// Ciphertext of the code scratchpad after the fetch.
    pub code_tag: Tag,
    pub fetch_touches: u64,
    /// One latency per retired instruction, in order.
    pub latencies: Vec<f32>,
    pub accesses: Vec<ObservedAccess>,
}

impl ObservedBlock {
    pub fn instruction_count(&self) -> usize {
        self.latencies.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttackerView {
    pub blocks: Vec<ObservedBlock>,
    /// Tags of the final write-back at halt.
    pub final_tags: Vec<Tag>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("trace line {line}: {message}")]
pub struct ViewParseError {
    pub line: usize,
    pub message: String,
}

fn tags(ts: &[Tag]) -> String {
    if ts.is_empty() {
        "-".into()
    } else {
        ts.iter().map(|t| format!("{t:032x}")).collect::<Vec<_>>().join(",")
    }
}

impl AttackerView {
    /// Line format, one record per line:
    ///
    /// ```text
    /// block <location> <code tag> <fetch touches>
    /// lat <latency>...
    /// data <load|store> <touches> <scratch location> <scratch tag> <written tags|-> <0|1>
    /// halt <final tags|->
    /// ```
    ///
    /// Numbers are decimal except locations (`0x` hex) and tags (32 hex digits).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            let _ = writeln!(out, "block {:#x} {:032x} {}", b.location, b.code_tag, b.fetch_touches);
            out.push_str("lat");
            for l in &b.latencies {
                let _ = write!(out, " {l:.1}");
            }
            out.push('\n');
            for a in &b.accesses {
                let _ = writeln!(
                    out,
                    "data {} {} {:#x} {:032x} {} {}",
                    a.kind.name(),
                    a.touches,
                    a.scratch_location,
                    a.scratch_tag,
                    tags(&a.written_tags),
                    a.violation as u8
                );
            }
        }
        let _ = writeln!(out, "halt {}", tags(&self.final_tags));
        out
    }

    pub fn parse(text: &str) -> Result<AttackerView, ViewParseError> {
        let mut view = AttackerView::default();
        for (i, line) in text.lines().enumerate() {
            let err = |m: &str| ViewParseError { line: i + 1, message: m.to_string() };
            let hex = |s: &str| u64::from_str_radix(s.trim_start_matches("0x"), 16).map_err(|_| err("bad hex number"));
            let tag = |s: &str| u128::from_str_radix(s, 16).map_err(|_| err("bad tag"));
            let tag_list = |s: &str| -> Result<Vec<Tag>, ViewParseError> {
                if s == "-" {
                    Ok(Vec::new())
                } else {
                    s.split(',').map(tag).collect()
                }
            };
            let num = |s: &str| s.parse::<u64>().map_err(|_| err("bad number"));
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                [] => {}
                ["block", loc, t, touches] => view.blocks.push(ObservedBlock {
                    location: hex(loc)?,
                    code_tag: tag(t)?,
                    fetch_touches: num(touches)?,
                    latencies: Vec::new(),
                    accesses: Vec::new(),
                }),
                ["lat", rest @ ..] => {
                    let b = view.blocks.last_mut().ok_or_else(|| err("latencies before any block"))?;
                    for l in rest {
                        b.latencies.push(l.parse().map_err(|_| err("bad latency"))?);
                    }
                }
                ["data", kind, touches, loc, t, written, v] => {
                    let kind = match *kind {
                        "load" => AccessKind::Load,
                        "store" => AccessKind::Store,
                        _ => return Err(err("access kind must be load or store")),
                    };
                    let a = ObservedAccess {
                        kind,
                        touches: num(touches)?,
                        scratch_location: hex(loc)?,
                        scratch_tag: tag(t)?,
                        written_tags: tag_list(written)?,
                        violation: *v == "1",
                    };
                    view.blocks.last_mut().ok_or_else(|| err("access before any block"))?.accesses.push(a);
                }
                ["halt", t] => view.final_tags = tag_list(t)?,
                _ => return Err(err("unrecognised record")),
            }
        }
        Ok(view)
    }
}
