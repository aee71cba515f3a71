//! Plan document parsing and canonical serialization.

use serde_json::Value;

use super::{ExecutionPlan, PLAN_VERSION};
use crate::{Error, Result};

const KEYS: [&str; 9] = [
    "version",
    "name",
    "collective",
    "protocol",
    "dtype",
    "num_ranks",
    "buffers",
    "channels",
    "programs",
];

/// Parses and resolves a plan document.
pub fn parse_plan(document: &[u8]) -> Result<ExecutionPlan> {
    let value: Value = serde_json::from_slice(document).map_err(|e| Error::Syntax(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Syntax("plan document must be a JSON object".into()))?;
    for key in obj.keys() {
        if !KEYS.contains(&key.as_str()) && key != "lowered" {
            return Err(Error::Syntax(format!("unknown top-level key {key:?}")));
        }
    }
    for key in KEYS {
        if !obj.contains_key(key) {
            return Err(Error::Syntax(format!("missing top-level key {key:?}")));
        }
    }
    match obj["version"].as_u64() {
        Some(PLAN_VERSION) => {}
        Some(v) => return Err(Error::Version(v)),
        None => return Err(Error::Syntax("version must be a non-negative integer".into())),
    }
    let plan: ExecutionPlan = serde_json::from_value(value).map_err(|e| Error::Syntax(e.to_string()))?;
    resolve(&plan)?;
    Ok(plan)
}

/// Checks that every id an op mentions is declared.
fn resolve(plan: &ExecutionPlan) -> Result<()> {
    for (pi, prog) in plan.programs.iter().enumerate() {
        for (oi, op) in prog.ops.iter().enumerate() {
            let location = || format!("programs[{pi}].ops[{oi}]");
            if let Some(c) = op.chan {
                if plan.channel(c).is_none() {
                    return Err(Error::Ref {
                        location: location(),
                        what: format!("channel {c}"),
                    });
                }
            }
            for chunk in [op.src, op.dst, op.aux].into_iter().flatten() {
                if plan.buffer(chunk.buffer).is_none() {
                    return Err(Error::Ref {
                        location: location(),
                        what: format!("buffer {}", chunk.buffer),
                    });
                }
            }
        }
    }
    Ok(())
}

/// Canonical form: keys sorted lexicographically, no insignificant
/// whitespace, integers only.
pub fn serialize_plan(plan: &ExecutionPlan) -> Vec<u8> {
    let value = serde_json::to_value(plan).expect("plans always serialize");
    serde_json::to_vec(&value).expect("values always serialize")
}
