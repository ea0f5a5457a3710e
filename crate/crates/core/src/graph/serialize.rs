//! Byte-stable encoding of execution graphs.

use super::{ExecutionGraph, GraphError};
use crate::canonical;

/// Canonical JSON: sorted keys, no whitespace. Equal graphs give equal bytes.
pub fn canonical_serialize(g: &ExecutionGraph) -> Vec<u8> {
    canonical::to_canonical_bytes(g).expect("execution graph serializes")
}

/// Parses and checks structural invariants.
pub fn canonical_parse(bytes: &[u8]) -> Result<ExecutionGraph, GraphError> {
    let g: ExecutionGraph = canonical::from_bytes(bytes).map_err(|e| GraphError::Malformed(e.to_string()))?;
    g.check_invariants().map_err(|p| GraphError::Malformed(p.join("; ")))?;
    Ok(g)
}
