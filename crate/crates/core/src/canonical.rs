//! Canonical JSON encoding and content hashing.
//!
//! Every value that is hashed or persisted goes through [`to_canonical_bytes`]:
//! object keys sorted, no insignificant whitespace. `serde_json::Map` is a
//! `BTreeMap` in this build, so routing through `Value` is enough to sort
//! struct fields as well as map keys.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Serializes `value` to canonical JSON bytes.
pub fn to_canonical_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, serde_json::Error> {
    let v = serde_json::to_value(value)?;
    serde_json::to_vec(&v)
}

pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String, serde_json::Error> {
    let v = serde_json::to_value(value)?;
    serde_json::to_string(&v)
}

/// Canonical form of an already-built JSON value.
pub fn canonical_value_string(value: &Value) -> String {
    // Value -> String cannot fail: keys are always strings.
    serde_json::to_string(value).expect("json value serializes")
}

pub fn from_bytes<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, serde_json::Error> {
    serde_json::from_slice(bytes)
}

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical encoding of `value`.
pub fn hash_of<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = to_canonical_bytes(value).expect("value serializes to json");
    sha256_hex(&bytes)
}

/// 64-bit seed derived from a string label, used for per-op and per-sample RNG streams.
pub fn seed_from(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p.as_bytes());
    }
    let digest = hasher.finalize();
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(buf)
}
