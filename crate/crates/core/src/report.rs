//! Canonical JSON: object keys sorted, floats in shortest round-trip form.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Serializes `value` with sorted keys. Non-finite floats become `null`;
/// reports that can carry infinities use an explicit sentinel instead.
pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    // `serde_json::Value` keeps object keys in a `BTreeMap`, so converting
    // through it sorts every level.
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string_pretty(&v)?)
}

pub fn emit_report<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = to_canonical_json(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn empty_object() {
        assert_eq!(to_canonical_json(&json!({})).unwrap(), "{}");
    }

    #[test]
    fn floats_are_stable() {
        assert_eq!(to_canonical_json(&0.1).unwrap(), "0.1");
        assert_eq!(
            to_canonical_json(&(0.1 + 0.2)).unwrap(),
            "0.30000000000000004"
        );
    }

    #[test]
    fn keys_are_sorted() {
        #[derive(Serialize)]
        struct R {
            zeta: u8,
            alpha: u8,
        }
        let s = to_canonical_json(&R { zeta: 1, alpha: 2 }).unwrap();
        assert!(s.find("alpha").unwrap() < s.find("zeta").unwrap());
    }
}
