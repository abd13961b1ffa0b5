use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// First 16 hex digits of the SHA-256 of the value's canonical JSON.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    let digest = Sha256::digest(&json);
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_sensitive() {
        let a = config_hash(&("x", 1)).unwrap();
        assert_eq!(a.len(), 16);
        assert_eq!(a, config_hash(&("x", 1)).unwrap());
        assert_ne!(a, config_hash(&("x", 2)).unwrap());
    }
}
