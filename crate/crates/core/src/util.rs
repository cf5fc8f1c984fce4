// SPDX-License-Identifier: Apache-2.0

//! Small shared helpers.

/// FNV-1a 64-bit hash. Used for content hashes, dedup signatures, and
/// feature buckets; stable across platforms and runs by construction.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hex rendering of a 64-bit hash, zero padded to 16 chars.
pub fn hash_hex(h: u64) -> String {
    format!("{h:016x}")
}
