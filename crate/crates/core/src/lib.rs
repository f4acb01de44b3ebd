//! Learning the correlation potential of a 1D time-dependent Kohn-Sham
//! system from reference electron-density trajectories.
//!
//! The crate generates reference densities with a two-electron Schrödinger
//! solver, propagates the Kohn-Sham system under pointwise or neural
//! correlation potentials, and trains both with exact discrete-adjoint
//! gradients and L-BFGS.

pub mod adjoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod io;
pub mod lbfgs;
pub mod model;
pub mod tdks;
pub mod tdse;
pub mod trainer;

pub use error::{Error, Result};

/// 1 a.u. of time expressed in femtoseconds.
pub const FS_PER_AU: f64 = 0.02418884254;

/// FNV-1a over raw bytes; used for config/provenance fingerprints.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Fingerprint of a slice of f64 parameters (bitwise, order-sensitive).
pub fn fingerprint_f64(values: &[f64]) -> u64 {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fnv1a(&bytes)
}
