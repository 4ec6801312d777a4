//! Invertibility certificates for structured generalized shift-invariant
//! systems on decomposition spaces, together with a discretized
//! Fourier-domain laboratory that checks them empirically.

pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod cover;
pub mod partition;
pub mod system;
pub mod certificate;
pub mod walnut;
pub mod alphamod;

/// Short hex content hash used for provenance fingerprints.
pub fn fingerprint(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}
