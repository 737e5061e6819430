//! Trusted-dealer helpers: sharing plaintext inputs into per-party vectors
//! and opening per-party results. Stands in for the data owners and the
//! analyst around a protocol run.

use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::error::EngineError;
use crate::primitives::ShareVec;
use crate::share::{self, ShareValue, SharingMode};

/// Shares a plaintext vector into the three parties' share vectors.
pub fn deal_vec(values: &[ShareValue], mode: SharingMode, seed: u64) -> [ShareVec; 3] {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = [
        ShareVec::new(mode),
        ShareVec::new(mode),
        ShareVec::new(mode),
    ];
    for &v in values {
        let (a, b, c) = share::share(v, mode, &mut rng);
        out[0].push(a);
        out[1].push(b);
        out[2].push(c);
    }
    out
}

/// Reconstructs a vector from the three parties' shares, checking
/// replication consistency elementwise.
pub fn open_vec(parts: &[ShareVec; 3]) -> Result<Vec<ShareValue>, EngineError> {
    let n = parts[0].len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(share::reconstruct(
            parts[0].get(i),
            parts[1].get(i),
            parts[2].get(i),
        )?);
    }
    Ok(out)
}

/// Opens a bit vector: reconstructs and keeps bit 0.
pub fn open_bits(parts: &[ShareVec; 3]) -> Result<Vec<u64>, EngineError> {
    Ok(open_vec(parts)?.into_iter().map(|w| w & 1).collect())
}
