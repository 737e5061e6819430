//! 3-party replicated secret sharing of 64-bit words.
//!
//! A secret `s` is split into three shares `s1, s2, s3` that are uniformly
//! random subject to the reconstruction equation of the sharing mode:
//! XOR for boolean shares, addition mod 2^64 for arithmetic shares. The
//! parties sit on a logical ring and party `i` holds the pair
//! `(s_i, s_{i+1})`, so any two parties can reconstruct while a single
//! party sees only uniform randomness.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width of every secret and share, in bits.
pub const WORD_BITS: u32 = 64;

/// A 64-bit share word. Secrets, shares and sentinel values all live in
/// this domain; signed data uses two's complement inside the ring.
pub type ShareValue = u64;

/// Reserved sentinel stored in every attribute of an invalid tuple.
/// Ingestion rejects live values equal to it.
pub const SENTINEL: ShareValue = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SharingMode {
    /// `s = s1 ^ s2 ^ s3`
    Boolean,
    /// `s = s1 + s2 + s3 mod 2^64`
    Arithmetic,
}

/// Identifier of one of the three computing parties, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PartyId(pub u8);

impl PartyId {
    pub fn index(self) -> usize {
        (self.0 - 1) as usize
    }

    /// Ring successor: 1 -> 2 -> 3 -> 1.
    pub fn next(self) -> PartyId {
        PartyId(self.0 % 3 + 1)
    }

    /// Ring predecessor.
    pub fn prev(self) -> PartyId {
        PartyId((self.0 + 1) % 3 + 1)
    }

    pub fn all() -> [PartyId; 3] {
        [PartyId(1), PartyId(2), PartyId(3)]
    }
}

/// One party's holding: the pair `(s_i, s_{i+1})` of a replicated sharing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicatedShare {
    pub lo: ShareValue,
    pub hi: ShareValue,
    pub mode: SharingMode,
}

impl ReplicatedShare {
    pub fn new(lo: ShareValue, hi: ShareValue, mode: SharingMode) -> Self {
        ReplicatedShare { lo, hi, mode }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShareError {
    #[error("shares are not all in the same mode")]
    ModeMismatch,
    #[error("replication inconsistency between parties {0} and {1}")]
    ReplicationInconsistency(u8, u8),
}

/// Splits `secret` into a replicated sharing. `s1` and `s2` are drawn
/// uniformly; `s3` is forced by the mode equation.
pub fn share<R: Rng>(
    secret: ShareValue,
    mode: SharingMode,
    rng: &mut R,
) -> (ReplicatedShare, ReplicatedShare, ReplicatedShare) {
    let s1: u64 = rng.gen();
    let s2: u64 = rng.gen();
    let s3 = match mode {
        SharingMode::Boolean => secret ^ s1 ^ s2,
        SharingMode::Arithmetic => secret.wrapping_sub(s1).wrapping_sub(s2),
    };
    (
        ReplicatedShare::new(s1, s2, mode),
        ReplicatedShare::new(s2, s3, mode),
        ReplicatedShare::new(s3, s1, mode),
    )
}

/// Recombines the three parties' holdings, checking the replication layout.
pub fn reconstruct(
    p1: ReplicatedShare,
    p2: ReplicatedShare,
    p3: ReplicatedShare,
) -> Result<ShareValue, ShareError> {
    if p1.mode != p2.mode || p2.mode != p3.mode {
        return Err(ShareError::ModeMismatch);
    }
    if p1.hi != p2.lo {
        return Err(ShareError::ReplicationInconsistency(1, 2));
    }
    if p2.hi != p3.lo {
        return Err(ShareError::ReplicationInconsistency(2, 3));
    }
    if p3.hi != p1.lo {
        return Err(ShareError::ReplicationInconsistency(3, 1));
    }
    Ok(combine(p1.lo, p2.lo, p3.lo, p1.mode))
}

/// Combines the three distinct share words without consistency checks.
pub fn combine(s1: ShareValue, s2: ShareValue, s3: ShareValue, mode: SharingMode) -> ShareValue {
    match mode {
        SharingMode::Boolean => s1 ^ s2 ^ s3,
        SharingMode::Arithmetic => s1.wrapping_add(s2).wrapping_add(s3),
    }
}

/// Kind of precomputed difference a data owner ships alongside a column so
/// that downstream comparisons with the constant reduce to local sign checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProactiveKind {
    /// shares of `secret - c`
    MinusConst,
    /// shares of `c - secret`
    ConstMinus,
    /// shares of `secret + c`
    PlusConst,
}

impl ProactiveKind {
    pub fn apply(self, secret: ShareValue, c: ShareValue) -> ShareValue {
        match self {
            ProactiveKind::MinusConst => secret.wrapping_sub(c),
            ProactiveKind::ConstMinus => c.wrapping_sub(secret),
            ProactiveKind::PlusConst => secret.wrapping_add(c),
        }
    }
}

/// Boolean sharings of `secret` together with `secret - c` and `c - secret`
/// for each public constant, produced by the data owner at sharing time.
pub fn proactive_share<R: Rng>(
    secret: ShareValue,
    constants: &[ShareValue],
    rng: &mut R,
) -> Vec<(ReplicatedShare, ReplicatedShare, ReplicatedShare)> {
    let mut out = vec![share(secret, SharingMode::Boolean, rng)];
    for &c in constants {
        out.push(share(secret.wrapping_sub(c), SharingMode::Boolean, rng));
        out.push(share(c.wrapping_sub(secret), SharingMode::Boolean, rng));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn share_zero_with_zero_randomness_layout() {
        // s1 = s2 = 0 forces s3 = 0 in boolean mode
        let p1 = ReplicatedShare::new(0, 0, SharingMode::Boolean);
        let p2 = ReplicatedShare::new(0, 0, SharingMode::Boolean);
        let p3 = ReplicatedShare::new(0, 0, SharingMode::Boolean);
        assert_eq!(reconstruct(p1, p2, p3).unwrap(), 0);
    }

    #[test]
    fn round_trip_both_modes() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..1000 {
            let x: u64 = rng.gen();
            for mode in [SharingMode::Boolean, SharingMode::Arithmetic] {
                let (a, b, c) = share(x, mode, &mut rng);
                assert_eq!(reconstruct(a, b, c).unwrap(), x);
            }
        }
    }

    #[test]
    fn arithmetic_forced_third_share() {
        // s = 5, s1 = 2^64 - 1, s2 = 3 => s3 = 5 - s1 - s2 = 3 (mod 2^64)
        let s1 = u64::MAX;
        let s2 = 3u64;
        let s3 = 5u64.wrapping_sub(s1).wrapping_sub(s2);
        assert_eq!(s3, 3);
        assert_eq!(combine(s1, s2, s3, SharingMode::Arithmetic), 5);
    }

    #[test]
    fn boolean_reconstruct_example() {
        let (s1, s2, s3) = (0b01u64, 0b10u64, 0b11u64);
        let p1 = ReplicatedShare::new(s1, s2, SharingMode::Boolean);
        let p2 = ReplicatedShare::new(s2, s3, SharingMode::Boolean);
        let p3 = ReplicatedShare::new(s3, s1, SharingMode::Boolean);
        assert_eq!(reconstruct(p1, p2, p3).unwrap(), 0b00);
    }

    #[test]
    fn replication_inconsistency_detected() {
        let mut rng = StdRng::seed_from_u64(1);
        let (a, mut b, c) = share(42, SharingMode::Boolean, &mut rng);
        b.lo ^= 1;
        assert_eq!(
            reconstruct(a, b, c),
            Err(ShareError::ReplicationInconsistency(1, 2))
        );
    }

    #[test]
    fn mode_mismatch_detected() {
        let mut rng = StdRng::seed_from_u64(2);
        let (a, b, _) = share(42, SharingMode::Boolean, &mut rng);
        let (_, _, c) = share(42, SharingMode::Arithmetic, &mut rng);
        assert_eq!(reconstruct(a, b, c), Err(ShareError::ModeMismatch));
    }

    #[test]
    fn proactive_share_round_trips_differences() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..200 {
            let a: u64 = rng.gen();
            let c: u64 = rng.gen::<u32>() as u64;
            let shares = proactive_share(a, &[c], &mut rng);
            let open = |i: usize| {
                let (p1, p2, p3) = shares[i];
                reconstruct(p1, p2, p3).unwrap()
            };
            assert_eq!(open(0), a);
            assert_eq!(open(1), a.wrapping_sub(c));
            assert_eq!(open(2), c.wrapping_sub(a));
        }
    }

    #[test]
    fn proactive_share_boundary_zero_difference() {
        let mut rng = StdRng::seed_from_u64(4);
        let shares = proactive_share(30, &[30], &mut rng);
        let (p1, p2, p3) = shares[1];
        let diff = reconstruct(p1, p2, p3).unwrap();
        assert_eq!(diff, 0);
        assert_eq!(diff >> 63, 0); // sign bit clear on both directions
        let (q1, q2, q3) = shares[2];
        assert_eq!(reconstruct(q1, q2, q3).unwrap(), 0);
    }

    #[test]
    fn proactive_share_two_complement() {
        let mut rng = StdRng::seed_from_u64(5);
        let shares = proactive_share(35, &[30], &mut rng);
        let (p1, p2, p3) = shares[1];
        assert_eq!(reconstruct(p1, p2, p3).unwrap(), 5);
        let (q1, q2, q3) = shares[2];
        assert_eq!(reconstruct(q1, q2, q3).unwrap(), (-5i64) as u64);
    }
}
