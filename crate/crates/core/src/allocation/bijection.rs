//! Injective encodings of displacement vectors into a totally ordered line.

use crate::domain::PeriodicDomain;
use crate::error::{Error, Result};

/// Integer value of `G(v)`; ordering of codes is the ordering of `G`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct DisplacementCode(pub i128);

impl DisplacementCode {
    pub const ZERO: DisplacementCode = DisplacementCode(0);

    /// Real value of the code. Monotone, but not injective beyond 53 bits.
    pub fn to_real(self) -> f64 {
        self.0 as f64
    }

    /// Encodes with the default rule after wrapping `v` into the period.
    pub fn encode_wrapped(domain: &PeriodicDomain, v: &[f64]) -> DisplacementCode {
        let w: Vec<f64> = v.iter().map(|&c| domain.wrap_delta(c)).collect();
        BitInterleave
            .code(domain, &w)
            .expect("wrapped displacements are in range")
    }
}

/// A rule `G` mapping displacements injectively to ordered codes with `G(0) = 0`.
pub trait DisplacementBijection {
    fn code(&self, domain: &PeriodicDomain, v: &[f64]) -> Result<DisplacementCode>;
}

/// Interleaves the bits of zigzag-encoded fixed-point coordinates.
///
/// Coordinates are quantized with the domain's merge quantum, so two
/// displacements get the same code exactly when their quantized keys agree.
#[derive(Clone, Copy, Debug, Default)]
pub struct BitInterleave;

impl BitInterleave {
    fn bits_per_coordinate(domain: &PeriodicDomain) -> u32 {
        // keys lie in [-K/2, K/2), so zigzag values stay below K
        let k = (domain.side() / (crate::domain::MERGE_QUANTUM * domain.pitch())).round();
        k.max(2.0).log2().ceil() as u32
    }
}

fn zigzag(k: i64) -> u64 {
    ((k << 1) ^ (k >> 63)) as u64
}

impl DisplacementBijection for BitInterleave {
    fn code(&self, domain: &PeriodicDomain, v: &[f64]) -> Result<DisplacementCode> {
        let side = domain.side();
        if let Some(&bad) = v.iter().find(|c| c.is_nan() || c.abs() > side) {
            return Err(Error::DisplacementOverflow(bad));
        }
        let d = domain.dim();
        let bits = Self::bits_per_coordinate(domain);
        if bits as usize * d > 127 {
            return Err(Error::DisplacementOverflow(side));
        }
        let keys: Vec<u64> = domain.displacement_key(v).into_iter().map(zigzag).collect();
        let mut word: u128 = 0;
        for b in (0..bits).rev() {
            for &k in &keys {
                word = (word << 1) | ((k >> b) & 1) as u128;
            }
        }
        // zigzag decode of the interleaved word gives a signed integer
        let signed = ((word >> 1) as i128) ^ -((word & 1) as i128);
        Ok(DisplacementCode(signed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_maps_to_zero() {
        for d in 1..=3 {
            let dom = PeriodicDomain::new(d, 3.0, 64).unwrap();
            assert_eq!(BitInterleave.code(&dom, &vec![0.0; d]).unwrap(), DisplacementCode::ZERO);
        }
    }

    #[test]
    fn distinct_displacements_get_distinct_codes() {
        let dom = PeriodicDomain::new(2, 1.0, 32).unwrap();
        let p = dom.pitch();
        let mut seen = std::collections::HashSet::new();
        for a in -16..16 {
            for b in -16..16 {
                let c = BitInterleave.code(&dom, &[a as f64 * p, b as f64 * p]).unwrap();
                assert!(seen.insert(c));
            }
        }
        let near = BitInterleave.code(&dom, &[0.1, 0.2]).unwrap();
        let nearer = BitInterleave.code(&dom, &[0.1 + 1e-7, 0.2]).unwrap();
        assert_ne!(near, nearer);
    }

    #[test]
    fn overflow_is_rejected() {
        let dom = PeriodicDomain::new(1, 1.0, 8).unwrap();
        assert!(matches!(
            BitInterleave.code(&dom, &[1.5]),
            Err(Error::DisplacementOverflow(_))
        ));
        assert!(BitInterleave.code(&dom, &[-1.0]).is_ok());
    }
}
