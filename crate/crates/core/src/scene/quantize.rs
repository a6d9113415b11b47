use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOCATION_BINS: u32 = 256;
pub const ORIENTATION_BINS: u32 = 360;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropertyKind {
    Location,
    Dimension,
    Orientation,
}

impl PropertyKind {
    /// Number of value tokens for this kind.
    pub fn bins(self) -> u32 {
        match self {
            PropertyKind::Location | PropertyKind::Dimension => LOCATION_BINS,
            PropertyKind::Orientation => ORIENTATION_BINS,
        }
    }
}

/// Meters (or degrees) to a token value.
pub fn quantize_value(v: f64, kind: PropertyKind, extent: f64) -> Result<u32> {
    if !v.is_finite() {
        return Err(Error::invalid(format!("cannot quantize non-finite value {v}")));
    }
    match kind {
        PropertyKind::Location | PropertyKind::Dimension => {
            if v < 0.0 {
                return Err(Error::invalid(format!("negative {kind:?} value {v}")));
            }
            let bin = (v / extent * LOCATION_BINS as f64).floor();
            Ok(bin.min((LOCATION_BINS - 1) as f64) as u32)
        }
        PropertyKind::Orientation => Ok((v.rem_euclid(360.0).round() as u32) % ORIENTATION_BINS),
    }
}

/// Token value back to the bin center (or whole degrees).
pub fn dequantize_value(token: u32, kind: PropertyKind, extent: f64) -> Result<f64> {
    if token >= kind.bins() {
        return Err(Error::invalid(format!("token {token} out of range for {kind:?}")));
    }
    Ok(match kind {
        PropertyKind::Location | PropertyKind::Dimension => (token as f64 + 0.5) * extent / LOCATION_BINS as f64,
        PropertyKind::Orientation => token as f64,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn quantization_examples() {
        assert_eq!(quantize_value(2.56, PropertyKind::Location, 5.12).unwrap(), 128);
        assert_eq!(quantize_value(5.12, PropertyKind::Location, 5.12).unwrap(), 255);
        assert_eq!(quantize_value(359.6, PropertyKind::Orientation, 5.12).unwrap(), 0);
        assert!(quantize_value(-0.1, PropertyKind::Dimension, 5.12).is_err());
    }

    #[test]
    fn dequantization_examples() {
        assert!((dequantize_value(128, PropertyKind::Location, 5.12).unwrap() - 2.57).abs() < 1e-12);
        assert!((dequantize_value(0, PropertyKind::Dimension, 5.12).unwrap() - 5.12 / 512.0).abs() < 1e-15);
        assert!(dequantize_value(256, PropertyKind::Location, 5.12).is_err());
        assert!(dequantize_value(360, PropertyKind::Orientation, 5.12).is_err());
    }

    #[test]
    fn round_trip_error_bounded_by_half_bin() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let extent = 6.0;
        for _ in 0..10_000 {
            let v = rng.gen_range(0.0..extent);
            let q = quantize_value(v, PropertyKind::Location, extent).unwrap();
            let back = dequantize_value(q, PropertyKind::Location, extent).unwrap();
            assert!((back - v).abs() <= extent / 512.0 + 1e-12);
        }
    }

    #[test]
    fn token_round_trip_is_identity() {
        for kind in [PropertyKind::Location, PropertyKind::Dimension, PropertyKind::Orientation] {
            for t in 0..kind.bins() {
                let v = dequantize_value(t, kind, 6.0).unwrap();
                assert_eq!(quantize_value(v, kind, 6.0).unwrap(), t);
            }
        }
    }
}
