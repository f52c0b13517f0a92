//! Axis-aligned boxes used for sampling domains and control constraints.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// An axis-aligned box `[lo_0, hi_0] x ... x [lo_{N-1}, hi_{N-1}]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisBox<const N: usize> {
    pub lo: [f64; N],
    pub hi: [f64; N],
}

// serde does not derive for const-generic arrays; go through Vec<f64> with a
// length check.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AxisBoxRepr {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl<const N: usize> Serialize for AxisBox<N> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        AxisBoxRepr { lo: self.lo.to_vec(), hi: self.hi.to_vec() }.serialize(serializer)
    }
}

impl<'de, const N: usize> Deserialize<'de> for AxisBox<N> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = AxisBoxRepr::deserialize(deserializer)?;
        let lo: [f64; N] = repr
            .lo
            .try_into()
            .map_err(|v: Vec<f64>| D::Error::custom(format!("lo needs {N} entries, got {}", v.len())))?;
        let hi: [f64; N] = repr
            .hi
            .try_into()
            .map_err(|v: Vec<f64>| D::Error::custom(format!("hi needs {N} entries, got {}", v.len())))?;
        for i in 0..N {
            if !(lo[i] < hi[i]) {
                return Err(D::Error::custom(format!("empty box on axis {i}: [{}, {}]", lo[i], hi[i])));
            }
        }
        Ok(AxisBox { lo, hi })
    }
}

impl<const N: usize> AxisBox<N> {
    pub fn new(lo: [f64; N], hi: [f64; N]) -> Self {
        for i in 0..N {
            assert!(lo[i] < hi[i], "empty box on axis {i}: [{}, {}]", lo[i], hi[i]);
        }
        Self { lo, hi }
    }

    /// Symmetric box `[-half, half]^N`.
    pub fn symmetric(half: [f64; N]) -> Self {
        let mut lo = [0.0; N];
        let mut hi = [0.0; N];
        for i in 0..N {
            assert!(half[i] > 0.0);
            lo[i] = -half[i];
            hi[i] = half[i];
        }
        Self { lo, hi }
    }

    pub fn contains(&self, p: &[f64; N]) -> bool {
        (0..N).all(|i| p[i] >= self.lo[i] && p[i] <= self.hi[i])
    }

    pub fn center(&self) -> [f64; N] {
        std::array::from_fn(|i| 0.5 * (self.lo[i] + self.hi[i]))
    }

    pub fn half_width(&self) -> [f64; N] {
        std::array::from_fn(|i| 0.5 * (self.hi[i] - self.lo[i]))
    }

    /// Componentwise clamp onto the box.
    pub fn clamp(&self, p: &[f64; N]) -> [f64; N] {
        std::array::from_fn(|i| p[i].clamp(self.lo[i], self.hi[i]))
    }

    pub fn validate(&self) -> crate::Result<()> {
        for i in 0..N {
            if !(self.lo[i].is_finite() && self.hi[i].is_finite() && self.lo[i] < self.hi[i]) {
                return Err(crate::Error::InvalidConfig(format!(
                    "box axis {i} has empty or non-finite bounds [{}, {}]",
                    self.lo[i], self.hi[i]
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contains_and_clamp() {
        let b = AxisBox::new([-1.0, 0.0], [1.0, 2.0]);
        assert!(b.contains(&[0.0, 1.0]));
        assert!(b.contains(&[-1.0, 2.0]));
        assert!(!b.contains(&[1.1, 1.0]));
        assert_eq!(b.clamp(&[3.0, -1.0]), [1.0, 0.0]);
        assert_eq!(b.center(), [0.0, 1.0]);
        assert_eq!(b.half_width(), [1.0, 1.0]);
    }

    #[test]
    #[should_panic]
    fn empty_box_panics() {
        let _ = AxisBox::new([1.0], [1.0]);
    }
}
