//! Flat model-parameter vectors and the handful of kernels every aggregation
//! step is built from.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fixed-length vector of finite model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Builds a vector, rejecting empty input and NaN/Inf entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("parameter vector"));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "parameter vector must have at least one element");
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_l2(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Self::new(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Self::new(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * c).collect())
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(v: ParamVector) -> Self {
        v.0
    }
}

/// How parameters are grouped when measuring per-parameter distance.
///
/// With `Scalar` every element is its own parameter, so the per-parameter L2
/// norm is an absolute value and the total is an L1 distance. `Blocks` groups
/// consecutive elements (e.g. a layer's weight matrix) and sums the L2 norm of
/// each block.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormLayout {
    #[default]
    Scalar,
    Blocks(Vec<usize>),
}

/// Sum over parameters of the L2 norm of their difference, with every scalar
/// treated as one parameter.
pub fn l2_diff_norm(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    a.check_dim(b)?;
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| (x - y).abs()).sum())
}

/// Same distance under an explicit parameter grouping.
pub fn l2_diff_norm_with_layout(
    a: &ParamVector,
    b: &ParamVector,
    layout: &NormLayout,
) -> Result<f64> {
    match layout {
        NormLayout::Scalar => l2_diff_norm(a, b),
        NormLayout::Blocks(sizes) => {
            a.check_dim(b)?;
            let total: usize = sizes.iter().sum();
            if total != a.dim() || sizes.contains(&0) {
                return Err(Error::InvalidArgument {
                    name: "layout",
                    reason: format!(
                        "block sizes must be positive and sum to {} (got {total})",
                        a.dim()
                    ),
                });
            }
            let mut start = 0;
            let mut acc = 0.0;
            for &len in sizes {
                let end = start + len;
                let sq: f64 = a.0[start..end]
                    .iter()
                    .zip(&b.0[start..end])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                acc += sq.sqrt();
                start = end;
            }
            Ok(acc)
        }
    }
}

/// Elementwise `sum_i c_i * v_i`, accumulated in list order.
pub fn weighted_sum(terms: &[(f64, &ParamVector)]) -> Result<ParamVector> {
    let (_, first) = terms.first().ok_or(Error::Empty("weighted_sum terms"))?;
    let mut out = vec![0.0; first.dim()];
    for (c, v) in terms {
        first.check_dim(v)?;
        for (o, x) in out.iter_mut().zip(&v.0) {
            *o += c * x;
        }
    }
    ParamVector::new(out)
}

/// Saturates every element into `[-clip_val, clip_val]`.
pub fn clip_elementwise(v: &ParamVector, clip_val: f64) -> Result<ParamVector> {
    check_positive("clip_val", clip_val)?;
    Ok(ParamVector(
        v.0.iter().map(|x| x.clamp(-clip_val, clip_val)).collect(),
    ))
}

/// Rescales `v` onto the L2 ball of radius `max_norm` if it lies outside.
pub fn clip_l2(v: &ParamVector, max_norm: f64) -> Result<ParamVector> {
    check_positive("max_norm", max_norm)?;
    let norm = v.norm_l2();
    if norm <= max_norm {
        return Ok(v.clone());
    }
    let factor = max_norm / norm;
    Ok(ParamVector(v.0.iter().map(|x| x * factor).collect()))
}

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(Error::InvalidArgument {
            name,
            reason: format!("must be a positive finite number, got {value}"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> ParamVector {
        pv(&(0..dim)
            .map(|_| rng.random_range(-3.0..3.0))
            .collect::<Vec<_>>())
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        assert!(matches!(
            ParamVector::new(vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(ParamVector::new(vec![]).is_err());
    }

    #[test]
    fn diff_norm_examples() {
        let a = pv(&[1.0, 2.0]);
        assert_eq!(l2_diff_norm(&a, &a).unwrap(), 0.0);
        assert_eq!(l2_diff_norm(&pv(&[3.0, 0.0]), &pv(&[0.0, 4.0])).unwrap(), 7.0);
        assert!(l2_diff_norm(&a, &pv(&[1.0])).is_err());
    }

    #[test]
    fn diff_norm_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_vec(&mut rng, 10);
        let b = random_vec(&mut rng, 10);
        let mut oracle = 0.0;
        for k in 0..10 {
            let d = a.as_slice()[k] - b.as_slice()[k];
            oracle += (d * d).sqrt();
        }
        assert!((l2_diff_norm(&a, &b).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn block_layout_sums_block_norms() {
        let a = pv(&[3.0, 4.0, 1.0]);
        let b = pv(&[0.0, 0.0, 0.0]);
        let layout = NormLayout::Blocks(vec![2, 1]);
        assert_eq!(l2_diff_norm_with_layout(&a, &b, &layout).unwrap(), 6.0);
        assert_eq!(
            l2_diff_norm_with_layout(&a, &b, &NormLayout::Scalar).unwrap(),
            8.0
        );
        assert!(l2_diff_norm_with_layout(&a, &b, &NormLayout::Blocks(vec![2])).is_err());
    }

    #[test]
    fn weighted_sum_examples() {
        let v = pv(&[1.0, -2.0, 0.5]);
        assert_eq!(weighted_sum(&[(1.0, &v)]).unwrap(), v);
        assert_eq!(weighted_sum(&[(0.5, &v), (0.5, &v)]).unwrap(), v);
        assert!(weighted_sum(&[]).is_err());
        assert!(weighted_sum(&[(1.0, &v), (1.0, &pv(&[1.0]))]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vs: Vec<_> = (0..3).map(|_| random_vec(&mut rng, 5)).collect();
        let cs = [0.2, 0.3, 0.5];
        let got = weighted_sum(&[(cs[0], &vs[0]), (cs[1], &vs[1]), (cs[2], &vs[2])]).unwrap();
        for k in 0..5 {
            let mut e = 0.0;
            for i in 0..3 {
                e += cs[i] * vs[i].as_slice()[k];
            }
            assert!((got.as_slice()[k] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_examples() {
        let v = pv(&[0.1, -0.2]);
        assert_eq!(clip_elementwise(&v, 1.0).unwrap(), v);
        assert_eq!(
            clip_elementwise(&pv(&[5.0, -5.0]), 1.0).unwrap(),
            pv(&[1.0, -1.0])
        );
        assert!(clip_elementwise(&v, 0.0).is_err());
        assert!(clip_l2(&v, -1.0).is_err());

        let small = pv(&[0.18, 0.24]);
        assert_eq!(clip_l2(&small, 1.0).unwrap(), small);
        let c = clip_l2(&pv(&[3.0, 4.0]), 1.0).unwrap();
        assert!((c.as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((c.as_slice()[1] - 0.8).abs() < 1e-15);
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0f64..100.0, dim)
    }

    proptest! {
        #[test]
        fn clip_elementwise_bounded_and_idempotent(v in vec_strategy(8), c in 0.01f64..10.0) {
            let v = pv(&v);
            let once = clip_elementwise(&v, c).unwrap();
            prop_assert!(once.max_abs() <= c);
            prop_assert_eq!(clip_elementwise(&once, c).unwrap(), once);
        }

        #[test]
        fn clip_l2_bounded_and_direction_preserving(v in vec_strategy(6), c in 0.01f64..10.0) {
            let v = pv(&v);
            let out = clip_l2(&v, c).unwrap();
            prop_assert!(out.norm_l2() <= c + 1e-9);
            let n = v.norm_l2();
            if n > 1e-9 {
                let dot: f64 = v.as_slice().iter().zip(out.as_slice()).map(|(a, b)| a * b).sum();
                let cos = dot / (n * out.norm_l2());
                prop_assert!((cos - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn weighted_sum_is_linear(
            a in vec_strategy(5), b in vec_strategy(5),
            ca in -2.0f64..2.0, cb in -2.0f64..2.0, s in -3.0f64..3.0,
        ) {
            let (a, b) = (pv(&a), pv(&b));
            let base = weighted_sum(&[(ca, &a), (cb, &b)]).unwrap();
            let scaled = weighted_sum(&[(s * ca, &a), (s * cb, &b)]).unwrap();
            for (x, y) in scaled.as_slice().iter().zip(base.as_slice()) {
                prop_assert!((x - s * y).abs() < 1e-12 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn diff_norm_triangle_inequality(a in vec_strategy(7), b in vec_strategy(7), c in vec_strategy(7)) {
            let (a, b, c) = (pv(&a), pv(&b), pv(&c));
            let ab = l2_diff_norm(&a, &b).unwrap();
            let bc = l2_diff_norm(&b, &c).unwrap();
            let ac = l2_diff_norm(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9);
        }
    }
}
