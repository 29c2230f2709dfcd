//! Edge-side privacy pipeline: fixed-point encoding, additively homomorphic
//! encryption of client updates, ciphertext summation, decryption, L2
//! clipping of the aggregated mean and calibrated noise.

pub mod paillier;

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{clip_l2, ParamVector};
use crate::rng::rng_for;

pub use paillier::{keygen, PrivateKey, PublicKey};

pub const DEFAULT_SCALE: u64 = 1 << 20;

/// Maps reals to the plaintext ring `Z_n` as `round(x * scale)`, negatives
/// wrapping to `n + v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    pub scale: u64,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        Self { scale: DEFAULT_SCALE }
    }
}

impl FixedPointCodec {
    pub fn new(scale: u64) -> Result<Self> {
        if scale == 0 {
            return Err(Error::InvalidArgument {
                name: "scale",
                reason: "must be positive".into(),
            });
        }
        Ok(Self { scale })
    }

    /// Quantizes `x`; fails if `headroom` such values could overflow the
    /// signed half-range of the plaintext space when summed.
    pub fn encode(&self, x: f64, pk: &PublicKey, headroom: usize, index: usize) -> Result<BigUint> {
        let scaled = (x * self.scale as f64).round();
        if !scaled.is_finite() || scaled.abs() >= 2f64.powi(100) {
            return Err(Error::PlaintextOverflow { index });
        }
        let q = scaled as i128;
        let magnitude = BigUint::from(q.unsigned_abs());
        if &magnitude * BigUint::from(headroom.max(1)) > pk.half_n() {
            return Err(Error::PlaintextOverflow { index });
        }
        Ok(if q < 0 { &pk.n - magnitude } else { magnitude })
    }

    /// Inverse of [`Self::encode`] using the half-range rule.
    pub fn decode(&self, m: &BigUint, pk: &PublicKey) -> f64 {
        let (negative, magnitude) = if m > &pk.half_n() {
            (true, &pk.n - m)
        } else {
            (false, m.clone())
        };
        let v = magnitude.to_f64().unwrap_or(f64::INFINITY) / self.scale as f64;
        if negative {
            -v
        } else {
            v
        }
    }
}

/// One ciphertext per parameter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CipherVector {
    pub ciphertexts: Vec<BigUint>,
}

impl CipherVector {
    pub fn dim(&self) -> usize {
        self.ciphertexts.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMechanism {
    #[default]
    Gaussian,
    Laplace,
}

/// Clipping bound C and noise multiplier sigma. Gaussian noise has standard
/// deviation `sigma * C / count` per element; Laplace noise uses that value
/// as its scale parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpConfig {
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub mechanism: NoiseMechanism,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            clip_norm: 1.0,
            noise_multiplier: 0.1,
            mechanism: NoiseMechanism::Gaussian,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err("secagg.dp.clip_norm: must be a positive finite number".into());
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err("secagg.dp.noise_multiplier: must be finite and nonnegative".into());
        }
        Ok(())
    }

    pub fn noise_scale(&self, participant_count: usize) -> f64 {
        self.noise_multiplier * self.clip_norm / participant_count as f64
    }

    /// Draws `dim` noise values for an aggregate over `participant_count`
    /// clients.
    pub fn sample_noise(&self, dim: usize, participant_count: usize, seed: u64) -> Vec<f64> {
        let scale = self.noise_scale(participant_count);
        let mut rng = rng_for(seed, &[]);
        (0..dim)
            .map(|_| {
                if scale == 0.0 {
                    return 0.0;
                }
                match self.mechanism {
                    NoiseMechanism::Gaussian => scale * rng.sample::<f64, _>(StandardNormal),
                    NoiseMechanism::Laplace => {
                        // inverse CDF on u in (-1/2, 1/2)
                        let u: f64 = rng.random::<f64>() - 0.5;
                        let u = if u == -0.5 { -0.5 + f64::EPSILON } else { u };
                        -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
                    }
                }
            })
            .collect()
    }
}

/// Quantizes and encrypts every element. `max_participants` sets the summing
/// headroom the encoding must leave.
pub fn encrypt_update(
    v: &ParamVector,
    codec: &FixedPointCodec,
    pk: &PublicKey,
    max_participants: usize,
    seed: u64,
) -> Result<CipherVector> {
    let plaintexts = v
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &x)| codec.encode(x, pk, max_participants, i))
        .collect::<Result<Vec<_>>>()?;
    let ciphertexts = plaintexts
        .par_iter()
        .enumerate()
        .map(|(i, m)| pk.encrypt(m, &mut rng_for(seed, &[i as u64])))
        .collect();
    Ok(CipherVector { ciphertexts })
}

/// Elementwise homomorphic sum; never decrypts.
pub fn aggregate_encrypted(updates: &[CipherVector], pk: &PublicKey, max_participants: usize) -> Result<CipherVector> {
    let first = updates.first().ok_or(Error::Empty("encrypted updates"))?;
    if updates.len() > max_participants {
        return Err(Error::TooManyParticipants {
            count: updates.len(),
            max: max_participants,
        });
    }
    if let Some(bad) = updates.iter().find(|u| u.dim() != first.dim()) {
        return Err(Error::DimensionMismatch {
            expected: first.dim(),
            found: bad.dim(),
        });
    }
    let ciphertexts = (0..first.dim())
        .into_par_iter()
        .map(|k| {
            updates[1..]
                .iter()
                .fold(first.ciphertexts[k].clone(), |acc, u| pk.add(&acc, &u.ciphertexts[k]))
        })
        .collect();
    Ok(CipherVector { ciphertexts })
}

/// Decrypts and dequantizes an aggregate.
pub fn decrypt_aggregate(agg: &CipherVector, sk: &PrivateKey, codec: &FixedPointCodec) -> Result<Vec<f64>> {
    agg.ciphertexts
        .par_iter()
        .map(|c| sk.decrypt(c).map(|m| codec.decode(&m, sk.public())))
        .collect()
}

/// Clip-then-noise applied to an already averaged update.
pub fn clip_and_noise(mean: &ParamVector, dp: &DpConfig, participant_count: usize, seed: u64) -> Result<ParamVector> {
    if participant_count == 0 {
        return Err(Error::Empty("participants"));
    }
    let clipped = clip_l2(mean, dp.clip_norm)?;
    let noise = dp.sample_noise(clipped.dim(), participant_count, seed);
    ParamVector::new(clipped.as_slice().iter().zip(&noise).map(|(x, n)| x + n).collect())
}

/// Decrypt, dequantize, divide by `participant_count`, clip to
/// `dp.clip_norm` in L2, then add noise.
pub fn finalize_edge_update(
    agg: &CipherVector,
    sk: &PrivateKey,
    codec: &FixedPointCodec,
    participant_count: usize,
    dp: &DpConfig,
    seed: u64,
) -> Result<ParamVector> {
    finalize_weighted(agg, sk, codec, participant_count, participant_count as f64, dp, seed)
}

/// As [`finalize_edge_update`], but the decrypted sum is divided by
/// `weight_total`. Clients that pre-scale their update by their sample count
/// make this the sample-weighted mean.
pub fn finalize_weighted(
    agg: &CipherVector,
    sk: &PrivateKey,
    codec: &FixedPointCodec,
    participant_count: usize,
    weight_total: f64,
    dp: &DpConfig,
    seed: u64,
) -> Result<ParamVector> {
    if participant_count == 0 {
        return Err(Error::Empty("participants"));
    }
    if !(weight_total > 0.0) {
        return Err(Error::ZeroSamples);
    }
    let sum = decrypt_aggregate(agg, sk, codec)?;
    let mean = ParamVector::new(sum.into_iter().map(|s| s / weight_total).collect())
        .map_err(|e| Error::Decryption(e.to_string()))?;
    clip_and_noise(&mean, dp, participant_count, seed)
}
