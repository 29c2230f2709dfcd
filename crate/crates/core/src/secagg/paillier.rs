//! Paillier cryptosystem over `num-bigint`, with generator `g = n + 1`.
//!
//! Ciphertexts multiply to plaintexts adding: `Dec(Enc(a) * Enc(b) mod n^2) = a + b mod n`.

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

const SMALL_PRIMES: [u32; 54] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109,
    113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223, 227, 229, 233, 239,
    241, 251, 257,
];
const MILLER_RABIN_ROUNDS: usize = 40;
const MAX_PRIME_CANDIDATES: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicKey {
    pub n: BigUint,
    pub n_squared: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrivateKey {
    lambda: BigUint,
    mu: BigUint,
    public: PublicKey,
}

impl PublicKey {
    pub fn bits(&self) -> u64 {
        self.n.bits()
    }

    /// `floor(n / 2)`: plaintexts above this decode as negative.
    pub fn half_n(&self) -> BigUint {
        &self.n >> 1
    }

    /// Encrypts `m mod n` with fresh randomness from `rng`.
    pub fn encrypt<R: RngCore>(&self, m: &BigUint, rng: &mut R) -> BigUint {
        let r = loop {
            let r = random_below(&self.n, rng);
            if !r.is_zero() && r.gcd(&self.n).is_one() {
                break r;
            }
        };
        let gm = (BigUint::one() + (m % &self.n) * &self.n) % &self.n_squared;
        gm * r.modpow(&self.n, &self.n_squared) % &self.n_squared
    }

    /// Homomorphic addition of two ciphertexts.
    pub fn add(&self, a: &BigUint, b: &BigUint) -> BigUint {
        a * b % &self.n_squared
    }
}

impl PrivateKey {
    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn decrypt(&self, c: &BigUint) -> Result<BigUint> {
        let pk = &self.public;
        if c.is_zero() || c >= &pk.n_squared {
            return Err(Error::Decryption("ciphertext out of range".into()));
        }
        if !c.gcd(&pk.n).is_one() {
            return Err(Error::Decryption("ciphertext shares a factor with n".into()));
        }
        let u = c.modpow(&self.lambda, &pk.n_squared);
        let l = (u - BigUint::one()) / &pk.n;
        Ok(l * &self.mu % &pk.n)
    }
}

fn random_below<R: RngCore>(bound: &BigUint, rng: &mut R) -> BigUint {
    let bits = bound.bits();
    let bytes = bits.div_ceil(8) as usize;
    let excess = (bytes as u64 * 8 - bits) as u32;
    let mut buf = vec![0u8; bytes];
    loop {
        rng.fill_bytes(&mut buf);
        buf[0] &= 0xFFu8 >> excess;
        let candidate = BigUint::from_bytes_be(&buf);
        if &candidate < bound {
            return candidate;
        }
    }
}

fn random_odd_with_top_bits<R: RngCore>(bits: u64, rng: &mut R) -> BigUint {
    let bytes = bits.div_ceil(8) as usize;
    let mut buf = vec![0u8; bytes];
    rng.fill_bytes(&mut buf);
    let mut x = BigUint::from_bytes_be(&buf);
    // trim to exactly `bits` bits, then force the two top bits and the low bit
    x >>= (bytes as u64 * 8) - bits;
    x.set_bit(bits - 1, true);
    x.set_bit(bits - 2, true);
    x.set_bit(0, true);
    x
}

/// Miller–Rabin with random bases after trial division by small primes.
pub fn is_probable_prime<R: RngCore>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    for &p in SMALL_PRIMES.iter().chain(std::iter::once(&2)) {
        let p = BigUint::from(p);
        if n == &p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    let n_minus_one = n - BigUint::one();
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;
    let span = n - BigUint::from(3u32);
    'witness: for _ in 0..rounds {
        let a = random_below(&span, rng) + &two;
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_one {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn generate_prime<R: RngCore>(bits: u64, rng: &mut R) -> Result<BigUint> {
    for _ in 0..MAX_PRIME_CANDIDATES {
        let candidate = random_odd_with_top_bits(bits, rng);
        if is_probable_prime(&candidate, MILLER_RABIN_ROUNDS, rng) {
            return Ok(candidate);
        }
    }
    Err(Error::KeyGeneration {
        attempts: MAX_PRIME_CANDIDATES,
    })
}

/// Generates a key pair whose modulus has exactly `key_bits` bits.
pub fn keygen(key_bits: u64, seed: u64) -> Result<(PublicKey, PrivateKey)> {
    if key_bits < 64 || !key_bits.is_multiple_of(2) {
        return Err(Error::InvalidArgument {
            name: "key_bits",
            reason: format!("must be an even number of at least 64 bits, got {key_bits}"),
        });
    }
    let mut rng = rng_for(seed, &[stream::KEYGEN, key_bits]);
    const ATTEMPTS: usize = 16;
    for _ in 0..ATTEMPTS {
        let p = generate_prime(key_bits / 2, &mut rng)?;
        let q = generate_prime(key_bits / 2, &mut rng)?;
        if p == q {
            continue;
        }
        let n = &p * &q;
        let p1 = &p - BigUint::one();
        let q1 = &q - BigUint::one();
        if !n.gcd(&(&p1 * &q1)).is_one() {
            continue;
        }
        let lambda = p1.lcm(&q1);
        // with g = n + 1, L(g^lambda mod n^2) = lambda mod n
        let Some(mu) = (&lambda % &n).modinv(&n) else {
            continue;
        };
        let public = PublicKey {
            n_squared: &n * &n,
            n,
        };
        return Ok((
            public.clone(),
            PrivateKey {
                lambda,
                mu,
                public,
            },
        ));
    }
    Err(Error::KeyGeneration { attempts: ATTEMPTS })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn primality_on_known_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in [2u64, 3, 5, 257, 65_537, 2_147_483_647, 1_000_000_007] {
            assert!(is_probable_prime(&BigUint::from(p), 20, &mut rng), "{p}");
        }
        // 561 and 41041 are Carmichael numbers
        for c in [0u64, 1, 4, 561, 41_041, 1_000_000_007 * 3] {
            assert!(!is_probable_prime(&BigUint::from(c), 20, &mut rng), "{c}");
        }
    }

    #[test]
    fn keygen_modulus_size_and_determinism() {
        let (pk, _) = keygen(256, 5).unwrap();
        assert_eq!(pk.bits(), 256);
        assert_eq!(keygen(256, 5).unwrap().0, pk);
        assert_ne!(keygen(256, 6).unwrap().0, pk);
        assert!(keygen(63, 1).is_err());
    }

    #[test]
    fn encrypt_decrypt_and_add() {
        let (pk, sk) = keygen(256, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let zero = BigUint::zero();
        assert_eq!(sk.decrypt(&pk.encrypt(&zero, &mut rng)).unwrap(), zero);
        let a = pk.encrypt(&BigUint::from(3u32), &mut rng);
        let b = pk.encrypt(&BigUint::from(4u32), &mut rng);
        assert_eq!(sk.decrypt(&pk.add(&a, &b)).unwrap(), BigUint::from(7u32));
        for _ in 0..100 {
            let m = random_below(&pk.n, &mut rng);
            assert_eq!(sk.decrypt(&pk.encrypt(&m, &mut rng)).unwrap(), m);
        }
        assert!(sk.decrypt(&BigUint::zero()).is_err());
        assert!(sk.decrypt(&pk.n_squared).is_err());
    }

    #[test]
    fn encryption_is_probabilistic() {
        let (pk, sk) = keygen(256, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = BigUint::from(42u32);
        let c1 = pk.encrypt(&m, &mut rng);
        let c2 = pk.encrypt(&m, &mut rng);
        assert_ne!(c1, c2);
        assert_eq!(sk.decrypt(&c1).unwrap(), sk.decrypt(&c2).unwrap());
    }
}
