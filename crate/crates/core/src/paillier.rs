//! Paillier cryptosystem with generator `g = n + 1`.
//!
//! Encryption is `E(m, r) = (1 + m·n) · rⁿ mod n²`, decryption is
//! `L(c^λ mod n²) · μ mod n` with `L(u) = (u − 1) / n` and `μ = λ⁻¹ mod n`,
//! evaluated modulo `p²` and `q²` and recombined.
//! Ciphertexts carry a tag derived from the modulus so that mixing values
//! from different keypairs is caught instead of silently producing garbage.

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};
use thiserror::Error;

/// Smallest accepted modulus size; anything below is only useful for unit tests.
pub const MIN_KEY_BITS: u32 = 64;

/// Modulus size used by protocol sessions unless configured otherwise.
pub const DEFAULT_KEY_BITS: u32 = 512;

const KEYGEN_ATTEMPTS: usize = 64;
const PRIME_CANDIDATES: usize = 100_000;
const MILLER_RABIN_ROUNDS: usize = 40;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PaillierError {
    #[error("key generation failed: {0}")]
    Setup(String),
    #[error("plaintext out of range [0, n)")]
    PlaintextRange,
    #[error("randomness must lie in [1, n) and be coprime with n")]
    BadRandomness,
    #[error("ciphertext belongs to key {found:#x}, expected {expected:#x}")]
    KeyMismatch { expected: u64, found: u64 },
    #[error("ciphertext value outside the group Z*_(n^2)")]
    MalformedCiphertext,
    #[error("key encoding: {0}")]
    Encoding(String),
}

/// Identifier of a keypair, derived from the low 64 bits of the modulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KeyTag(pub u64);

impl KeyTag {
    fn of(modulus: &BigUint) -> Self {
        KeyTag(modulus.iter_u64_digits().next().unwrap_or(0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    modulus: BigUint,
    generator: BigUint,
    modulus_squared: BigUint,
    tag: KeyTag,
}

#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey {
    prime_p: BigUint,
    prime_q: BigUint,
    lambda: BigUint,
    mu: BigUint,
    crt: Crt,
    public: PublicKey,
}

/// Per-prime decryption constants.
#[derive(Clone, PartialEq, Eq)]
struct Crt {
    p_squared: BigUint,
    q_squared: BigUint,
    p_minus_1: BigUint,
    q_minus_1: BigUint,
    hp: BigUint,
    hq: BigUint,
    q_inv_p: BigUint,
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecretKey")
            .field("tag", &self.public.tag)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Ciphertext {
    value: BigUint,
    key_tag: KeyTag,
}

impl Ciphertext {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn key_tag(&self) -> KeyTag {
        self.key_tag
    }
}

/// Homomorphic operation selector for [`hom_eval`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HomOp {
    Add,
    Sub,
    ScalarMul,
}

/// Second operand of [`hom_eval`].
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Cipher(&'a Ciphertext),
    Scalar(&'a BigUint),
}

impl PublicKey {
    /// Rebuilds a public key from its modulus.
    pub fn from_modulus(modulus: BigUint) -> Result<Self, PaillierError> {
        if modulus.bits() < u64::from(MIN_KEY_BITS) || modulus.is_even() {
            return Err(PaillierError::Encoding(
                "modulus must be odd and at least 64 bits".into(),
            ));
        }
        let modulus_squared = &modulus * &modulus;
        Ok(PublicKey {
            generator: &modulus + 1u32,
            tag: KeyTag::of(&modulus),
            modulus,
            modulus_squared,
        })
    }

    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }

    pub fn generator(&self) -> &BigUint {
        &self.generator
    }

    pub fn modulus_squared(&self) -> &BigUint {
        &self.modulus_squared
    }

    pub fn tag(&self) -> KeyTag {
        self.tag
    }

    pub fn bits(&self) -> u64 {
        self.modulus.bits()
    }

    /// Encrypts `m` with fresh randomness.
    pub fn encrypt<R: RngCore + CryptoRng>(
        &self,
        m: &BigUint,
        rng: &mut R,
    ) -> Result<Ciphertext, PaillierError> {
        let r = self.random_unit(rng);
        self.encrypt_with(m, &r)
    }

    pub fn encrypt_u64<R: RngCore + CryptoRng>(&self, m: u64, rng: &mut R) -> Ciphertext {
        // Every u64 fits once the modulus exceeds 64 bits; smaller test keys reduce first.
        let m = BigUint::from(m) % &self.modulus;
        let r = self.random_unit(rng);
        self.encrypt_with(&m, &r).expect("reduced plaintext is in range")
    }

    /// Deterministic encryption with caller-supplied randomness `r`.
    pub fn encrypt_with(&self, m: &BigUint, r: &BigUint) -> Result<Ciphertext, PaillierError> {
        if m >= &self.modulus {
            return Err(PaillierError::PlaintextRange);
        }
        if r.is_zero() || r >= &self.modulus || !r.gcd(&self.modulus).is_one() {
            return Err(PaillierError::BadRandomness);
        }
        // (n + 1)^m = 1 + m·n (mod n²)
        let gm = (BigUint::one() + m * &self.modulus) % &self.modulus_squared;
        let rn = r.modpow(&self.modulus, &self.modulus_squared);
        Ok(self.wrap(gm * rn % &self.modulus_squared))
    }

    /// Encryption of `−m mod n`.
    pub fn encrypt_neg<R: RngCore + CryptoRng>(
        &self,
        m: &BigUint,
        rng: &mut R,
    ) -> Result<Ciphertext, PaillierError> {
        let m = m % &self.modulus;
        let neg = if m.is_zero() { m } else { &self.modulus - m };
        self.encrypt(&neg, rng)
    }

    /// Plaintext addition: `c1 · c2 mod n²`.
    pub fn add(&self, c1: &Ciphertext, c2: &Ciphertext) -> Result<Ciphertext, PaillierError> {
        self.check(c1)?;
        self.check(c2)?;
        Ok(self.wrap(&c1.value * &c2.value % &self.modulus_squared))
    }

    /// Plaintext subtraction: `c1 · c2⁻¹ mod n²`.
    pub fn sub(&self, c1: &Ciphertext, c2: &Ciphertext) -> Result<Ciphertext, PaillierError> {
        let neg = self.negate(c2)?;
        self.add(c1, &neg)
    }

    /// Plaintext negation: `c⁻¹ mod n²`.
    pub fn negate(&self, c: &Ciphertext) -> Result<Ciphertext, PaillierError> {
        self.check(c)?;
        let inv = c
            .value
            .modinv(&self.modulus_squared)
            .ok_or(PaillierError::MalformedCiphertext)?;
        Ok(self.wrap(inv))
    }

    /// Plaintext multiplication by a known scalar: `c^k mod n²`.
    pub fn scalar_mul(&self, c: &Ciphertext, k: &BigUint) -> Result<Ciphertext, PaillierError> {
        self.check(c)?;
        if k >= &self.modulus {
            return Err(PaillierError::PlaintextRange);
        }
        Ok(self.wrap(c.value.modpow(k, &self.modulus_squared)))
    }

    /// Self-blinding: multiplies in a fresh encryption of zero.
    pub fn rerandomize<R: RngCore + CryptoRng>(
        &self,
        c: &Ciphertext,
        rng: &mut R,
    ) -> Result<Ciphertext, PaillierError> {
        self.check(c)?;
        let r = self.random_unit(rng);
        let rn = r.modpow(&self.modulus, &self.modulus_squared);
        Ok(self.wrap(&c.value * rn % &self.modulus_squared))
    }

    /// Uniform element of `[1, n)` coprime with `n`.
    pub fn random_unit<R: RngCore + CryptoRng>(&self, rng: &mut R) -> BigUint {
        loop {
            let r = rng.gen_biguint_range(&BigUint::one(), &self.modulus);
            if r.gcd(&self.modulus).is_one() {
                return r;
            }
        }
    }

    /// Uniform element of the plaintext space `[0, n)`.
    pub fn random_plaintext<R: RngCore + CryptoRng>(&self, rng: &mut R) -> BigUint {
        rng.gen_biguint_below(&self.modulus)
    }

    /// Accepts a raw group element received from a peer.
    pub fn ciphertext_from_value(&self, value: BigUint) -> Result<Ciphertext, PaillierError> {
        if value.is_zero()
            || value >= self.modulus_squared
            || !value.gcd(&self.modulus).is_one()
        {
            return Err(PaillierError::MalformedCiphertext);
        }
        Ok(self.wrap(value))
    }

    /// 2-byte big-endian length prefix followed by the big-endian modulus.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_magnitude(&mut out, &self.modulus);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PaillierError> {
        let mut rest = bytes;
        let modulus = take_magnitude(&mut rest)?;
        if !rest.is_empty() {
            return Err(PaillierError::Encoding("trailing bytes".into()));
        }
        Self::from_modulus(modulus)
    }

    pub(crate) fn check(&self, c: &Ciphertext) -> Result<(), PaillierError> {
        if c.key_tag != self.tag {
            return Err(PaillierError::KeyMismatch {
                expected: self.tag.0,
                found: c.key_tag.0,
            });
        }
        Ok(())
    }

    fn wrap(&self, value: BigUint) -> Ciphertext {
        Ciphertext {
            value,
            key_tag: self.tag,
        }
    }
}

/// Evaluates one homomorphic operation; scalars must lie in `[0, n)`.
pub fn hom_eval(
    pk: &PublicKey,
    op: HomOp,
    c1: &Ciphertext,
    arg: Operand<'_>,
) -> Result<Ciphertext, PaillierError> {
    match (op, arg) {
        (HomOp::Add, Operand::Cipher(c2)) => pk.add(c1, c2),
        (HomOp::Sub, Operand::Cipher(c2)) => pk.sub(c1, c2),
        (HomOp::ScalarMul, Operand::Scalar(k)) => pk.scalar_mul(c1, k),
        (HomOp::Add | HomOp::Sub, Operand::Scalar(k)) => {
            // Adding a known constant: multiply by the deterministic g^k = 1 + k·n.
            pk.check(c1)?;
            let k = k % pk.modulus();
            let k = match op {
                HomOp::Sub if !k.is_zero() => pk.modulus() - k,
                _ => k,
            };
            let gk = (BigUint::one() + k * pk.modulus()) % pk.modulus_squared();
            Ok(pk.wrap(&c1.value * gk % pk.modulus_squared()))
        }
        (HomOp::ScalarMul, Operand::Cipher(_)) => Err(PaillierError::Encoding(
            "scalar multiplication needs a plaintext scalar".into(),
        )),
    }
}

impl SecretKey {
    pub fn public_key(&self) -> &PublicKey {
        &self.public
    }

    pub fn prime_p(&self) -> &BigUint {
        &self.prime_p
    }

    pub fn prime_q(&self) -> &BigUint {
        &self.prime_q
    }

    pub fn lambda(&self) -> &BigUint {
        &self.lambda
    }

    pub fn mu(&self) -> &BigUint {
        &self.mu
    }

    /// Assembles a secret key from its prime factors.
    pub fn from_primes(p: BigUint, q: BigUint) -> Result<Self, PaillierError> {
        if p == q || p.is_even() || q.is_even() {
            return Err(PaillierError::Setup("primes must be distinct and odd".into()));
        }
        let modulus = &p * &q;
        let public = PublicKey::from_modulus(modulus)?;
        let one = BigUint::one();
        let lambda = (&p - &one).lcm(&(&q - &one));
        let mu = lambda
            .modinv(public.modulus())
            .ok_or_else(|| PaillierError::Setup("lambda not invertible mod n".into()))?;
        let crt = Crt::new(&p, &q, &public)?;
        Ok(SecretKey {
            prime_p: p,
            prime_q: q,
            lambda,
            mu,
            crt,
            public,
        })
    }

    /// Decrypts modulo `p²` and `q²` separately and recombines.
    pub fn decrypt(&self, c: &Ciphertext) -> Result<BigUint, PaillierError> {
        self.public.check(c)?;
        let k = &self.crt;
        let (p, q) = (&self.prime_p, &self.prime_q);
        let mp = (c.value.modpow(&k.p_minus_1, &k.p_squared) - 1u32) / p * &k.hp % p;
        let mq = (c.value.modpow(&k.q_minus_1, &k.q_squared) - 1u32) / q * &k.hq % q;
        // m = mq + q·((mp − mq)·q⁻¹ mod p)
        let diff = (&mp + p - &mq % p) % p;
        Ok(mq + q * (diff * &k.q_inv_p % p))
    }

    /// `L(c^λ mod N²)·μ mod N`, without the CRT split.
    pub fn decrypt_direct(&self, c: &Ciphertext) -> Result<BigUint, PaillierError> {
        self.public.check(c)?;
        let n = self.public.modulus();
        let u = c.value.modpow(&self.lambda, self.public.modulus_squared());
        let l = (u - 1u32) / n;
        Ok(l * &self.mu % n)
    }

    /// Decrypts a value expected to fit in 64 bits.
    pub fn decrypt_u64(&self, c: &Ciphertext) -> Result<u64, PaillierError> {
        let m = self.decrypt(c)?;
        u64::try_from(&m).map_err(|_| PaillierError::PlaintextRange)
    }

    /// Prime factors `(p, q)`, each with a 2-byte length prefix.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_magnitude(&mut out, &self.prime_p);
        put_magnitude(&mut out, &self.prime_q);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PaillierError> {
        let mut rest = bytes;
        let p = take_magnitude(&mut rest)?;
        let q = take_magnitude(&mut rest)?;
        if !rest.is_empty() {
            return Err(PaillierError::Encoding("trailing bytes".into()));
        }
        Self::from_primes(p, q)
    }
}

/// Generates a keypair whose modulus has exactly `bit_length` bits.
impl Crt {
    fn new(p: &BigUint, q: &BigUint, public: &PublicKey) -> Result<Self, PaillierError> {
        let one = BigUint::one();
        let h = |prime: &BigUint| -> Result<(BigUint, BigUint, BigUint), PaillierError> {
            let sq = prime * prime;
            let pm1 = prime - &one;
            let g = public.generator().modpow(&pm1, &sq);
            let l = (g - &one) / prime;
            let inv = l
                .modinv(prime)
                .ok_or_else(|| PaillierError::Setup("degenerate prime".into()))?;
            Ok((sq, pm1, inv))
        };
        let (p_squared, p_minus_1, hp) = h(p)?;
        let (q_squared, q_minus_1, hq) = h(q)?;
        let q_inv_p = (q % p)
            .modinv(p)
            .ok_or_else(|| PaillierError::Setup("primes not coprime".into()))?;
        Ok(Crt {
            p_squared,
            q_squared,
            p_minus_1,
            q_minus_1,
            hp,
            hq,
            q_inv_p,
        })
    }
}

pub fn keygen<R: RngCore + CryptoRng>(
    bit_length: u32,
    rng: &mut R,
) -> Result<(PublicKey, SecretKey), PaillierError> {
    if bit_length < MIN_KEY_BITS || !bit_length.is_multiple_of(2) {
        return Err(PaillierError::Setup(format!(
            "bit length must be even and at least {MIN_KEY_BITS}, got {bit_length}"
        )));
    }
    let half = u64::from(bit_length / 2);
    for _ in 0..KEYGEN_ATTEMPTS {
        let p = random_prime(half, rng)?;
        let q = random_prime(half, rng)?;
        if p == q {
            continue;
        }
        let sk = SecretKey::from_primes(p, q)?;
        if sk.public.bits() != u64::from(bit_length) {
            continue;
        }
        return Ok((sk.public.clone(), sk));
    }
    Err(PaillierError::Setup(format!(
        "no suitable prime pair after {KEYGEN_ATTEMPTS} attempts"
    )))
}

/// Random prime with the two top bits set, so products of two have full length.
fn random_prime<R: RngCore + CryptoRng>(bits: u64, rng: &mut R) -> Result<BigUint, PaillierError> {
    let top = (BigUint::one() << (bits - 1)) | (BigUint::one() << (bits - 2));
    for _ in 0..PRIME_CANDIDATES {
        let candidate = rng.gen_biguint(bits) | &top | BigUint::one();
        if is_probable_prime(&candidate, rng) {
            return Ok(candidate);
        }
    }
    Err(PaillierError::Setup(format!("no {bits}-bit prime found")))
}

const SMALL_PRIMES: [u32; 24] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
];

/// Miller–Rabin with random bases.
pub(crate) fn is_probable_prime<R: RngCore>(n: &BigUint, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    for &p in &SMALL_PRIMES {
        let p = BigUint::from(p);
        if n == &p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    if n.is_even() {
        return n == &two;
    }
    let one = BigUint::one();
    let n_minus_one = n - &one;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;
    'witness: for _ in 0..MILLER_RABIN_ROUNDS {
        let a = rng.gen_biguint_range(&two, &n_minus_one);
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_one {
            continue;
        }
        for _ in 1..s {
            x = &x * &x % n;
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

pub(crate) fn put_magnitude(out: &mut Vec<u8>, x: &BigUint) {
    let bytes = if x.is_zero() { Vec::new() } else { x.to_bytes_be() };
    out.extend_from_slice(&(bytes.len() as u16).to_be_bytes());
    out.extend_from_slice(&bytes);
}

fn take_magnitude(rest: &mut &[u8]) -> Result<BigUint, PaillierError> {
    if rest.len() < 2 {
        return Err(PaillierError::Encoding("truncated length prefix".into()));
    }
    let len = u16::from_be_bytes([rest[0], rest[1]]) as usize;
    if rest.len() < 2 + len {
        return Err(PaillierError::Encoding("truncated magnitude".into()));
    }
    let body = &rest[2..2 + len];
    if body.first() == Some(&0) {
        return Err(PaillierError::Encoding("leading zero byte".into()));
    }
    *rest = &rest[2 + len..];
    Ok(BigUint::from_bytes_be(body))
}
