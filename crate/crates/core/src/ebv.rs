//! Encrypted bit vectors and the interactive primitives evaluated over them.
//!
//! The party running these algorithms holds only the public key. Every
//! multiplication of two encrypted values goes through a [`ProductOracle`],
//! which is the key holder answering masked product requests.

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::paillier::{Ciphertext, PaillierError, PublicKey, SecretKey};

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum EbvError {
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error("value {value} does not fit in {bits} bits")]
    Range { value: u64, bits: usize },
    #[error("bid {0} outside the accepted range [1, 2^K - 2]")]
    BidRange(u64),
    #[error("bit vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty bid list")]
    Empty,
    #[error("bit {index} decrypted to a non-bit value")]
    Corrupt { index: usize },
    #[error("product oracle failed: {0}")]
    Oracle(#[source] BoxError),
}

/// Largest bit length that still decodes into a `u64`.
pub const MAX_BITS: usize = 63;

/// One bid as `K` encrypted bits, most significant first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EbvBid {
    bits: Vec<Ciphertext>,
}

impl EbvBid {
    pub fn from_bits(bits: Vec<Ciphertext>) -> Self {
        EbvBid { bits }
    }

    pub fn bits(&self) -> &[Ciphertext] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<Ciphertext> {
        self.bits
    }

    pub fn bit_length(&self) -> usize {
        self.bits.len()
    }
}

/// Comparison or selection outcome; both parts stay encrypted.
#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub flag_or_index: Ciphertext,
    pub extreme_bid: EbvBid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Extreme {
    Min,
    Max,
}

/// Key-holder side of the masked multiplication.
pub trait ProductOracle {
    /// Sends `E(x₂)`, `E(y₂)` and returns `E(x₂·y₂)`.
    fn product(&mut self, x2: &Ciphertext, y2: &Ciphertext) -> Result<Ciphertext, EbvError>;
}

impl<T: ProductOracle + ?Sized> ProductOracle for &mut T {
    fn product(&mut self, x2: &Ciphertext, y2: &Ciphertext) -> Result<Ciphertext, EbvError> {
        (**self).product(x2, y2)
    }
}

/// Answers one product request: decrypts the masked operands and returns a
/// fresh encryption of their product along with the values it observed.
pub fn serve_product<R: RngCore + CryptoRng>(
    sk: &SecretKey,
    x2: &Ciphertext,
    y2: &Ciphertext,
    rng: &mut R,
) -> Result<(Ciphertext, (BigUint, BigUint)), EbvError> {
    let pk = sk.public_key();
    let a = sk.decrypt(x2)?;
    let b = sk.decrypt(y2)?;
    let prod = &a * &b % pk.modulus();
    Ok((pk.encrypt(&prod, rng)?, (a, b)))
}

/// In-process key holder; keeps every masked pair it saw.
pub struct LocalOracle<'a, R> {
    sk: &'a SecretKey,
    rng: R,
    pub observed: Vec<(BigUint, BigUint)>,
}

impl<'a, R: RngCore + CryptoRng> LocalOracle<'a, R> {
    pub fn new(sk: &'a SecretKey, rng: R) -> Self {
        LocalOracle {
            sk,
            rng,
            observed: Vec::new(),
        }
    }
}

impl<R: RngCore + CryptoRng> ProductOracle for LocalOracle<'_, R> {
    fn product(&mut self, x2: &Ciphertext, y2: &Ciphertext) -> Result<Ciphertext, EbvError> {
        let (resp, seen) = serve_product(self.sk, x2, y2, &mut self.rng)?;
        self.observed.push(seen);
        Ok(resp)
    }
}

/// Encodes `v` as `k` encrypted bits. Accepts the full range `[0, 2^k − 1]`,
/// including the two saturation values.
pub fn encode_ebv<R: RngCore + CryptoRng>(
    pk: &PublicKey,
    v: u64,
    k: usize,
    rng: &mut R,
) -> Result<EbvBid, EbvError> {
    if k == 0 || k > MAX_BITS || v > max_value(k) {
        return Err(EbvError::Range { value: v, bits: k });
    }
    let bits = (0..k)
        .map(|i| pk.encrypt_u64((v >> (k - 1 - i)) & 1, rng))
        .collect();
    Ok(EbvBid { bits })
}

/// Bidder-facing encoding: only `1 ≤ v ≤ 2^k − 2` is a valid bid.
pub fn encode_bid<R: RngCore + CryptoRng>(
    pk: &PublicKey,
    v: u64,
    k: usize,
    rng: &mut R,
) -> Result<EbvBid, EbvError> {
    check_bid(v, k)?;
    encode_ebv(pk, v, k, rng)
}

pub fn check_bid(v: u64, k: usize) -> Result<(), EbvError> {
    if k == 0 || k > MAX_BITS {
        return Err(EbvError::Range { value: v, bits: k });
    }
    if v == 0 || v >= max_value(k) {
        return Err(EbvError::BidRange(v));
    }
    Ok(())
}

pub fn max_value(k: usize) -> u64 {
    (1u64 << k) - 1
}

pub fn decode_ebv(sk: &SecretKey, e: &EbvBid) -> Result<u64, EbvError> {
    if e.bits.len() > MAX_BITS {
        return Err(EbvError::LengthMismatch(e.bits.len(), MAX_BITS));
    }
    e.bits.iter().enumerate().try_fold(0u64, |acc, (index, c)| {
        let bit = sk.decrypt(c)?;
        match bit.to_u64() {
            Some(b @ (0 | 1)) => Ok((acc << 1) | b),
            _ => Err(EbvError::Corrupt { index }),
        }
    })
}

/// Bitwise complement `E(1 − σ)`; decodes to `(2^K − 1) − v`.
pub fn ebv_invert<R: RngCore + CryptoRng>(
    pk: &PublicKey,
    a: &EbvBid,
    rng: &mut R,
) -> Result<EbvBid, EbvError> {
    let bits = a
        .bits
        .iter()
        .map(|c| {
            let one = pk.encrypt_u64(1, rng);
            pk.sub(&one, c)
        })
        .collect::<Result<_, _>>()?;
    Ok(EbvBid { bits })
}

/// Runs the secure EBV algorithms against a product oracle and counts the
/// oracle round trips it issues.
pub struct Evaluator<'a, O, R> {
    pk: &'a PublicKey,
    oracle: &'a mut O,
    rng: &'a mut R,
    products: u64,
}

impl<'a, O: ProductOracle, R: RngCore + CryptoRng> Evaluator<'a, O, R> {
    pub fn new(pk: &'a PublicKey, oracle: &'a mut O, rng: &'a mut R) -> Self {
        Evaluator {
            pk,
            oracle,
            rng,
            products: 0,
        }
    }

    pub fn public_key(&self) -> &PublicKey {
        self.pk
    }

    /// Number of oracle product calls issued so far.
    pub fn product_calls(&self) -> u64 {
        self.products
    }

    pub fn rng(&mut self) -> &mut R {
        self.rng
    }

    pub fn oracle(&mut self) -> &mut O {
        self.oracle
    }

    fn fresh(&mut self, m: u64) -> Ciphertext {
        self.pk.encrypt_u64(m, self.rng)
    }

    /// `E(x·y)` from `E(x)`, `E(y)` with one masked oracle round trip.
    pub fn secure_product(
        &mut self,
        cx: &Ciphertext,
        cy: &Ciphertext,
    ) -> Result<Ciphertext, EbvError> {
        let pk = self.pk;
        let n = pk.modulus();
        let x1 = pk.random_plaintext(self.rng);
        let y1 = pk.random_plaintext(self.rng);
        let x2 = pk.add(cx, &pk.encrypt_neg(&x1, self.rng)?)?;
        let y2 = pk.add(cy, &pk.encrypt_neg(&y1, self.rng)?)?;
        let x2y2 = self.oracle.product(&x2, &y2)?;
        pk.check(&x2y2)?;
        self.products += 1;

        let x1y1 = pk.encrypt(&(&x1 * &y1 % n), self.rng)?;
        let t1 = pk.scalar_mul(&y2, &x1)?;
        let t2 = pk.scalar_mul(&x2, &y1)?;
        let acc = pk.add(&x1y1, &t1)?;
        let acc = pk.add(&acc, &t2)?;
        Ok(pk.add(&acc, &x2y2)?)
    }

    /// `E(c ⊕ d)` for bits, as `c + d − 2cd`.
    pub fn secure_xor(&mut self, cc: &Ciphertext, cd: &Ciphertext) -> Result<Ciphertext, EbvError> {
        let cd_prod = self.secure_product(cc, cd)?;
        let twice = self.pk.add(&cd_prod, &cd_prod)?;
        let sum = self.pk.add(cc, cd)?;
        Ok(self.pk.sub(&sum, &twice)?)
    }

    fn not(&mut self, c: &Ciphertext) -> Result<Ciphertext, EbvError> {
        let one = self.fresh(1);
        Ok(self.pk.sub(&one, c)?)
    }

    /// Ripple-carry addition modulo `2^K`; the carry out of the top bit is dropped.
    pub fn ebv_add(&mut self, a: &EbvBid, b: &EbvBid) -> Result<EbvBid, EbvError> {
        same_length(a, b)?;
        let k = a.bits.len();
        let mut out = vec![None; k];
        let (lsb_a, lsb_b) = (&a.bits[k - 1], &b.bits[k - 1]);
        out[k - 1] = Some(self.secure_xor(lsb_a, lsb_b)?);
        if k == 1 {
            return Ok(EbvBid::from_bits(out.into_iter().flatten().collect()));
        }
        let mut carry = self.secure_product(lsb_a, lsb_b)?;
        for i in (0..k - 1).rev() {
            let (ai, bi) = (&a.bits[i], &b.bits[i]);
            let half = self.secure_xor(ai, bi)?;
            out[i] = Some(self.secure_xor(&half, &carry)?);
            if i == 0 {
                break;
            }
            let ab = self.secure_product(ai, bi)?;
            let ac = self.secure_product(ai, &carry)?;
            let bc = self.secure_product(bi, &carry)?;
            let t = self.secure_xor(&ab, &ac)?;
            carry = self.secure_xor(&t, &bc)?;
        }
        Ok(EbvBid::from_bits(out.into_iter().flatten().collect()))
    }

    /// Shift-and-add multiplication by a public constant, modulo `2^K`.
    pub fn ebv_mul_const(&mut self, a: &EbvBid, n: u64) -> Result<EbvBid, EbvError> {
        let k = a.bits.len();
        if k == 0 || k > MAX_BITS || n > max_value(k) {
            return Err(EbvError::Range { value: n, bits: k });
        }
        let mut acc = EbvBid::from_bits((0..k).map(|_| self.fresh(0)).collect());
        for i in 0..k {
            if (n >> (k - 1 - i)) & 1 == 0 {
                continue;
            }
            let shift = k - 1 - i;
            let mut shifted: Vec<Ciphertext> = a.bits[shift..].to_vec();
            shifted.extend((0..shift).map(|_| self.fresh(0)));
            acc = self.ebv_add(&acc, &EbvBid::from_bits(shifted))?;
        }
        Ok(acc)
    }

    /// Encrypted comparison of two bids.
    ///
    /// For `Min` the flag is `0` when `a ≤ b` and `1` otherwise; for `Max`
    /// it is `0` when `a ≥ b`. The selected bid is always built from the
    /// original bits, and ties pick `a`.
    pub fn two_bid_extreme(
        &mut self,
        a: &EbvBid,
        b: &EbvBid,
        direction: Extreme,
    ) -> Result<SelectionResult, EbvError> {
        same_length(a, b)?;
        let flag = match direction {
            Extreme::Min => self.min_flag(a, b)?,
            Extreme::Max => {
                let ia = ebv_invert(self.pk, a, self.rng)?;
                let ib = ebv_invert(self.pk, b, self.rng)?;
                self.min_flag(&ia, &ib)?
            }
        };
        // σ = σᴬ·(1 − R) + σᴮ·R = σᴬ + R·(σᴮ − σᴬ)
        let mut bits = Vec::with_capacity(a.bits.len());
        for (sa, sb) in a.bits.iter().zip(&b.bits) {
            let delta = self.pk.sub(sb, sa)?;
            let picked = self.secure_product(&flag, &delta)?;
            bits.push(self.pk.add(sa, &picked)?);
        }
        Ok(SelectionResult {
            flag_or_index: flag,
            extreme_bid: EbvBid::from_bits(bits),
        })
    }

    /// `E(1)` iff `a > b`, evaluated bit by bit from the most significant end.
    fn min_flag(&mut self, a: &EbvBid, b: &EbvBid) -> Result<Ciphertext, EbvError> {
        let k = a.bits.len();
        let mut diff = Vec::with_capacity(k);
        for (sa, sb) in a.bits.iter().zip(&b.bits) {
            diff.push(self.secure_xor(sa, sb)?);
        }
        let mut result = self.secure_product(&diff[0], &a.bits[0])?;
        let mut prefix_equal = self.fresh(1);
        for i in 1..k {
            let same = self.not(&diff[i - 1])?;
            prefix_equal = self.secure_product(&prefix_equal, &same)?;
            let first_diff = self.secure_product(&prefix_equal, &diff[i])?;
            let term = self.secure_product(&first_diff, &a.bits[i])?;
            result = self.pk.add(&result, &term)?;
        }
        Ok(result)
    }

    /// Selects the first extreme bid of a list; the flag is its 0-based index.
    pub fn multi_bid_extreme(
        &mut self,
        bids: &[EbvBid],
        direction: Extreme,
    ) -> Result<SelectionResult, EbvError> {
        let (first, rest) = bids.split_first().ok_or(EbvError::Empty)?;
        let Some(second) = rest.first() else {
            let bid = EbvBid::from_bits(
                first
                    .bits
                    .iter()
                    .map(|c| self.pk.rerandomize(c, self.rng))
                    .collect::<Result<_, _>>()?,
            );
            return Ok(SelectionResult {
                flag_or_index: self.fresh(0),
                extreme_bid: bid,
            });
        };
        let SelectionResult {
            flag_or_index: mut index,
            extreme_bid: mut current,
        } = self.two_bid_extreme(first, second, direction)?;
        for (offset, next) in rest.iter().enumerate().skip(1) {
            let position = offset as u64 + 1;
            let step = self.two_bid_extreme(&current, next, direction)?;
            // index ← index·(1 − r) + position·r
            let kept = self.secure_product(&step.flag_or_index, &index)?;
            let moved = self
                .pk
                .scalar_mul(&step.flag_or_index, &BigUint::from(position))?;
            index = self.pk.add(&self.pk.sub(&index, &kept)?, &moved)?;
            current = step.extreme_bid;
        }
        Ok(SelectionResult {
            flag_or_index: index,
            extreme_bid: current,
        })
    }
}

fn same_length(a: &EbvBid, b: &EbvBid) -> Result<(), EbvError> {
    if a.bits.len() != b.bits.len() {
        return Err(EbvError::LengthMismatch(a.bits.len(), b.bits.len()));
    }
    if a.bits.is_empty() {
        return Err(EbvError::Empty);
    }
    Ok(())
}

/// Decrypts a selection index or flag; test and key-holder helper.
pub fn decrypt_small(sk: &SecretKey, c: &Ciphertext) -> Result<u64, EbvError> {
    let m = sk.decrypt(c)?;
    if m.is_zero() {
        return Ok(0);
    }
    m.to_u64().ok_or(EbvError::Corrupt { index: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paillier::keygen;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct Fixture {
        pk: PublicKey,
        sk: SecretKey,
        rng: ChaCha20Rng,
    }

    fn fixture(seed: u64) -> Fixture {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (pk, sk) = keygen(64, &mut rng).unwrap();
        Fixture { pk, sk, rng }
    }

    fn bits_of(sk: &SecretKey, e: &EbvBid) -> Vec<u64> {
        e.bits().iter().map(|c| sk.decrypt_u64(c).unwrap()).collect()
    }

    #[test]
    fn encode_examples() {
        let mut f = fixture(1);
        let e = encode_ebv(&f.pk, 5, 4, &mut f.rng).unwrap();
        assert_eq!(bits_of(&f.sk, &e), vec![0, 1, 0, 1]);
        let z = encode_ebv(&f.pk, 0, 8, &mut f.rng).unwrap();
        assert_eq!(bits_of(&f.sk, &z), vec![0; 8]);
        let ones = encode_ebv(&f.pk, 255, 8, &mut f.rng).unwrap();
        assert_eq!(decode_ebv(&f.sk, &ones).unwrap(), 255);
        let e170 = encode_ebv(&f.pk, 170, 8, &mut f.rng).unwrap();
        assert_eq!(decode_ebv(&f.sk, &e170).unwrap(), 170);
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let mut f = fixture(2);
        assert!(matches!(
            encode_ebv(&f.pk, 256, 8, &mut f.rng),
            Err(EbvError::Range { .. })
        ));
        assert!(matches!(encode_bid(&f.pk, 0, 8, &mut f.rng), Err(EbvError::BidRange(0))));
        assert!(matches!(
            encode_bid(&f.pk, 255, 8, &mut f.rng),
            Err(EbvError::BidRange(255))
        ));
        assert!(encode_bid(&f.pk, 254, 8, &mut f.rng).is_ok());
    }

    #[test]
    fn exhaustive_roundtrip_k8() {
        let mut f = fixture(3);
        for v in 0..=255 {
            let e = encode_ebv(&f.pk, v, 8, &mut f.rng).unwrap();
            assert_eq!(decode_ebv(&f.sk, &e).unwrap(), v);
        }
    }

    #[test]
    fn decode_rejects_non_bits() {
        let mut f = fixture(4);
        let mut bits = encode_ebv(&f.pk, 3, 4, &mut f.rng).unwrap().into_bits();
        bits[2] = f.pk.encrypt_u64(2, &mut f.rng);
        assert!(matches!(
            decode_ebv(&f.sk, &EbvBid::from_bits(bits)),
            Err(EbvError::Corrupt { index: 2 })
        ));
    }

    #[test]
    fn invert_examples() {
        let mut f = fixture(5);
        let zero = encode_ebv(&f.pk, 0, 8, &mut f.rng).unwrap();
        let inv = ebv_invert(&f.pk, &zero, &mut f.rng).unwrap();
        assert_eq!(decode_ebv(&f.sk, &inv).unwrap(), 255);
        let hundred = encode_ebv(&f.pk, 100, 8, &mut f.rng).unwrap();
        let inv = ebv_invert(&f.pk, &hundred, &mut f.rng).unwrap();
        assert_eq!(decode_ebv(&f.sk, &inv).unwrap(), 155);
        let back = ebv_invert(&f.pk, &inv, &mut f.rng).unwrap();
        assert_eq!(decode_ebv(&f.sk, &back).unwrap(), 100);
    }

    #[test]
    fn product_examples() {
        let mut f = fixture(6);
        let mut oracle = LocalOracle::new(&f.sk, ChaCha20Rng::seed_from_u64(60));
        let mut ev = Evaluator::new(&f.pk, &mut oracle, &mut f.rng);
        let y = 1234;
        let e0 = ev.fresh(0);
        let e1 = ev.fresh(1);
        let ey = ev.fresh(y);
        let p0 = ev.secure_product(&e0, &ey).unwrap();
        let p1 = ev.secure_product(&e1, &ey).unwrap();
        assert_eq!(ev.product_calls(), 2);
        assert_eq!(f.sk.decrypt_u64(&p0).unwrap(), 0);
        assert_eq!(f.sk.decrypt_u64(&p1).unwrap(), y);
    }

    #[test]
    fn serve_product_returns_fresh_encryption() {
        let mut f = fixture(7);
        let x = f.pk.encrypt_u64(4, &mut f.rng);
        let y = f.pk.encrypt_u64(6, &mut f.rng);
        let (r1, seen) = serve_product(&f.sk, &x, &y, &mut f.rng).unwrap();
        let (r2, _) = serve_product(&f.sk, &x, &y, &mut f.rng).unwrap();
        assert_eq!(f.sk.decrypt_u64(&r1).unwrap(), 24);
        assert_eq!(seen, (BigUint::from(4u32), BigUint::from(6u32)));
        assert_ne!(r1.value(), r2.value());
    }

    #[test]
    fn xor_truth_table() {
        let mut f = fixture(8);
        let mut oracle = LocalOracle::new(&f.sk, ChaCha20Rng::seed_from_u64(80));
        let mut ev = Evaluator::new(&f.pk, &mut oracle, &mut f.rng);
        for (c, d) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let (ec, ed) = (ev.fresh(c), ev.fresh(d));
            let x = ev.secure_xor(&ec, &ed).unwrap();
            assert_eq!(f.sk.decrypt_u64(&x).unwrap(), c ^ d);
        }
    }

    #[test]
    fn add_examples() {
        let mut f = fixture(9);
        let mut oracle = LocalOracle::new(&f.sk, ChaCha20Rng::seed_from_u64(90));
        let a = encode_ebv(&f.pk, 3, 8, &mut f.rng).unwrap();
        let b = encode_ebv(&f.pk, 5, 8, &mut f.rng).unwrap();
        let c = encode_ebv(&f.pk, 200, 8, &mut f.rng).unwrap();
        let d = encode_ebv(&f.pk, 100, 8, &mut f.rng).unwrap();
        let short = encode_ebv(&f.pk, 1, 4, &mut f.rng).unwrap();
        let mut ev = Evaluator::new(&f.pk, &mut oracle, &mut f.rng);
        let s = ev.ebv_add(&a, &b).unwrap();
        let wrapped = ev.ebv_add(&c, &d).unwrap();
        assert!(matches!(ev.ebv_add(&a, &short), Err(EbvError::LengthMismatch(8, 4))));
        assert_eq!(decode_ebv(&f.sk, &s).unwrap(), 8);
        assert_eq!(decode_ebv(&f.sk, &wrapped).unwrap(), 44);
    }

    #[test]
    fn mul_const_examples() {
        let mut f = fixture(10);
        let mut oracle = LocalOracle::new(&f.sk, ChaCha20Rng::seed_from_u64(100));
        let five = encode_ebv(&f.pk, 5, 8, &mut f.rng).unwrap();
        let mut ev = Evaluator::new(&f.pk, &mut oracle, &mut f.rng);
        let fifteen = ev.ebv_mul_const(&five, 3).unwrap();
        let same = ev.ebv_mul_const(&five, 1).unwrap();
        let zero = ev.ebv_mul_const(&five, 0).unwrap();
        assert!(matches!(ev.ebv_mul_const(&five, 256), Err(EbvError::Range { .. })));
        assert_eq!(decode_ebv(&f.sk, &fifteen).unwrap(), 15);
        assert_eq!(decode_ebv(&f.sk, &same).unwrap(), 5);
        assert_eq!(decode_ebv(&f.sk, &zero).unwrap(), 0);
    }

    #[test]
    fn two_bid_examples() {
        let mut f = fixture(11);
        let mut oracle = LocalOracle::new(&f.sk, ChaCha20Rng::seed_from_u64(110));
        let e5 = encode_ebv(&f.pk, 5, 4, &mut f.rng).unwrap();
        let e3 = encode_ebv(&f.pk, 3, 4, &mut f.rng).unwrap();
        let e4a = encode_ebv(&f.pk, 4, 4, &mut f.rng).unwrap();
        let e4b = encode_ebv(&f.pk, 4, 4, &mut f.rng).unwrap();
        let mut ev = Evaluator::new(&f.pk, &mut oracle, &mut f.rng);
        let r = ev.two_bid_extreme(&e5, &e3, Extreme::Min).unwrap();
        let tie = ev.two_bid_extreme(&e4a, &e4b, Extreme::Min).unwrap();
        let tie_max = ev.two_bid_extreme(&e4a, &e4b, Extreme::Max).unwrap();
        let max = ev.two_bid_extreme(&e3, &e5, Extreme::Max).unwrap();
        assert_eq!(decrypt_small(&f.sk, &r.flag_or_index).unwrap(), 1);
        assert_eq!(decode_ebv(&f.sk, &r.extreme_bid).unwrap(), 3);
        assert_eq!(decrypt_small(&f.sk, &tie.flag_or_index).unwrap(), 0);
        assert_eq!(decode_ebv(&f.sk, &tie.extreme_bid).unwrap(), 4);
        assert_eq!(decrypt_small(&f.sk, &tie_max.flag_or_index).unwrap(), 0);
        assert_eq!(decrypt_small(&f.sk, &max.flag_or_index).unwrap(), 1);
        assert_eq!(decode_ebv(&f.sk, &max.extreme_bid).unwrap(), 5);
    }

    #[test]
    fn multi_bid_examples() {
        let mut f = fixture(12);
        let mut oracle = LocalOracle::new(&f.sk, ChaCha20Rng::seed_from_u64(120));
        let bids: Vec<EbvBid> = [4, 2, 2, 7]
            .iter()
            .map(|&v| encode_ebv(&f.pk, v, 4, &mut f.rng).unwrap())
            .collect();
        let single = vec![encode_ebv(&f.pk, 9, 4, &mut f.rng).unwrap()];
        let mut ev = Evaluator::new(&f.pk, &mut oracle, &mut f.rng);
        let min = ev.multi_bid_extreme(&bids, Extreme::Min).unwrap();
        let max = ev.multi_bid_extreme(&bids, Extreme::Max).unwrap();
        let one = ev.multi_bid_extreme(&single, Extreme::Min).unwrap();
        assert!(matches!(ev.multi_bid_extreme(&[], Extreme::Max), Err(EbvError::Empty)));
        assert_eq!(decrypt_small(&f.sk, &min.flag_or_index).unwrap(), 1);
        assert_eq!(decode_ebv(&f.sk, &min.extreme_bid).unwrap(), 2);
        assert_eq!(decrypt_small(&f.sk, &max.flag_or_index).unwrap(), 3);
        assert_eq!(decode_ebv(&f.sk, &max.extreme_bid).unwrap(), 7);
        assert_eq!(decrypt_small(&f.sk, &one.flag_or_index).unwrap(), 0);
        assert_eq!(decode_ebv(&f.sk, &one.extreme_bid).unwrap(), 9);
    }

    #[test]
    fn oracle_call_counts_scale_with_k() {
        for k in [4usize, 8, 12] {
            let mut f = fixture(13);
            let mut oracle = LocalOracle::new(&f.sk, ChaCha20Rng::seed_from_u64(130));
            let a = encode_ebv(&f.pk, 3, k, &mut f.rng).unwrap();
            let b = encode_ebv(&f.pk, 5, k, &mut f.rng).unwrap();
            let mut ev = Evaluator::new(&f.pk, &mut oracle, &mut f.rng);
            ev.ebv_add(&a, &b).unwrap();
            let add = ev.product_calls();
            ev.two_bid_extreme(&a, &b, Extreme::Min).unwrap();
            let cmp = ev.product_calls() - add;
            let k = k as u64;
            assert_eq!(add, 2 + 2 + 7 * (k - 2));
            assert_eq!(cmp, 5 * k - 2);
        }
    }
}
