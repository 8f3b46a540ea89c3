//! Exact arithmetic in a prime field `F_p`.
//!
//! Elements are stored as canonical residues in `[0, p)`. The default modulus
//! is the Mersenne prime `2^31 - 1`, for which multiplication reduces with a
//! shift-and-add fold instead of a division. Any other prime below `2^63` goes
//! through the generic `u128 %` path.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `2^31 - 1`.
pub const MERSENNE_31: u64 = (1 << 31) - 1;

/// Largest modulus accepted, so that `a + b` never overflows a `u64`.
const MAX_MODULUS: u64 = 1 << 63;

/// The single-owner random stream used everywhere in the crate.
pub type SeededRng = ChaCha12Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

/// Derives the seed of trial `index` from a parent seed (splitmix64 finalizer).
pub fn child_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FieldError {
    #[error("modulus {0} is not prime")]
    NotPrime(u64),
    #[error("modulus {0} is out of range (need 2 <= p < 2^63)")]
    OutOfRange(u64),
    #[error("modulus mismatch: {left} vs {right}")]
    ModulusMismatch { left: u64, right: u64 },
    #[error("division by zero")]
    DivisionByZero,
}

/// A prime modulus together with its reduction strategy.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct FieldModulus {
    p: u64,
    /// `e` when `p = 2^e - 1` and products fit in 64 bits (`e <= 31`), else 0.
    mersenne_exp: u32,
}

impl fmt::Debug for FieldModulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F_{}", self.p)
    }
}

impl fmt::Display for FieldModulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.p)
    }
}

impl Default for FieldModulus {
    fn default() -> Self {
        Self::mersenne31()
    }
}

impl TryFrom<u64> for FieldModulus {
    type Error = FieldError;
    fn try_from(p: u64) -> Result<Self, FieldError> {
        Self::new(p)
    }
}

impl From<FieldModulus> for u64 {
    fn from(m: FieldModulus) -> u64 {
        m.p
    }
}

impl FieldModulus {
    pub fn new(p: u64) -> Result<Self, FieldError> {
        if !(2..MAX_MODULUS).contains(&p) {
            return Err(FieldError::OutOfRange(p));
        }
        if !is_prime(p) {
            return Err(FieldError::NotPrime(p));
        }
        let mersenne_exp = if (p + 1).is_power_of_two() && p <= MERSENNE_31 {
            (p + 1).trailing_zeros()
        } else {
            0
        };
        Ok(Self { p, mersenne_exp })
    }

    pub const fn mersenne31() -> Self {
        Self {
            p: MERSENNE_31,
            mersenne_exp: 31,
        }
    }

    /// Same prime, but with the Mersenne fast path disabled.
    pub fn generic(self) -> Self {
        Self {
            p: self.p,
            mersenne_exp: 0,
        }
    }

    #[inline]
    pub fn p(self) -> u64 {
        self.p
    }

    pub fn bit_width(self) -> u32 {
        64 - self.p.leading_zeros()
    }

    pub fn is_mersenne(self) -> bool {
        self.mersenne_exp != 0
    }

    /// Reduces an arbitrary `u64` into `[0, p)`.
    #[inline]
    pub fn reduce(self, x: u64) -> u64 {
        if self.mersenne_exp != 0 {
            let mut x = x;
            while x > self.p {
                x = (x & self.p) + (x >> self.mersenne_exp);
            }
            if x == self.p {
                0
            } else {
                x
            }
        } else {
            x % self.p
        }
    }

    /// Maps a signed integer to its residue.
    pub fn reduce_i64(self, x: i64) -> u64 {
        let r = (x as i128).rem_euclid(self.p as i128);
        r as u64
    }

    #[inline]
    pub fn add(self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.p {
            s - self.p
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.p - b
        }
    }

    #[inline]
    pub fn neg(self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.p - a
        }
    }

    #[inline]
    pub fn mul(self, a: u64, b: u64) -> u64 {
        if self.mersenne_exp != 0 {
            // a, b < 2^31 so the product fits; 2^e = 1 folds the high half down.
            let x = a * b;
            let s = (x & self.p) + (x >> self.mersenne_exp);
            if s >= self.p {
                s - self.p
            } else {
                s
            }
        } else {
            self.mul_generic(a, b)
        }
    }

    #[inline]
    pub fn mul_generic(self, a: u64, b: u64) -> u64 {
        ((a as u128 * b as u128) % self.p as u128) as u64
    }

    /// `a - c * b`, the inner step of every elimination loop.
    #[inline]
    pub fn sub_mul(self, a: u64, c: u64, b: u64) -> u64 {
        self.sub(a, self.mul(c, b))
    }

    pub fn pow(self, mut base: u64, mut exp: u64) -> u64 {
        let mut acc = 1 % self.p;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse by the extended Euclidean algorithm.
    pub fn inv(self, a: u64) -> Result<u64, FieldError> {
        if a == 0 {
            return Err(FieldError::DivisionByZero);
        }
        let (mut r0, mut r1) = (self.p as i128, a as i128);
        let (mut t0, mut t1) = (0i128, 1i128);
        while r1 != 0 {
            let q = r0 / r1;
            (r0, r1) = (r1, r0 - q * r1);
            (t0, t1) = (t1, t0 - q * t1);
        }
        debug_assert_eq!(r0, 1);
        Ok(t0.rem_euclid(self.p as i128) as u64)
    }

    /// Uniform residue by rejection: mask to the bit width and redraw on `>= p`.
    pub fn sample_raw<R: RngCore + ?Sized>(self, rng: &mut R) -> u64 {
        let mask = if self.bit_width() == 64 {
            u64::MAX
        } else {
            (1u64 << self.bit_width()) - 1
        };
        loop {
            let x = rng.next_u64() & mask;
            if x < self.p {
                return x;
            }
        }
    }

    /// Uniform nonzero residue.
    pub fn sample_nonzero_raw<R: RngCore + ?Sized>(self, rng: &mut R) -> u64 {
        loop {
            let x = self.sample_raw(rng);
            if x != 0 {
                return x;
            }
        }
    }

    pub fn element(self, value: u64) -> FieldElement {
        FieldElement {
            value: self.reduce(value),
            modulus: self,
        }
    }

    pub fn zero(self) -> FieldElement {
        FieldElement {
            value: 0,
            modulus: self,
        }
    }

    pub fn one(self) -> FieldElement {
        self.element(1)
    }

    pub fn sample_uniform<R: RngCore + ?Sized>(self, rng: &mut R) -> FieldElement {
        FieldElement {
            value: self.sample_raw(rng),
            modulus: self,
        }
    }

    pub fn check_same(self, other: FieldModulus) -> Result<(), FieldError> {
        if self.p == other.p {
            Ok(())
        } else {
            Err(FieldError::ModulusMismatch {
                left: self.p,
                right: other.p,
            })
        }
    }
}

/// Deterministic Miller-Rabin, exact for every `u64`.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const WITNESSES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &w in &WITNESSES {
        if n.is_multiple_of(w) {
            return n == w;
        }
    }
    let mulmod = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let powmod = |mut b: u64, mut e: u64| {
        let mut acc = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = mulmod(acc, b);
            }
            b = mulmod(b, b);
            e >>= 1;
        }
        acc
    };
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'witness: for &a in &WITNESSES {
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// A residue tagged with its modulus.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldElement {
    value: u64,
    modulus: FieldModulus,
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (mod {})", self.value, self.modulus.p)
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl FieldElement {
    pub fn value(self) -> u64 {
        self.value
    }

    pub fn modulus(self) -> FieldModulus {
        self.modulus
    }

    pub fn is_zero(self) -> bool {
        self.value == 0
    }

    pub fn checked_add(self, rhs: Self) -> Result<Self, FieldError> {
        self.modulus.check_same(rhs.modulus)?;
        Ok(self.with(self.modulus.add(self.value, rhs.value)))
    }

    pub fn checked_sub(self, rhs: Self) -> Result<Self, FieldError> {
        self.modulus.check_same(rhs.modulus)?;
        Ok(self.with(self.modulus.sub(self.value, rhs.value)))
    }

    pub fn checked_mul(self, rhs: Self) -> Result<Self, FieldError> {
        self.modulus.check_same(rhs.modulus)?;
        Ok(self.with(self.modulus.mul(self.value, rhs.value)))
    }

    pub fn inv(self) -> Result<Self, FieldError> {
        Ok(self.with(self.modulus.inv(self.value)?))
    }

    pub fn pow(self, exp: u64) -> Self {
        self.with(self.modulus.pow(self.value, exp))
    }

    fn with(self, value: u64) -> Self {
        Self {
            value,
            modulus: self.modulus,
        }
    }
}

macro_rules! forward_binop {
    ($tr:ident, $method:ident, $checked:ident) => {
        impl $tr for FieldElement {
            type Output = FieldElement;
            /// Panics on a modulus mismatch; use the `checked_*` form to recover.
            fn $method(self, rhs: Self) -> Self {
                match self.$checked(rhs) {
                    Ok(v) => v,
                    Err(e) => panic!("{e}"),
                }
            }
        }
    };
}

forward_binop!(Add, add, checked_add);
forward_binop!(Sub, sub, checked_sub);
forward_binop!(Mul, mul, checked_mul);

impl Neg for FieldElement {
    type Output = FieldElement;
    fn neg(self) -> Self {
        self.with(self.modulus.neg(self.value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, RngCore};

    fn f(p: u64) -> FieldModulus {
        FieldModulus::new(p).unwrap()
    }

    #[test]
    fn wraparound_and_identity() {
        let m = FieldModulus::mersenne31();
        assert_eq!((m.element(MERSENNE_31 - 1) + m.one()).value(), 0);
        let x = m.element(123_456);
        assert_eq!(m.zero() + x, x);
        assert_eq!((f(11).element(5) + f(11).element(7)).value(), 1);
    }

    #[test]
    fn multiplication_examples() {
        let m = FieldModulus::mersenne31();
        assert_eq!((m.element(2) * m.element(1 << 30)).value(), 1);
        assert!((m.element(987) * m.zero()).is_zero());
        assert_eq!((f(11).element(3) * f(11).element(4)).value(), 1);
    }

    #[test]
    fn inverse_examples() {
        let m = FieldModulus::mersenne31();
        assert_eq!(m.one().inv().unwrap().value(), 1);
        assert_eq!(m.element(2).inv().unwrap().value(), 1 << 30);
        assert_eq!(f(7).element(3).inv().unwrap().value(), 5);
        assert_eq!(m.zero().inv(), Err(FieldError::DivisionByZero));
    }

    #[test]
    fn modulus_mismatch_is_an_error() {
        let a = f(7).element(3);
        let b = f(11).element(3);
        assert_eq!(
            a.checked_add(b),
            Err(FieldError::ModulusMismatch { left: 7, right: 11 })
        );
        assert!(a.checked_mul(b).is_err());
    }

    #[test]
    fn rejects_composites_and_out_of_range() {
        assert_eq!(FieldModulus::new(15), Err(FieldError::NotPrime(15)));
        assert_eq!(FieldModulus::new(1), Err(FieldError::OutOfRange(1)));
        assert_eq!(
            FieldModulus::new(1 << 63),
            Err(FieldError::OutOfRange(1 << 63))
        );
        // 2^61 - 1 is prime but too wide for the 64-bit Mersenne fold.
        let m61 = f((1 << 61) - 1);
        assert!(!m61.is_mersenne());
        for p in [2, 3, 5, 7, 11, 31, 127, 8191, MERSENNE_31] {
            assert!(FieldModulus::new(p).is_ok(), "{p}");
        }
        assert!(f(7).is_mersenne() && f(3).is_mersenne() && !f(11).is_mersenne());
    }

    #[test]
    fn primality_matches_trial_division() {
        for n in 0u64..5000 {
            let trial = n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| n % d != 0);
            assert_eq!(is_prime(n), trial, "{n}");
        }
        assert!(is_prime(MERSENNE_31));
        assert!(is_prime((1 << 61) - 1));
        assert!(!is_prime(3_215_031_751)); // strong pseudoprime to bases 2, 3, 5, 7
    }

    #[test]
    fn mersenne_path_matches_generic_reduction() {
        let m = FieldModulus::mersenne31();
        let mut rng = seeded_rng(7);
        for _ in 0..1_000_000 {
            let a = m.sample_raw(&mut rng);
            let b = m.sample_raw(&mut rng);
            assert_eq!(m.mul(a, b), m.mul_generic(a, b));
        }
        for x in [
            0u64,
            1,
            MERSENNE_31,
            MERSENNE_31 + 1,
            u64::MAX,
            (1 << 62) + 5,
        ] {
            assert_eq!(m.reduce(x), x % MERSENNE_31);
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let m = FieldModulus::mersenne31();
        let draw = |seed| {
            let mut rng = seeded_rng(seed);
            (0..32).map(|_| m.sample_raw(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
        assert_ne!(draw(42), draw(43));
        assert_ne!(child_seed(1, 0), child_seed(1, 1));
        assert_ne!(child_seed(1, 0), child_seed(2, 0));
    }

    #[test]
    fn sample_mean_is_centered() {
        let m = FieldModulus::mersenne31();
        let mut rng = seeded_rng(2024);
        let n = 1_000_000;
        let sum: f64 = (0..n).map(|_| m.sample_raw(&mut rng) as f64).sum();
        let mean = sum / n as f64;
        let expect = (MERSENNE_31 - 1) as f64 / 2.0;
        assert!((mean - expect).abs() / expect < 1e-3, "mean {mean}");
    }

    #[test]
    fn low_byte_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let m = FieldModulus::mersenne31();
        let mut rng = seeded_rng(99);
        let n = 256_000usize;
        let mut counts = [0usize; 256];
        for _ in 0..n {
            counts[(m.sample_raw(&mut rng) & 0xff) as usize] += 1;
        }
        let expected = n as f64 / 256.0;
        let stat: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let critical = ChiSquared::new(255.0).unwrap().inverse_cdf(0.99);
        assert!(stat < critical, "chi2 {stat} >= {critical}");
    }

    #[test]
    fn small_prime_sampling_has_no_modulo_bias() {
        // p = 5 under a 3-bit mask: a naive `% 5` would favour 0..=2.
        let m = f(5);
        let mut rng = seeded_rng(3);
        let n = 500_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[m.sample_raw(&mut rng) as usize] += 1;
        }
        for c in counts {
            let frac = c as f64 / n as f64;
            assert!((frac - 0.2).abs() < 0.003, "{counts:?}");
        }
    }

    fn arb_triple(p: u64) -> impl Strategy<Value = (u64, u64, u64)> {
        (0..p, 0..p, 0..p)
    }

    proptest! {
        #[test]
        fn field_axioms_mersenne((a, b, c) in arb_triple(MERSENNE_31)) {
            let m = FieldModulus::mersenne31();
            let (a, b, c) = (m.element(a), m.element(b), m.element(c));
            prop_assert_eq!((a + b) + c, a + (b + c));
            prop_assert_eq!((a * b) * c, a * (b * c));
            prop_assert_eq!(a + b, b + a);
            prop_assert_eq!(a * b, b * a);
            prop_assert_eq!(a * (b + c), a * b + a * c);
            prop_assert_eq!(a - a, m.zero());
            prop_assert_eq!(a + (-a), m.zero());
            if !a.is_zero() {
                prop_assert_eq!(a * a.inv().unwrap(), m.one());
            }
            for v in [a + b, a - b, a * b, -a] {
                prop_assert!(v.value() < MERSENNE_31);
            }
        }

        #[test]
        fn field_axioms_small_primes(p in prop::sample::select(vec![2u64, 3, 5, 7, 11]), seed in any::<u64>()) {
            let m = FieldModulus::new(p).unwrap();
            let mut rng = seeded_rng(seed);
            for _ in 0..50 {
                let (a, b, c) = (m.sample_uniform(&mut rng), m.sample_uniform(&mut rng), m.sample_uniform(&mut rng));
                prop_assert_eq!(a * (b + c), a * b + a * c);
                prop_assert_eq!(m.mul(a.value(), b.value()), m.mul_generic(a.value(), b.value()));
                if !a.is_zero() {
                    prop_assert_eq!(a * a.inv().unwrap(), m.one());
                    prop_assert_eq!(a.pow(p - 1), m.one());
                }
            }
        }

        #[test]
        fn generic_prime_closure(a in any::<u64>(), b in any::<u64>()) {
            let m = FieldModulus::new(1_000_000_007).unwrap();
            let (x, y) = (m.element(a), m.element(b));
            prop_assert!((x * y).value() < m.p());
            prop_assert_eq!((x * y).value() as u128, (a as u128 % m.p() as u128) * (b as u128 % m.p() as u128) % m.p() as u128);
        }

        #[test]
        fn reduce_i64_is_euclidean(x in any::<i64>()) {
            let m = FieldModulus::mersenne31();
            let r = m.reduce_i64(x);
            prop_assert!(r < m.p());
            prop_assert_eq!((r as i128 - x as i128).rem_euclid(m.p() as i128), 0);
        }
    }

    #[test]
    fn rng_trait_object_sampling() {
        let m = FieldModulus::mersenne31();
        let mut rng = seeded_rng(1);
        let dynrng: &mut dyn RngCore = &mut rng;
        let v = m.sample_raw(dynrng);
        assert!(v < m.p());
        let _: u32 = rng.random();
    }
}
