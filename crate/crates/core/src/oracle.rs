//! Brute-force references that share no code with [`crate::linalg`].
//!
//! Plain `i64` arithmetic and exhaustive enumeration; only usable for tiny
//! fields and dimensions.

use num_integer::Integer;

/// Determinant of a row-major `n × n` matrix modulo `p`, by cofactor
/// expansion along the first row.
pub fn det_mod(a: &[i64], n: usize, p: i64) -> i64 {
    assert_eq!(a.len(), n * n);
    match n {
        0 => 1 % p,
        1 => a[0].rem_euclid(p),
        _ => {
            let mut total = 0i64;
            for col in 0..n {
                let minor: Vec<i64> = (1..n)
                    .flat_map(|r| (0..n).filter(move |&c| c != col).map(move |c| a[r * n + c]))
                    .collect();
                let sign = if col % 2 == 0 { 1 } else { -1 };
                total = (total + sign * a[col] * det_mod(&minor, n - 1, p)).rem_euclid(p);
            }
            total
        }
    }
}

/// `(singular, total)` over every `k × k` matrix with entries in `0..p`.
pub fn enumerate_singular(p: u64, k: usize) -> (u64, u64) {
    let cells = (k * k) as u32;
    let total = p.checked_pow(cells).expect("enumeration too large");
    let pi = p as i64;
    let mut entries = vec![0i64; k * k];
    let mut singular = 0;
    for idx in 0..total {
        let mut x = idx;
        for e in entries.iter_mut() {
            *e = (x % p) as i64;
            x /= p;
        }
        if det_mod(&entries, k, pi) == 0 {
            singular += 1;
        }
    }
    (singular, total)
}

/// [`enumerate_singular`] as a fraction in lowest terms.
pub fn singular_fraction(p: u64, k: usize) -> (u64, u64) {
    let (s, t) = enumerate_singular(p, k);
    let g = s.gcd(&t);
    (s / g, t / g)
}
