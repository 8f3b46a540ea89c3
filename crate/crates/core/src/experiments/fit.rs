//! Least-squares polynomial fits for scaling curves.

#[derive(Clone, Debug, PartialEq)]
pub struct PolyFit {
    /// Coefficients in powers of `x`, constant term first.
    pub coeffs: Vec<f64>,
    pub r_squared: f64,
}

impl PolyFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

/// Fits a degree-`degree` polynomial by solving the normal equations on
/// `x` rescaled to `[-1, 1]`. Needs at least one point per coefficient.
pub fn polyfit(xs: &[f64], ys: &[f64], degree: usize) -> Option<PolyFit> {
    let n = degree + 1;
    if xs.len() != ys.len() || xs.len() < n {
        return None;
    }
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    let (mid, half) = ((hi + lo) / 2.0, ((hi - lo) / 2.0).max(f64::MIN_POSITIVE));

    // Augmented normal equations [AᵀA | Aᵀy].
    let mut m = vec![vec![0.0; n + 1]; n];
    for (&x, &y) in xs.iter().zip(ys) {
        let u = (x - mid) / half;
        let pows: Vec<f64> = (0..n).map(|i| u.powi(i as i32)).collect();
        for i in 0..n {
            for j in 0..n {
                m[i][j] += pows[i] * pows[j];
            }
            m[i][n] += pows[i] * y;
        }
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        let pivot_row = m[col].clone();
        for (r, row) in m.iter_mut().enumerate() {
            if r != col {
                let f = row[col] / pivot_row[col];
                for (x, p) in row.iter_mut().zip(&pivot_row).skip(col) {
                    *x -= f * p;
                }
            }
        }
    }
    let scaled: Vec<f64> = (0..n).map(|i| m[i][n] / m[i][i]).collect();

    // Expand c_i ((x - mid)/half)^i back into powers of x.
    let mut coeffs = vec![0.0; n];
    let mut term = vec![1.0];
    for c in &scaled {
        for (k, t) in term.iter().enumerate() {
            coeffs[k] += c * t;
        }
        let mut next = vec![0.0; term.len() + 1];
        for (k, t) in term.iter().enumerate() {
            next[k + 1] += t / half;
            next[k] -= t * mid / half;
        }
        term = next;
    }

    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let u = (x - mid) / half;
            let fx: f64 = scaled
                .iter()
                .enumerate()
                .map(|(i, c)| c * u.powi(i as i32))
                .sum();
            (y - fx).powi(2)
        })
        .sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Some(PolyFit { coeffs, r_squared })
}

pub fn strictly_increasing(ys: &[f64]) -> bool {
    ys.windows(2).all(|w| w[1] > w[0])
}

pub fn non_increasing(ys: &[f64]) -> bool {
    ys.windows(2).all(|w| w[1] <= w[0])
}
