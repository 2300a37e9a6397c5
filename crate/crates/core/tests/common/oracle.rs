//! Brute-force reference computations that share no code with the library.

/// Moments `(mean, variance)` of the normalized pointwise product of normal
/// densities, by Simpson integration over `center ± 8 * scale`.
pub fn product_moments(factors: &[(f64, f64)], center: f64, scale: f64) -> (f64, f64) {
    const N: usize = 4000;
    let half = 8.0;
    let h = 2.0 * half / N as f64;
    let log_density = |z: f64| {
        let x = center + scale * z;
        factors
            .iter()
            .map(|&(m, v)| -(x - m) * (x - m) / (2.0 * v) - 0.5 * v.ln())
            .sum::<f64>()
    };
    let zs: Vec<f64> = (0..=N).map(|k| -half + h * k as f64).collect();
    let logs: Vec<f64> = zs.iter().map(|&z| log_density(z)).collect();
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (k, (&z, &l)) in zs.iter().zip(&logs).enumerate() {
        let w = if k == 0 || k == N {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let d = w * (l - peak).exp();
        m0 += d;
        m1 += d * z;
        m2 += d * z * z;
    }
    let mean_z = m1 / m0;
    let var_z = m2 / m0 - mean_z * mean_z;
    (center + scale * mean_z, scale * scale * var_z)
}

/// Engagement at offset `t` from arrival given `(start_offset, end_offset,
/// slope)` pieces, summing each piece's contribution directly.
pub fn engagement_direct(pieces: &[(f64, f64, f64)], t: f64) -> f64 {
    1.0 + pieces
        .iter()
        .map(|&(start, end, slope)| slope * (t.min(end) - start).max(0.0))
        .sum::<f64>()
}

/// Mode of `errors` by counting every candidate bin center directly; ties go
/// to the center nearest 0, then the lower center.
pub fn brute_mode(errors: &[f64], width: f64) -> f64 {
    let lo = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = (lo / width).floor() as i64 - 1;
    let last = (hi / width).ceil() as i64 + 1;
    let mut best: Option<(usize, f64)> = None;
    for k in first..=last {
        let c = k as f64 * width;
        let count = errors.iter().filter(|&&e| e >= c - width / 2.0 && e < c + width / 2.0).count();
        best = match best {
            None => Some((count, c)),
            Some((n, b)) if count > n || (count == n && (c.abs() < b.abs() || (c.abs() == b.abs() && c < b))) => {
                Some((count, c))
            }
            keep => keep,
        };
    }
    best.expect("non-empty").1
}

pub fn brute_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    // insertion sort keeps this independent of the library's sort
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && v[j - 1] > v[j] {
            v.swap(j - 1, j);
            j -= 1;
        }
    }
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn brute_mae(values: &[f64]) -> f64 {
    let mut total = 0.0;
    for v in values {
        total += v.abs();
    }
    total / values.len() as f64
}
