//! Small numeric helpers shared across modules.

use statrs::function::factorial::ln_binomial;

/// Binomial coefficient as a double. Returns 0 when `k > n`.
///
/// Exact multiplicative evaluation for `n <= 60`; log-space above that.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    if n > 60 {
        return ln_binomial(n as u64, k as u64).exp();
    }
    let mut acc = 1.0f64;
    for t in 0..k {
        acc = acc * (n - t) as f64 / (t + 1) as f64;
    }
    acc.round()
}

/// `1 - (1 - p)^k`: probability that at least one of `k` independent draws
/// hits an outcome of probability `p`. The `k = 1` case returns `p` exactly.
pub fn prob_at_least_once(p: f64, k: usize) -> f64 {
    match k {
        0 => 0.0,
        1 => p,
        _ => 1.0 - (1.0 - p).powi(k as i32),
    }
}

/// Pairwise (fixed reduction tree) summation. The result depends only on
/// the slice contents and order, never on how work was scheduled.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Iterates over every integer vector in the box `[0, bounds[0]] x ... x [0, bounds[d-1]]`
/// in lexicographic order (last coordinate fastest).
pub fn for_each_in_box(bounds: &[usize], mut f: impl FnMut(&[usize])) {
    let mut cur = vec![0usize; bounds.len()];
    loop {
        f(&cur);
        let mut d = bounds.len();
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            if cur[d] < bounds[d] {
                cur[d] += 1;
                break;
            }
            cur[d] = 0;
        }
    }
}
