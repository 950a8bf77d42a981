//! Log-space numerics shared by the backends, the sampler and the decoder.

use crate::types::TokenId;

/// Numerically stable `ln(Σ exp(v))`.
///
/// Returns `-inf` when every input is `-inf` (or the slice is empty).
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if values.len() == 1 {
        return values[0];
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Shifts `values` so that they exponentiate to a probability vector.
pub fn log_softmax(values: &[f64]) -> Vec<f64> {
    let lse = logsumexp(values);
    values.iter().map(|&v| v - lse).collect()
}

/// Index of the largest value; the lowest index wins ties. NaN never wins.
pub fn argmax(values: &[f64]) -> Option<TokenId> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i as TokenId)
}

/// Correctly rounded floating-point sum (Shewchuk's exact partials).
///
/// The result depends only on the multiset of inputs, not on their order,
/// which lets two different traversals of the same terms compare bit-for-bit.
pub fn exact_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    let mut special = 0.0f64;
    for mut x in values {
        if !x.is_finite() {
            special += x;
            continue;
        }
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    if special != 0.0 || special.is_nan() {
        return special;
    }

    // Round the partials to a single double, with the half-way correction.
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        let yr = x - hi;
        if y == yr {
            hi = x;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_examples() {
        assert!(logsumexp(&[0.5f64.ln(), 0.5f64.ln()]).abs() < 1e-15);
        assert_eq!(logsumexp(&[0.0]), 0.0);
        let v = logsumexp(&[0.2f64.ln(), 0.3f64.ln()]);
        assert!((v - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_all_neg_inf() {
        assert_eq!(logsumexp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn logsumexp_large_magnitudes() {
        let v = logsumexp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-9);
        let v = logsumexp(&[-1000.0, f64::NEG_INFINITY]);
        assert_eq!(v, -1000.0);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax(&[f64::NEG_INFINITY; 2]), Some(0));
        assert_eq!(argmax(&[f64::NAN, 0.0]), Some(1));
        assert_eq!(argmax(&[]), None);
    }

    #[test]
    fn exact_sum_is_order_independent() {
        let a = [1e16, 1.0, -1e16, 0.1, 0.2, 0.3];
        let mut b = a;
        b.reverse();
        assert_eq!(exact_sum(a), exact_sum(b));
        assert_eq!(exact_sum([1e16, 1.0, -1e16]), 1.0);
        assert_eq!(exact_sum([0.1; 10]), 1.0);
        assert_eq!(exact_sum([f64::NEG_INFINITY, 1.0]), f64::NEG_INFINITY);
    }
}
