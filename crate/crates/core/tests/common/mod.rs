//! Reference implementations used as test oracles. Nothing here calls into
//! the library's statistics code.

#![allow(dead_code)]

use std::f64::consts::PI;

/// `erfc(x)` for `x >= 0`: the positive-term series for erf below 2.5 and a
/// backward-evaluated continued fraction above.
pub fn erfc_pos(x: f64) -> f64 {
    assert!(x >= 0.0);
    if x < 2.5 {
        // erf(x) = 2/sqrt(pi) e^{-x^2} sum 2^n x^{2n+1} / (2n+1)!!
        let mut term = x;
        let mut sum = x;
        let x2 = x * x;
        let mut n = 0.0;
        while term > sum * 1e-18 {
            n += 1.0;
            term *= 2.0 * x2 / (2.0 * n + 1.0);
            sum += term;
        }
        1.0 - 2.0 / PI.sqrt() * (-x2).exp() * sum
    } else {
        // erfc(x) = e^{-x^2}/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
        let mut f = x;
        for k in (1..=4000).rev() {
            f = x + (k as f64 / 2.0) / f;
        }
        (-x * x).exp() / PI.sqrt() / f
    }
}

pub fn erfc(x: f64) -> f64 {
    if x >= 0.0 {
        erfc_pos(x)
    } else {
        2.0 - erfc_pos(-x)
    }
}

pub fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / 2f64.sqrt())
}

/// Pooled two-proportion test written from the formula, with the difference
/// taken in exact integer arithmetic.
pub fn two_proportion(c1: u64, n1: u64, c2: u64, n2: u64, greater: bool, cc: bool) -> f64 {
    let pooled_num = c1 + c2;
    let pooled_den = n1 + n2;
    let cross = c2 as i128 * n1 as i128 - c1 as i128 * n2 as i128;
    if pooled_num == 0 || pooled_num == pooled_den {
        return if cross == 0 { 1.0 } else { 0.0 };
    }
    let diff = cross as f64 / (n1 as f64 * n2 as f64);
    let pooled = pooled_num as f64 / pooled_den as f64;
    let harmonic = (n1 + n2) as f64 / (n1 as f64 * n2 as f64);
    let shifted = if cc {
        let cut = harmonic / 2.0;
        if diff.abs() <= cut {
            0.0
        } else if diff > 0.0 {
            diff - cut
        } else {
            diff + cut
        }
    } else {
        diff
    };
    let z = shifted / (pooled * (1.0 - pooled) * harmonic).sqrt();
    if greater {
        phi(-z)
    } else {
        2.0 * phi(-z.abs())
    }
}

pub fn cohens_h(p1: f64, p2: f64) -> f64 {
    let angle = |p: f64| p.sqrt().atan2((1.0 - p).sqrt());
    angle(p2) - angle(p1)
}

pub fn binom(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k as u128 {
        acc = acc * (n as u128 - k as u128 + i) / i;
    }
    acc
}

/// Exact `P(X >= m)` by summing integer binomial products.
pub fn hypergeom_sf(population: u64, successes: u64, draws: u64, m: u64) -> f64 {
    let total = binom(population, draws);
    let tail: u128 = (m..=draws.min(successes))
        .map(|k| binom(successes, k) * binom(population - successes, draws - k))
        .sum();
    tail as f64 / total as f64
}

/// Holm decisions via adjusted p-values: a hypothesis is rejected when the
/// running maximum of `(K - rank + 1) p` up to its rank is at most `alpha`.
/// Ties share the smallest rank of their group.
pub fn holm(p: &[f64], alpha: f64) -> Vec<bool> {
    let k = p.len();
    (0..k)
        .map(|i| {
            let adjusted = (0..k)
                .filter(|&j| p[j] <= p[i])
                .map(|j| {
                    let rank = 1 + p.iter().filter(|&&q| q < p[j]).count();
                    ((k - rank + 1) as f64 * p[j]).min(1.0)
                })
                .fold(0.0, f64::max);
            adjusted <= alpha
        })
        .collect()
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
    }
}
