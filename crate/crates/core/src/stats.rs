//! Statistical primitives: the two-proportion normal test, Holm-Bonferroni
//! pooling, Cohen's h and the hypergeometric upper tail.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// `pi2 != pi1`
    TwoSided,
    /// `pi2 > pi1`
    Greater,
}

/// Counts for comparing the proportion `count1 / size1` with `count2 / size2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProportionTestInput {
    pub count1: u64,
    pub size1: u64,
    pub count2: u64,
    pub size2: u64,
    pub alternative: Alternative,
    pub continuity_corrected: bool,
}

impl ProportionTestInput {
    pub fn new(
        (count1, size1): (u64, u64),
        (count2, size2): (u64, u64),
        alternative: Alternative,
        continuity_corrected: bool,
    ) -> Result<Self> {
        let inp = Self {
            count1,
            size1,
            count2,
            size2,
            alternative,
            continuity_corrected,
        };
        inp.validate()?;
        Ok(inp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size1 == 0 || self.size2 == 0 {
            return Err(Error::Domain("proportion test needs non-empty samples".into()));
        }
        if self.count1 > self.size1 || self.count2 > self.size2 {
            return Err(Error::Domain(format!(
                "counts exceed sizes: {}/{} vs {}/{}",
                self.count1, self.size1, self.count2, self.size2
            )));
        }
        Ok(())
    }
}

/// Standard normal CDF, `0.5 * erfc(-x / sqrt 2)`.
///
/// `erfc` comes from `libm` (the musl implementation, accurate to about one
/// ulp) and is evaluated directly in the tails, so small probabilities keep
/// full relative precision.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// P-value of the pooled-variance normal test for a difference in proportions.
///
/// `z = (p2 - p1 -/+ cc) / sqrt(p (1 - p) (1/N1 + 1/N2))` with `p` the pooled
/// proportion. With continuity correction, `cc = (1/N1 + 1/N2) / 2` shrinks
/// `|p2 - p1|` toward zero but never past it. Two-sided `p = 2 Phi(-|z|)`,
/// greater `p = Phi(-z)`.
///
/// A pooled proportion of exactly 0 or 1 has no variance; the p-value is then
/// 1 when the sample proportions agree and 0 otherwise.
pub fn two_proportion_test(inp: &ProportionTestInput) -> Result<f64> {
    inp.validate()?;
    let (n1, n2) = (inp.size1 as f64, inp.size2 as f64);
    let p1 = inp.count1 as f64 / n1;
    let p2 = inp.count2 as f64 / n2;
    let pooled = (inp.count1 + inp.count2) as f64 / (n1 + n2);
    let diff = p2 - p1;
    if pooled <= 0.0 || pooled >= 1.0 {
        return Ok(if inp.count1 * inp.size2 == inp.count2 * inp.size1 {
            1.0
        } else {
            0.0
        });
    }
    let inv = 1.0 / n1 + 1.0 / n2;
    let se = (pooled * (1.0 - pooled) * inv).sqrt();
    let numerator = if inp.continuity_corrected {
        diff.signum() * (diff.abs() - 0.5 * inv).max(0.0)
    } else {
        diff
    };
    let z = numerator / se;
    let p = match inp.alternative {
        Alternative::TwoSided => 2.0 * normal_cdf(-z.abs()),
        Alternative::Greater => normal_cdf(-z),
    };
    Ok(p.clamp(0.0, 1.0))
}

/// Outcome of the Holm-Bonferroni step-down procedure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolmResult {
    pub alpha: f64,
    /// Decision per hypothesis, in input order.
    pub rejected: Vec<bool>,
    /// Input indices sorted by ascending p-value (ties by index).
    pub order: Vec<usize>,
    /// `alpha / (K - r + 1)` for sorted rank `r = 1..=K`.
    pub adjusted_thresholds: Vec<f64>,
}

impl HolmResult {
    pub fn num_rejected(&self) -> usize {
        self.rejected.iter().filter(|&&r| r).count()
    }

    pub fn any_rejected(&self) -> bool {
        self.rejected.iter().any(|&r| r)
    }
}

/// Holm-Bonferroni: walk p-values in ascending order, rejecting while
/// `p_(r) <= alpha / (K - r + 1)`, and stop at the first failure.
pub fn holm_bonferroni(p_values: &[f64], alpha: f64) -> Result<HolmResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if let Some(bad) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Domain(format!("p-value {bad} outside [0, 1]")));
    }
    let k = p_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let adjusted_thresholds: Vec<f64> = (1..=k).map(|r| alpha / (k - r + 1) as f64).collect();
    let mut rejected = vec![false; k];
    for (&idx, &threshold) in order.iter().zip(&adjusted_thresholds) {
        if p_values[idx] > threshold {
            break;
        }
        rejected[idx] = true;
    }
    Ok(HolmResult {
        alpha,
        rejected,
        order,
        adjusted_thresholds,
    })
}

/// Cohen's h effect size, `asin(sqrt p2) - asin(sqrt p1)`.
pub fn cohens_h(p1: f64, p2: f64) -> f64 {
    p2.sqrt().asin() - p1.sqrt().asin()
}

/// Upper tail `P(X >= observed)` for `X ~ Hypergeometric(population, successes, draws)`.
///
/// Log pmf values relative to the mode come from the ratio
/// `pmf(k+1)/pmf(k) = (M-k)(n-k) / ((k+1)(N-M-n+k+1))`, walked outward from
/// the mode. The tail and the normalizing total are both log-sum-exp sums of
/// those terms, so no factorials are evaluated. Terms more than 50 log units
/// below what they are added to are dropped.
pub fn hypergeom_sf(population: u64, successes: u64, draws: u64, observed: u64) -> Result<f64> {
    const NEGLIGIBLE: f64 = 50.0;
    if successes > population || draws > population || observed > draws {
        return Err(Error::Domain(format!(
            "invalid hypergeometric arguments N={population} M={successes} n={draws} m={observed}"
        )));
    }
    let failures = population - successes;
    let k_max = draws.min(successes);
    let k_min = draws.saturating_sub(failures);
    if observed > k_max {
        return Ok(0.0);
    }
    if observed <= k_min {
        return Ok(1.0);
    }
    let up = |k: u64| -> f64 {
        ((successes - k) as f64).ln() + ((draws - k) as f64).ln()
            - ((k + 1) as f64).ln()
            - ((failures + k + 1 - draws) as f64).ln()
    };
    let mode = (((draws + 1) as u128 * (successes + 1) as u128 / (population + 2) as u128) as u64).clamp(k_min, k_max);

    // (k, log pmf(k) - log pmf(mode)) for the terms that matter
    let mut below = Vec::new();
    let (mut k, mut lp) = (mode, 0.0);
    while k > k_min {
        lp -= up(k - 1);
        k -= 1;
        if lp < -NEGLIGIBLE {
            break;
        }
        below.push((k, lp));
    }
    let mut above = vec![(mode, 0.0)];
    let (mut k, mut lp) = (mode, 0.0);
    let mut at_observed = if observed <= mode { 0.0 } else { f64::NEG_INFINITY };
    while k < k_max {
        lp += up(k);
        k += 1;
        if k == observed {
            at_observed = lp;
        }
        if k > observed && lp < at_observed - NEGLIGIBLE && lp < -NEGLIGIBLE {
            break;
        }
        above.push((k, lp));
    }
    let log_sum = |terms: &mut dyn Iterator<Item = f64>| -> f64 {
        let v: Vec<f64> = terms.collect();
        let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        top + v.iter().map(|&t| (t - top).exp()).sum::<f64>().ln()
    };
    let all = below.iter().chain(&above);
    let total = log_sum(&mut all.clone().map(|&(_, t)| t));
    let tail = log_sum(&mut all.filter(|&&(k, _)| k >= observed).map(|&(_, t)| t));
    Ok((tail - total).exp().min(1.0))
}
