//! Slice-based drift detection.
//!
//! Every baseline slice is mapped onto the deployment data (labels are never
//! read) and its relative size is compared with the baseline's by a
//! two-proportion test. The per-slice p-values are pooled with
//! Holm-Bonferroni, and drift is declared when any slice is rejected.
//!
//! * [`Goal::DistributionChange`] tests `pi2 != pi1` (any size change).
//! * [`Goal::McrDegradation`] tests `pi2 > pi1`: growth of weak slices
//!   suggests a rising error rate without needing deployment labels.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::slicing::{SliceSet, WeakSlice};
use crate::stats::{cohens_h, holm_bonferroni, two_proportion_test, Alternative, ProportionTestInput};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    DistributionChange,
    McrDegradation,
}

impl Goal {
    pub fn alternative(self) -> Alternative {
        match self {
            Goal::DistributionChange => Alternative::TwoSided,
            Goal::McrDegradation => Alternative::Greater,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Goal::DistributionChange => "distribution_change",
            Goal::McrDegradation => "mcr_degradation",
        }
    }
}

impl std::fmt::Display for Goal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Goal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "distribution_change" | "goal1" => Ok(Goal::DistributionChange),
            "mcr_degradation" | "goal2" => Ok(Goal::McrDegradation),
            other => Err(Error::InvalidConfig(format!("unknown goal `{other}`"))),
        }
    }
}

/// Test outcome for one slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceDrift {
    pub rule_id: String,
    pub n1: usize,
    #[serde(rename = "N1")]
    pub total1: usize,
    pub n2: usize,
    #[serde(rename = "N2")]
    pub total2: usize,
    pub pi_hat1: f64,
    pub pi_hat2: f64,
    pub p_value: f64,
    pub cohens_h: f64,
    pub holm_rejected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub schema_version: u32,
    pub goal: Goal,
    pub alpha: f64,
    pub continuity_corrected: bool,
    pub drift_detected: bool,
    pub num_rejected: usize,
    pub per_slice: Vec<SliceDrift>,
}

impl DriftReport {
    /// `DRIFT goal=<g> alpha=<a> rejected=<r>/<K>`
    pub fn summary_line(&self) -> String {
        format!(
            "DRIFT goal={} alpha={} rejected={}/{}",
            self.goal,
            self.alpha,
            self.num_rejected,
            self.per_slice.len()
        )
    }
}

/// Per-slice p-values for one deployment dataset, before pooling. Pooling
/// at several significance levels reuses the same tests.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceComparison {
    goal: Goal,
    continuity_corrected: bool,
    slices: Vec<SliceDrift>,
}

impl SliceComparison {
    pub fn compute(s: &SliceSet, d2: &Dataset, goal: Goal, continuity_corrected: bool) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::EmptySliceSet);
        }
        if d2.is_empty() {
            return Err(Error::DegenerateInput("deployment dataset is empty".into()));
        }
        let mut ordered: Vec<&WeakSlice> = s.slices.iter().collect();
        ordered.sort_by(|a, b| a.rule.id.cmp(&b.rule.id));
        let total1 = s.total;
        let total2 = d2.len();
        let slices = ordered
            .into_iter()
            .map(|ws| {
                let n2 = ws.rule.matching_rows(d2)?.count();
                let inp = ProportionTestInput::new(
                    (ws.n as u64, total1 as u64),
                    (n2 as u64, total2 as u64),
                    goal.alternative(),
                    continuity_corrected,
                )?;
                let pi_hat1 = ws.n as f64 / total1 as f64;
                let pi_hat2 = n2 as f64 / total2 as f64;
                Ok(SliceDrift {
                    rule_id: ws.rule.id.clone(),
                    n1: ws.n,
                    total1,
                    n2,
                    total2,
                    pi_hat1,
                    pi_hat2,
                    p_value: two_proportion_test(&inp)?,
                    cohens_h: cohens_h(pi_hat1, pi_hat2),
                    holm_rejected: false,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            goal,
            continuity_corrected,
            slices,
        })
    }

    pub fn p_values(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.p_value).collect()
    }

    /// Whether Holm-Bonferroni at `alpha` rejects any slice.
    pub fn detects(&self, alpha: f64) -> Result<bool> {
        Ok(holm_bonferroni(&self.p_values(), alpha)?.any_rejected())
    }

    pub fn report(&self, alpha: f64) -> Result<DriftReport> {
        let holm = holm_bonferroni(&self.p_values(), alpha)?;
        let per_slice: Vec<SliceDrift> = self
            .slices
            .iter()
            .zip(&holm.rejected)
            .map(|(s, &r)| SliceDrift {
                holm_rejected: r,
                ..s.clone()
            })
            .collect();
        let num_rejected = holm.num_rejected();
        Ok(DriftReport {
            schema_version: REPORT_SCHEMA_VERSION,
            goal: self.goal,
            alpha,
            continuity_corrected: self.continuity_corrected,
            drift_detected: num_rejected > 0,
            num_rejected,
            per_slice,
        })
    }
}

/// Map `s` onto `d2`, test every slice and pool with Holm-Bonferroni.
/// The deployment indicator column is never read.
pub fn detect_drift(
    s: &SliceSet,
    d2: &Dataset,
    goal: Goal,
    alpha: f64,
    continuity_corrected: bool,
) -> Result<DriftReport> {
    SliceComparison::compute(s, d2, goal, continuity_corrected)?.report(alpha)
}
