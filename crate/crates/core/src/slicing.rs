//! Weak data slices.
//!
//! A [`SliceRule`] is a conjunction of per-feature constraints: a closed
//! interval on a numeric feature or a set of category codes on a categorical
//! one. Mapping a rule onto a dataset counts the rows that satisfy every
//! constraint (`n`) and, when labels are used, how many of those are
//! misclassified (`m`). Missing values never satisfy a constraint.
//!
//! [`find_weak_slices`] is a deterministic slice finder over 1- and 2-way
//! rules:
//!
//! * numeric features are cut into decile bins; every run of at most
//!   `max_run` adjacent bins becomes an interval candidate,
//! * categorical features give one candidate per observed value plus the
//!   union of all values whose own error rate exceeds the overall rate,
//! * 1-way candidates that pass the filters below are crossed pairwise
//!   across features to form 2-way candidates.
//!
//! A candidate is kept when its support is at least `min_support`, its error
//! rate exceeds the dataset's (`m/n > M/N`) and the hypergeometric upper tail
//! `P(X >= m)` is below `filter_alpha`. Rules that match exactly the same rows
//! are deduplicated, keeping the lexicographically smallest id, and the
//! result is sorted by id.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Column, Dataset, FeatureKind};
use crate::error::{Error, Result};
use crate::stats::hypergeom_sf;

/// Fixed-size set of row indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RowMask {
    words: Vec<u64>,
    len: usize,
}

impl RowMask {
    pub fn empty(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn from_fn(len: usize, mut f: impl FnMut(usize) -> bool) -> Self {
        let mut mask = Self::empty(len);
        for i in 0..len {
            if f(i) {
                mask.insert(i);
            }
        }
        mask
    }

    pub fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn and(&self, other: &RowMask) -> RowMask {
        RowMask {
            words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect(),
            len: self.len,
        }
    }

    pub fn and_count(&self, other: &RowMask) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn union_with(&mut self, other: &RowMask) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|&i| self.contains(i))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    /// Closed interval `[lo, hi]` on a numeric feature.
    Interval(f64, f64),
    /// Category codes on a categorical feature.
    Values(BTreeSet<u32>),
}

impl Condition {
    fn kind(&self) -> FeatureKind {
        match self {
            Condition::Interval(..) => FeatureKind::Numeric,
            Condition::Values(_) => FeatureKind::Categorical,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub feature: String,
    #[serde(flatten)]
    pub condition: Condition,
}

impl Constraint {
    pub fn interval(feature: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            feature: feature.into(),
            condition: Condition::Interval(lo, hi),
        }
    }

    pub fn values(feature: impl Into<String>, codes: impl IntoIterator<Item = u32>) -> Self {
        Self {
            feature: feature.into(),
            condition: Condition::Values(codes.into_iter().collect()),
        }
    }

    fn validate(&self) -> Result<()> {
        match &self.condition {
            Condition::Interval(lo, hi) if !(lo <= hi) => Err(Error::Domain(format!(
                "interval [{lo}, {hi}] on `{}` is empty",
                self.feature
            ))),
            Condition::Values(v) if v.is_empty() => Err(Error::Domain(format!(
                "empty value set on `{}`",
                self.feature
            ))),
            _ => Ok(()),
        }
    }

    fn matches(&self, column: &Column, row: usize) -> bool {
        match (&self.condition, column) {
            (Condition::Interval(lo, hi), Column::Numeric(v)) => {
                v[row].is_some_and(|x| *lo <= x && x <= *hi)
            }
            (Condition::Values(set), Column::Categorical(v)) => {
                v[row].is_some_and(|c| set.contains(&c))
            }
            _ => false,
        }
    }

    fn write_id(&self, out: &mut String) {
        out.push_str(&self.feature);
        match &self.condition {
            Condition::Interval(lo, hi) => {
                let _ = write!(out, ":[{},{}]", fmt_num(*lo), fmt_num(*hi));
            }
            Condition::Values(set) => {
                let codes: Vec<String> = set.iter().map(u32::to_string).collect();
                let _ = write!(out, ":{{{}}}", codes.join(","));
            }
        }
    }
}

fn fmt_num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Conjunction of constraints on distinct features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceRule {
    pub id: String,
    pub constraints: Vec<Constraint>,
}

impl SliceRule {
    /// Build a rule; constraints are ordered by feature name and the id is
    /// derived from them, e.g. `age:[5,18]&region:{0,3}`.
    pub fn new(mut constraints: Vec<Constraint>) -> Result<Self> {
        constraints.sort_by(|a, b| a.feature.cmp(&b.feature));
        let rule = Self {
            id: canonical_id(&constraints),
            constraints,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if self.constraints.is_empty() {
            return Err(Error::Domain("rule has no constraints".into()));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            c.validate()?;
            if self.constraints[..i].iter().any(|o| o.feature == c.feature) {
                return Err(Error::Domain(format!(
                    "feature `{}` constrained twice in rule `{}`",
                    c.feature, self.id
                )));
            }
        }
        Ok(())
    }

    /// Number of constrained features.
    pub fn order(&self) -> usize {
        self.constraints.len()
    }

    /// Rows of `d` satisfying every constraint. Never reads the indicator.
    pub fn matching_rows(&self, d: &Dataset) -> Result<RowMask> {
        let resolved = self.resolve(d)?;
        Ok(RowMask::from_fn(d.len(), |row| {
            resolved.iter().all(|(c, col)| c.matches(col, row))
        }))
    }

    fn resolve<'a>(&'a self, d: &'a Dataset) -> Result<Vec<(&'a Constraint, &'a Column)>> {
        self.constraints
            .iter()
            .map(|c| {
                let (idx, kind) = d.schema().feature(&c.feature).ok_or_else(|| {
                    Error::Schema(format!("rule `{}` uses unknown feature `{}`", self.id, c.feature))
                })?;
                if kind != c.condition.kind() {
                    return Err(Error::Schema(format!(
                        "rule `{}` treats {} feature `{}` as {}",
                        self.id,
                        kind,
                        c.feature,
                        c.condition.kind()
                    )));
                }
                Ok((c, d.column(idx)))
            })
            .collect()
    }
}

fn canonical_id(constraints: &[Constraint]) -> String {
    let mut id = String::new();
    for (i, c) in constraints.iter().enumerate() {
        if i > 0 {
            id.push('&');
        }
        c.write_id(&mut id);
    }
    id
}

/// A rule's footprint on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappedSlice {
    pub rule_id: String,
    /// Matching rows.
    pub n: usize,
    /// Matching misclassified rows, when labels were used.
    pub m: Option<usize>,
    /// Dataset size `N`.
    pub total: usize,
    /// Relative slice size `n / N` (0 for an empty dataset).
    pub pi_hat: f64,
}

impl MappedSlice {
    pub fn mcr(&self) -> Option<f64> {
        self.m.filter(|_| self.n > 0).map(|m| m as f64 / self.n as f64)
    }
}

/// Map `rule` onto `d`. With `use_theta = false` the indicator is never read.
pub fn map_slice(rule: &SliceRule, d: &Dataset, use_theta: bool) -> Result<MappedSlice> {
    let rows = rule.matching_rows(d)?;
    let n = rows.count();
    let m = if use_theta {
        let theta = d.labels()?;
        Some(rows.iter().filter(|&i| theta[i]).count())
    } else {
        None
    };
    let total = d.len();
    Ok(MappedSlice {
        rule_id: rule.id.clone(),
        n,
        m,
        total,
        pi_hat: if total == 0 { 0.0 } else { n as f64 / total as f64 },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SliceFinderConfig {
    /// Minimum slice support; `None` means `max(20, ceil(0.005 N))`.
    pub min_support: Option<usize>,
    /// Hypergeometric upper-tail threshold.
    pub filter_alpha: f64,
    /// Largest number of features per rule (1 or 2).
    pub max_order: usize,
    /// Quantile bins per numeric feature.
    pub numeric_bins: usize,
    /// Longest run of adjacent bins merged into one interval.
    pub max_bin_run: usize,
}

impl Default for SliceFinderConfig {
    fn default() -> Self {
        Self {
            min_support: None,
            filter_alpha: 0.05,
            max_order: 2,
            numeric_bins: 10,
            max_bin_run: 4,
        }
    }
}

impl SliceFinderConfig {
    pub fn effective_min_support(&self, n_rows: usize) -> usize {
        self.min_support
            .unwrap_or_else(|| 20.max((0.005 * n_rows as f64).ceil() as usize))
    }

    fn validate(&self) -> Result<()> {
        if !(self.filter_alpha > 0.0 && self.filter_alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "filter_alpha must lie in (0, 1], got {}",
                self.filter_alpha
            )));
        }
        if !(1..=2).contains(&self.max_order) {
            return Err(Error::InvalidConfig(format!(
                "max_order must be 1 or 2, got {}",
                self.max_order
            )));
        }
        if self.numeric_bins == 0 || self.max_bin_run == 0 {
            return Err(Error::InvalidConfig("numeric_bins and max_bin_run must be positive".into()));
        }
        Ok(())
    }
}

/// A weak slice with its footprint on the dataset it was found on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakSlice {
    #[serde(flatten)]
    pub rule: SliceRule,
    pub n: usize,
    pub m: usize,
}

/// Weak slices found on a labeled baseline, with the baseline's `N` and `M`.
///
/// This is the artifact deployment-time detection needs: it carries the
/// baseline slice sizes, so the baseline data itself is not required.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceSet {
    #[serde(default = "format_version")]
    pub version: u32,
    pub source: String,
    #[serde(rename = "N")]
    pub total: usize,
    #[serde(rename = "M")]
    pub misclassified: usize,
    #[serde(rename = "rules")]
    pub slices: Vec<WeakSlice>,
}

fn format_version() -> u32 {
    1
}

impl SliceSet {
    /// Number of rules `K`.
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn rules(&self) -> impl Iterator<Item = &SliceRule> {
        self.slices.iter().map(|s| &s.rule)
    }

    pub fn baseline_stats(&self) -> Vec<MappedSlice> {
        self.slices
            .iter()
            .map(|s| MappedSlice {
                rule_id: s.rule.id.clone(),
                n: s.n,
                m: Some(s.m),
                total: self.total,
                pi_hat: if self.total == 0 { 0.0 } else { s.n as f64 / self.total as f64 },
            })
            .collect()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let set: Self = serde_json::from_reader(std::io::BufReader::new(file))?;
        for s in &set.slices {
            s.rule.validate()?;
        }
        Ok(set)
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }
}

struct Candidate {
    constraint: Constraint,
    feature: usize,
    rows: RowMask,
}

fn numeric_candidates(
    name: &str,
    feature: usize,
    values: &[Option<f64>],
    cfg: &SliceFinderConfig,
) -> Vec<Candidate> {
    let mut sorted: Vec<f64> = values.iter().flatten().copied().collect();
    if sorted.is_empty() {
        return Vec::new();
    }
    sorted.sort_by(f64::total_cmp);
    let len = sorted.len();
    let bins = cfg.numeric_bins;
    let mut edges: Vec<f64> = (1..bins)
        .map(|q| sorted[(q * len).div_ceil(bins).max(1) - 1])
        .collect();
    edges.dedup();
    let bin_of = |x: f64| edges.partition_point(|&e| e < x);

    let n_bins = edges.len() + 1;
    let mut lo = vec![f64::INFINITY; n_bins];
    let mut hi = vec![f64::NEG_INFINITY; n_bins];
    for &x in &sorted {
        let b = bin_of(x);
        lo[b] = lo[b].min(x);
        hi[b] = hi[b].max(x);
    }
    let occupied: Vec<usize> = (0..n_bins).filter(|&b| lo[b] <= hi[b]).collect();

    let mut out = Vec::new();
    for start in 0..occupied.len() {
        for run in 1..=cfg.max_bin_run {
            let end = start + run - 1;
            if end >= occupied.len() {
                break;
            }
            let (a, b) = (lo[occupied[start]], hi[occupied[end]]);
            out.push(Candidate {
                constraint: Constraint::interval(name, a, b),
                feature,
                rows: RowMask::from_fn(values.len(), |i| values[i].is_some_and(|x| a <= x && x <= b)),
            });
        }
    }
    out
}

fn categorical_candidates(
    name: &str,
    feature: usize,
    values: &[Option<u32>],
    theta: &[bool],
    overall_rate: f64,
) -> Vec<Candidate> {
    let mut counts: std::collections::BTreeMap<u32, (usize, usize)> = Default::default();
    for (v, &t) in values.iter().zip(theta) {
        if let Some(code) = v {
            let e = counts.entry(*code).or_default();
            e.0 += 1;
            e.1 += usize::from(t);
        }
    }
    let make = |codes: BTreeSet<u32>| Candidate {
        rows: RowMask::from_fn(values.len(), |i| values[i].is_some_and(|c| codes.contains(&c))),
        constraint: Constraint::values(name, codes),
        feature,
    };
    let mut out: Vec<Candidate> = counts.keys().map(|&c| make(BTreeSet::from([c]))).collect();
    let weak: BTreeSet<u32> = counts
        .iter()
        .filter(|(_, &(n, m))| m as f64 / n as f64 > overall_rate)
        .map(|(&c, _)| c)
        .collect();
    if weak.len() >= 2 {
        out.push(make(weak));
    }
    out
}

/// Find weak slices on a labeled dataset. See the module docs for the search.
pub fn find_weak_slices(d: &Dataset, cfg: &SliceFinderConfig, source: &str) -> Result<SliceSet> {
    cfg.validate()?;
    let theta = d.labels()?;
    let total = d.len();
    let misclassified = theta.iter().filter(|&&t| t).count();
    if misclassified == 0 {
        return Err(Error::NoErrors);
    }
    let min_support = cfg.effective_min_support(total);
    if total < min_support {
        return Err(Error::DegenerateInput(format!(
            "dataset has {total} rows, fewer than min_support {min_support}"
        )));
    }
    let overall_rate = misclassified as f64 / total as f64;
    let wrong = RowMask::from_fn(total, |i| theta[i]);

    let schema = d.schema();
    let mut one_way: Vec<Candidate> = Vec::new();
    for (j, spec) in schema.features.iter().enumerate() {
        match d.column(j) {
            Column::Numeric(v) => one_way.extend(numeric_candidates(&spec.name, j, v, cfg)),
            Column::Categorical(v) => {
                one_way.extend(categorical_candidates(&spec.name, j, v, theta, overall_rate))
            }
        }
    }
    let keep = |n: usize, m: usize| -> Result<bool> {
        if n < min_support || m * total <= misclassified * n {
            return Ok(false);
        }
        Ok(hypergeom_sf(total as u64, misclassified as u64, n as u64, m as u64)? < cfg.filter_alpha)
    };

    let mut found: Vec<(SliceRule, RowMask, usize, usize)> = Vec::new();
    let mut survivors: Vec<Candidate> = Vec::new();
    for c in one_way {
        let n = c.rows.count();
        let m = c.rows.and_count(&wrong);
        if keep(n, m)? {
            found.push((SliceRule::new(vec![c.constraint.clone()])?, c.rows.clone(), n, m));
            survivors.push(c);
        }
    }
    let one_way = survivors;

    if cfg.max_order >= 2 {
        let pairs: Vec<(usize, usize)> = (0..one_way.len())
            .flat_map(|a| ((a + 1)..one_way.len()).map(move |b| (a, b)))
            .filter(|&(a, b)| one_way[a].feature != one_way[b].feature)
            .collect();
        let two_way: Vec<(SliceRule, RowMask, usize, usize)> = pairs
            .par_iter()
            .map(|&(a, b)| -> Result<Option<_>> {
                let (ca, cb) = (&one_way[a], &one_way[b]);
                let n = ca.rows.and_count(&cb.rows);
                if n < min_support {
                    return Ok(None);
                }
                let rows = ca.rows.and(&cb.rows);
                let m = rows.and_count(&wrong);
                if !keep(n, m)? {
                    return Ok(None);
                }
                let rule = SliceRule::new(vec![ca.constraint.clone(), cb.constraint.clone()])?;
                Ok(Some((rule, rows, n, m)))
            })
            .filter_map(Result::transpose)
            .collect::<Result<_>>()?;
        found.extend(two_way);
    }

    found.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    let mut seen: HashMap<RowMask, ()> = HashMap::new();
    let mut slices = Vec::new();
    for (rule, rows, n, m) in found {
        if seen.insert(rows, ()).is_none() {
            slices.push(WeakSlice { rule, n, m });
        }
    }
    Ok(SliceSet {
        version: format_version(),
        source: source.to_string(),
        total,
        misclassified,
        slices,
    })
}

/// Summary statistics of a slice set mapped onto a labeled dataset.
/// All fields are percentages in `[0, 100]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceSummary {
    pub num_slices: usize,
    pub pct_1feat: f64,
    pub pct_2feat: f64,
    /// Misclassified rows covered by at least one slice.
    pub pct_error_coverage: f64,
    pub pct_features_in_any_slice: f64,
    pub pct_features_in_1feat_slice: f64,
    pub pct_features_in_2feat_slice: f64,
}

pub fn slice_summary(s: &SliceSet, d: &Dataset) -> Result<SliceSummary> {
    let theta = d.labels()?;
    let misclassified = theta.iter().filter(|&&t| t).count();
    if misclassified == 0 {
        return Err(Error::NoErrors);
    }
    let mut covered = RowMask::empty(d.len());
    for rule in s.rules() {
        covered.union_with(&rule.matching_rows(d)?);
    }
    let wrong = RowMask::from_fn(d.len(), |i| theta[i]);
    let coverage = covered.and_count(&wrong) as f64 / misclassified as f64;

    let k = s.len();
    let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
    let of_order = |o: usize| s.rules().filter(|r| r.order() == o).count();
    let n_features = d.schema().num_features();
    let features_used = |pred: &dyn Fn(&SliceRule) -> bool| {
        let names: BTreeSet<&str> = s
            .rules()
            .filter(|r| pred(r))
            .flat_map(|r| r.constraints.iter().map(|c| c.feature.as_str()))
            .collect();
        pct(names.len(), n_features)
    };
    Ok(SliceSummary {
        num_slices: k,
        pct_1feat: pct(of_order(1), k),
        pct_2feat: pct(of_order(2), k),
        pct_error_coverage: 100.0 * coverage,
        pct_features_in_any_slice: features_used(&|_| true),
        pct_features_in_1feat_slice: features_used(&|r| r.order() == 1),
        pct_features_in_2feat_slice: features_used(&|r| r.order() == 2),
    })
}
