//! Drift injection.
//!
//! Permutation distortion shuffles values inside selected feature columns
//! over selected row subsets, leaving univariate column distributions intact
//! while breaking associations between features. Three settings control how
//! the row subset and its permutation are shared across columns:
//!
//! | setting | keep_rows_constant | repermute_each_column | effect                                  |
//! |---------|--------------------|-----------------------|-----------------------------------------|
//! | E1      | true               | true                  | one row set, fresh permutation per column |
//! | E2      | true               | false                 | one row set, one shared permutation     |
//! | E3      | false              | (ignored)             | fresh row set and permutation per column |
//!
//! Rebalancing instead resamples the correct and misclassified strata so that
//! the misclassified:correct odds become `k` times the original.
//!
//! Row and column counts and the rebalancing target use `f64::round`, which
//! rounds half away from zero.

use log::warn;
use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Column, Dataset};
use crate::error::{Error, Result};
use crate::seed::{rng_from_seed, Rng};

/// Attempts per column before `force_different` gives up.
pub const FORCE_DIFFERENT_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setting {
    E1,
    E2,
    E3,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::E1, Setting::E2, Setting::E3];

    /// `(keep_rows_constant, repermute_each_column)`
    pub fn flags(self) -> (bool, bool) {
        match self {
            Setting::E1 => (true, true),
            Setting::E2 => (true, false),
            Setting::E3 => (false, true),
        }
    }

    pub fn from_flags(keep_rows_constant: bool, repermute_each_column: bool) -> Self {
        match (keep_rows_constant, repermute_each_column) {
            (true, true) => Setting::E1,
            (true, false) => Setting::E2,
            (false, _) => Setting::E3,
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "E1" => Ok(Setting::E1),
            "E2" => Ok(Setting::E2),
            "E3" => Ok(Setting::E3),
            other => Err(Error::InvalidConfig(format!("unknown permutation setting `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationConfig {
    /// Row proportion in (0, 1].
    pub r: f64,
    /// Column proportion in (0, 1].
    pub c: f64,
    pub keep_rows_constant: bool,
    pub repermute_each_column: bool,
    pub force_different: bool,
    pub seed: u64,
}

impl PermutationConfig {
    pub fn new(setting: Setting, r: f64, c: f64, seed: u64) -> Self {
        let (keep_rows_constant, repermute_each_column) = setting.flags();
        Self {
            r,
            c,
            keep_rows_constant,
            repermute_each_column,
            force_different: true,
            seed,
        }
    }

    pub fn setting(&self) -> Setting {
        Setting::from_flags(self.keep_rows_constant, self.repermute_each_column)
    }

    /// `R = max(1, round(r N))`
    pub fn row_count(&self, n_rows: usize) -> usize {
        proportion_count(self.r, n_rows)
    }

    /// `C = max(1, round(c |F|))`
    pub fn column_count(&self, n_features: usize) -> usize {
        proportion_count(self.c, n_features)
    }

    /// E2 over every column moves whole rows, which leaves the dataset's
    /// row multiset unchanged.
    pub fn is_pure_row_permutation(&self, n_features: usize) -> bool {
        self.setting() == Setting::E2 && self.column_count(n_features) == n_features
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("r", self.r), ("c", self.c)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

fn proportion_count(p: f64, total: usize) -> usize {
    ((p * total as f64).round() as usize).clamp(1, total.max(1))
}

/// One column's part of a permutation: `rows[j]` receives the value that was
/// at `sources[j]`. `sources` is a permutation of `rows`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnMove {
    pub column: usize,
    pub rows: Vec<usize>,
    pub sources: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PermutationPlan {
    pub moves: Vec<ColumnMove>,
}

impl PermutationPlan {
    /// Apply to a copy of `d`. The indicator and untouched columns are copied as is.
    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        let mut out = d.clone();
        for mv in &self.moves {
            let valid = mv.column < d.columns().len()
                && mv.rows.len() == mv.sources.len()
                && mv.rows.iter().chain(&mv.sources).all(|&i| i < d.len())
                && is_permutation_of(&mv.rows, &mv.sources);
            if !valid {
                return Err(Error::InvalidConfig(format!(
                    "invalid move on column {}",
                    mv.column
                )));
            }
            out.columns_mut()[mv.column].scatter(&mv.rows, &mv.sources);
        }
        Ok(out)
    }
}

fn is_permutation_of(a: &[usize], b: &[usize]) -> bool {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_unstable();
    y.sort_unstable();
    x == y
}

fn changes_column(col: &Column, rows: &[usize], sources: &[usize]) -> bool {
    rows.iter().zip(sources).any(|(&r, &s)| !col.same_value(r, s))
}

fn constant_on(col: &Column, rows: &[usize]) -> bool {
    rows.iter().all(|&r| col.same_value(r, rows[0]))
}

fn shuffled(rows: &[usize], rng: &mut Rng) -> Vec<usize> {
    let mut s = rows.to_vec();
    s.shuffle(rng);
    s
}

fn sample_rows(n_rows: usize, count: usize, rng: &mut Rng) -> Vec<usize> {
    let mut rows = index::sample(rng, n_rows, count).into_vec();
    rows.sort_unstable();
    rows
}

/// Draw a permutation of `rows` for one column, retrying under
/// `force_different` until some value moves.
fn column_permutation(d: &Dataset, column: usize, rows: &[usize], force: bool, rng: &mut Rng) -> Result<Vec<usize>> {
    let col = d.column(column);
    if !force {
        return Ok(shuffled(rows, rng));
    }
    let impossible = || Error::DistortionImpossible {
        column: d.schema().features[column].name.clone(),
        attempts: FORCE_DIFFERENT_ATTEMPTS,
    };
    if constant_on(col, rows) {
        return Err(impossible());
    }
    for _ in 0..FORCE_DIFFERENT_ATTEMPTS {
        let sources = shuffled(rows, rng);
        if changes_column(col, rows, &sources) {
            return Ok(sources);
        }
    }
    Err(impossible())
}

/// Build the permutation plan for `cfg` without applying it.
pub fn plan_permutation(d: &Dataset, cfg: &PermutationConfig) -> Result<PermutationPlan> {
    cfg.validate()?;
    let n_rows = d.len();
    let n_features = d.schema().num_features();
    if n_rows < 2 {
        return Err(Error::DegenerateInput(format!(
            "permutation needs at least 2 rows, got {n_rows}"
        )));
    }
    let mut rng = rng_from_seed(cfg.seed);
    let row_count = cfg.row_count(n_rows);
    let mut columns = index::sample(&mut rng, n_features, cfg.column_count(n_features)).into_vec();
    columns.sort_unstable();

    let mut moves = Vec::with_capacity(columns.len());
    match cfg.setting() {
        Setting::E1 => {
            let rows = sample_rows(n_rows, row_count, &mut rng);
            for &column in &columns {
                let sources = column_permutation(d, column, &rows, cfg.force_different, &mut rng)?;
                moves.push(ColumnMove { column, rows: rows.clone(), sources });
            }
        }
        Setting::E2 => {
            let rows = sample_rows(n_rows, row_count, &mut rng);
            let sources = shared_permutation(d, &columns, &rows, cfg.force_different, &mut rng)?;
            for &column in &columns {
                moves.push(ColumnMove {
                    column,
                    rows: rows.clone(),
                    sources: sources.clone(),
                });
            }
        }
        Setting::E3 => {
            for &column in &columns {
                let rows = sample_rows(n_rows, row_count, &mut rng);
                let sources = column_permutation(d, column, &rows, cfg.force_different, &mut rng)?;
                moves.push(ColumnMove { column, rows, sources });
            }
        }
    }
    Ok(PermutationPlan { moves })
}

fn shared_permutation(
    d: &Dataset,
    columns: &[usize],
    rows: &[usize],
    force: bool,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    if !force {
        return Ok(shuffled(rows, rng));
    }
    let impossible = |column: usize| Error::DistortionImpossible {
        column: d.schema().features[column].name.clone(),
        attempts: FORCE_DIFFERENT_ATTEMPTS,
    };
    if let Some(&column) = columns.iter().find(|&&c| constant_on(d.column(c), rows)) {
        return Err(impossible(column));
    }
    let mut stuck = columns[0];
    for _ in 0..FORCE_DIFFERENT_ATTEMPTS {
        let sources = shuffled(rows, rng);
        match columns
            .iter()
            .find(|&&c| !changes_column(d.column(c), rows, &sources))
        {
            None => return Ok(sources),
            Some(&c) => stuck = c,
        }
    }
    Err(impossible(stuck))
}

/// Permute values within randomly chosen rows and columns of `d`.
pub fn permute_distort(d: &Dataset, cfg: &PermutationConfig) -> Result<Dataset> {
    plan_permutation(d, cfg)?.apply(d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RebalanceConfig {
    /// Odds multiplier, `k > 0`.
    pub k: f64,
    pub seed: u64,
}

fn check_multiplier(k: f64) -> Result<()> {
    if k > 0.0 && k.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("multiplier must be positive and finite, got {k}")))
    }
}

/// Misclassified count whose odds are `k` times those of `m2` out of `n2`:
/// `max(min(round(k m2 n2 / (n2 - (1 - k) m2)), n2), 0)`.
pub fn target_misclassified(m2: usize, n2: usize, k: f64) -> Result<usize> {
    check_multiplier(k)?;
    if m2 >= n2 {
        return Err(Error::DegenerateStratum(format!(
            "odds are undefined with {m2} misclassified of {n2}"
        )));
    }
    if m2 == 0 && k > 1.0 {
        warn!("no misclassified rows to amplify; target stays 0");
    }
    let (m, n) = (m2 as f64, n2 as f64);
    let target = (k * m * n / (n - (1.0 - k) * m)).round();
    Ok(target.clamp(0.0, n) as usize)
}

/// Error rate `k phi / (1 + k phi)` with `phi = M / (N - M)`; the unrounded
/// counterpart of [`target_misclassified`].
pub fn multiplier_to_mcr(misclassified: usize, total: usize, k: f64) -> Result<f64> {
    check_multiplier(k)?;
    if misclassified == 0 || misclassified >= total {
        return Err(Error::DegenerateStratum(format!(
            "need 0 < M < N, got M={misclassified} N={total}"
        )));
    }
    let odds = misclassified as f64 / (total - misclassified) as f64;
    Ok(k * odds / (1.0 + k * odds))
}

/// Resample `d` to `N` rows with `target_misclassified(M, N, k)` drawn
/// uniformly with replacement from the misclassified stratum and the rest
/// from the correct one. Output rows are shuffled.
pub fn rebalance_mcr(d: &Dataset, cfg: &RebalanceConfig) -> Result<Dataset> {
    let theta = d.labels()?;
    let (wrong, right): (Vec<usize>, Vec<usize>) = (0..d.len()).partition(|&i| theta[i]);
    if wrong.is_empty() || right.is_empty() {
        return Err(Error::DegenerateStratum(format!(
            "need both strata non-empty, got {} misclassified of {}",
            wrong.len(),
            d.len()
        )));
    }
    let target = target_misclassified(wrong.len(), d.len(), cfg.k)?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut rows: Vec<usize> = Vec::with_capacity(d.len());
    rows.extend((0..target).map(|_| wrong[rng.random_range(0..wrong.len())]));
    rows.extend((target..d.len()).map(|_| right[rng.random_range(0..right.len())]));
    rows.shuffle(&mut rng);
    Ok(d.select_rows(&rows))
}
