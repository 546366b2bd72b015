//! Drift-injection experiments.
//!
//! [`run_goal1`] measures how often permutation distortion is detected as a
//! distribution change; [`run_goal2`] measures how often error-rate
//! rebalancing is detected as degradation. Both start from stratified
//! 50-50 splits of one labeled dataset, find weak slices on each baseline
//! half and distort the deployment half.
//!
//! Every random draw uses a seed derived from `master_seed` with
//! [`derive_seed`] and a fixed tag layout:
//!
//! | draw                   | tags                                           |
//! |------------------------|------------------------------------------------|
//! | split `b`              | `[1, b]`                                       |
//! | selected split indices | `[2]`                                          |
//! | resample `rep` of `b`  | `[3, b, rep]`                                  |
//! | permutation            | `[4, b, rep, setting, bits(c), bits(r)]`       |
//! | rebalancing            | `[5, b, bits(k)]`                              |
//!
//! Units of work run in parallel; results are aggregated by counting, so the
//! output does not depend on scheduling.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, resample_rows, stratified_split, Dataset, FeatureSchema, SplitPair};
use crate::distortion::{permute_distort, rebalance_mcr, PermutationConfig, RebalanceConfig, Setting};
use crate::drift::{Goal, SliceComparison};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, f64_tag, rng_from_seed};
use crate::slicing::{find_weak_slices, SliceFinderConfig, SliceSet};

const TAG_SPLIT: u64 = 1;
const TAG_SELECT: u64 = 2;
const TAG_RESAMPLE: u64 = 3;
const TAG_PERMUTE: u64 = 4;
const TAG_REBALANCE: u64 = 5;

pub fn split_seed(master: u64, split: usize) -> u64 {
    derive_seed(master, &[TAG_SPLIT, split as u64])
}

pub fn selection_seed(master: u64) -> u64 {
    derive_seed(master, &[TAG_SELECT])
}

pub fn resample_seed(master: u64, split: usize, rep: usize) -> u64 {
    derive_seed(master, &[TAG_RESAMPLE, split as u64, rep as u64])
}

/// Shared by all settings, so E1, E2 and E3 at the same (c, r) pick the same
/// columns and start from the same row subset.
pub fn permutation_seed(master: u64, split: usize, rep: usize, c: f64, r: f64) -> u64 {
    derive_seed(master, &[TAG_PERMUTE, split as u64, rep as u64, f64_tag(c), f64_tag(r)])
}

pub fn rebalance_seed(master: u64, split: usize, k: f64) -> u64 {
    derive_seed(master, &[TAG_REBALANCE, split as u64, f64_tag(k)])
}

fn default_grid() -> Vec<f64> {
    vec![0.1, 0.25, 0.5, 0.75, 1.0]
}

fn default_alphas() -> Vec<f64> {
    vec![0.01, 0.05, 0.10]
}

fn default_multipliers() -> Vec<f64> {
    vec![1.0, 1.25, 1.5, 1.75, 2.0, 3.0, 5.0, 7.5, 10.0]
}

/// Where to load the experiment dataset from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSource {
    pub dataset: PathBuf,
    pub schema: PathBuf,
    /// Drop features with fewer minority values than this before slicing.
    pub drop_low_variance: Option<usize>,
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        if self.dataset.as_os_str().is_empty() || self.schema.as_os_str().is_empty() {
            return Err(Error::InvalidConfig("dataset and schema paths are required".into()));
        }
        let schema = FeatureSchema::from_json_file(&self.schema)?;
        let d = load_dataset(&self.dataset, &schema)?;
        match self.drop_low_variance {
            Some(min) => d.drop_low_variance(min),
            None => Ok(d),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Goal1ExperimentConfig {
    #[serde(flatten)]
    pub data: DataSource,
    pub num_splits_total: usize,
    pub num_splits_selected: usize,
    pub num_resamples: usize,
    pub grid_r: Vec<f64>,
    pub grid_c: Vec<f64>,
    pub settings: Vec<Setting>,
    pub alphas: Vec<f64>,
    pub master_seed: u64,
    pub continuity_corrected: bool,
    pub force_different: bool,
    /// Also report the resample-only comparison (no permutation).
    pub include_resample_only: bool,
    pub slice_finder: SliceFinderConfig,
}

impl Default for Goal1ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            num_splits_total: 50,
            num_splits_selected: 5,
            num_resamples: 5,
            grid_r: default_grid(),
            grid_c: default_grid(),
            settings: Setting::ALL.to_vec(),
            alphas: default_alphas(),
            master_seed: 0,
            continuity_corrected: true,
            force_different: true,
            include_resample_only: true,
            slice_finder: SliceFinderConfig::default(),
        }
    }
}

impl Goal1ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_splits_selected == 0 || self.num_splits_selected > self.num_splits_total {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= num_splits_selected ({}) <= num_splits_total ({})",
                self.num_splits_selected, self.num_splits_total
            )));
        }
        if self.num_resamples == 0 {
            return Err(Error::InvalidConfig("num_resamples must be positive".into()));
        }
        for &v in self.grid_r.iter().chain(&self.grid_c) {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidConfig(format!("grid value {v} outside (0, 1]")));
            }
        }
        validate_alphas(&self.alphas)
    }

    /// Indices of the splits the experiment uses, ascending.
    pub fn selected_splits(&self) -> Vec<usize> {
        let mut rng = rng_from_seed(selection_seed(self.master_seed));
        let mut picked = index::sample(&mut rng, self.num_splits_total, self.num_splits_selected).into_vec();
        picked.sort_unstable();
        picked
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Goal2ExperimentConfig {
    #[serde(flatten)]
    pub data: DataSource,
    pub num_splits: usize,
    pub multipliers: Vec<f64>,
    pub alphas: Vec<f64>,
    pub master_seed: u64,
    pub continuity_corrected: bool,
    pub slice_finder: SliceFinderConfig,
}

impl Default for Goal2ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            num_splits: 50,
            multipliers: default_multipliers(),
            alphas: default_alphas(),
            master_seed: 0,
            continuity_corrected: true,
            slice_finder: SliceFinderConfig::default(),
        }
    }
}

impl Goal2ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_splits == 0 {
            return Err(Error::InvalidConfig("num_splits must be positive".into()));
        }
        if let Some(k) = self.multipliers.iter().find(|&&k| !(k > 0.0 && k.is_finite())) {
            return Err(Error::InvalidConfig(format!("multiplier {k} must be positive")));
        }
        validate_alphas(&self.alphas)
    }
}

fn validate_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() {
        return Err(Error::InvalidConfig("at least one alpha is required".into()));
    }
    match alphas.iter().find(|&&a| !(a > 0.0 && a < 1.0)) {
        Some(a) => Err(Error::InvalidConfig(format!("alpha {a} outside (0, 1)"))),
        None => Ok(()),
    }
}

/// One cell of a detection grid. Goal 1 cells carry `setting`, `c` and `r`
/// (all absent, with `r = c = 0`, for the resample-only row); Goal 2 cells
/// carry `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub goal: Goal,
    pub setting: Option<Setting>,
    pub c: Option<f64>,
    pub r: Option<f64>,
    pub k: Option<f64>,
    pub alpha: f64,
    pub detected: usize,
    pub comparisons: usize,
    /// Distortions that could not be produced (excluded from `comparisons`).
    pub failed: usize,
    /// `detected / comparisons`, or 0 when there were no comparisons.
    pub fraction: f64,
}

impl GridCell {
    fn new(goal: Goal, setting: Option<Setting>, c: Option<f64>, r: Option<f64>, k: Option<f64>, alpha: f64) -> Self {
        Self {
            goal,
            setting,
            c,
            r,
            k,
            alpha,
            detected: 0,
            comparisons: 0,
            failed: 0,
            fraction: 0.0,
        }
    }

    fn finish(&mut self) {
        self.fraction = if self.comparisons == 0 {
            0.0
        } else {
            self.detected as f64 / self.comparisons as f64
        };
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedSplit {
    pub split_index: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionGrid {
    pub goal: Goal,
    pub master_seed: u64,
    pub cells: Vec<GridCell>,
    pub skipped_splits: Vec<SkippedSplit>,
}

impl DetectionGrid {
    /// Goal 1 cell lookup.
    pub fn cell(&self, setting: Option<Setting>, c: f64, r: f64, alpha: f64) -> Option<&GridCell> {
        self.cells.iter().find(|x| {
            x.setting == setting && x.c == Some(c) && x.r == Some(r) && x.alpha == alpha
        })
    }

    /// Goal 2 cell lookup.
    pub fn multiplier_cell(&self, k: f64, alpha: f64) -> Option<&GridCell> {
        self.cells.iter().find(|x| x.k == Some(k) && x.alpha == alpha)
    }
}

enum Prepared {
    Ready(SplitPair, SliceSet),
    Skipped(SkippedSplit),
}

fn prepare_split(d: &Dataset, master: u64, b: usize, finder: &SliceFinderConfig) -> Result<Prepared> {
    let mut pair = stratified_split(d, split_seed(master, b))?;
    pair.split_index = b;
    match find_weak_slices(&pair.baseline, finder, &format!("split-{b}")) {
        Ok(s) if s.is_empty() => Ok(Prepared::Skipped(SkippedSplit {
            split_index: b,
            reason: "no weak slices found".into(),
        })),
        Ok(s) => Ok(Prepared::Ready(pair, s)),
        Err(e @ (Error::NoErrors | Error::DegenerateInput(_))) => Ok(Prepared::Skipped(SkippedSplit {
            split_index: b,
            reason: e.to_string(),
        })),
        Err(e) => Err(e),
    }
}

fn prepare_all(d: &Dataset, master: u64, splits: &[usize], finder: &SliceFinderConfig) -> Result<(Vec<(SplitPair, SliceSet)>, Vec<SkippedSplit>)> {
    let prepared: Vec<Prepared> = splits
        .par_iter()
        .map(|&b| prepare_split(d, master, b, finder))
        .collect::<Result<_>>()?;
    let mut ready = Vec::new();
    let mut skipped = Vec::new();
    for p in prepared {
        match p {
            Prepared::Ready(pair, s) => ready.push((pair, s)),
            Prepared::Skipped(s) => skipped.push(s),
        }
    }
    Ok((ready, skipped))
}

/// Detection outcome of one comparison for every alpha, or `None` when the
/// distortion could not be produced.
type Outcome = Option<Vec<bool>>;

fn detect_all(s: &SliceSet, d2: &Dataset, goal: Goal, cc: bool, alphas: &[f64]) -> Result<Vec<bool>> {
    let cmp = SliceComparison::compute(s, d2, goal, cc)?;
    alphas.iter().map(|&a| cmp.detects(a)).collect()
}

fn tally(cells: &mut [GridCell], groups: usize, outcomes: impl IntoIterator<Item = Vec<Outcome>>) {
    let n_alpha = cells.len() / groups;
    for unit in outcomes {
        for (g, outcome) in unit.into_iter().enumerate() {
            for a in 0..n_alpha {
                let cell = &mut cells[g * n_alpha + a];
                match &outcome {
                    Some(hits) => {
                        cell.comparisons += 1;
                        cell.detected += usize::from(hits[a]);
                    }
                    None => cell.failed += 1,
                }
            }
        }
    }
    cells.iter_mut().for_each(GridCell::finish);
}

/// Load the configured dataset and run the permutation experiment.
pub fn run_goal1(cfg: &Goal1ExperimentConfig) -> Result<DetectionGrid> {
    run_goal1_on(&cfg.data.load()?, cfg)
}

/// Permutation experiment on an in-memory dataset (`cfg.data` is ignored).
///
/// For each selected split the slices of the baseline half are found once;
/// the deployment half is resampled `num_resamples` times, and each resample
/// is distorted at every (setting, c, r) and tested for a two-sided
/// distribution change at every alpha.
pub fn run_goal1_on(d: &Dataset, cfg: &Goal1ExperimentConfig) -> Result<DetectionGrid> {
    cfg.validate()?;
    let master = cfg.master_seed;
    let goal = Goal::DistributionChange;

    // cell groups, each expanded over alphas
    let mut groups: Vec<Option<(Setting, f64, f64)>> = Vec::new();
    if cfg.include_resample_only {
        groups.push(None);
    }
    for &setting in &cfg.settings {
        for &c in &cfg.grid_c {
            for &r in &cfg.grid_r {
                groups.push(Some((setting, c, r)));
            }
        }
    }
    let mut cells: Vec<GridCell> = groups
        .iter()
        .flat_map(|g| {
            cfg.alphas.iter().map(move |&alpha| match *g {
                None => GridCell::new(goal, None, Some(0.0), Some(0.0), None, alpha),
                Some((s, c, r)) => GridCell::new(goal, Some(s), Some(c), Some(r), None, alpha),
            })
        })
        .collect();

    let (ready, skipped) = prepare_all(d, master, &cfg.selected_splits(), &cfg.slice_finder)?;
    let units: Vec<(usize, usize)> = (0..ready.len())
        .flat_map(|i| (0..cfg.num_resamples).map(move |rep| (i, rep)))
        .collect();
    let outcomes: Vec<Vec<Outcome>> = units
        .par_iter()
        .map(|&(i, rep)| -> Result<Vec<Outcome>> {
            let (pair, slices) = &ready[i];
            let b = pair.split_index;
            let resampled = resample_rows(&pair.deployment, resample_seed(master, b, rep))?;
            groups
                .iter()
                .map(|g| -> Result<Outcome> {
                    let distorted = match *g {
                        None => resampled.clone(),
                        Some((setting, c, r)) => {
                            let mut pc = PermutationConfig::new(setting, r, c, permutation_seed(master, b, rep, c, r));
                            pc.force_different = cfg.force_different;
                            match permute_distort(&resampled, &pc) {
                                Ok(x) => x,
                                Err(Error::DistortionImpossible { .. }) => return Ok(None),
                                Err(e) => return Err(e),
                            }
                        }
                    };
                    Ok(Some(detect_all(slices, &distorted, goal, cfg.continuity_corrected, &cfg.alphas)?))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    tally(&mut cells, groups.len(), outcomes);

    Ok(DetectionGrid {
        goal,
        master_seed: master,
        cells,
        skipped_splits: skipped,
    })
}

/// Load the configured dataset and run the rebalancing experiment.
pub fn run_goal2(cfg: &Goal2ExperimentConfig) -> Result<DetectionGrid> {
    run_goal2_on(&cfg.data.load()?, cfg)
}

/// Rebalancing experiment on an in-memory dataset (`cfg.data` is ignored).
///
/// Each split's deployment half is rebalanced once per multiplier and tested
/// for one-sided slice growth at every alpha.
pub fn run_goal2_on(d: &Dataset, cfg: &Goal2ExperimentConfig) -> Result<DetectionGrid> {
    cfg.validate()?;
    let master = cfg.master_seed;
    let goal = Goal::McrDegradation;
    let mut cells: Vec<GridCell> = cfg
        .multipliers
        .iter()
        .flat_map(|&k| {
            cfg.alphas
                .iter()
                .map(move |&alpha| GridCell::new(goal, None, None, None, Some(k), alpha))
        })
        .collect();

    let splits: Vec<usize> = (0..cfg.num_splits).collect();
    let (ready, skipped) = prepare_all(d, master, &splits, &cfg.slice_finder)?;
    let outcomes: Vec<Vec<Outcome>> = ready
        .par_iter()
        .map(|(pair, slices)| -> Result<Vec<Outcome>> {
            let b = pair.split_index;
            cfg.multipliers
                .iter()
                .map(|&k| {
                    let rebalanced = rebalance_mcr(
                        &pair.deployment,
                        &RebalanceConfig {
                            k,
                            seed: rebalance_seed(master, b, k),
                        },
                    )?;
                    Ok(Some(detect_all(slices, &rebalanced, goal, cfg.continuity_corrected, &cfg.alphas)?))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    tally(&mut cells, cfg.multipliers.len(), outcomes);

    Ok(DetectionGrid {
        goal,
        master_seed: master,
        cells,
        skipped_splits: skipped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidConfig(format!("unknown report format `{other}`"))),
        }
    }
}

/// Column order of the CSV report.
pub const CSV_COLUMNS: [&str; 10] = [
    "goal", "setting", "c", "r", "k", "alpha", "detected", "comparisons", "failed", "fraction",
];

/// Write the long-format CSV table (one row per cell) to `w`.
pub fn write_cells_csv<W: Write>(cells: &[GridCell], w: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    if cells.is_empty() {
        writer.write_record(CSV_COLUMNS)?;
    }
    for cell in cells {
        writer.serialize(cell)?;
    }
    writer.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_cells_csv<R: Read>(r: R) -> Result<Vec<GridCell>> {
    let mut reader = csv::Reader::from_reader(r);
    let headers = reader.headers()?;
    if !headers.iter().eq(CSV_COLUMNS) {
        return Err(Error::Schema(format!("unexpected report header {headers:?}")));
    }
    reader.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Write `grid` to `path`: the full grid as JSON, or the cell table as CSV.
pub fn emit_report(grid: &DetectionGrid, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let w = std::io::BufWriter::new(file);
    match format {
        ReportFormat::Json => serde_json::to_writer_pretty(w, grid)?,
        ReportFormat::Csv => write_cells_csv(&grid.cells, w)?,
    }
    Ok(())
}
