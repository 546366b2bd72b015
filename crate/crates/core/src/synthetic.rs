//! Synthetic labeled tables with planted weak regions.
//!
//! The generator mimics a census-style table: correlated numeric features
//! (age, income, hours, tenure), two categorical features and one pure-noise
//! column. Misclassification probability is raised inside three planted
//! regions:
//!
//! * young (`age < 28`) rows in regions `north` or `east`,
//! * high income with short working hours,
//! * the `primary` education level.
//!
//! With the default rates the overall error rate is about 0.15.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::data::{Column, Dataset, FeatureSchema, FeatureSpec};
use crate::error::Result;
use crate::seed::rng_from_seed;

pub const REGIONS: [&str; 5] = ["north", "east", "south", "west", "central"];
pub const EDUCATION: [&str; 4] = ["primary", "secondary", "bachelor", "master"];

pub fn schema() -> FeatureSchema {
    FeatureSchema {
        features: vec![
            FeatureSpec::numeric("age"),
            FeatureSpec::categorical("education"),
            FeatureSpec::numeric("income"),
            FeatureSpec::numeric("hours"),
            FeatureSpec::categorical("region"),
            FeatureSpec::numeric("tenure"),
            FeatureSpec::numeric("noise"),
        ],
        indicator: "misclassified".into(),
        categories: [
            ("education".to_string(), EDUCATION.map(String::from).to_vec()),
            ("region".to_string(), REGIONS.map(String::from).to_vec()),
        ]
        .into_iter()
        .collect(),
    }
}

/// Generate `rows` rows deterministically from `seed`.
pub fn planted_weakness(rows: usize, seed: u64) -> Result<Dataset> {
    let mut rng = rng_from_seed(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");

    let mut age = Vec::with_capacity(rows);
    let mut education = Vec::with_capacity(rows);
    let mut income = Vec::with_capacity(rows);
    let mut hours = Vec::with_capacity(rows);
    let mut region = Vec::with_capacity(rows);
    let mut tenure = Vec::with_capacity(rows);
    let mut noise = Vec::with_capacity(rows);
    let mut theta = Vec::with_capacity(rows);

    for _ in 0..rows {
        let a = f64::from(rng.random_range(18..=80u32));
        // older rows skew toward higher education
        let edu_score = (a - 18.0) / 62.0 + 1.2 * std_normal.sample(&mut rng);
        let e: u32 = match edu_score {
            s if s < -0.4 => 0,
            s if s < 0.6 => 1,
            s if s < 1.4 => 2,
            _ => 3,
        };
        let inc = (10.0 + 0.012 * (a - 18.0) + 0.25 * f64::from(e) + 0.35 * std_normal.sample(&mut rng)).exp();
        let inc = (inc / 100.0).round() * 100.0;
        let h = (38.0 + 4.0 * ((inc / 40_000.0).ln()) + 7.0 * std_normal.sample(&mut rng))
            .clamp(5.0, 90.0)
            .round();
        let r: u32 = rng.random_range(0..REGIONS.len() as u32);
        let t = ((a - 18.0) * rng.random::<f64>()).round();
        let z = std_normal.sample(&mut rng);

        let mut p: f64 = 0.035;
        if a < 28.0 && r <= 1 {
            p += 0.45;
        }
        if inc > 45_000.0 && h < 36.0 {
            p += 0.40;
        }
        if e == 0 {
            p += 0.15;
        }
        theta.push(rng.random_bool(p.min(0.95)));

        age.push(Some(a));
        education.push(Some(e));
        income.push(Some(inc));
        hours.push(Some(h));
        region.push(Some(r));
        tenure.push(Some(t));
        noise.push(Some((z * 1000.0).round() / 1000.0));
    }

    Dataset::new(
        schema(),
        vec![
            Column::Numeric(age),
            Column::Categorical(education),
            Column::Numeric(income),
            Column::Numeric(hours),
            Column::Categorical(region),
            Column::Numeric(tenure),
            Column::Numeric(noise),
        ],
        Some(theta),
    )
}
