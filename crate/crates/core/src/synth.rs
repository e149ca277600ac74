//! Synthetic clickstream generation from known household coefficients.
//!
//! Each household gets a choice set that always contains the reference
//! (first) alternative, a coefficient vector drawn from the configured
//! normals, and a sequence of visits sampled from the logit probabilities
//! with covariates built by the same rules as [`crate::features`].
//!
//! Portal visits are `spacing_seconds` apart and last well under the
//! repeat window, so the back-to-back rule never fires by accident. A visit
//! whose search is meant to be repeated carries a unique goal label and is
//! followed `repeat_lag_seconds` later by a short visit with the same goal
//! to a non-portal helper site.

use std::io::Write;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::Deserialize;

use crate::choice_set::{brand_variable, COVARIATE_NAMES};
use crate::error::{Error, Result};
use crate::features::{ln_pages, AlternativeCovariates, ChoiceOccasion, HouseholdOccasions};
use crate::ingest::VisitRecord;
use crate::logit::softmax;

const EPOCH_2000: i64 = 946_684_800;
const HELPER_SITES: usize = 97;

fn d_occasions() -> (usize, usize) {
    (300, 300)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub n_households: usize,
    pub occasions_min: usize,
    pub occasions_max: usize,
    /// Number of market alternatives when `alternatives` is empty.
    pub n_alternatives: usize,
    /// Site ids; the first is the reference.
    pub alternatives: Vec<String>,
    /// Smallest household choice set.
    pub min_choice_set: usize,
    pub loyalty_mean: f64,
    pub loyalty_sd: f64,
    pub repeated_mean: f64,
    pub repeated_sd: f64,
    pub ln_pages_mean: f64,
    pub ln_pages_sd: f64,
    pub missing_mean: f64,
    pub missing_sd: f64,
    pub brand_mean: f64,
    pub brand_sd: f64,
    /// Poisson mean of pages per visit.
    pub pages_mean: f64,
    pub repeat_probability: f64,
    pub spacing_seconds: i64,
    pub repeat_lag_seconds: i64,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        let (lo, hi) = d_occasions();
        Self {
            n_households: 500,
            occasions_min: lo,
            occasions_max: hi,
            n_alternatives: 5,
            alternatives: Vec::new(),
            min_choice_set: 2,
            loyalty_mean: 1.0,
            loyalty_sd: 0.5,
            repeated_mean: -0.4,
            repeated_sd: 0.3,
            ln_pages_mean: 0.1,
            ln_pages_sd: 0.2,
            missing_mean: -0.5,
            missing_sd: 0.3,
            brand_mean: -1.0,
            brand_sd: 0.5,
            pages_mean: 3.0,
            repeat_probability: 0.25,
            spacing_seconds: 600,
            repeat_lag_seconds: 120,
            seed: 20060601,
        }
    }
}

impl GeneratorSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn market(&self) -> Vec<String> {
        if self.alternatives.is_empty() {
            (1..=self.n_alternatives).map(|k| format!("portal{k:02}")).collect()
        } else {
            self.alternatives.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let j = self.market().len();
        if j < 2 {
            return bad(format!("need at least 2 alternatives, got {j}"));
        }
        if self.min_choice_set < 2 || self.min_choice_set > j {
            return bad(format!("min_choice_set must lie in [2, {j}]"));
        }
        if self.occasions_min == 0 || self.occasions_min > self.occasions_max {
            return bad("occasions range must satisfy 1 <= occasions_min <= occasions_max".into());
        }
        let sds = [self.loyalty_sd, self.repeated_sd, self.ln_pages_sd, self.missing_sd, self.brand_sd];
        if sds.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return bad("standard deviations must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.repeat_probability) {
            return bad("repeat_probability must lie in [0, 1]".into());
        }
        if !(self.pages_mean > 0.0) {
            return bad("pages_mean must be positive".into());
        }
        if self.repeat_lag_seconds <= 0 || self.spacing_seconds < 2 * self.repeat_lag_seconds + 300 {
            return bad("spacing_seconds must leave room for the repeat window".into());
        }
        let mut names = self.market();
        names.sort();
        names.dedup();
        if names.len() != j {
            return bad("alternatives must be distinct".into());
        }
        Ok(())
    }
}

/// True coefficients of one simulated household, in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueHousehold {
    pub household_id: String,
    pub choice_set: Vec<String>,
    pub beta: Vec<(String, f64)>,
}

impl TrueHousehold {
    pub fn get(&self, variable: &str) -> Option<f64> {
        self.beta.iter().find(|(v, _)| v == variable).map(|(_, b)| *b)
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    /// Panel-ordered: by household, then start time.
    pub visits: Vec<VisitRecord>,
    pub truth: Vec<TrueHousehold>,
    /// Covariates as used when sampling each choice.
    pub occasions: Vec<HouseholdOccasions<f64>>,
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("validated sd")
}

fn simulate_household(spec: &GeneratorSpec, market: &[String], index: usize) -> (Vec<VisitRecord>, TrueHousehold, HouseholdOccasions<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let household_id = format!("hh{index:05}");

    let j = market.len();
    let size = rng.random_range(spec.min_choice_set..=j);
    let mut members: Vec<usize> = sample(&mut rng, j - 1, size - 1).into_iter().map(|k| k + 1).collect();
    members.push(0);
    members.sort_unstable();
    let choice_set: Vec<String> = members.iter().map(|&k| market[k].clone()).collect();

    let mut beta = vec![
        normal(spec.loyalty_mean, spec.loyalty_sd).sample(&mut rng),
        normal(spec.repeated_mean, spec.repeated_sd).sample(&mut rng),
        normal(spec.ln_pages_mean, spec.ln_pages_sd).sample(&mut rng),
        normal(spec.missing_mean, spec.missing_sd).sample(&mut rng),
    ];
    let brand = normal(spec.brand_mean, spec.brand_sd);
    let mut names: Vec<String> = COVARIATE_NAMES.iter().map(|s| s.to_string()).collect();
    // alternative-specific constant, zero for the reference
    let mut constant = vec![0.0; choice_set.len()];
    for (k, alt) in choice_set.iter().enumerate().skip(1) {
        constant[k] = brand.sample(&mut rng);
        beta.push(constant[k]);
        names.push(brand_variable(alt));
    }

    let n_occasions = rng.random_range(spec.occasions_min..=spec.occasions_max);
    let pages_dist = Poisson::new(spec.pages_mean).expect("validated pages_mean");
    let helper = format!("helper{:02}", index % HELPER_SITES);
    let origin = EPOCH_2000 + index as i64 * 10;

    let mut last: Vec<Option<(bool, f64)>> = vec![None; choice_set.len()];
    let mut previous: Option<usize> = None;
    let mut visits = Vec::with_capacity(n_occasions * 2);
    let mut occasions = Vec::with_capacity(n_occasions);
    for t in 0..n_occasions {
        let covariates: Vec<AlternativeCovariates<f64>> = last
            .iter()
            .enumerate()
            .map(|(k, h)| match h {
                None => AlternativeCovariates::missing(),
                Some((rep, lnp)) => AlternativeCovariates {
                    loyalty: previous == Some(k),
                    last_search_repeated: *rep,
                    ln_last_pages: *lnp,
                    missing_data: false,
                },
            })
            .collect();
        let utilities: Vec<f64> = covariates
            .iter()
            .zip(&constant)
            .map(|(c, &a)| c.as_array().iter().zip(&beta[..4]).map(|(x, b)| x * b).sum::<f64>() + a)
            .collect();
        let probs = softmax(&utilities);
        let u: f64 = rng.random();
        let mut chosen = probs.len() - 1;
        let mut acc = 0.0;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                chosen = k;
                break;
            }
        }
        let pages = pages_dist.sample(&mut rng) as u64;
        let repeated = rng.random_bool(spec.repeat_probability);

        let start = origin + t as i64 * spec.spacing_seconds;
        let duration = (5 * pages as i64).min(spec.spacing_seconds / 4);
        let site = &choice_set[chosen];
        let mut visit = VisitRecord::new(&household_id, site, start, start + duration, pages);
        if repeated {
            let goal = format!("g{t}");
            visit = visit.with_goal(&goal);
            visits.push(visit);
            let s = start + spec.repeat_lag_seconds;
            visits.push(VisitRecord::new(&household_id, &helper, s, s + 10, 1).with_goal(&goal));
        } else {
            visits.push(visit);
        }

        occasions.push(ChoiceOccasion { index: t + 1, chosen, covariates });
        last[chosen] = Some((repeated, ln_pages(pages)));
        previous = Some(chosen);
    }

    let truth = TrueHousehold {
        household_id: household_id.clone(),
        choice_set: choice_set.clone(),
        beta: names.into_iter().zip(beta).collect(),
    };
    (visits, truth, HouseholdOccasions { household_id, choice_set, occasions })
}

/// Simulates every household; each uses its own ChaCha stream of the
/// master seed, so output does not depend on evaluation order.
pub fn simulate_panel(spec: &GeneratorSpec) -> Result<SimulatedData> {
    spec.validate()?;
    let market = spec.market();
    let mut data = SimulatedData { visits: Vec::new(), truth: Vec::new(), occasions: Vec::new() };
    for i in 0..spec.n_households {
        let (v, t, o) = simulate_household(spec, &market, i);
        data.visits.extend(v);
        data.truth.push(t);
        data.occasions.push(o);
    }
    Ok(data)
}

pub fn write_truth<W: Write>(sink: W, truth: &[TrueHousehold]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["household_id", "variable", "value"])?;
    for h in truth {
        for (v, b) in &h.beta {
            w.write_record([h.household_id.as_str(), v, &b.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<truth>", e))?;
    Ok(())
}
