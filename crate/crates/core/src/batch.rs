//! Estimation over every household, in parallel, with deterministic output.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rayon::prelude::*;

use crate::choice_set::{assemble_design, choice_set_from_sites, ChoiceSetOutcome, MarketDefinition};
use crate::error::{Error, Result};
use crate::features::HouseholdOccasions;
use crate::logit::{fit_household, FitConfig, FitFlag, HouseholdFit, Significance};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SkipReason {
    /// Fewer than two market alternatives visited.
    NonEstimable,
    TooFewOccasions { occasions: usize, needed: usize },
    Failed(String),
}

impl SkipReason {
    pub fn tag(&self) -> &'static str {
        match self {
            SkipReason::NonEstimable => "non_estimable",
            SkipReason::TooFewOccasions { .. } => "too_few_occasions",
            SkipReason::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchResult<T> {
    pub fits: BTreeMap<String, HouseholdFit<T>>,
    pub skipped: BTreeMap<String, SkipReason>,
    pub elapsed_seconds: f64,
    pub households_per_second: f64,
}

enum Outcome<T> {
    Fit(HouseholdFit<T>),
    Skip(SkipReason),
}

fn estimate_one<T: Scalar>(h: &HouseholdOccasions<T>, market: &MarketDefinition, config: &FitConfig<T>) -> Outcome<T> {
    match choice_set_from_sites(h.choice_set.iter().map(String::as_str), market) {
        ChoiceSetOutcome::Estimable(_) => {}
        _ => return Outcome::Skip(SkipReason::NonEstimable),
    }
    let design = match assemble_design(h, market) {
        Ok(d) => d,
        Err(e) => return Outcome::Skip(SkipReason::Failed(e.to_string())),
    };
    let usable = design.occasions.iter().filter(|o| o.n_alternatives >= 2).count();
    let needed = design.n_params() + config.min_occasions_margin;
    if usable < needed {
        return Outcome::Skip(SkipReason::TooFewOccasions { occasions: usable, needed });
    }
    Outcome::Fit(fit_household(&design, config))
}

/// Fits every household on a pool of `workers` threads. Results are keyed
/// by household id, so the schedule cannot affect them.
pub fn run_batch<T: Scalar>(
    households: &[HouseholdOccasions<T>],
    market: &MarketDefinition,
    config: &FitConfig<T>,
    workers: usize,
) -> Result<BatchResult<T>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    let started = Instant::now();
    let outcomes: Vec<Outcome<T>> = pool.install(|| {
        households
            .par_iter()
            .map(|h| {
                catch_unwind(AssertUnwindSafe(|| estimate_one(h, market, config))).unwrap_or_else(|panic| {
                    let msg = panic
                        .downcast_ref::<&str>()
                        .map(|s| s.to_string())
                        .or_else(|| panic.downcast_ref::<String>().cloned())
                        .unwrap_or_else(|| "panic".into());
                    Outcome::Skip(SkipReason::Failed(msg))
                })
            })
            .collect()
    });
    let elapsed = started.elapsed().as_secs_f64();

    let mut result = BatchResult {
        fits: BTreeMap::new(),
        skipped: BTreeMap::new(),
        elapsed_seconds: elapsed,
        households_per_second: if elapsed > 0.0 { households.len() as f64 / elapsed } else { f64::INFINITY },
    };
    for (h, outcome) in households.iter().zip(outcomes) {
        match outcome {
            Outcome::Fit(fit) => {
                result.fits.insert(h.household_id.clone(), fit);
            }
            Outcome::Skip(reason) => {
                log::info!("household {} skipped: {}", h.household_id, reason.tag());
                result.skipped.insert(h.household_id.clone(), reason);
            }
        }
    }
    Ok(result)
}

/// One coefficient as persisted in `fits.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredCoefficient {
    pub variable: String,
    pub coefficient: f64,
    pub se: Option<f64>,
    pub significance: Significance,
    pub divergent: bool,
}

/// A household's row group in `fits.csv`; `skipped` is set for households
/// without estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub household_id: String,
    pub coefficients: Vec<StoredCoefficient>,
    pub flags: BTreeSet<FitFlag>,
    pub loglik: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub skipped: Option<String>,
}

impl FitRecord {
    pub fn from_fit<T: Scalar>(fit: &HouseholdFit<T>, bound: T) -> Self {
        let coefficients = fit
            .layout
            .iter()
            .enumerate()
            .filter(|_| fit.is_estimated())
            .map(|(k, name)| StoredCoefficient {
                variable: name.clone(),
                coefficient: fit.beta[k].as_f64(),
                se: fit.se.as_ref().map(|s| s[k].as_f64()),
                significance: fit.significance(k),
                divergent: fit.is_divergent(k, bound),
            })
            .collect();
        Self {
            household_id: fit.household_id.clone(),
            coefficients,
            flags: fit.flags.clone(),
            loglik: fit.is_estimated().then(|| fit.loglik.as_f64()),
            iterations: fit.iterations,
            converged: fit.converged,
            skipped: None,
        }
    }

    pub fn skipped(household_id: &str, reason: &SkipReason) -> Self {
        Self {
            household_id: household_id.to_owned(),
            coefficients: Vec::new(),
            flags: BTreeSet::new(),
            loglik: None,
            iterations: 0,
            converged: false,
            skipped: Some(reason.tag().to_owned()),
        }
    }

    pub fn coefficient(&self, variable: &str) -> Option<&StoredCoefficient> {
        self.coefficients.iter().find(|c| c.variable == variable)
    }
}

/// All households of a batch in household-id order.
pub fn batch_records<T: Scalar>(result: &BatchResult<T>, bound: T) -> Vec<FitRecord> {
    let mut out: BTreeMap<&str, FitRecord> = BTreeMap::new();
    for (id, fit) in &result.fits {
        out.insert(id, FitRecord::from_fit(fit, bound));
    }
    for (id, reason) in &result.skipped {
        out.insert(id, FitRecord::skipped(id, reason));
    }
    out.into_values().collect()
}

pub const FITS_HEADER: [&str; 10] = [
    "household_id",
    "variable",
    "coefficient",
    "se",
    "z",
    "significant",
    "flags",
    "loglik",
    "iterations",
    "converged",
];

pub fn write_fits<W: Write>(sink: W, records: &[FitRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(FITS_HEADER)?;
    for r in records {
        let household_flags: Vec<&str> = r.flags.iter().map(|f| f.name()).collect();
        let loglik = r.loglik.map(|l| l.to_string()).unwrap_or_default();
        let iterations = r.iterations.to_string();
        let converged = if r.converged { "1" } else { "0" };
        if let Some(reason) = &r.skipped {
            w.write_record([r.household_id.as_str(), "", "", "", "", "", reason, "", "", "0"])?;
            continue;
        }
        for c in &r.coefficients {
            let mut flags = household_flags.clone();
            if c.divergent {
                flags.push("divergent");
            }
            let se = c.se.map(|s| s.to_string()).unwrap_or_default();
            let z = c.se.map(|s| (c.coefficient / s).to_string()).unwrap_or_default();
            w.write_record([
                r.household_id.as_str(),
                &c.variable,
                &c.coefficient.to_string(),
                &se,
                &z,
                c.significance.symbol(),
                &flags.join(";"),
                &loglik,
                &iterations,
                converged,
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<fits>", e))?;
    Ok(())
}

pub fn read_fits<R: Read>(source: R) -> Result<Vec<FitRecord>> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers()?.clone();
    let mut col = [0usize; 10];
    for (slot, name) in col.iter_mut().zip(FITS_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))?;
    }
    let mut out: BTreeMap<String, FitRecord> = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |what: &str, v: &str| Error::Row { line, reason: format!("bad {what} `{v}`") };
        let get = |k: usize| row.get(col[k]).map(str::trim).unwrap_or("");
        let num = |k: usize| -> Result<Option<f64>> {
            match get(k) {
                "" => Ok(None),
                v => v.parse().map(Some).map_err(|_| bad(FITS_HEADER[k], v)),
            }
        };
        let id = get(0).to_owned();
        let variable = get(1);
        let flag_names: Vec<&str> = get(6).split(';').filter(|s| !s.is_empty()).collect();
        let rec = out.entry(id.clone()).or_insert_with(|| FitRecord {
            household_id: id.clone(),
            coefficients: Vec::new(),
            flags: BTreeSet::new(),
            loglik: None,
            iterations: 0,
            converged: false,
            skipped: None,
        });
        if variable.is_empty() {
            rec.skipped = Some(flag_names.first().copied().unwrap_or("skipped").to_owned());
            continue;
        }
        let coefficient = num(2)?.ok_or_else(|| bad("coefficient", ""))?;
        let mut divergent = false;
        for name in flag_names {
            match FitFlag::parse(name) {
                Some(f) => {
                    rec.flags.insert(f);
                }
                None if name == "divergent" => divergent = true,
                None => return Err(bad("flag", name)),
            }
        }
        let significance = match get(5) {
            "+" => Significance::Positive,
            "-" => Significance::Negative,
            "0" | "" => Significance::None,
            other => return Err(bad("significant", other)),
        };
        rec.loglik = num(7)?;
        rec.iterations = get(8).parse().map_err(|_| bad("iterations", get(8)))?;
        rec.converged = get(9) == "1";
        rec.coefficients.push(StoredCoefficient {
            variable: variable.to_owned(),
            coefficient,
            se: num(3)?,
            significance,
            divergent,
        });
    }
    Ok(out.into_values().collect())
}
