//! Per-household covariate construction: loyalty, last-search-repeated,
//! log pages on the last visit, and the missing-history indicator.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::ingest::HouseholdPanel;
use crate::scalar::Scalar;

pub const DEFAULT_WINDOW_SECONDS: i64 = 300;

/// Covariates of one alternative at one choice occasion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlternativeCovariates<T> {
    pub loyalty: bool,
    pub last_search_repeated: bool,
    pub ln_last_pages: T,
    pub missing_data: bool,
}

impl<T: Scalar> AlternativeCovariates<T> {
    pub fn missing() -> Self {
        Self {
            loyalty: false,
            last_search_repeated: false,
            ln_last_pages: T::zero(),
            missing_data: true,
        }
    }

    /// `[loyalty, last_search_repeated, ln_last_pages, missing_data]`
    pub fn as_array(&self) -> [T; 4] {
        let b = |x: bool| if x { T::one() } else { T::zero() };
        [b(self.loyalty), b(self.last_search_repeated), self.ln_last_pages, b(self.missing_data)]
    }
}

/// One decision: which member of the household's choice set was visited.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceOccasion<T> {
    /// 1-based position among the household's occasions.
    pub index: usize,
    /// Index into the household's choice set.
    pub chosen: usize,
    /// Aligned with the household's choice set.
    pub covariates: Vec<AlternativeCovariates<T>>,
}

/// A household's occasions together with the choice set they range over.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholdOccasions<T> {
    pub household_id: String,
    pub choice_set: Vec<String>,
    pub occasions: Vec<ChoiceOccasion<T>>,
}

/// `ln(max(pages, 1))`
pub fn ln_pages<T: Scalar>(pages: u64) -> T {
    T::of(pages.max(1) as f64).ln()
}

/// Flags visits whose search was repeated.
///
/// Visit `v` is flagged when either a later visit with the same goal starts
/// no more than `window` seconds after `v` starts, or `v` and the next
/// visit are both portals and the next one starts less than `window`
/// seconds after `v` ends.
pub fn detect_repeated_searches<F>(panel: &HouseholdPanel, window: i64, is_portal: F) -> Vec<bool>
where
    F: Fn(&str) -> bool,
{
    let visits = &panel.visits;
    (0..visits.len())
        .map(|i| {
            let v = &visits[i];
            let same_goal = v.goal_id.as_ref().is_some_and(|goal| {
                visits[i + 1..]
                    .iter()
                    .take_while(|w| w.start_time - v.start_time <= window)
                    .any(|w| w.goal_id.as_ref() == Some(goal))
            });
            let back_to_back = visits.get(i + 1).is_some_and(|next| {
                is_portal(&v.site_id)
                    && is_portal(&next.site_id)
                    && next.start_time - v.end_time < window
            });
            same_goal || back_to_back
        })
        .collect()
}

/// Builds one occasion per visit to a member of `choice_set`.
///
/// `repeated` must be aligned with `panel.visits`. Covariates of
/// alternative `j` at occasion `t` come from the household's latest visit
/// to `j` before `t`; loyalty marks the alternative chosen at `t - 1`.
pub fn build_occasions<T: Scalar>(
    panel: &HouseholdPanel,
    choice_set: &[String],
    repeated: &[bool],
) -> Result<HouseholdOccasions<T>> {
    if choice_set.is_empty() {
        return Err(Error::EmptyChoiceSet);
    }
    if repeated.len() != panel.visits.len() {
        return Err(Error::Dimension { expected: panel.visits.len(), got: repeated.len() });
    }
    let position: HashMap<&str, usize> =
        choice_set.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let mut last: Vec<Option<(bool, T)>> = vec![None; choice_set.len()];
    let mut previous: Option<usize> = None;
    let mut occasions = Vec::new();
    for (visit, &flag) in panel.visits.iter().zip(repeated) {
        let Some(&chosen) = position.get(visit.site_id.as_str()) else {
            continue;
        };
        let covariates = last
            .iter()
            .enumerate()
            .map(|(j, history)| match history {
                None => AlternativeCovariates::missing(),
                Some((rep, lnp)) => AlternativeCovariates {
                    loyalty: previous == Some(j),
                    last_search_repeated: *rep,
                    ln_last_pages: *lnp,
                    missing_data: false,
                },
            })
            .collect();
        occasions.push(ChoiceOccasion { index: occasions.len() + 1, chosen, covariates });
        last[chosen] = Some((flag, ln_pages(visit.pages)));
        previous = Some(chosen);
    }
    Ok(HouseholdOccasions {
        household_id: panel.household_id.clone(),
        choice_set: choice_set.to_vec(),
        occasions,
    })
}

/// Household-level descriptive aggregates over visits to `alternatives`.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholdAggregates {
    pub household_id: String,
    pub total_pages: u64,
    pub average_pages: f64,
    pub repeated_fraction: f64,
    /// Aligned with the `alternatives` passed in.
    pub shares: Vec<f64>,
}

pub fn household_aggregates(
    panel: &HouseholdPanel,
    alternatives: &[String],
    repeated: &[bool],
) -> HouseholdAggregates {
    let mut counts = vec![0u64; alternatives.len()];
    let (mut visits, mut pages, mut flagged) = (0u64, 0u64, 0u64);
    for (v, &flag) in panel.visits.iter().zip(repeated) {
        if let Some(j) = alternatives.iter().position(|a| *a == v.site_id) {
            counts[j] += 1;
            visits += 1;
            pages += v.pages;
            flagged += u64::from(flag);
        }
    }
    let ratio = |a: u64| if visits == 0 { 0.0 } else { a as f64 / visits as f64 };
    HouseholdAggregates {
        household_id: panel.household_id.clone(),
        total_pages: pages,
        average_pages: ratio(pages),
        repeated_fraction: ratio(flagged),
        shares: counts.into_iter().map(ratio).collect(),
    }
}

pub fn write_aggregates<W: Write>(
    sink: W,
    alternatives: &[String],
    rows: &[HouseholdAggregates],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec![
        "household_id".to_owned(),
        "total_pages".to_owned(),
        "average_pages".to_owned(),
        "pct_repeated".to_owned(),
    ];
    header.extend(alternatives.iter().map(|a| format!("share:{a}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.household_id.clone(),
            r.total_pages.to_string(),
            r.average_pages.to_string(),
            (100.0 * r.repeated_fraction).to_string(),
        ];
        rec.extend(r.shares.iter().map(|s| (100.0 * s).to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<aggregates>", e))?;
    Ok(())
}

const OCCASION_HEADER: [&str; 8] = [
    "household_id",
    "occasion_index",
    "alternative",
    "chosen",
    "loyalty",
    "last_search_repeated",
    "ln_last_pages",
    "missing_data",
];

/// Long format: one row per (occasion, alternative).
pub fn write_occasions<W: Write, T: Scalar>(sink: W, households: &[HouseholdOccasions<T>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(OCCASION_HEADER)?;
    let bit = |b: bool| if b { "1" } else { "0" };
    for h in households {
        for occ in &h.occasions {
            let index = occ.index.to_string();
            for (j, (alt, cov)) in h.choice_set.iter().zip(&occ.covariates).enumerate() {
                w.write_record([
                    h.household_id.as_str(),
                    &index,
                    alt,
                    bit(j == occ.chosen),
                    bit(cov.loyalty),
                    bit(cov.last_search_repeated),
                    &cov.ln_last_pages.to_string(),
                    bit(cov.missing_data),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<occasions>", e))?;
    Ok(())
}

/// Reads the long format back, grouping by household (sorted by id). The
/// household's choice set is taken in first-appearance order.
pub fn read_occasions<R: Read, T: Scalar>(source: R) -> Result<Vec<HouseholdOccasions<T>>> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers()?.clone();
    let mut col = [0usize; 8];
    for (slot, name) in col.iter_mut().zip(OCCASION_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))?;
    }

    struct Partial<T> {
        choice_set: Vec<String>,
        // occasion index -> (chosen, covariates by alternative)
        rows: BTreeMap<usize, (Vec<usize>, HashMap<String, AlternativeCovariates<T>>)>,
    }
    let mut households: BTreeMap<String, Partial<T>> = BTreeMap::new();

    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |reason: String| Error::Row { line, reason };
        let get = |k: usize| row.get(col[k]).map(str::trim).unwrap_or("");
        let bit = |k: usize| match get(k) {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(bad(format!("{} must be 0 or 1, got `{other}`", OCCASION_HEADER[k]))),
        };
        let index: usize = get(1).parse().map_err(|_| bad(format!("bad occasion_index `{}`", get(1))))?;
        let alternative = get(2).to_owned();
        let chosen = bit(3)?;
        let ln_last_pages: f64 =
            get(6).parse().map_err(|_| bad(format!("bad ln_last_pages `{}`", get(6))))?;
        let cov = AlternativeCovariates {
            loyalty: bit(4)?,
            last_search_repeated: bit(5)?,
            ln_last_pages: T::of(ln_last_pages),
            missing_data: bit(7)?,
        };
        let h = households.entry(get(0).to_owned()).or_insert_with(|| Partial {
            choice_set: Vec::new(),
            rows: BTreeMap::new(),
        });
        let pos = match h.choice_set.iter().position(|a| *a == alternative) {
            Some(p) => p,
            None => {
                h.choice_set.push(alternative.clone());
                h.choice_set.len() - 1
            }
        };
        let entry = h.rows.entry(index).or_default();
        if chosen {
            entry.0.push(pos);
        }
        if entry.1.insert(alternative.clone(), cov).is_some() {
            return Err(bad(format!("duplicate alternative `{alternative}` at occasion {index}")));
        }
    }

    households
        .into_iter()
        .map(|(household_id, partial)| {
            let occasions = partial
                .rows
                .into_iter()
                .map(|(index, (chosen, mut covs))| {
                    if chosen.len() != 1 {
                        return Err(Error::Invalid(format!(
                            "household {household_id} occasion {index}: {} chosen rows, expected 1",
                            chosen.len()
                        )));
                    }
                    let covariates = partial
                        .choice_set
                        .iter()
                        .map(|alt| {
                            covs.remove(alt).ok_or_else(|| {
                                Error::Invalid(format!(
                                    "household {household_id} occasion {index}: no row for `{alt}`"
                                ))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(ChoiceOccasion { index, chosen: chosen[0], covariates })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(HouseholdOccasions { household_id, choice_set: partial.choice_set, occasions })
        })
        .collect()
}
