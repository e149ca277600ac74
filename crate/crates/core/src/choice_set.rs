//! Market definition (global top-J sites and the reference alternative),
//! per-household choice sets and design matrices.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::features::HouseholdOccasions;
use crate::ingest::{HouseholdPanel, VisitRecord};
use crate::scalar::Scalar;

pub const COVARIATE_NAMES: [&str; 4] = ["loyalty", "last_search_repeated", "ln_last_pages", "missing_data"];
pub const BRAND_PREFIX: &str = "brand:";

pub fn brand_variable(site: &str) -> String {
    format!("{BRAND_PREFIX}{site}")
}

/// The alternatives under study, most visited first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarketDefinition {
    pub alternatives: Vec<String>,
    /// Total visits per alternative, aligned with `alternatives`.
    pub visits: Vec<u64>,
    pub reference: String,
}

impl MarketDefinition {
    pub fn contains(&self, site: &str) -> bool {
        self.alternatives.iter().any(|a| a == site)
    }

    pub fn rank(&self, site: &str) -> Option<usize> {
        self.alternatives.iter().position(|a| a == site)
    }

    pub fn with_reference(mut self, reference: &str) -> Result<Self> {
        if !self.contains(reference) {
            return Err(Error::UnknownReference(reference.to_owned()));
        }
        self.reference = reference.to_owned();
        Ok(self)
    }

    /// Variable names in canonical order: the four covariates, then one
    /// dummy per non-reference alternative in market order.
    pub fn variables(&self) -> Vec<String> {
        let mut out: Vec<String> = COVARIATE_NAMES.iter().map(|s| s.to_string()).collect();
        out.extend(self.alternatives.iter().filter(|a| **a != self.reference).map(|a| brand_variable(a)));
        out
    }
}

/// Picks the `j` most visited sites (ties by site id). The reference is
/// the most visited one.
pub fn select_market<'a, I>(visits: I, j: usize) -> Result<MarketDefinition>
where
    I: IntoIterator<Item = &'a VisitRecord>,
{
    if j < 2 {
        return Err(Error::Config(format!("top_j must be at least 2, got {j}")));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for v in visits {
        *counts.entry(v.site_id.as_str()).or_default() += 1;
    }
    if counts.len() < j {
        return Err(Error::TooFewSites { needed: j, found: counts.len() });
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(j);
    Ok(MarketDefinition {
        reference: ranked[0].0.to_owned(),
        alternatives: ranked.iter().map(|(s, _)| s.to_string()).collect(),
        visits: ranked.iter().map(|(_, c)| *c).collect(),
    })
}

/// Market alternatives a household visited, with the alternative its brand
/// dummies are measured against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HouseholdChoiceSet {
    /// Market order.
    pub alternatives: Vec<String>,
    pub base: String,
    /// True when the household never visited the market reference.
    pub local_base: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChoiceSetOutcome {
    Estimable(HouseholdChoiceSet),
    /// Only one market alternative visited; no choice variation.
    SingleAlternative(String),
    NoMarketVisits,
}

pub fn choice_set_from_sites<'a, I>(sites: I, market: &MarketDefinition) -> ChoiceSetOutcome
where
    I: IntoIterator<Item = &'a str>,
{
    let mut seen = vec![false; market.alternatives.len()];
    for s in sites {
        if let Some(r) = market.rank(s) {
            seen[r] = true;
        }
    }
    let alternatives: Vec<String> = market
        .alternatives
        .iter()
        .zip(&seen)
        .filter(|(_, &s)| s)
        .map(|(a, _)| a.clone())
        .collect();
    match alternatives.len() {
        0 => ChoiceSetOutcome::NoMarketVisits,
        1 => ChoiceSetOutcome::SingleAlternative(alternatives[0].clone()),
        _ => {
            let local_base = !alternatives.contains(&market.reference);
            let base = if local_base {
                alternatives.iter().min().cloned().expect("nonempty")
            } else {
                market.reference.clone()
            };
            ChoiceSetOutcome::Estimable(HouseholdChoiceSet { alternatives, base, local_base })
        }
    }
}

pub fn household_choice_set(panel: &HouseholdPanel, market: &MarketDefinition) -> ChoiceSetOutcome {
    choice_set_from_sites(panel.visits.iter().map(|v| v.site_id.as_str()), market)
}

/// Design rows of one occasion, stored row-major (`n_alternatives × p`).
#[derive(Debug, Clone, PartialEq)]
pub struct OccasionDesign<T> {
    pub x: Vec<T>,
    pub n_alternatives: usize,
    pub chosen: usize,
}

impl<T: Scalar> OccasionDesign<T> {
    pub fn new(x: Vec<T>, n_alternatives: usize, chosen: usize) -> Self {
        debug_assert!(n_alternatives > 0 && x.len() % n_alternatives == 0);
        Self { x, n_alternatives, chosen }
    }

    pub fn n_params(&self) -> usize {
        self.x.len() / self.n_alternatives
    }

    pub fn row(&self, j: usize) -> &[T] {
        let p = self.n_params();
        &self.x[j * p..(j + 1) * p]
    }
}

/// A household's estimation problem: fixed column layout plus one design
/// block per occasion.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholdDesign<T> {
    pub household_id: String,
    pub layout: Vec<String>,
    pub base: String,
    pub local_base: bool,
    pub occasions: Vec<OccasionDesign<T>>,
}

impl<T: Scalar> HouseholdDesign<T> {
    pub fn n_params(&self) -> usize {
        self.layout.len()
    }
}

/// Lays out `[loyalty, last_search_repeated, ln_last_pages, missing_data,
/// dummies...]` for every occasion. Dummies follow market order and omit
/// the household's base alternative.
pub fn assemble_design<T: Scalar>(
    occasions: &HouseholdOccasions<T>,
    market: &MarketDefinition,
) -> Result<HouseholdDesign<T>> {
    let choice = match choice_set_from_sites(occasions.choice_set.iter().map(String::as_str), market) {
        ChoiceSetOutcome::Estimable(c) => c,
        ChoiceSetOutcome::SingleAlternative(a) => {
            return Err(Error::Invalid(format!(
                "household {} has a single alternative `{a}`",
                occasions.household_id
            )))
        }
        ChoiceSetOutcome::NoMarketVisits => return Err(Error::EmptyChoiceSet),
    };
    if let Some(stray) = occasions.choice_set.iter().find(|a| !market.contains(a)) {
        return Err(Error::Invalid(format!(
            "household {}: alternative `{stray}` is not in the market",
            occasions.household_id
        )));
    }

    let dummies: Vec<&String> = choice.alternatives.iter().filter(|a| **a != choice.base).collect();
    let mut layout: Vec<String> = COVARIATE_NAMES.iter().map(|s| s.to_string()).collect();
    layout.extend(dummies.iter().map(|a| brand_variable(a)));
    let p = layout.len();
    // column of each occasion alternative's dummy, if any
    let dummy_col: Vec<Option<usize>> = occasions
        .choice_set
        .iter()
        .map(|a| dummies.iter().position(|d| *d == a).map(|k| 4 + k))
        .collect();

    let blocks = occasions
        .occasions
        .iter()
        .map(|occ| {
            let n = occ.covariates.len();
            let mut x = vec![T::zero(); n * p];
            for (j, cov) in occ.covariates.iter().enumerate() {
                let row = &mut x[j * p..(j + 1) * p];
                row[..4].copy_from_slice(&cov.as_array());
                if let Some(c) = dummy_col[j] {
                    row[c] = T::one();
                }
            }
            OccasionDesign::new(x, n, occ.chosen)
        })
        .collect();

    Ok(HouseholdDesign {
        household_id: occasions.household_id.clone(),
        layout,
        base: choice.base,
        local_base: choice.local_base,
        occasions: blocks,
    })
}

pub fn write_market<W: Write>(sink: W, market: &MarketDefinition) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["rank", "site_id", "visits", "reference"])?;
    for (i, (a, n)) in market.alternatives.iter().zip(&market.visits).enumerate() {
        let r = if *a == market.reference { "1" } else { "0" };
        w.write_record([&(i + 1).to_string(), a, &n.to_string(), r])?;
    }
    w.flush().map_err(|e| Error::io("<market>", e))?;
    Ok(())
}

pub fn read_market<R: Read>(source: R) -> Result<MarketDefinition> {
    let mut reader = csv::Reader::from_reader(source);
    let mut rows: Vec<(usize, String, u64, bool)> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |what: &str| Error::Row { line, reason: format!("bad market {what}") };
        let rank = rec.get(0).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad("rank"))?;
        let site = rec.get(1).map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).ok_or_else(|| bad("site_id"))?;
        let visits = rec.get(2).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad("visits"))?;
        let reference = matches!(rec.get(3).map(str::trim), Some("1"));
        rows.push((rank, site, visits, reference));
    }
    rows.sort_by_key(|r| r.0);
    let refs: Vec<&String> = rows.iter().filter(|r| r.3).map(|r| &r.1).collect();
    if rows.len() < 2 || refs.len() != 1 {
        return Err(Error::Invalid(format!(
            "market file needs at least 2 alternatives and exactly one reference (got {} and {})",
            rows.len(),
            refs.len()
        )));
    }
    Ok(MarketDefinition {
        reference: refs[0].clone(),
        alternatives: rows.iter().map(|r| r.1.clone()).collect(),
        visits: rows.iter().map(|r| r.2).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{AlternativeCovariates, ChoiceOccasion};

    fn visits(counts: &[(&str, usize)]) -> Vec<VisitRecord> {
        counts
            .iter()
            .flat_map(|(s, n)| (0..*n).map(move |i| VisitRecord::new("h", s, i as i64, i as i64, 1)))
            .collect()
    }

    #[test]
    fn top_j_by_count() {
        let m = select_market(&visits(&[("N", 25), ("Y", 100), ("M", 50)]), 2).unwrap();
        assert_eq!(m.alternatives, vec!["Y", "M"]);
        assert_eq!(m.reference, "Y");
        assert_eq!(m.visits, vec![100, 50]);
    }

    #[test]
    fn count_ties_break_lexicographically() {
        let m = select_market(&visits(&[("B", 10), ("A", 10)]), 2).unwrap();
        assert_eq!(m.alternatives, vec!["A", "B"]);
        assert_eq!(m.reference, "A");
    }

    #[test]
    fn too_few_sites() {
        let err = select_market(&visits(&[("A", 3)]), 2).unwrap_err();
        assert!(matches!(err, Error::TooFewSites { needed: 2, found: 1 }));
    }

    #[test]
    fn reference_override_must_be_in_market() {
        let m = select_market(&visits(&[("Y", 3), ("M", 2), ("N", 1)]), 2).unwrap();
        assert_eq!(m.clone().with_reference("M").unwrap().reference, "M");
        assert!(m.with_reference("N").is_err());
    }

    fn market15() -> MarketDefinition {
        let names = ["Y", "M", "N", "E", "A", "V", "I", "L", "W", "G", "H", "S", "T", "O", "J"];
        MarketDefinition {
            alternatives: names.iter().map(|s| s.to_string()).collect(),
            visits: (0..15).rev().map(|v| v as u64 + 1).collect(),
            reference: "Y".into(),
        }
    }

    #[test]
    fn four_portal_household() {
        let m = market15();
        match choice_set_from_sites(["E", "Y", "G", "M", "E", "zz"], &m) {
            ChoiceSetOutcome::Estimable(c) => {
                assert_eq!(c.alternatives, vec!["Y", "M", "E", "G"]);
                assert_eq!(c.base, "Y");
                assert!(!c.local_base);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(choice_set_from_sites(["Y", "Y"], &m), ChoiceSetOutcome::SingleAlternative("Y".into()));
        assert_eq!(choice_set_from_sites(["zz"], &m), ChoiceSetOutcome::NoMarketVisits);
        match choice_set_from_sites(m.alternatives.iter().map(String::as_str), &m) {
            ChoiceSetOutcome::Estimable(c) => assert_eq!(c.alternatives.len(), 15),
            other => panic!("{other:?}"),
        }
    }

    fn occasions(set: &[&str], chosen: usize, covs: Vec<AlternativeCovariates<f64>>) -> HouseholdOccasions<f64> {
        HouseholdOccasions {
            household_id: "h".into(),
            choice_set: set.iter().map(|s| s.to_string()).collect(),
            occasions: vec![ChoiceOccasion { index: 1, chosen, covariates: covs }],
        }
    }

    #[test]
    fn two_alternative_dummy_layout() {
        let zero = AlternativeCovariates { loyalty: false, last_search_repeated: false, ln_last_pages: 0.0, missing_data: false };
        let d = assemble_design(&occasions(&["Y", "M"], 1, vec![zero, zero]), &market15()).unwrap();
        assert_eq!(d.layout, vec!["loyalty", "last_search_repeated", "ln_last_pages", "missing_data", "brand:M"]);
        assert_eq!(d.occasions[0].row(0), &[0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(d.occasions[0].row(1), &[0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(d.occasions[0].chosen, 1);
    }

    #[test]
    fn household_without_reference_gets_local_base() {
        let c = AlternativeCovariates::<f64>::missing();
        let d = assemble_design(&occasions(&["N", "M", "E"], 0, vec![c, c, c]), &market15()).unwrap();
        assert!(d.local_base);
        assert_eq!(d.base, "E");
        assert_eq!(d.layout[4..], ["brand:M", "brand:N"]);
        // E is the base: all-zero dummy block
        assert_eq!(&d.occasions[0].row(2)[4..], &[0.0, 0.0]);
        assert_eq!(&d.occasions[0].row(0)[4..], &[0.0, 1.0]);
    }

    #[test]
    fn four_alternatives_give_seven_parameters() {
        let c = AlternativeCovariates::<f64>::missing();
        let d = assemble_design(&occasions(&["Y", "M", "E", "G"], 2, vec![c; 4]), &market15()).unwrap();
        assert_eq!(d.n_params(), 7);
        assert_eq!(d.occasions[0].row(0), &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn market_file_round_trip() {
        let m = market15().with_reference("M").unwrap();
        let mut buf = Vec::new();
        write_market(&mut buf, &m).unwrap();
        assert_eq!(read_market(buf.as_slice()).unwrap(), m);
    }
}
