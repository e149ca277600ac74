//! Parsing and canonical ordering of raw clickstream visit logs.
//!
//! Input is comma-delimited UTF-8 text with a header row naming at least
//! `household_id, site_id, start_time, end_time, pages`; `goal_id` is
//! optional. Columns may appear in any order and extra columns are ignored.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};

const REQUIRED: [&str; 5] = ["household_id", "site_id", "start_time", "end_time", "pages"];

/// One raw clickstream row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitRecord {
    pub household_id: String,
    pub site_id: String,
    /// Seconds since epoch.
    pub start_time: i64,
    pub end_time: i64,
    pub pages: u64,
    /// Search-goal category, when the log carries one.
    pub goal_id: Option<String>,
}

impl VisitRecord {
    pub fn new(household: &str, site: &str, start_time: i64, end_time: i64, pages: u64) -> Self {
        Self {
            household_id: household.to_owned(),
            site_id: site.to_owned(),
            start_time,
            end_time,
            pages,
            goal_id: None,
        }
    }

    pub fn with_goal(mut self, goal: &str) -> Self {
        self.goal_id = Some(goal.to_owned());
        self
    }
}

/// A malformed data row. `line` is 1-based and counts the header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub line: u64,
    pub reason: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line:{} {}", self.line, self.reason)
    }
}

#[derive(Debug, Default, Clone)]
pub struct ParsedVisits {
    pub records: Vec<VisitRecord>,
    pub row_errors: Vec<RowError>,
}

/// All visits of one household in time order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HouseholdPanel {
    pub household_id: String,
    pub visits: Vec<VisitRecord>,
}

impl HouseholdPanel {
    pub fn len(&self) -> usize {
        self.visits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visits.is_empty()
    }
}

struct Columns {
    household: usize,
    site: usize,
    start: usize,
    end: usize,
    pages: usize,
    goal: Option<usize>,
}

impl Columns {
    fn locate(headers: &csv::StringRecord) -> Result<Self> {
        let find = |name: &str| headers.iter().position(|h| h.trim() == name);
        let mut idx = [0usize; 5];
        for (slot, name) in idx.iter_mut().zip(REQUIRED) {
            *slot = find(name).ok_or_else(|| Error::MissingColumn(name.to_owned()))?;
        }
        Ok(Self {
            household: idx[0],
            site: idx[1],
            start: idx[2],
            end: idx[3],
            pages: idx[4],
            goal: find("goal_id"),
        })
    }

    fn record(&self, row: &csv::StringRecord) -> std::result::Result<VisitRecord, String> {
        let field = |i: usize, name: &str| -> std::result::Result<&str, String> {
            row.get(i).map(str::trim).ok_or_else(|| format!("missing field {name}"))
        };
        let household_id = field(self.household, "household_id")?;
        let site_id = field(self.site, "site_id")?;
        if household_id.is_empty() {
            return Err("empty household_id".into());
        }
        if site_id.is_empty() {
            return Err("empty site_id".into());
        }
        let int = |name: &str, i: usize| -> std::result::Result<i64, String> {
            let raw = field(i, name)?;
            raw.parse::<i64>().map_err(|_| format!("non-integer {name} `{raw}`"))
        };
        let start_time = int("start_time", self.start)?;
        let end_time = int("end_time", self.end)?;
        let pages_raw = field(self.pages, "pages")?;
        let pages = pages_raw
            .parse::<u64>()
            .map_err(|_| format!("non-integer pages `{pages_raw}`"))?;
        if end_time < start_time {
            return Err(format!("end_time {end_time} before start_time {start_time}"));
        }
        let goal_id = match self.goal {
            Some(i) => row.get(i).map(str::trim).filter(|g| !g.is_empty()).map(str::to_owned),
            None => None,
        };
        Ok(VisitRecord {
            household_id: household_id.to_owned(),
            site_id: site_id.to_owned(),
            start_time,
            end_time,
            pages,
            goal_id,
        })
    }
}

/// Parses a visit log. Schema problems are fatal; bad rows are collected in
/// `row_errors` and skipped.
pub fn parse_visits<R: Read>(source: R) -> Result<ParsedVisits> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(source);
    let cols = Columns::locate(reader.headers()?)?;
    let mut out = ParsedVisits::default();
    for row in reader.records() {
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                if matches!(e.kind(), csv::ErrorKind::Utf8 { .. }) {
                    out.row_errors.push(RowError { line, reason: "invalid UTF-8".into() });
                    continue;
                }
                return Err(e.into());
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        match cols.record(&row) {
            Ok(rec) => out.records.push(rec),
            Err(reason) => out.row_errors.push(RowError { line, reason }),
        }
    }
    Ok(out)
}

/// Groups visits by household (sorted by id) and orders each panel by
/// start time, keeping input order for ties.
pub fn build_panels(visits: Vec<VisitRecord>) -> Vec<HouseholdPanel> {
    let mut groups: BTreeMap<String, Vec<VisitRecord>> = BTreeMap::new();
    for v in visits {
        groups.entry(v.household_id.clone()).or_default().push(v);
    }
    groups
        .into_iter()
        .map(|(household_id, mut visits)| {
            // stable: equal start times keep file order
            visits.sort_by_key(|v| v.start_time);
            HouseholdPanel { household_id, visits }
        })
        .collect()
}

/// Writes visits in the same schema `parse_visits` reads (always with the
/// `goal_id` column).
pub fn write_visits<'a, W, I>(sink: W, visits: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a VisitRecord>,
{
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["household_id", "site_id", "start_time", "end_time", "pages", "goal_id"])?;
    for v in visits {
        w.write_record([
            v.household_id.as_str(),
            v.site_id.as_str(),
            &v.start_time.to_string(),
            &v.end_time.to_string(),
            &v.pages.to_string(),
            v.goal_id.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<visits>", e))?;
    Ok(())
}

pub fn write_panels<W: Write>(sink: W, panels: &[HouseholdPanel]) -> Result<()> {
    write_visits(sink, panels.iter().flat_map(|p| p.visits.iter()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> ParsedVisits {
        parse_visits(text.as_bytes()).unwrap()
    }

    #[test]
    fn maps_fields_directly() {
        let p = parse("household_id,site_id,start_time,end_time,pages\nh1,yahoo,1000,1060,3\n");
        assert!(p.row_errors.is_empty());
        assert_eq!(p.records, vec![VisitRecord::new("h1", "yahoo", 1000, 1060, 3)]);
    }

    #[test]
    fn end_before_start_is_a_row_error() {
        let p = parse("household_id,site_id,start_time,end_time,pages\nh1,yahoo,1060,1000,3\n");
        assert!(p.records.is_empty());
        assert_eq!(p.row_errors.len(), 1);
        assert_eq!(p.row_errors[0].line, 2);
        assert!(p.row_errors[0].reason.contains("before"));
    }

    #[test]
    fn header_only_gives_empty_sequence() {
        let p = parse("household_id,site_id,start_time,end_time,pages,goal_id\n");
        assert!(p.records.is_empty());
        assert!(p.row_errors.is_empty());
    }

    #[test]
    fn missing_column_names_it() {
        let err = parse_visits("household_id,site_id,start_time,pages\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "end_time"), "{err}");
    }

    #[test]
    fn bad_numbers_report_line() {
        let p = parse(
            "household_id,site_id,start_time,end_time,pages\n\
             h1,a,1,2,3\n\
             h1,a,x,2,3\n\
             h1,a,1,2,-4\n\
             h1,a,1,2\n",
        );
        assert_eq!(p.records.len(), 1);
        let lines: Vec<u64> = p.row_errors.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![3, 4, 5]);
        assert!(p.row_errors[0].reason.contains("start_time"));
        assert!(p.row_errors[1].reason.contains("pages"));
        assert_eq!(p.row_errors[0].to_string(), "line:3 non-integer start_time `x`");
    }

    #[test]
    fn goal_column_is_optional_and_blank_means_none() {
        let p = parse(
            "pages,site_id,household_id,goal_id,end_time,start_time\n\
             2,a,h1,g7,10,5\n\
             2,a,h1,,10,5\n",
        );
        assert_eq!(p.records[0].goal_id.as_deref(), Some("g7"));
        assert_eq!(p.records[1].goal_id, None);
        assert_eq!(p.records[0].start_time, 5);
    }

    #[test]
    fn panels_partition_and_order() {
        let visits = vec![
            VisitRecord::new("h2", "a", 50, 60, 1),
            VisitRecord::new("h1", "b", 30, 31, 1),
            VisitRecord::new("h1", "z", 10, 11, 1),
            VisitRecord::new("h2", "b", 40, 41, 1),
            VisitRecord::new("h1", "a", 10, 12, 1),
        ];
        let panels = build_panels(visits);
        assert_eq!(panels.len(), 2);
        assert_eq!(panels[0].household_id, "h1");
        assert_eq!(panels[0].len(), 3);
        assert_eq!(panels[1].len(), 2);
        let sites: Vec<&str> = panels[0].visits.iter().map(|v| v.site_id.as_str()).collect();
        // z precedes a at t=10 because it came first in the file
        assert_eq!(sites, vec!["z", "a", "b"]);
    }

    #[test]
    fn single_visit_and_empty() {
        assert!(build_panels(Vec::new()).is_empty());
        let p = build_panels(vec![VisitRecord::new("h", "a", 0, 1, 1)]);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].len(), 1);
    }
}
