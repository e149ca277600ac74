//! File-to-file stages. The CLI subcommands and the end-to-end `pipeline`
//! command both go through these functions, so running the stages one by
//! one produces the same files as the combined run.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use crate::analytics::{
    coefficient_series, correlate, read_series_table, render_scatter_svg, scatter_data, summarize_coefficients,
    write_correlations, write_points, write_summary, write_summary_counts, CoefficientSummary, CorrelationMatrix,
};
use crate::batch::{batch_records, read_fits, run_batch, write_fits, FitRecord};
use crate::choice_set::{
    household_choice_set, read_market, select_market, write_market, ChoiceSetOutcome, MarketDefinition,
    BRAND_PREFIX, COVARIATE_NAMES,
};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::features::{
    build_occasions, detect_repeated_searches, household_aggregates, read_occasions, write_aggregates,
    write_occasions, HouseholdAggregates, HouseholdOccasions,
};
use crate::ingest::{build_panels, parse_visits, write_panels, HouseholdPanel, RowError, VisitRecord};
use crate::synth::{simulate_panel, write_truth, GeneratorSpec};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Reads a visit log and returns its panels plus any bad rows.
pub fn load_panels(path: &Path) -> Result<(Vec<HouseholdPanel>, Vec<RowError>)> {
    let parsed = parse_visits(open(path)?)?;
    Ok((build_panels(parsed.records), parsed.row_errors))
}

pub fn ingest(input: &Path, output: &Path) -> Result<(usize, Vec<RowError>)> {
    let (panels, errors) = load_panels(input)?;
    write_panels(create(output)?, &panels)?;
    Ok((panels.len(), errors))
}

pub fn define_market(visits: &[VisitRecord], top_j: usize, reference: Option<&str>) -> Result<MarketDefinition> {
    let market = select_market(visits, top_j)?;
    match reference {
        Some(r) => market.with_reference(r),
        None => Ok(market),
    }
}

#[derive(Debug, Clone)]
pub struct FeatureOutput {
    pub occasions: Vec<HouseholdOccasions<f64>>,
    pub aggregates: Vec<HouseholdAggregates>,
    /// Households with no visit to any market alternative.
    pub without_market_visits: Vec<String>,
}

/// Repeated-search flags are computed on the full panel, treating market
/// alternatives as the portals; occasions cover market visits only.
pub fn build_features(panels: &[HouseholdPanel], market: &MarketDefinition, window: i64) -> Result<FeatureOutput> {
    let mut out = FeatureOutput { occasions: Vec::new(), aggregates: Vec::new(), without_market_visits: Vec::new() };
    for panel in panels {
        let flags = detect_repeated_searches(panel, window, |s| market.contains(s));
        let set = match household_choice_set(panel, market) {
            ChoiceSetOutcome::NoMarketVisits => {
                out.without_market_visits.push(panel.household_id.clone());
                continue;
            }
            ChoiceSetOutcome::SingleAlternative(a) => vec![a],
            ChoiceSetOutcome::Estimable(c) => c.alternatives,
        };
        out.occasions.push(build_occasions(panel, &set, &flags)?);
        out.aggregates.push(household_aggregates(panel, &market.alternatives, &flags));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FeaturePaths {
    pub occasions: PathBuf,
    pub market: PathBuf,
    pub aggregates: Option<PathBuf>,
}

pub fn features(panels_path: &Path, cfg: &Config, paths: &FeaturePaths) -> Result<FeatureOutput> {
    let (panels, errors) = load_panels(panels_path)?;
    if let Some(e) = errors.first() {
        return Err(Error::Row { line: e.line, reason: e.reason.clone() });
    }
    let visits: Vec<VisitRecord> = panels.iter().flat_map(|p| p.visits.iter().cloned()).collect();
    let market = define_market(&visits, cfg.top_j, cfg.reference.as_deref())?;
    let out = build_features(&panels, &market, cfg.window_seconds)?;
    write_market(create(&paths.market)?, &market)?;
    write_occasions(create(&paths.occasions)?, &out.occasions)?;
    if let Some(agg) = &paths.aggregates {
        write_aggregates(create(agg)?, &market.alternatives, &out.aggregates)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct FitReport {
    pub fitted: usize,
    pub skipped: usize,
    pub elapsed_seconds: f64,
    pub households_per_second: f64,
}

pub fn fit(occasions: &Path, market: &Path, cfg: &Config, output: &Path) -> Result<FitReport> {
    let households: Vec<HouseholdOccasions<f64>> = read_occasions(open(occasions)?)?;
    let market = read_market(open(market)?)?;
    let fit_cfg = cfg.fit_config();
    let result = run_batch(&households, &market, &fit_cfg, cfg.workers)?;
    write_fits(create(output)?, &batch_records(&result, fit_cfg.beta_bound))?;
    Ok(FitReport {
        fitted: result.fits.len(),
        skipped: result.skipped.len(),
        elapsed_seconds: result.elapsed_seconds,
        households_per_second: result.households_per_second,
    })
}

/// Variable order for reports: covariates first, then brand dummies in
/// market order when a market is known, otherwise by household count
/// (descending) and name.
pub fn report_variables(records: &[FitRecord], market: Option<&MarketDefinition>) -> Vec<String> {
    if let Some(m) = market {
        return m.variables();
    }
    let mut counts: std::collections::BTreeMap<&str, usize> = Default::default();
    for c in records.iter().flat_map(|r| &r.coefficients) {
        if c.variable.starts_with(BRAND_PREFIX) {
            *counts.entry(c.variable.as_str()).or_default() += 1;
        }
    }
    let mut brands: Vec<(&str, usize)> = counts.into_iter().collect();
    brands.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    COVARIATE_NAMES
        .iter()
        .map(|s| s.to_string())
        .chain(brands.into_iter().map(|(v, _)| v.to_owned()))
        .collect()
}

fn load_market(path: Option<&Path>) -> Result<Option<MarketDefinition>> {
    path.map(|p| read_market(open(p)?)).transpose()
}

/// Counts go next to `out` as `<stem>.counts.csv`.
pub fn counts_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("summary");
    out.with_file_name(format!("{stem}.counts.csv"))
}

pub fn summarize(fits: &Path, market: Option<&Path>, out: &Path) -> Result<CoefficientSummary> {
    let records = read_fits(open(fits)?)?;
    let market = load_market(market)?;
    let summary = summarize_coefficients(&records, &report_variables(&records, market.as_ref()));
    write_summary(create(out)?, &summary)?;
    write_summary_counts(create(&counts_path(out))?, &summary)?;
    Ok(summary)
}

pub fn correlate_fits(fits: &Path, market: Option<&Path>, out: &Path) -> Result<CorrelationMatrix> {
    let records = read_fits(open(fits)?)?;
    let market = load_market(market)?;
    let series = coefficient_series(&records, &report_variables(&records, market.as_ref()));
    let series: Vec<_> = series.into_iter().filter(|(_, s)| !s.is_empty()).collect();
    let matrix = correlate(&series);
    write_correlations(create(out)?, &matrix)?;
    Ok(matrix)
}

pub fn correlate_aggregates(aggregates: &Path, out: &Path) -> Result<CorrelationMatrix> {
    let series = read_series_table(open(aggregates)?)?;
    let matrix = correlate(&series);
    write_correlations(create(out)?, &matrix)?;
    Ok(matrix)
}

pub fn scatter(fits: &Path, x: &str, y: &str, svg: &Path, points: &Path) -> Result<usize> {
    let records = read_fits(open(fits)?)?;
    let pts = scatter_data(&records, x, y)?;
    write_points(create(points)?, x, y, &pts)?;
    let mut f = create(svg)?;
    std::io::Write::write_all(&mut f, render_scatter_svg(&pts, x, y).as_bytes()).map_err(|e| Error::io(svg, e))?;
    std::io::Write::flush(&mut f).map_err(|e| Error::io(svg, e))?;
    Ok(pts.len())
}

pub fn simulate(spec_path: &Path, visits: &Path, truth: &Path) -> Result<usize> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let spec = GeneratorSpec::from_toml(&text)?;
    let data = simulate_panel(&spec)?;
    crate::ingest::write_visits(create(visits)?, &data.visits)?;
    write_truth(create(truth)?, &data.truth)?;
    Ok(data.truth.len())
}

/// Output locations of the end-to-end run.
#[derive(Debug, Clone)]
pub struct PipelineLayout {
    pub panels: PathBuf,
    pub market: PathBuf,
    pub occasions: PathBuf,
    pub aggregates: PathBuf,
    pub fits: PathBuf,
    pub table3: PathBuf,
    pub table4: PathBuf,
    pub table2: PathBuf,
}

impl PipelineLayout {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            panels: dir.join("panels.csv"),
            market: dir.join("market.csv"),
            occasions: dir.join("occasions.csv"),
            aggregates: dir.join("aggregates.csv"),
            fits: dir.join("fits.csv"),
            table3: dir.join("table3.csv"),
            table4: dir.join("table4.csv"),
            table2: dir.join("table2.csv"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub households: usize,
    pub row_errors: Vec<RowError>,
    pub fit: FitReport,
}

/// ingest → features → fit → summarize → correlate (coefficients and
/// household aggregates).
pub fn run_pipeline(input: &Path, out_dir: &Path, cfg: &Config) -> Result<PipelineReport> {
    let layout = PipelineLayout::in_dir(out_dir);
    let (households, row_errors) = ingest(input, &layout.panels)?;
    features(
        &layout.panels,
        cfg,
        &FeaturePaths {
            occasions: layout.occasions.clone(),
            market: layout.market.clone(),
            aggregates: Some(layout.aggregates.clone()),
        },
    )?;
    let fit = fit(&layout.occasions, &layout.market, cfg, &layout.fits)?;
    summarize(&layout.fits, Some(&layout.market), &layout.table3)?;
    correlate_fits(&layout.fits, Some(&layout.market), &layout.table4)?;
    correlate_aggregates(&layout.aggregates, &layout.table2)?;
    Ok(PipelineReport { households, row_errors, fit })
}
