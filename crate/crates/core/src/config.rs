//! Run configuration, loaded from a TOML key-value file. Unknown keys are
//! rejected; command-line flags override file values.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::features::DEFAULT_WINDOW_SECONDS;
use crate::logit::FitConfig;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub top_j: usize,
    pub reference: Option<String>,
    pub window_seconds: i64,
    pub max_iterations: usize,
    pub grad_tol: f64,
    pub loglik_tol: f64,
    pub beta_bound: f64,
    pub max_halvings: usize,
    pub min_occasions_margin: usize,
    pub workers: usize,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        let fit = FitConfig::<f64>::default();
        Self {
            top_j: 15,
            reference: None,
            window_seconds: DEFAULT_WINDOW_SECONDS,
            max_iterations: fit.max_iterations,
            grad_tol: fit.grad_tol,
            loglik_tol: fit.loglik_tol,
            beta_bound: fit.beta_bound,
            max_halvings: fit.max_halvings,
            min_occasions_margin: fit.min_occasions_margin,
            workers: 1,
            seed: 0,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if self.top_j < 2 {
            return fail("top_j must be at least 2");
        }
        if self.window_seconds <= 0 {
            return fail("window_seconds must be positive");
        }
        if self.max_iterations == 0 {
            return fail("max_iterations must be positive");
        }
        for (name, v) in [("grad_tol", self.grad_tol), ("loglik_tol", self.loglik_tol), ("beta_bound", self.beta_bound)] {
            if !(v > 0.0) || !v.is_finite() {
                return fail(&format!("{name} must be a positive finite number"));
            }
        }
        if self.workers == 0 {
            return fail("workers must be at least 1");
        }
        if self.reference.as_deref().is_some_and(str::is_empty) {
            return fail("reference must not be empty");
        }
        Ok(())
    }

    pub fn fit_config(&self) -> FitConfig<f64> {
        FitConfig {
            max_iterations: self.max_iterations,
            grad_tol: self.grad_tol,
            loglik_tol: self.loglik_tol,
            beta_bound: self.beta_bound,
            max_halvings: self.max_halvings,
            min_occasions_margin: self.min_occasions_margin,
        }
    }
}
