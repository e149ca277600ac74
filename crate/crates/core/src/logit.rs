//! Conditional logit for a single household: choice probabilities,
//! log-likelihood with analytic gradient and Hessian, and a bounded Newton
//! maximizer with step-halving line search.

use std::collections::BTreeSet;
use std::fmt;

use crate::choice_set::{HouseholdDesign, OccasionDesign};
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, SquareMatrix};
use crate::scalar::Scalar;

/// Two-sided 95% normal critical value.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig<T> {
    pub max_iterations: usize,
    pub grad_tol: T,
    pub loglik_tol: T,
    pub beta_bound: T,
    pub max_halvings: usize,
    /// A household needs at least `p + min_occasions_margin` occasions.
    pub min_occasions_margin: usize,
}

impl<T: Scalar> Default for FitConfig<T> {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            grad_tol: T::of(1e-6),
            loglik_tol: T::of(1e-9),
            beta_bound: T::of(20.0),
            max_halvings: 20,
            min_occasions_margin: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FitFlag {
    Separation,
    SingularHessian,
    NonEstimable,
    HitBound,
    /// Brand dummies are relative to a household-local base.
    LocalBase,
}

impl FitFlag {
    pub fn name(self) -> &'static str {
        match self {
            FitFlag::Separation => "separation",
            FitFlag::SingularHessian => "singular_hessian",
            FitFlag::NonEstimable => "non_estimable",
            FitFlag::HitBound => "hit_bound",
            FitFlag::LocalBase => "local_base",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Separation, Self::SingularHessian, Self::NonEstimable, Self::HitBound, Self::LocalBase]
            .into_iter()
            .find(|f| f.name() == s)
    }
}

impl fmt::Display for FitFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Significance {
    Positive,
    Negative,
    None,
}

impl Significance {
    pub fn of<T: Scalar>(beta: T, se: T) -> Self {
        let z = beta / se;
        if z > T::of(Z_95) {
            Significance::Positive
        } else if z < -T::of(Z_95) {
            Significance::Negative
        } else {
            Significance::None
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Significance::Positive => "+",
            Significance::Negative => "-",
            Significance::None => "0",
        }
    }
}

/// One household's estimates. `beta` is empty when the household was not
/// estimable.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholdFit<T> {
    pub household_id: String,
    pub layout: Vec<String>,
    pub beta: Vec<T>,
    pub se: Option<Vec<T>>,
    pub loglik: T,
    pub iterations: usize,
    pub converged: bool,
    pub flags: BTreeSet<FitFlag>,
    /// Log-likelihood at the start and after each accepted step.
    pub loglik_history: Vec<T>,
}

impl<T: Scalar> HouseholdFit<T> {
    pub fn has(&self, flag: FitFlag) -> bool {
        self.flags.contains(&flag)
    }

    pub fn is_estimated(&self) -> bool {
        !self.beta.is_empty()
    }

    /// True for coefficients clamped at the bound.
    pub fn is_divergent(&self, k: usize, bound: T) -> bool {
        self.beta[k].abs() >= bound
    }

    pub fn significance(&self, k: usize) -> Significance {
        match &self.se {
            Some(se) => Significance::of(self.beta[k], se[k]),
            None => Significance::None,
        }
    }
}

/// Numerically stable softmax: the largest utility is subtracted first.
pub fn softmax<T: Scalar>(utilities: &[T]) -> Vec<T> {
    let max = utilities.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = utilities.iter().map(|&u| (u - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn utilities<T: Scalar>(beta: &[T], occ: &OccasionDesign<T>) -> Vec<T> {
    (0..occ.n_alternatives).map(|j| dot(occ.row(j), beta)).collect()
}

fn check_dim<T: Scalar>(beta: &[T], occ: &OccasionDesign<T>) -> Result<()> {
    if occ.n_params() != beta.len() {
        return Err(Error::Dimension { expected: occ.n_params(), got: beta.len() });
    }
    Ok(())
}

/// Choice probabilities at one occasion.
pub fn choice_probabilities<T: Scalar>(beta: &[T], occ: &OccasionDesign<T>) -> Result<Vec<T>> {
    check_dim(beta, occ)?;
    Ok(softmax(&utilities(beta, occ)))
}

/// Log-likelihood with its gradient and Hessian at one point.
#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    pub loglik: T,
    pub gradient: Vec<T>,
    pub hessian: SquareMatrix<T>,
}

/// log P of the chosen alternative, via log-sum-exp.
fn occasion_loglik<T: Scalar>(u: &[T], chosen: usize) -> T {
    let max = u.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + u.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    u[chosen] - lse
}

pub fn loglik<T: Scalar>(beta: &[T], occasions: &[OccasionDesign<T>]) -> Result<T> {
    let mut total = T::zero();
    for occ in occasions {
        check_dim(beta, occ)?;
        if occ.n_alternatives < 2 {
            continue;
        }
        total = total + occasion_loglik(&utilities(beta, occ), occ.chosen);
    }
    Ok(total)
}

/// Occasions with a single alternative contribute nothing and are skipped.
pub fn loglik_grad_hess<T: Scalar>(beta: &[T], occasions: &[OccasionDesign<T>]) -> Result<Evaluation<T>> {
    let p = beta.len();
    let mut ll = T::zero();
    let mut grad = vec![T::zero(); p];
    let mut hess = SquareMatrix::zeros(p);
    let mut mean = vec![T::zero(); p];
    let mut centered = vec![T::zero(); p];
    for occ in occasions {
        check_dim(beta, occ)?;
        if occ.n_alternatives < 2 {
            continue;
        }
        let u = utilities(beta, occ);
        ll = ll + occasion_loglik(&u, occ.chosen);
        let prob = softmax(&u);

        mean.iter_mut().for_each(|m| *m = T::zero());
        for (j, &pj) in prob.iter().enumerate() {
            for (m, &x) in mean.iter_mut().zip(occ.row(j)) {
                *m = *m + pj * x;
            }
        }
        for ((g, &x), &m) in grad.iter_mut().zip(occ.row(occ.chosen)).zip(&mean) {
            *g = *g + (x - m);
        }
        for (j, &pj) in prob.iter().enumerate() {
            for ((c, &x), &m) in centered.iter_mut().zip(occ.row(j)).zip(&mean) {
                *c = x - m;
            }
            for a in 0..p {
                if centered[a] == T::zero() {
                    continue;
                }
                let w = pj * centered[a];
                for b in a..p {
                    hess.add(a, b, -(w * centered[b]));
                }
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            hess.set(a, b, hess.get(b, a));
        }
    }
    Ok(Evaluation { loglik: ll, gradient: grad, hessian: hess })
}

/// Standard errors from the inverse observed information, or `None` when
/// the Hessian is not negative definite.
pub fn standard_errors_at<T: Scalar>(hessian: &SquareMatrix<T>) -> Option<Vec<T>> {
    let info = hessian.scaled(-T::one());
    let chol = Cholesky::new(&info)?;
    let diag = chol.inverse_diagonal();
    if diag.iter().any(|d| !(*d > T::zero()) || !d.is_finite()) {
        return None;
    }
    Some(diag.into_iter().map(T::sqrt).collect())
}

/// Recomputes standard errors for a finished fit. Fits at the bound or not
/// converged get none.
pub fn standard_errors<T: Scalar>(fit: &HouseholdFit<T>, design: &HouseholdDesign<T>) -> Result<Option<Vec<T>>> {
    if !fit.is_estimated() || !fit.converged || fit.has(FitFlag::HitBound) {
        return Ok(None);
    }
    let eval = loglik_grad_hess(&fit.beta, &design.occasions)?;
    Ok(standard_errors_at(&eval.hessian))
}

fn inf_norm<T: Scalar>(v: impl IntoIterator<Item = T>) -> T {
    v.into_iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Maximizes the household log-likelihood from beta = 0.
pub fn fit_household<T: Scalar>(design: &HouseholdDesign<T>, config: &FitConfig<T>) -> HouseholdFit<T> {
    fit_household_from(design, config, &vec![T::zero(); design.n_params()])
}

/// As [`fit_household`], from a given start (clamped to the bound).
pub fn fit_household_from<T: Scalar>(
    design: &HouseholdDesign<T>,
    config: &FitConfig<T>,
    start: &[T],
) -> HouseholdFit<T> {
    let p = design.n_params();
    assert_eq!(start.len(), p, "start vector length");
    let occasions: Vec<OccasionDesign<T>> = design
        .occasions
        .iter()
        .filter(|o| o.n_alternatives >= 2)
        .cloned()
        .collect();
    let dropped = design.occasions.len() - occasions.len();
    if dropped > 0 {
        log::warn!("household {}: dropped {dropped} single-alternative occasions", design.household_id);
    }

    let mut fit = HouseholdFit {
        household_id: design.household_id.clone(),
        layout: design.layout.clone(),
        beta: Vec::new(),
        se: None,
        loglik: T::zero(),
        iterations: 0,
        converged: false,
        flags: BTreeSet::new(),
        loglik_history: Vec::new(),
    };
    if design.local_base {
        fit.flags.insert(FitFlag::LocalBase);
    }
    if p == 0 || occasions.len() < p + config.min_occasions_margin {
        fit.flags.insert(FitFlag::NonEstimable);
        return fit;
    }

    let bound = config.beta_bound;
    let mut beta: Vec<T> = start.iter().map(|&b| b.max(-bound).min(bound)).collect();
    let mut eval = match loglik_grad_hess(&beta, &occasions) {
        Ok(e) => e,
        Err(_) => {
            fit.flags.insert(FitFlag::NonEstimable);
            return fit;
        }
    };
    fit.loglik_history.push(eval.loglik);
    let mut rel_change = T::zero();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        // coordinates pinned at the bound with the gradient pushing outward
        let free: Vec<usize> = (0..p)
            .filter(|&k| !(beta[k].abs() >= bound && eval.gradient[k] * beta[k].signum() > T::zero()))
            .collect();
        let grad_norm = inf_norm(free.iter().map(|&k| eval.gradient[k]));
        if grad_norm <= config.grad_tol && rel_change <= config.loglik_tol {
            converged = true;
            break;
        }
        if free.is_empty() {
            break;
        }

        let info = eval.hessian.select(&free).scaled(-T::one());
        let g_free: Vec<T> = free.iter().map(|&k| eval.gradient[k]).collect();
        let step_free = match Cholesky::new(&info) {
            Some(chol) => chol.solve(&g_free),
            None => {
                // gradient ascent; curvature-scaled, but at least a unit step so
                // flat separated directions still reach the bound (halving backs off)
                let trace = (0..free.len()).fold(T::zero(), |t, i| t + info.get(i, i));
                let mut scale = T::one() / trace.max(T::one());
                if grad_norm > T::zero() {
                    scale = scale.max(T::one() / grad_norm);
                }
                g_free.iter().map(|&g| g * scale).collect()
            }
        };

        let mut t = T::one();
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let mut candidate = beta.clone();
            for (&k, &s) in free.iter().zip(&step_free) {
                candidate[k] = (beta[k] + t * s).max(-bound).min(bound);
            }
            match loglik(&candidate, &occasions) {
                Ok(ll) if ll >= eval.loglik && ll.is_finite() => {
                    accepted = Some(candidate);
                    break;
                }
                _ => t = t / T::of(2.0),
            }
        }
        iterations += 1;
        let Some(next) = accepted else {
            converged = grad_norm <= config.grad_tol;
            break;
        };
        let previous = eval.loglik;
        eval = loglik_grad_hess(&next, &occasions).expect("dimensions checked above");
        beta = next;
        rel_change = (eval.loglik - previous).abs() / previous.abs().max(T::min_positive_value());
        fit.loglik_history.push(eval.loglik);
    }
    if !converged && iterations == config.max_iterations {
        // the last step may have landed on the optimum
        let free_norm = inf_norm((0..p).filter(|&k| {
            !(beta[k].abs() >= bound && eval.gradient[k] * beta[k].signum() > T::zero())
        }).map(|k| eval.gradient[k]));
        converged = free_norm <= config.grad_tol && rel_change <= config.loglik_tol;
    }

    if beta.iter().any(|b| b.abs() >= bound) {
        fit.flags.insert(FitFlag::HitBound);
        fit.flags.insert(FitFlag::Separation);
    }
    let se = standard_errors_at(&eval.hessian);
    if se.is_none() {
        fit.flags.insert(FitFlag::SingularHessian);
    }
    if converged && !fit.has(FitFlag::HitBound) {
        fit.se = se;
    }
    fit.beta = beta;
    fit.loglik = eval.loglik;
    fit.iterations = iterations;
    fit.converged = converged;
    fit
}
