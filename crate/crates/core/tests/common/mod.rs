//! Test-only oracles, written independently of the library's likelihood
//! code: a naive log-likelihood, central finite differences and a
//! two-stage grid search.
#![allow(dead_code)]

use hhlogit::choice_set::{HouseholdDesign, OccasionDesign};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Plain `ln(exp(u_c) / Σ exp(u_j))` without any stabilization.
pub fn naive_loglik(beta: &[f64], occasions: &[OccasionDesign<f64>]) -> f64 {
    let p = beta.len();
    let utility = |occ: &OccasionDesign<f64>, j: usize| -> f64 { (0..p).map(|k| occ.x[j * p + k] * beta[k]).sum() };
    let mut total = 0.0;
    for occ in occasions {
        let mut denom = 0.0;
        for j in 0..occ.n_alternatives {
            denom += utility(occ, j).exp();
        }
        total += (utility(occ, occ.chosen).exp() / denom).ln();
    }
    total
}

pub fn naive_probabilities(beta: &[f64], occ: &OccasionDesign<f64>) -> Vec<f64> {
    let p = beta.len();
    let e: Vec<f64> = (0..occ.n_alternatives)
        .map(|j| (0..p).map(|k| occ.x[j * p + k] * beta[k]).sum::<f64>().exp())
        .collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn central_gradient<F: Fn(&[f64]) -> f64>(f: F, at: &[f64], h: f64) -> Vec<f64> {
    (0..at.len())
        .map(|k| {
            let mut up = at.to_vec();
            let mut down = at.to_vec();
            up[k] += h;
            down[k] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

/// Jacobian of a vector function by central differences, row k = d/d beta_k.
pub fn central_jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: F, at: &[f64], h: f64) -> Vec<Vec<f64>> {
    (0..at.len())
        .map(|k| {
            let mut up = at.to_vec();
            let mut down = at.to_vec();
            up[k] += h;
            down[k] -= h;
            f(&up).iter().zip(f(&down)).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        })
        .collect()
}

/// Norm-wise relative error `‖a − b‖∞ / max(‖b‖∞, 1e-300)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max).max(1e-300);
    diff / scale
}

fn grid_pass(occasions: &[OccasionDesign<f64>], p: usize, centre: &[f64], half: f64, step: f64) -> Vec<f64> {
    let n = (2.0 * half / step).round() as i64;
    let axis = |c: f64| (0..=n).map(move |i| c - half + i as f64 * step);
    let mut best = (f64::NEG_INFINITY, centre.to_vec());
    match p {
        1 => {
            for b in axis(centre[0]) {
                let ll = naive_loglik(&[b], occasions);
                if ll > best.0 {
                    best = (ll, vec![b]);
                }
            }
        }
        2 => {
            for b0 in axis(centre[0]) {
                for b1 in axis(centre[1]) {
                    let ll = naive_loglik(&[b0, b1], occasions);
                    if ll > best.0 {
                        best = (ll, vec![b0, b1]);
                    }
                }
            }
        }
        _ => panic!("grid oracle supports p <= 2"),
    }
    best.1
}

/// Exhaustive search over `[-10, 10]^p`: a 0.05 grid, then one refinement
/// at 1e-3 within ±0.1 of the coarse optimum.
pub fn grid_search(occasions: &[OccasionDesign<f64>], p: usize) -> Vec<f64> {
    let coarse = grid_pass(occasions, p, &vec![0.0; p], 10.0, 0.05);
    grid_pass(occasions, p, &coarse, 0.1, 1e-3)
}

pub fn design(id: &str, p: usize, occasions: Vec<OccasionDesign<f64>>) -> HouseholdDesign<f64> {
    HouseholdDesign {
        household_id: id.into(),
        layout: (0..p).map(|k| format!("x{k}")).collect(),
        base: "base".into(),
        local_base: false,
        occasions,
    }
}

/// Random instance: `n_alt` alternatives, `p` columns mixing 0/1 and
/// Gaussian covariates, choices sampled from the logit at `truth`.
pub fn random_instance(r: &mut ChaCha8Rng, n_alt: usize, p: usize, t: usize, truth: &[f64]) -> HouseholdDesign<f64> {
    let occasions = (0..t)
        .map(|_| {
            let x: Vec<f64> = (0..n_alt * p)
                .map(|i| {
                    if i % p % 3 == 0 {
                        f64::from(u8::from(r.random_bool(0.4)))
                    } else {
                        r.random_range(-1.5..1.5)
                    }
                })
                .collect();
            let mut occ = OccasionDesign::new(x, n_alt, 0);
            let probs = naive_probabilities(truth, &occ);
            let u: f64 = r.random();
            let mut acc = 0.0;
            occ.chosen = n_alt - 1;
            for (j, pr) in probs.iter().enumerate() {
                acc += pr;
                if u < acc {
                    occ.chosen = j;
                    break;
                }
            }
            occ
        })
        .collect();
    design("rand", p, occasions)
}

/// Intercept-only two-alternative household: base row `[0]`, dummy row
/// `[1]`, dummy chosen `n1` times and base `n0` times.
pub fn intercept_only(n1: usize, n0: usize) -> HouseholdDesign<f64> {
    let mut occ = vec![OccasionDesign::new(vec![0.0, 1.0], 2, 1); n1];
    occ.extend(vec![OccasionDesign::new(vec![0.0, 1.0], 2, 0); n0]);
    design("intercept", 1, occ)
}
