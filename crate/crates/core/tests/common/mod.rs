#![allow(dead_code)]

use std::str::FromStr;

use dashu_float::{DBig, FBig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Big = FBig;

pub const PRECISION: usize = 128;

const TWO_PI: &str = "6.283185307179586476925286766559005768394338798750211641949889184615632812572417997256069650684234136";

pub fn big(x: f64) -> Big {
    Big::try_from(x).expect("finite").with_precision(PRECISION).value()
}

pub fn ln_two_pi() -> Big {
    DBig::from_str(TWO_PI)
        .unwrap()
        .to_binary()
        .value()
        .with_precision(PRECISION)
        .value()
        .ln()
}

/// Extended-precision mixture log-density, summing every component.
pub struct DensityOracle {
    raw_means: Vec<Vec<f64>>,
    raw_vars: Vec<Vec<f64>>,
    means: Vec<Vec<Big>>,
    inv_vars: Vec<Vec<Big>>,
    log_norms: Vec<Big>,
    log_n: Big,
}

impl DensityOracle {
    pub fn new(means: &[Vec<f64>], vars: &[Vec<f64>]) -> Self {
        let d = means[0].len();
        let half_log_2pi = ln_two_pi() * big(0.5 * d as f64);
        let log_norms = vars
            .iter()
            .map(|v| {
                let prod = v.iter().fold(big(1.0), |acc, &x| acc * big(x));
                -(prod.ln() * big(0.5)) - half_log_2pi.clone()
            })
            .collect();
        Self {
            raw_means: means.to_vec(),
            raw_vars: vars.to_vec(),
            means: means.iter().map(|m| m.iter().map(|&x| big(x)).collect()).collect(),
            inv_vars: vars
                .iter()
                .map(|v| v.iter().map(|&x| big(1.0) / big(x)).collect())
                .collect(),
            log_norms,
            log_n: big(means.len() as f64).ln(),
        }
    }

    pub fn component_terms(&self, g: &[f64]) -> Vec<Big> {
        self.component_terms_of(g, &(0..self.means.len()).collect::<Vec<_>>())
    }

    /// Big-precision log terms of the listed components.
    pub fn component_terms_of(&self, g: &[f64], ids: &[usize]) -> Vec<Big> {
        let g: Vec<Big> = g.iter().map(|&x| big(x)).collect();
        ids.iter()
            .map(|&i| (&self.means[i], &self.inv_vars[i], &self.log_norms[i]))
            .map(|(mu, iv, ln)| {
                let mut q = big(0.0);
                for ((gi, mi), vi) in g.iter().zip(mu).zip(iv) {
                    let d = gi.clone() - mi.clone();
                    q += d.clone() * d * vi.clone();
                }
                ln.clone() - q * big(0.5)
            })
            .collect()
    }

    /// log of the sum of `exp(term)` over the given subset, minus log N.
    ///
    /// Terms more than 100 below the largest are skipped: with at most
    /// 10⁶ of them their total is below `e⁻⁸⁶` relative to the sum.
    pub fn log_density_of(&self, terms: &[Big]) -> f64 {
        let max = terms.iter().cloned().reduce(|a, b| if b > a { b } else { a }).unwrap();
        let cutoff = max.clone() - big(100.0);
        let mut sum = big(0.0);
        for t in terms {
            if *t >= cutoff {
                sum += (t.clone() - max.clone()).exp();
            }
        }
        (max + sum.ln() - self.log_n.clone()).to_f64().value()
    }

    /// Components that a plain float estimate places within 120 of the
    /// largest term; the rest cannot affect the result at f64 precision.
    fn relevant(&self, g: &[f64]) -> Vec<usize> {
        let rough: Vec<f64> = self
            .raw_means
            .iter()
            .zip(&self.raw_vars)
            .map(|(mu, var)| {
                let q: f64 = g.iter().zip(mu).zip(var).map(|((x, m), v)| (x - m) * (x - m) / v).sum();
                let lv: f64 = var.iter().map(|v| v.ln()).sum();
                -0.5 * (q + lv)
            })
            .collect();
        let max = rough.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (0..rough.len()).filter(|&i| rough[i] >= max - 120.0).collect()
    }

    pub fn log_density(&self, g: &[f64]) -> f64 {
        self.log_density_of(&self.component_terms_of(g, &self.relevant(g)))
    }
}

pub struct RandomInstance {
    pub means: Vec<Vec<f64>>,
    pub vars: Vec<Vec<f64>>,
    pub points: Vec<Vec<f64>>,
}

impl RandomInstance {
    pub fn encodings(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.means.iter().cloned().zip(self.vars.iter().cloned()).collect()
    }
}

/// Mixture with `n` components in `d` dimensions and `n_points` query
/// points, some near the means and some far away.
pub fn random_instance(seed: u64, n: usize, d: usize, n_points: usize) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let vars = (0..n)
        .map(|_| (0..d).map(|_| (rng.random_range(-3.0_f64..1.4)).exp()).collect())
        .collect();
    let points = (0..n_points)
        .map(|p| {
            let spread = if p % 5 == 4 { 12.0 } else { 1.5 };
            let base = &means[rng.random_range(0..n)];
            base.iter().map(|m| m + spread * rng.random_range(-1.0..1.0)).collect()
        })
        .collect();
    RandomInstance { means, vars, points }
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1.0)
}
