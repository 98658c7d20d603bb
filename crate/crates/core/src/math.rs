//! Scalar helpers shared by the numeric modules.
//!
//! The crate is `no_std`, so transcendental functions come from `libm`.

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Streaming log-sum-exp accumulator.
///
/// Keeps the running maximum as the overflow constant and rescales the
/// partial sum whenever a larger term arrives, so the result of folding
/// `l_1, ..., l_n` is `log Σ exp(l_i)` without ever exponentiating a
/// positive number.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    scaled_sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self::new()
    }
}

impl LogSumExp {
    pub const fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled_sum: 0.0,
        }
    }

    #[inline]
    pub fn push(&mut self, term: f64) {
        if term == f64::NEG_INFINITY {
            return;
        }
        if term > self.max {
            self.scaled_sum = self.scaled_sum * exp(self.max - term) + 1.0;
            self.max = term;
        } else {
            self.scaled_sum += exp(term - self.max);
        }
    }

    /// `log Σ exp(l_i)`; `-inf` when nothing was pushed.
    pub fn value(&self) -> f64 {
        if self.scaled_sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            ln(self.scaled_sum) + self.max
        }
    }
}

/// Two-pass log-sum-exp over a slice, with `o = max_i l_i`.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let o = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if o == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = terms.iter().map(|&l| exp(l - o)).sum();
    ln(s) + o
}
