//! Wall-clock study of k-NN versus exact density evaluation.

use std::time::{Duration, Instant};

use cold_core::density::{batch_log_density, DensityEvaluator, DensityMode, DensityModel};
use cold_core::exec::Executor;
use cold_core::knn_index::KnnIndex;
use cold_core::pipeline::{knn_accuracy_study, AccuracyRow, PipelineError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingRow {
    pub k: usize,
    pub approx: Duration,
    pub exact: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub accuracy: AccuracyRow,
    pub timing: TimingRow,
}

fn time<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

/// Times density evaluation over all `points` for each `k` (beam width
/// `k`) and once for the exact sum, which every row repeats.
///
/// Each measurement is preceded by an untimed pass over the first `warmup`
/// points.
pub fn knn_timing_study<P, E>(
    model: &DensityModel,
    index: &KnnIndex,
    points: &[P],
    ks: &[usize],
    warmup: usize,
    exec: &E,
) -> Result<Vec<TimingRow>, PipelineError>
where
    P: AsRef<[f64]> + Sync,
    E: Executor,
{
    if ks.is_empty() || ks.iter().any(|&k| k == 0 || k > model.len()) {
        return Err(PipelineError::BadKs { n: model.len() });
    }
    let warm = &points[..warmup.min(points.len())];
    let exact_ev = DensityEvaluator::new(model, DensityMode::Exact)?;
    batch_log_density(&exact_ev, warm, exec)?;
    let (r, exact) = time(|| batch_log_density(&exact_ev, points, exec));
    r?;
    ks.iter()
        .map(|&k| {
            let ev = DensityEvaluator::new(model, DensityMode::Knn { index, k, ef_search: k })?;
            batch_log_density(&ev, warm, exec)?;
            let (r, approx) = time(|| batch_log_density(&ev, points, exec));
            r?;
            Ok(TimingRow { k, approx, exact })
        })
        .collect()
}

/// Accuracy and timing tables for ascending, deduplicated `ks`.
///
/// The accuracy study uses nested neighbour lists from one query per point
/// (beam `max(ks)`); the timing study queries with beam `k`.
pub fn bench_knn<P, E>(
    model: &DensityModel,
    index: &KnnIndex,
    points: &[P],
    ks: &[usize],
    warmup: usize,
    exec: &E,
) -> Result<Vec<BenchRow>, PipelineError>
where
    P: AsRef<[f64]> + Sync,
    E: Executor,
{
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let accuracy = knn_accuracy_study(model, index, points, &ks, 0, exec)?;
    let timing = knn_timing_study(model, index, points, &ks, warmup, exec)?;
    Ok(accuracy
        .into_iter()
        .zip(timing)
        .map(|(accuracy, timing)| BenchRow { accuracy, timing })
        .collect())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
