//! Per-invocation timing of the weight computations.

use std::fmt::Write;
use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ndnum::{Tape, Tensor};
use crate::weighting::{
    adaptive_ratio_weights, dwa_weights, uncertainty_combine, LossHistory, UncertaintyVariant,
};

pub const BENCH_HEADER: &str = "scheme,n_tasks,iterations,median_ns,mean_ns,p99_ns";

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub scheme: &'static str,
    pub n_tasks: usize,
    pub iterations: usize,
    pub median_ns: f64,
    pub mean_ns: f64,
    pub p99_ns: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{BENCH_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{:.1},{:.1},{:.1}",
                r.scheme, r.n_tasks, r.iterations, r.median_ns, r.mean_ns, r.p99_ns
            )
            .unwrap();
        }
        out
    }

    pub fn extend(&mut self, other: BenchReport) {
        self.rows.extend(other.rows);
    }
}

/// Nearest-rank statistics of a set of nanosecond samples.
fn summarize(scheme: &'static str, n_tasks: usize, mut samples: Vec<f64>) -> BenchRow {
    samples.sort_by(f64::total_cmp);
    let len = samples.len();
    let rank = |q: f64| samples[((q * len as f64).ceil() as usize).clamp(1, len) - 1];
    BenchRow {
        scheme,
        n_tasks,
        iterations: len,
        median_ns: rank(0.5),
        mean_ns: samples.iter().sum::<f64>() / len as f64,
        p99_ns: rank(0.99),
    }
}

fn time_each<T>(iterations: usize, inputs: &[T], mut f: impl FnMut(&T)) -> Vec<f64> {
    for input in inputs.iter().cycle().take(iterations / 10) {
        f(input);
    }
    inputs
        .iter()
        .cycle()
        .take(iterations)
        .map(|input| {
            let start = Instant::now();
            f(input);
            start.elapsed().as_nanos() as f64
        })
        .collect()
}

/// Times adaptive-ratio, DWA, and revised-uncertainty weighting on random
/// positive losses, after a warm-up of `iterations / 10` calls each.
pub fn bench_weighting(n_tasks: usize, iterations: usize, seed: u64) -> Result<BenchReport> {
    if n_tasks == 0 {
        return Err(Error::config("bench needs at least one task"));
    }
    if iterations < 100 {
        return Err(Error::config(format!(
            "bench needs >= 100 iterations, got {iterations}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut losses = || -> Vec<f64> { (0..n_tasks).map(|_| rng.random_range(0.05..5.0)).collect() };
    const POOL: usize = 64;
    let loss_pool: Vec<Vec<f64>> = (0..POOL).map(|_| losses()).collect();
    let history_pool: Vec<LossHistory> = (0..POOL)
        .map(|_| {
            let mut h = LossHistory::new(n_tasks);
            h.record_epoch(&losses()).expect("positive");
            h.record_epoch(&losses()).expect("positive");
            h
        })
        .collect();
    let s_pool: Vec<(Vec<f64>, Vec<f64>)> = (0..POOL)
        .map(|i| {
            let s = losses().iter().map(|v| v - 2.5).collect();
            (loss_pool[i].clone(), s)
        })
        .collect();

    let adaptive = time_each(iterations, &loss_pool, |l| {
        black_box(adaptive_ratio_weights(black_box(l)).expect("positive"));
    });
    let dwa = time_each(iterations, &history_pool, |h| {
        black_box(dwa_weights(black_box(h), 2.0).expect("valid"));
    });
    let uncertainty = time_each(iterations, &s_pool, |(l, s)| {
        let tape = Tape::new();
        let losses: Vec<_> = l.iter().map(|&v| tape.constant(v)).collect();
        let s = tape.leaf(Tensor::vector(s.clone()));
        let total = uncertainty_combine(&losses, s, UncertaintyVariant::Revised).expect("sizes");
        black_box(total.item());
    });

    Ok(BenchReport {
        rows: vec![
            summarize("adaptive_ratio", n_tasks, adaptive),
            summarize("dwa", n_tasks, dwa),
            summarize("uncertainty_revised", n_tasks, uncertainty),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_iteration_counts() {
        assert!(bench_weighting(5, 10, 0).is_err());
        assert!(bench_weighting(0, 1000, 0).is_err());
    }

    #[test]
    fn summary_ranks() {
        let row = summarize("x", 1, (1..=100).map(f64::from).collect());
        assert_eq!(row.median_ns, 50.0);
        assert_eq!(row.p99_ns, 99.0);
        assert_eq!(row.mean_ns, 50.5);
    }

    #[test]
    fn report_has_three_rows() {
        let r = bench_weighting(2, 200, 1).unwrap();
        let names: Vec<_> = r.rows.iter().map(|r| r.scheme).collect();
        assert_eq!(names, ["adaptive_ratio", "dwa", "uncertainty_revised"]);
        assert!(r
            .rows
            .iter()
            .all(|r| r.median_ns <= r.p99_ns && r.iterations == 200));
        assert!(r.to_csv().starts_with(BENCH_HEADER));
    }
}
