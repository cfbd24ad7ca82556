//! Forward-only timing of the selective scan across sequence lengths; the
//! log-log slope against length demonstrates the linear-time claim.

use std::time::Instant;

use hcmen_core::rng;
use hcmen_core::ssm::selective_scan_forward;

use crate::{HcmenError, Result};

/// Fixed kernel dimensions so only the sequence length varies.
pub const BENCH_INNER_DIM: usize = 64;
pub const BENCH_STATE_DIM: usize = 16;

#[derive(Debug, Clone, Copy)]
pub struct BenchRow {
    pub length: usize,
    pub median_ms: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Least-squares slope of ln(median_ms) against ln(length); NaN with
    /// fewer than two lengths.
    pub loglog_slope: f64,
}

pub fn run(lengths: &[usize], trials: usize) -> Result<BenchReport> {
    if lengths.is_empty() || trials == 0 {
        return Err(HcmenError::Format("bench: need at least one length and one trial".into()));
    }
    if lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HcmenError::Format("bench: lengths must be strictly ascending".into()));
    }
    let (di, n) = (BENCH_INNER_DIM, BENCH_STATE_DIM);
    let mut r = rng::seeded(0xBE_EC);
    let a: Vec<f32> = (0..di * n).map(|_| -(rng::uniform(&mut r, 0.5, 2.0) as f32)).collect();
    let d_skip: Vec<f32> = (0..di).map(|_| rng::uniform(&mut r, -1.0, 1.0) as f32).collect();

    // Global warmup at the largest length so clock ramp-up does not inflate
    // the small-length medians (which would flatten the fitted slope).
    {
        let len = *lengths.last().unwrap();
        let delta = vec![0.01f32; len * di];
        let b = vec![0.5f32; len * n];
        let c = vec![0.5f32; len * n];
        let u = vec![0.1f32; len * di];
        for _ in 0..2 {
            let out = selective_scan_forward(&a, &delta, &b, &c, &u, &d_skip, len, di, n, None);
            std::hint::black_box(out);
        }
    }

    let mut rows = Vec::with_capacity(lengths.len());
    for &len in lengths {
        let delta: Vec<f32> = (0..len * di).map(|_| rng::uniform(&mut r, 0.001, 0.1) as f32).collect();
        let b: Vec<f32> = (0..len * n).map(|_| rng::uniform(&mut r, -1.0, 1.0) as f32).collect();
        let c: Vec<f32> = (0..len * n).map(|_| rng::uniform(&mut r, -1.0, 1.0) as f32).collect();
        let u: Vec<f32> = (0..len * di).map(|_| rng::uniform(&mut r, -1.0, 1.0) as f32).collect();

        // warmup
        let sink = selective_scan_forward(&a, &delta, &b, &c, &u, &d_skip, len, di, n, None);
        std::hint::black_box(sink);

        let mut times = Vec::with_capacity(trials);
        for _ in 0..trials {
            let start = Instant::now();
            let out = selective_scan_forward(&a, &delta, &b, &c, &u, &d_skip, len, di, n, None);
            let elapsed = start.elapsed();
            std::hint::black_box(out);
            times.push(elapsed.as_secs_f64() * 1e3);
        }
        times.sort_by(|x, y| x.partial_cmp(y).unwrap());
        rows.push(BenchRow { length: len, median_ms: times[times.len() / 2] });
    }
    Ok(BenchReport { loglog_slope: fit_slope(&rows), rows })
}

fn fit_slope(rows: &[BenchRow]) -> f64 {
    if rows.len() < 2 {
        return f64::NAN;
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| ((r.length as f64).ln(), r.median_ms.max(1e-9).ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let var: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    cov / var
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unsorted_lengths() {
        assert!(run(&[256, 128], 3).is_err());
        assert!(run(&[], 3).is_err());
    }

    #[test]
    fn one_row_per_length() {
        let report = run(&[64, 128], 2).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert!(report.rows.iter().all(|r| r.median_ms > 0.0));
    }

    #[test]
    fn slope_fit_on_exact_linear_data() {
        let rows = vec![
            BenchRow { length: 100, median_ms: 1.0 },
            BenchRow { length: 200, median_ms: 2.0 },
            BenchRow { length: 400, median_ms: 4.0 },
        ];
        let slope = fit_slope(&rows);
        assert!((slope - 1.0).abs() < 1e-9);
    }
}
