//! Benchmark sweep over input sizes `2^k`.

use std::io::Write;

use log::info;
use serde::Serialize;

use crate::inputs::synthetic_pair;
use crate::rng::streams;
use crate::transport::{run_local, BenchRecord, PartyInput, RunConfig, TransportError};

/// Default share of items common to both parties.
pub const DEFAULT_OVERLAP: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepOptions {
    pub overlap: f64,
    /// Runs per size; the fastest is reported.
    pub repetitions: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            overlap: DEFAULT_OVERLAP,
            repetitions: 1,
        }
    }
}

/// One record per `k` in `k_min..=k_max`, each from equal-size synthetic
/// sets of `2^k` items.
pub fn bench_sweep(
    k_min: u32,
    k_max: u32,
    cfg: &RunConfig,
    opts: SweepOptions,
) -> Result<Vec<BenchRecord>, TransportError> {
    let mut records = Vec::new();
    for k in k_min..=k_max {
        let n = 1usize << k;
        let mut gen = cfg.rng_mode().stream(streams::SYNTHETIC ^ u64::from(k));
        let (x, y) = synthetic_pair(n, opts.overlap, &mut gen);
        let mut best: Option<BenchRecord> = None;
        for rep in 0..opts.repetitions.max(1) {
            let run_cfg = RunConfig {
                seed: cfg.seed.map(|s| s.wrapping_add(rep as u64)),
                ..cfg.clone()
            };
            let rec = run_local(
                &run_cfg,
                PartyInput::new(x.clone()),
                PartyInput::new(y.clone()),
            )?
            .record;
            if best.is_none_or(|b| rec.runtime_seconds < b.runtime_seconds) {
                best = Some(rec);
            }
        }
        let rec = best.expect("at least one repetition");
        info!(
            "k={k} runtime={:.4}s comm={:.3}MB mechanisms={:.2}%",
            rec.runtime_seconds,
            rec.comm_megabytes,
            100.0 * rec.mechanism_fraction
        );
        records.push(rec);
    }
    Ok(records)
}

#[derive(Serialize)]
struct CsvRow {
    k: Option<u32>,
    runtime_s: f64,
    #[serde(rename = "comm_MB")]
    comm_mb: f64,
    recall: Option<f64>,
    precision: Option<f64>,
}

/// Writes `k,runtime_s,comm_MB,recall,precision`.
pub fn write_csv<W: Write>(records: &[BenchRecord], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(CsvRow {
            k: r.k,
            runtime_s: r.runtime_seconds,
            comm_mb: r.comm_megabytes,
            recall: r.recall_observed,
            precision: r.precision_observed,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_sweep_writes_csv() {
        let cfg = RunConfig::new(3.0, 1e-6, 0.9, Some(5)).unwrap();
        let recs = bench_sweep(4, 6, &cfg, SweepOptions::default()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(
            recs.iter().map(|r| r.k).collect::<Vec<_>>(),
            vec![Some(4), Some(5), Some(6)]
        );
        let mut buf = Vec::new();
        write_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,runtime_s,comm_MB,recall,precision\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
