//! Wall-clock latency of the detector, split by stage.

use std::time::Instant;

use dla_lab_core::data::gen_record;
use dla_lab_core::detector::{run_backbone, run_decoder, run_encoder, DetectorConfig, DetectorParams};
use dla_lab_core::encoder::GelanMode;
use dla_lab_core::evaluation::LatencyStats;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

/// Latency summary in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

impl From<LatencyStats> for Stats {
    fn from(s: LatencyStats) -> Self {
        Self {
            mean_ms: s.mean,
            p50_ms: s.p50,
            p95_ms: s.p95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub height: usize,
    pub width: usize,
    pub warmup: usize,
    pub reps: usize,
    pub total: Stats,
    pub backbone: Stats,
    pub encoder: Stats,
    pub decoder: Stats,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Times deploy-mode inference on one synthetic image of `size`. The first
/// `warmup` runs are discarded.
pub fn bench_latency(
    cfg: &DetectorConfig,
    params: &DetectorParams,
    size: (usize, usize),
    warmup: usize,
    reps: usize,
    seed: u64,
) -> LabResult<BenchReport> {
    if reps == 0 {
        return Err(LabError::Usage("reps must be at least 1".into()));
    }
    let image = gen_record(0, size, 3, seed)?.image;
    let mut samples = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for i in 0..warmup + reps {
        let t0 = Instant::now();
        let maps = run_backbone(params, &image)?;
        let t_backbone = ms(t0);
        let t1 = Instant::now();
        let enc = run_encoder(params, &maps, GelanMode::Deploy)?;
        let t_encoder = ms(t1);
        let t2 = Instant::now();
        std::hint::black_box(run_decoder(cfg, params, &enc)?);
        let t_decoder = ms(t2);
        if i >= warmup {
            for (s, v) in samples.iter_mut().zip([t_backbone + t_encoder + t_decoder, t_backbone, t_encoder, t_decoder]) {
                s.push(v);
            }
        }
    }
    let stats = |s: &[f64]| Stats::from(LatencyStats::from_samples(s).expect("reps >= 1"));
    Ok(BenchReport {
        height: size.0,
        width: size.1,
        warmup,
        reps,
        total: stats(&samples[0]),
        backbone: stats(&samples[1]),
        encoder: stats(&samples[2]),
        decoder: stats(&samples[3]),
    })
}
