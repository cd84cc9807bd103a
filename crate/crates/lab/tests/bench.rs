use dla_lab::bench::bench_latency;
use dla_lab_core::detector::{preset, DetectorParams};

#[test]
fn single_rep_stats_are_the_measurement() {
    let cfg = preset("linea-n-toy").unwrap();
    let params = DetectorParams::init(&cfg, 0).unwrap();
    let r = bench_latency(&cfg, &params, (32, 32), 0, 1, 0).unwrap();
    for s in [r.total, r.backbone, r.encoder, r.decoder] {
        assert_eq!(s.mean_ms, s.p50_ms);
        assert_eq!(s.p50_ms, s.p95_ms);
    }
    assert!(bench_latency(&cfg, &params, (32, 32), 0, 0, 0).is_err());
}

#[test]
fn doubling_decoder_layers_slows_the_decoder() {
    let mut cfg = preset("linea-n-toy").unwrap();
    let shallow = DetectorParams::init(&cfg, 0).unwrap();
    let a = bench_latency(&cfg, &shallow, (32, 32), 2, 15, 0).unwrap();
    cfg.decoder_layers *= 2;
    let deep = DetectorParams::init(&cfg, 0).unwrap();
    let b = bench_latency(&cfg, &deep, (32, 32), 2, 15, 0).unwrap();
    assert!(b.decoder.p50_ms > a.decoder.p50_ms, "{:?} vs {:?}", a.decoder, b.decoder);
}
