use netshift_core::synth::{generate, presets};
use std::time::Instant;

fn main() {
    for name in ["validation", "determinism", "liveness", "classifier", "anomaly", "change"] {
        let spec = presets::by_name(name, 42).unwrap();
        let t = Instant::now();
        let corpus = generate(&spec).unwrap();
        println!(
            "{name:12} {:>9} records  {:>6.1}s  dropped {}  local share {:.4}",
            corpus.records.len(),
            t.elapsed().as_secs_f64(),
            corpus.ground_truth.totals.flows_dropped,
            corpus.ground_truth.totals.local_flow_fraction
        );
    }
}
