//! Shared fixtures for the training benchmarks.

use lflctr_core::ingest::DatasetDay;
use lflctr_core::synth::{generate, GeneratorConfig};

/// One synthetic day of `events` impressions over a 200 x 100 dyad grid.
pub fn day(events: usize, seed: u64) -> DatasetDay {
    let cfg = GeneratorConfig {
        banners: 200,
        domains: 100,
        order: 5,
        days: 1,
        events_per_day: events,
        seed,
        ..Default::default()
    };
    generate(&cfg)
        .expect("valid generator config")
        .days
        .remove(0)
}
