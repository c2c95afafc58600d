//! Sequential versus parallel execution, for one debate whose backend calls
//! carry simulated network latency and for a batch of in-memory debates.

use std::thread;
use std::time::Duration;

use adept_core::backend::{Backend, BackendError, CallContext, CompletionRequest, CompletionResult, ScriptedBackend};
use adept_core::batch::{run_batch, synthetic_case, SyntheticCase};
use adept_core::config::ModelConfig;
use adept_core::engine::run_debate;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

struct Delayed<B> {
    inner: B,
    latency: Duration,
}

impl<B: Backend> Backend for Delayed<B> {
    fn complete(&self, ctx: &CallContext, req: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        thread::sleep(self.latency);
        self.inner.complete(ctx, req)
    }
}

fn config(parallel: bool) -> ModelConfig {
    ModelConfig {
        parallel_independent_calls: parallel,
        ..ModelConfig::scripted("bench")
    }
}

fn largest_panel() -> SyntheticCase {
    (0..)
        .map(synthetic_case)
        .find(|c| c.personas.len() == 8)
        .expect("some seed yields an eight-member panel")
}

fn debate_with_latency(c: &mut Criterion) {
    let case = largest_panel();
    let mut group = c.benchmark_group("debate_8_personas_2ms_latency");
    group.sample_size(10);
    for (label, parallel) in [("sequential", false), ("parallel", true)] {
        group.bench_function(label, |b| {
            b.iter(|| {
                let backend = Delayed {
                    inner: ScriptedBackend::new(case.script.clone()),
                    latency: Duration::from_millis(2),
                };
                run_debate(&case.scenario, &case.personas, &config(parallel), &backend).unwrap()
            })
        });
    }
    group.finish();
}

fn batch(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch_of_synthetic_debates");
    group.sample_size(10);
    for size in [16u64, 128] {
        let cases: Vec<_> = (0..size).map(synthetic_case).collect();
        for (label, parallel) in [("sequential", false), ("parallel", true)] {
            group.bench_with_input(BenchmarkId::new(label, size), &cases, |b, cases| {
                b.iter(|| run_batch(cases, &config(false), parallel))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, debate_with_latency, batch);
criterion_main!(benches);
