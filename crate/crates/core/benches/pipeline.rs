use std::hint::black_box;

use ados_core::assessment::LabeledSession;
use ados_core::features::{extract_features, FeatureConfig};
use ados_core::rules::{default_grid, fit_params, FitSample, RuleParams};
use ados_core::synth::{generate, GeneratorProfile};
use ados_core::Execution;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn corpus(n: usize) -> Vec<(ados_core::transcript::SessionTranscript, LabeledSession)> {
    let td = n * 3 / 7;
    let asd = n / 7;
    let profile = GeneratorProfile {
        n_sessions: n,
        class_mix: [td, asd, n - td - asd],
        seed: 11,
        ..GeneratorProfile::default()
    };
    generate(&profile)
        .expect("valid profile")
        .sessions
        .into_iter()
        .map(|s| {
            let label = LabeledSession {
                session_id: s.transcript.session_id().to_string(),
                truth: s.labels,
                clinician: *s.transcript.clinician_items().expect("synth sessions carry clinician items"),
            };
            (s.transcript, label)
        })
        .collect()
}

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn features(c: &mut Criterion) {
    let cfg = FeatureConfig::default();
    let mut group = c.benchmark_group("extract_features");
    for n in [28, 280] {
        let sessions: Vec<_> = corpus(n).into_iter().map(|(t, _)| t).collect();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &sessions, |b, s| {
                b.iter(|| exec.map(s, |t| extract_features(black_box(t), &cfg).unwrap()))
            });
        }
    }
    group.finish();
}

fn fitting(c: &mut Criterion) {
    let cfg = FeatureConfig::default();
    let base = RuleParams::default();
    let grid = default_grid(&base);
    let mut group = c.benchmark_group("fit_params");
    group.sample_size(20);
    for n in [28, 280] {
        let samples: Vec<FitSample> = corpus(n)
            .into_iter()
            .map(|(t, l)| FitSample {
                features: extract_features(&t, &cfg).unwrap(),
                class: l.diagnosis().ternary(),
                truth: l.truth,
                session_id: l.session_id,
            })
            .collect();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &samples, |b, s| {
                b.iter(|| fit_params(black_box(s), &base, &grid, 7, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, features, fitting);
criterion_main!(benches);
