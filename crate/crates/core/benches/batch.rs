use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use voxtend_core::estimators::toy::{ToyWorld, ToyWorldConfig};
use voxtend_core::estimators::AnalyticGaussianEstimator;
use voxtend_core::eval::{Label, Trial};
use voxtend_core::guidance::sample_unguided;
use voxtend_core::parallel::map_seeded;
use voxtend_core::pipeline::{Condition, ConditionKind, Protocol, ProtocolConfig};
use voxtend_core::{DiffusionSeed, Execution, NoiseSchedule, ScheduleKind};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn batch_sampling(c: &mut Criterion) {
    let sched = NoiseSchedule::build(ScheduleKind::Linear, 50).unwrap();
    let est = AnalyticGaussianEstimator::standard(8, 8, sched.clone());
    let mut group = c.benchmark_group("analytic_sampling");
    for n in [16, 64] {
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, &n| {
                b.iter(|| map_seeded(exec, n, 1, |_, seed| sample_unguided(&est, &sched, seed)).unwrap())
            });
        }
    }
    group.finish();
}

fn trial_scoring(c: &mut Criterion) {
    let world = ToyWorld::generate(ToyWorldConfig::default(), &mut DiffusionSeed::new(1)).unwrap();
    let sched = NoiseSchedule::build(ScheduleKind::Linear, 20).unwrap();
    let mut seed = DiffusionSeed::new(2);
    let utts: BTreeMap<String, _> = (0..60)
        .map(|i| (format!("u{i}"), world.utterance(i % 2, 4, &mut seed)))
        .collect();
    let trials: Vec<Trial> = (0..60)
        .flat_map(|i| (i + 1..60).map(move |j| (i, j)))
        .map(|(i, j)| Trial {
            enroll: format!("u{i}"),
            test: format!("u{j}"),
            label: if i % 2 == j % 2 { Label::Same } else { Label::Different },
        })
        .collect();
    let protocol = Protocol {
        utterances: &utts,
        embedder: world.embedder(),
        generator: None,
        sched: &sched,
    };
    let conds = [
        Condition::plain(ConditionKind::Baseline, 0.08).unwrap(),
        Condition::plain(ConditionKind::Duplicate, 0.08).unwrap(),
    ];
    let mut group = c.benchmark_group("protocol_scoring");
    for (name, execution) in MODES {
        let cfg = ProtocolConfig {
            execution,
            ..ProtocolConfig::default()
        };
        group.bench_function(name, |b| b.iter(|| black_box(protocol.run(&trials, &conds, &cfg).unwrap())));
    }
    group.finish();
}

criterion_group!(benches, batch_sampling, trial_scoring);
criterion_main!(benches);
