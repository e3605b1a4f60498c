use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cdm_core::decompose::{decompose_dataset, DistributionTemplate, SyntheticAmounts, TemplateSettings};
use cdm_core::extra_trees::{train, Dataset, ExtraTreesParams};
use cdm_core::orchestrator::{init_offline_risk, previous_bills, stream_batch, ScoringConfig};
use cdm_core::rules::{Catalog, FeatureScores, RuleConfig};
use cdm_core::synth::{generate, SynthSettings};
use cdm_core::Execution;

const MODES: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

fn label(e: Execution) -> &'static str {
    match e {
        Execution::Sequential => "sequential",
        Execution::Parallel => "parallel",
    }
}

fn pipeline(c: &mut Criterion) {
    let records = generate(&SynthSettings { customers: 3000, ..Default::default() }, Execution::Parallel).unwrap();
    let amounts = SyntheticAmounts::default().generate().unwrap();
    let template =
        DistributionTemplate::prepare(amounts, records.iter().flat_map(|r| r.bill_amt), &TemplateSettings::default()).unwrap();
    let d = decompose_dataset(&records, &template, 7, 2005, Execution::Parallel).unwrap();
    let data = Dataset::from_offline(&d.offline[4]);
    let params = ExtraTreesParams { n_trees: 20, ..Default::default() };
    let model = train(&data, &params, Execution::Parallel).unwrap();
    let scores = FeatureScores::from_model(&model).unwrap();
    let catalog = Catalog::new(RuleConfig::default_catalog(), Some(&scores)).unwrap();
    let prev = previous_bills(&d.offline[0], None);
    let scoring = ScoringConfig::default();

    let mut g = c.benchmark_group("train");
    g.sample_size(10);
    for mode in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(label(mode)), &mode, |b, &m| {
            b.iter(|| black_box(train(&data, &params, m).unwrap()))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("decompose");
    g.sample_size(10);
    for mode in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(label(mode)), &mode, |b, &m| {
            b.iter(|| black_box(decompose_dataset(&records, &template, 7, 2005, m).unwrap()))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("score_online_batch");
    for mode in MODES {
        let state = init_offline_risk(&model, &d.offline[0], 1, mode).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(label(mode)), &mode, |b, &m| {
            b.iter(|| {
                let mut s = state.clone();
                black_box(stream_batch(&mut s, 1, &d.offline[0], &prev, &d.online[0], &catalog, &scoring, m).unwrap())
            })
        });
    }
    g.finish();
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
