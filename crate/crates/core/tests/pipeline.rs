use cdm_core::decompose::{decompose_dataset, Decomposition, DistributionTemplate, SyntheticAmounts, TemplateSettings};
use cdm_core::extra_trees::{read_model, train, write_model, Dataset, ExtraTreesParams};
use cdm_core::ingest::CustomerRecord;
use cdm_core::orchestrator::{run_batches, RiskState, ScoringConfig};
use cdm_core::rules::{Catalog, FeatureScores, RuleConfig};
use cdm_core::synth::{generate, SynthSettings};
use cdm_core::Execution;

fn records(n: usize) -> Vec<CustomerRecord> {
    generate(&SynthSettings { customers: n, ..Default::default() }, Execution::Parallel).unwrap()
}

fn decompose(records: &[CustomerRecord], exec: Execution) -> Decomposition {
    let amounts = SyntheticAmounts::default().generate().unwrap();
    let t = DistributionTemplate::prepare(amounts, records.iter().flat_map(|r| r.bill_amt), &TemplateSettings::default())
        .unwrap();
    decompose_dataset(records, &t, 11, 2005, exec).unwrap()
}

#[test]
fn sequential_and_parallel_runs_agree() {
    let recs = records(500);
    let d = decompose(&recs, Execution::Sequential);
    assert_eq!(d, decompose(&recs, Execution::Parallel));

    let data = Dataset::from_offline(&d.offline[4]);
    let params = ExtraTreesParams { n_trees: 12, seed: 3, ..Default::default() };
    let model = train(&data, &params, Execution::Sequential).unwrap();
    assert_eq!(model, train(&data, &params, Execution::Parallel).unwrap());

    let scores = FeatureScores::from_model(&model).unwrap();
    let catalog = Catalog::new(RuleConfig::default_catalog(), Some(&scores)).unwrap();
    let cfg = ScoringConfig::default();
    let a = run_batches(&d.offline, &d.online, &model, &catalog, &cfg, Execution::Sequential).unwrap();
    let b = run_batches(&d.offline, &d.online, &model, &catalog, &cfg, Execution::Parallel).unwrap();
    assert_eq!(a.state, b.state);
    assert_eq!(a.confusion, b.confusion);
    assert_eq!(a.reports.len(), 5);
}

#[test]
fn persisted_model_and_state_reproduce_the_run() {
    let recs = records(300);
    let d = decompose(&recs, Execution::Parallel);
    let model = train(&Dataset::from_offline(&d.offline[4]), &ExtraTreesParams { n_trees: 6, ..Default::default() }, Execution::Parallel)
        .unwrap();
    let mut buf = Vec::new();
    write_model(&model, &mut buf).unwrap();
    let reloaded = read_model(buf.as_slice()).unwrap();
    for row in &d.offline[0] {
        assert_eq!(model.predict_offline(row).unwrap().to_bits(), reloaded.predict_offline(row).unwrap().to_bits());
    }

    let scores = FeatureScores::from_model(&reloaded).unwrap();
    let catalog = Catalog::new(RuleConfig::default_catalog(), Some(&scores)).unwrap();
    let out = run_batches(&d.offline, &d.online, &reloaded, &catalog, &ScoringConfig::default(), Execution::Parallel).unwrap();
    let mut state_csv = Vec::new();
    out.state.write(&mut state_csv).unwrap();
    let back = RiskState::read(state_csv.as_slice()).unwrap();
    assert_eq!(back, out.state);
    assert!(back.records().iter().all(|r| (0.0..=1.0).contains(&r.r_offline) && (0.0..=1.0).contains(&r.last_r_total)));
    assert!(back.records().iter().all(|r| r.last_batch == 5 || r.last_ordinal == 0));
}

#[test]
fn lambda_extremes() {
    let recs = records(200);
    let d = decompose(&recs, Execution::Parallel);
    let model = train(&Dataset::from_offline(&d.offline[4]), &ExtraTreesParams { n_trees: 5, ..Default::default() }, Execution::Parallel)
        .unwrap();
    let scores = FeatureScores::from_model(&model).unwrap();
    let catalog = Catalog::new(RuleConfig::default_catalog(), Some(&scores)).unwrap();

    // With lambda = 0 every fused score equals the carried risk, so the last
    // fused score is the carried risk and never falls below the final sync.
    let cfg = ScoringConfig { lambda: 0.0, ..Default::default() };
    let out = run_batches(&d.offline, &d.online, &model, &catalog, &cfg, Execution::Parallel).unwrap();
    for (r, row) in out.state.records().iter().zip(&d.offline[4]) {
        assert_eq!(r.account, row.account);
        assert_eq!(r.last_r_total, r.r_offline);
        assert!(r.r_offline >= model.predict_offline(row).unwrap());
    }
}
