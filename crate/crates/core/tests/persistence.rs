use std::fs;

use hep2_core::data::{
    experiment_data, extract_features, generate_phantoms, load_model, phantom_specs, save_model, TrainedModel,
    MODEL_MANIFEST,
};
use hep2_core::eval::{stratified_split, ExperimentPlan};
use hep2_core::features::{ExtractorConfig, FeatureSetKind};
use hep2_core::frameworks::{train_framework, FrameworkKind, FrameworkSpec, ResolverChoice, TrainConfig};
use hep2_core::svm::TrainGrid;
use hep2_core::Error;

fn small_config() -> TrainConfig {
    TrainConfig {
        grid: TrainGrid::new(vec![1e3, 1e5], vec![0.005, 0.05]).unwrap(),
        cascade_grid: TrainGrid::new(vec![1e3], vec![0.05]).unwrap(),
        n_trees_max: 40,
        adaboost_rounds: 20,
        ..TrainConfig::default()
    }
}

fn trained(spec: FrameworkSpec, kind: FeatureSetKind) -> (TrainedModel, hep2_core::frameworks::SampleSet) {
    let manifest = generate_phantoms(&phantom_specs(12, 5)).unwrap();
    let cfg = ExtractorConfig::default();
    let features = extract_features(&manifest, &cfg).unwrap();
    let data = experiment_data(&manifest, &features, kind);
    let split = stratified_split(&data.samples.labels, &data.tags, &ExperimentPlan::default(), 3).unwrap();
    let model = train_framework(
        &spec,
        &data.samples.subset(&split.train),
        &data.samples.subset(&split.val),
        &small_config(),
    )
    .unwrap();
    let trained = TrainedModel {
        spec,
        features: kind,
        extractor: cfg,
        model,
    };
    (trained, data.samples.subset(&split.test))
}

#[test]
fn every_framework_round_trips() {
    let specs = [
        (FrameworkKind::OneVsOne, None),
        (FrameworkKind::OneVsRest, Some(ResolverChoice::Pairwise)),
        (FrameworkKind::HierCommon, Some(ResolverChoice::Score)),
        (FrameworkKind::HierCascade, Some(ResolverChoice::Pairwise)),
        (FrameworkKind::RandomUniformForest, None),
        (FrameworkKind::RandomForest, None),
        (FrameworkKind::AdaBoost, None),
    ];
    for (kind, resolver) in specs {
        let spec = FrameworkSpec::new(kind, resolver).unwrap();
        let (model, test) = trained(spec, FeatureSetKind::ClassSpecific);
        let dir = tempfile::tempdir().unwrap();
        save_model(dir.path(), &model).unwrap();
        let back = load_model(dir.path()).unwrap();
        assert_eq!(back, model, "{}", spec.label());
        let (a, b) = (back.model.predict_set(&test).unwrap(), model.model.predict_set(&test).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((&x.accepted, &x.survivors, x.assigned), (&y.accepted, &y.survivors, y.assigned));
            // Scores may be NaN for kinds without a first-stage score.
            let bits = |v: &[f64]| v.iter().map(|s| s.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&x.scores), bits(&y.scores));
        }
    }
}

#[test]
fn wrong_version_and_truncation_are_reported() {
    let spec = FrameworkSpec::new(FrameworkKind::OneVsOne, None).unwrap();
    let (model, _) = trained(spec, FeatureSetKind::Texture);
    let dir = tempfile::tempdir().unwrap();
    save_model(dir.path(), &model).unwrap();

    let manifest = dir.path().join(MODEL_MANIFEST);
    let text = fs::read_to_string(&manifest).unwrap();
    fs::write(&manifest, text.replacen("\"version\": 1", "\"version\": 2", 1)).unwrap();
    assert!(matches!(load_model(dir.path()), Err(Error::Version { .. })));
    fs::write(&manifest, &text).unwrap();

    let svm_file = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with(".svm.json"))
        .unwrap();
    let svm_text = fs::read_to_string(&svm_file).unwrap();
    fs::write(&svm_file, &svm_text[..svm_text.len() / 2]).unwrap();
    match load_model(dir.path()) {
        Err(Error::Corrupt { path, .. }) => assert_eq!(path, svm_file),
        other => panic!("expected a corrupt-file error, got {other:?}"),
    }
    fs::remove_file(&svm_file).unwrap();
    assert!(matches!(load_model(dir.path()), Err(Error::Io { .. })));
}
