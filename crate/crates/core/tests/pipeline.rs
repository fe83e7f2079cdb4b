use survcal::harness::plots::emit_plots;
use survcal::harness::sweep::{load_plot_points, sweep};
use survcal::harness::{
    read_metrics_csv, run_experiment, train_model, write_experiment, ExperimentConfig,
};
use survcal::model::TrainConfig;
use survcal::synthgen::{generate_dataset, Dataset, Split, SynthConfig};
use survcal::{Mode, ProbabilityModel, SyntheticOracle};

#[test]
fn dataset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&SynthConfig {
        n: 400,
        seed: 9,
        ..Default::default()
    })
    .unwrap();
    let path = dir.path().join("data.csv");
    ds.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back.to_csv_bytes().unwrap(), ds.to_csv_bytes().unwrap());
    assert_eq!(back.split(Split::Test).len(), ds.split(Split::Test).len());
}

#[test]
fn train_calibrate_report_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&SynthConfig {
        n: 3000,
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    let (train, cal, test) = (
        ds.split(Split::Train),
        ds.split(Split::Calib),
        ds.split(Split::Test),
    );
    let (model, report) = train_model(
        &SyntheticOracle,
        &train,
        100,
        &TrainConfig::default(),
        11,
        true,
    )
    .unwrap();
    assert!(report.epoch_losses.iter().all(|l| l.is_finite()));

    let model_path = dir.path().join("model.bin");
    model.save(&model_path).unwrap();
    let model = ProbabilityModel::load(&model_path).unwrap();

    let config = ExperimentConfig {
        runs: 3,
        budget_per_prompt: 25.0,
        master_seed: 11,
        ..Default::default()
    };
    let result = run_experiment(&SyntheticOracle, &model, &cal, &test, &config).unwrap();
    assert_eq!(result.rows.len(), 3 * config.modes.len());
    for row in &result.rows {
        assert!((0.0..=1.0).contains(&row.avg_coverage));
        if row.mode == Mode::Uncalibrated {
            assert_eq!(row.tau_hat, config.alpha);
        }
    }
    write_experiment(&result, dir.path()).unwrap();
    assert_eq!(
        read_metrics_csv(&dir.path().join("metrics.csv")).unwrap(),
        result.rows
    );
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(summary["modes"].is_array());

    let cells = sweep(
        &SyntheticOracle,
        &model,
        &cal,
        &test,
        &ExperimentConfig { runs: 2, ..config },
        &[10.0, 40.0],
        &[10.0],
        &[0.1],
    )
    .unwrap();
    let sweep_dir = dir.path().join("sweep");
    cells.write(&sweep_dir).unwrap();
    let points = load_plot_points(&sweep_dir).unwrap();
    assert_eq!(points, cells.plot_points());
    let files = emit_plots(&points, &dir.path().join("plots")).unwrap();
    assert!(files
        .iter()
        .any(|f| f.extension().is_some_and(|e| e == "svg")));
}
