use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;

use survcal::harness::plots::emit_plots;
use survcal::harness::sweep::{self as harness_sweep, load_plot_points};
use survcal::harness::{evaluate, predict_all, train_model, Evaluation};
use survcal::model::FitReport;
use survcal::synthgen::{generate_dataset, Dataset, Split};
use survcal::{CalibrationResult, ProbabilityModel, SyntheticOracle};

use crate::config::RunConfig;
use crate::Failure;

type Outcome = Result<(), Failure>;

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

/// Writes the resolved config as `{command}.config.json` before any work.
fn echo_config(config: &RunConfig, out: &Path, command: &str) -> Outcome {
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(runtime)?;
    let path = out.join(format!("{command}.config.json"));
    let mut bytes = serde_json::to_vec_pretty(config).map_err(runtime)?;
    bytes.push(b'\n');
    fs::write(&path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)?;
    log::info!("resolved config written to {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(runtime)?;
    bytes.push(b'\n');
    fs::write(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)
}

fn dataset_path(config: &RunConfig, out: &Path) -> PathBuf {
    config
        .dataset
        .path
        .clone()
        .unwrap_or_else(|| out.join("dataset.csv"))
}

fn model_path(config: &RunConfig, out: &Path) -> PathBuf {
    config
        .model
        .path
        .clone()
        .unwrap_or_else(|| out.join("model.bin"))
}

fn load_dataset(config: &RunConfig, out: &Path) -> Result<Dataset, Failure> {
    let path = dataset_path(config, out);
    if !path.exists() {
        return Err(Failure::Validation(anyhow!(
            "dataset {} not found; run `survcal synth` or set dataset.path",
            path.display()
        )));
    }
    Dataset::load(&path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(runtime)
}

fn load_model(config: &RunConfig, out: &Path) -> Result<ProbabilityModel, Failure> {
    let path = model_path(config, out);
    if !path.exists() {
        return Err(Failure::Validation(anyhow!(
            "model {} not found; run `survcal train` or set model.path",
            path.display()
        )));
    }
    ProbabilityModel::load(&path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(runtime)
}

fn generate(config: &RunConfig, out: &Path) -> Result<Dataset, Failure> {
    let dataset = generate_dataset(&config.dataset.synth).map_err(runtime)?;
    let path = out.join("dataset.csv");
    dataset
        .save(&path)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)?;
    log::info!(
        "wrote {} records to {}",
        dataset.records.len(),
        path.display()
    );
    Ok(dataset)
}

fn fit_and_save(
    config: &RunConfig,
    dataset: &Dataset,
    out: &Path,
) -> Result<ProbabilityModel, Failure> {
    let train = dataset.split(Split::Train);
    log::info!(
        "training on {} prompts with {} audited outputs each",
        train.len(),
        config.model.train_draws
    );
    let (model, report): (ProbabilityModel, FitReport) = train_model(
        &SyntheticOracle,
        &train,
        config.model.train_draws,
        &config.model.train,
        config.master_seed,
        config.calibration.use_shortcut,
    )
    .map_err(runtime)?;
    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        log::info!("epoch {epoch}: loss {loss:.6}");
    }
    let path = out.join("model.bin");
    model
        .save(&path)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)?;
    write_json(&out.join("fit_report.json"), &report)?;
    Ok(model)
}

pub fn synth(config: &RunConfig, out: &Path) -> Outcome {
    echo_config(config, out, "synth")?;
    generate(config, out).map(drop)
}

pub fn train(config: &RunConfig, out: &Path) -> Outcome {
    echo_config(config, out, "train")?;
    let dataset = load_dataset(config, out)?;
    fit_and_save(config, &dataset, out).map(drop)
}

#[derive(Serialize)]
struct CalibrationArtifact<'a> {
    result: &'a CalibrationResult,
    test_evaluation: Evaluation,
    n_test: usize,
}

pub fn calibrate(config: &RunConfig, out: &Path) -> Outcome {
    echo_config(config, out, "calibrate")?;
    let dataset = load_dataset(config, out)?;
    let model = load_model(config, out)?;
    let (cal, test) = (dataset.split(Split::Calib), dataset.split(Split::Test));
    let preds = predict_all(&model, &cal).map_err(runtime)?;
    let cal_config = config.calibration_config(cal.len(), config.master_seed);
    let run = survcal::calibrate::calibrate(
        &SyntheticOracle,
        &cal,
        &preds,
        &cal_config,
        config.calibration.use_shortcut,
    )
    .map_err(runtime)?;
    let test_preds = predict_all(&model, &test).map_err(runtime)?;
    let test_evaluation = evaluate(&run.result, &test, &test_preds).map_err(runtime)?;
    log::info!(
        "{}: tau_hat {:.6}, gamma {:.3}, test coverage {:.4}",
        run.result.mode,
        run.result.tau_hat,
        run.result.gamma,
        test_evaluation.avg_coverage
    );
    let artifact = CalibrationArtifact {
        result: &run.result,
        test_evaluation,
        n_test: test.len(),
    };
    write_json(&out.join("calibration.json"), &artifact)
}

pub fn sweep(config: &RunConfig, out: &Path) -> Outcome {
    echo_config(config, out, "sweep")?;
    let dataset = if dataset_path(config, out).exists() {
        load_dataset(config, out)?
    } else {
        generate(config, out)?
    };
    let model = if model_path(config, out).exists() {
        load_model(config, out)?
    } else {
        fit_and_save(config, &dataset, out)?
    };
    let (cal, test) = (dataset.split(Split::Calib), dataset.split(Split::Test));
    let h = &config.harness;
    let result = harness_sweep::sweep(
        &SyntheticOracle,
        &model,
        &cal,
        &test,
        &config.experiment_config(),
        &h.budgets,
        &h.gammas,
        &h.alphas,
    )
    .map_err(runtime)?;
    let sweep_dir = out.join("sweep");
    result.write(&sweep_dir).map_err(runtime)?;
    let files = emit_plots(&result.plot_points(), &out.join("plots")).map_err(runtime)?;
    log::info!(
        "{} sweep cells, {} skipped, {} plot files",
        result.cells.len(),
        result.skipped.len(),
        files.len()
    );
    Ok(())
}

pub fn report(config: &RunConfig, out: &Path) -> Outcome {
    let sweep_dir = out.join("sweep");
    if !sweep_dir.join("sweep.json").exists() {
        return Err(Failure::Validation(anyhow!(
            "no sweep results under {}",
            sweep_dir.display()
        )));
    }
    echo_config(config, out, "report")?;
    let points = load_plot_points(&sweep_dir).map_err(runtime)?;
    let files = emit_plots(&points, &out.join("plots")).map_err(runtime)?;
    for file in &files {
        println!("{}", file.display());
    }
    Ok(())
}
