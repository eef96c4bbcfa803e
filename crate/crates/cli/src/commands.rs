use std::collections::hash_map::RandomState;
use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::hash::{BuildHasher, Hasher};
use std::path::{Path, PathBuf};

use lible_core::checkpoint::Checkpoint;
use lible_core::data::{load_dataset, read_distributions, write_distributions};
use lible_core::metrics::{evaluate, EvalReport, METRIC_NAMES};
use lible_core::trainer::{grid_search, train_and_evaluate};
use lible_core::{objective, recover, train, Dataset, Error, Matrix, ObjectiveKind, TrainConfig};
use serde::Serialize;

use crate::failure::{CliResult, Failure};
use crate::manifest::{now_ms, sha256_file, DatasetRef, RunManifest, RunStatus, MANIFEST_SCHEMA, TOOL_VERSION};
use crate::TrainArgs;

fn entropy_seed() -> u64 {
    // RandomState keys come from the operating system's entropy source
    let mut h = RandomState::new().build_hasher();
    h.write_u128(now_ms());
    h.finish()
}

fn resolve(args: &TrainArgs) -> CliResult<TrainConfig> {
    let objective = objective::by_name(&args.objective)?.kind();
    let config = TrainConfig {
        alpha: args.alpha,
        beta: args.beta,
        latent_dim: args.latent_dim,
        hidden_dim: args.hidden_dim,
        epochs: args.epochs,
        learning_rate: args.lr,
        batch: args.batch,
        seed: args.seed.unwrap_or_else(entropy_seed),
        mc_samples: args.mc_samples,
        objective,
    };
    for warning in config.validate()? {
        eprintln!("warning: {warning}");
    }
    Ok(config)
}

fn train_flags(config: &TrainConfig, args: &TrainArgs) -> Vec<String> {
    let objective = objective::by_kind(config.objective).name();
    [
        ("--alpha", config.alpha.to_string()),
        ("--beta", config.beta.to_string()),
        ("--latent-dim", config.latent_dim.to_string()),
        ("--hidden-dim", config.hidden_dim.to_string()),
        ("--epochs", config.epochs.to_string()),
        ("--lr", config.learning_rate.to_string()),
        ("--batch", config.batch.to_string()),
        ("--mc-samples", config.mc_samples.to_string()),
        ("--seed", config.seed.to_string()),
        ("--binarize", args.binarize.to_string()),
        ("--objective", objective.to_string()),
    ]
    .into_iter()
    .flat_map(|(k, v)| [k.to_string(), v])
    .collect()
}

fn path_arg(p: &Path) -> String {
    p.display().to_string()
}

fn prepare_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::output(dir, e))
}

struct Run {
    manifest: RunManifest,
    path: PathBuf,
}

impl Run {
    /// Records the manifest before any output is produced.
    fn start(
        argv: &[String],
        rerun: Vec<String>,
        config: &TrainConfig,
        args: &TrainArgs,
        dataset: &Path,
        out_dir: &Path,
        outputs: &[&str],
    ) -> CliResult<Self> {
        let manifest = RunManifest {
            schema_version: MANIFEST_SCHEMA,
            tool_version: TOOL_VERSION.to_string(),
            command: argv.to_vec(),
            rerun,
            config: config.clone(),
            binarize: args.binarize,
            dataset: DatasetRef {
                path: dataset.to_path_buf(),
                sha256: sha256_file(dataset)?,
            },
            seed: config.seed,
            outputs: outputs.iter().map(|name| (name.to_string(), out_dir.join(name))).collect::<BTreeMap<_, _>>(),
            started_unix_ms: now_ms(),
            finished_unix_ms: None,
            status: RunStatus::Running,
            error: None,
        };
        let path = out_dir.join("manifest.json");
        manifest.write(&path)?;
        Ok(Self { manifest, path })
    }

    fn output(&self, name: &str) -> PathBuf {
        self.manifest.outputs[name].clone()
    }

    /// Finalizes the manifest with the outcome of `result`.
    fn close<T>(mut self, result: CliResult<T>) -> CliResult<T> {
        let (status, error) = match &result {
            Ok(_) => (RunStatus::Completed, None),
            Err(f) if f.code == crate::failure::EXIT_ABORT => (RunStatus::Aborted, Some(f.message.clone())),
            Err(f) => (RunStatus::Failed, Some(f.message.clone())),
        };
        self.manifest.finish(status, error, &self.path)?;
        result
    }
}

fn load_with_labels(path: &Path, args: &TrainArgs) -> CliResult<(Dataset, Matrix)> {
    let ds = load_dataset(path)?;
    let labels = ds.logical_or_binarized(&args.binarize)?;
    Ok((ds, labels))
}

fn require_truth(ds: &Dataset) -> CliResult<&Matrix> {
    ds.distributions
        .as_ref()
        .ok_or_else(|| Failure::data(format!("{} has no d: columns to evaluate against", ds.name)))
}

pub fn enhance(argv: &[String], dataset: &Path, args: &TrainArgs, out_dir: &Path) -> CliResult<()> {
    let config = resolve(args)?;
    let (ds, labels) = load_with_labels(dataset, args)?;
    prepare_dir(out_dir)?;
    let mut rerun = vec!["enhance".to_string(), "--dataset".into(), path_arg(dataset)];
    rerun.extend(train_flags(&config, args));
    rerun.extend(["--out-dir".to_string(), path_arg(out_dir)]);
    let run = Run::start(
        argv,
        rerun,
        &config,
        args,
        dataset,
        out_dir,
        &["recovered.csv", "params.ckpt", "history.csv"],
    )?;

    let result = (|| {
        let history_path = run.output("history.csv");
        let (params, history) = match train(&ds.features, &labels, &config) {
            Ok(trained) => trained,
            Err(Error::TrainingAborted { epoch, term, history }) => {
                write_history(&history, &history_path)?;
                return Err(Failure {
                    code: crate::failure::EXIT_ABORT,
                    message: format!("training aborted at epoch {epoch}: non-finite {term}"),
                });
            }
            Err(e) => return Err(e.into()),
        };
        let d_hat = recover(&params, &ds.features)?;
        let recovered = run.output("recovered.csv");
        write_distributions(&ds.label_names, &d_hat, &recovered).map_err(|e| Failure::output(&recovered, e))?;
        let ckpt = run.output("params.ckpt");
        Checkpoint::new(config.clone(), params)
            .save(&ckpt)
            .map_err(|e| Failure::output(&ckpt, e))?;
        write_history(&history, &history_path)
    })();
    run.close(result)
}

fn write_history(history: &lible_core::TrainHistory, path: &Path) -> CliResult<()> {
    let file = fs::File::create(path).map_err(|e| Failure::output(path, e))?;
    history.write_csv(file).map_err(|e| Failure::output(path, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::output(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Failure::output(path, e))
}

pub fn eval(
    pred: &Path,
    truth: &Path,
    out: &Path,
    csv: Option<&Path>,
    dataset_name: Option<String>,
    method: &str,
) -> CliResult<()> {
    let (pred_names, p) = read_distributions(pred)?;
    let (truth_names, d) = read_distributions(truth)?;
    if pred_names != truth_names {
        return Err(Failure::data(format!(
            "label columns differ: prediction has {pred_names:?}, truth has {truth_names:?}"
        )));
    }
    let report = evaluate(&d, &p)?;
    write_json(&report, out)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Failure::output(out, e))?);
    if let Some(table) = csv {
        let name = dataset_name.unwrap_or_else(|| {
            truth
                .file_stem()
                .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned())
        });
        append_row(table, &EvalReport::csv_header(), &report.csv_row(&name, method))?;
    }
    Ok(())
}

fn append_row(path: &Path, header: &[String], row: &[String]) -> CliResult<()> {
    let fresh = fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Failure::output(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(header).map_err(|e| Failure::output(path, e))?;
    }
    w.write_record(row).map_err(|e| Failure::output(path, e))?;
    w.flush().map_err(|e| Failure::output(path, e))
}

#[derive(Serialize)]
struct BestCell {
    alpha: f64,
    beta: f64,
    seed: u64,
    report: EvalReport,
}

pub fn gridsearch(
    argv: &[String],
    dataset: &Path,
    alphas: &[f64],
    betas: &[f64],
    args: &TrainArgs,
    out_dir: &Path,
) -> CliResult<()> {
    if alphas.is_empty() || betas.is_empty() {
        return Err(Failure::usage("--alphas and --betas need at least one value each"));
    }
    let config = resolve(args)?;
    for v in alphas.iter().chain(betas) {
        TrainConfig {
            alpha: *v,
            ..config.clone()
        }
        .validate()?;
    }
    let ds = load_dataset(dataset)?;
    require_truth(&ds)?;
    ds.logical_or_binarized(&args.binarize)?;
    prepare_dir(out_dir)?;
    let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
    let mut rerun = vec![
        "gridsearch".to_string(),
        "--dataset".into(),
        path_arg(dataset),
        "--alphas".into(),
        list(alphas),
        "--betas".into(),
        list(betas),
    ];
    rerun.extend(train_flags(&config, args));
    rerun.extend(["--out-dir".to_string(), path_arg(out_dir)]);
    let run = Run::start(argv, rerun, &config, args, dataset, out_dir, &["grid.csv", "best.json"])?;

    let result = (|| {
        let grid = grid_search(&ds, &args.binarize, alphas, betas, &config)?;
        let grid_path = run.output("grid.csv");
        let mut w = csv::Writer::from_path(&grid_path).map_err(|e| Failure::output(&grid_path, e))?;
        let mut header = vec!["alpha", "beta", "seed", "status"];
        header.extend(METRIC_NAMES);
        header.push("error");
        w.write_record(&header).map_err(|e| Failure::output(&grid_path, e))?;
        for cell in &grid.cells {
            let mut row = vec![cell.alpha.to_string(), cell.beta.to_string(), cell.seed.to_string()];
            match &cell.outcome {
                Ok(r) => {
                    row.push("ok".into());
                    row.extend(r.values().iter().map(f64::to_string));
                    row.push(String::new());
                }
                Err(msg) => {
                    row.push("failed".into());
                    row.extend(std::iter::repeat_n(String::new(), METRIC_NAMES.len()));
                    row.push(msg.clone());
                }
            }
            w.write_record(&row).map_err(|e| Failure::output(&grid_path, e))?;
        }
        w.flush().map_err(|e| Failure::output(&grid_path, e))?;

        let Some(best) = grid.best_cell() else {
            return Err(Failure {
                code: crate::failure::EXIT_ABORT,
                message: "every grid cell failed".into(),
            });
        };
        let best = BestCell {
            alpha: best.alpha,
            beta: best.beta,
            seed: best.seed,
            report: *best.outcome.as_ref().expect("best cell succeeded"),
        };
        write_json(&best, &run.output("best.json"))
    })();
    run.close(result)
}

pub fn ablation(argv: &[String], dataset: &Path, args: &TrainArgs, out_dir: &Path) -> CliResult<()> {
    let config = resolve(args)?;
    let (ds, labels) = load_with_labels(dataset, args)?;
    let truth = require_truth(&ds)?;
    prepare_dir(out_dir)?;
    let mut rerun = vec!["ablation".to_string(), "--dataset".into(), path_arg(dataset)];
    rerun.extend(train_flags(&config, args));
    rerun.extend(["--out-dir".to_string(), path_arg(out_dir)]);
    let run = Run::start(argv, rerun, &config, args, dataset, out_dir, &["ablation.csv"])?;

    let result = (|| {
        let path = run.output("ablation.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Failure::output(&path, e))?;
        w.write_record(EvalReport::csv_header()).map_err(|e| Failure::output(&path, e))?;
        for kind in [ObjectiveKind::Lib, ObjectiveKind::LibGap] {
            let cfg = TrainConfig {
                objective: kind,
                ..config.clone()
            };
            let (report, _, _) = train_and_evaluate(&ds.features, &labels, truth, &cfg)?;
            w.write_record(report.csv_row(&ds.name, kind.as_str()))
                .map_err(|e| Failure::output(&path, e))?;
        }
        w.flush().map_err(|e| Failure::output(&path, e))
    })();
    run.close(result)
}
