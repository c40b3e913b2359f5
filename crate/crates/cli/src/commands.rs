use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde_json::json;

use dqclass::config::{Preset, RunConfig};
use dqclass::labeler::{
    generate_pairs, label_manifest, labeled_impressions, read_label_map, read_reports, synthetic_corpus,
    synthetic_reports, train_encoder, write_label_map, write_reports, HashingEncoder, ReportRecord,
};
use dqclass::model::NetworkConfig;
use dqclass::phantom::{generate_dataset, write_dataset, Dataset, Manifest, SplitCounts};
use dqclass::rl::{parse_metrics_csv, train_rl_with, write_metrics_csv};
use dqclass::sdl::{predict_sdl, train_sdl_with, write_epochs_csv};
use dqclass::stats::{compare, pair_predictions, read_predictions, write_predictions, McNemarMethod};

use crate::{EvalArgs, GenDataArgs, LabelsPredictArgs, LabelsTrainArgs, MethodArg, PresetArg, TrainRlArgs, TrainSdlArgs};

/// Labelled reference impressions written per class by `gen-data`.
const REFS_PER_CLASS: usize = 45;

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Records what is needed to reproduce a run: the resolved configuration,
/// the seed and the program version.
fn record_run(dir: &Path, command: &str, seed: u64, config: &RunConfig) -> Result<()> {
    write(&dir.join("config.toml"), &config.to_toml())?;
    write_json(
        &dir.join("run.json"),
        &json!({ "command": command, "seed": seed, "version": env!("CARGO_PKG_VERSION") }),
    )
}

fn load_dataset(manifest: &Path, labels: Option<&Path>) -> Result<Dataset> {
    let mut ds = Dataset::load(manifest).with_context(|| format!("loading {}", manifest.display()))?;
    if let Some(path) = labels {
        let map = read_label_map(path)?;
        ds.relabel(&map).with_context(|| format!("applying labels from {}", path.display()))?;
        eprintln!("labels: {} entries from {}", map.len(), path.display());
    }
    Ok(ds)
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    if let Some(p) = a.preset {
        cfg.data.preset = match p {
            PresetArg::Paper => Preset::Paper,
            PresetArg::Desk => Preset::Desk,
        };
    }
    if let Some(s) = a.seed {
        cfg.data.seed = s;
    }
    let out = &a.common.out;
    let phantom = cfg.data.preset.phantom(cfg.data.seed);
    let (volumes, manifest) = generate_dataset(&phantom, &SplitCounts::paper())?;
    let manifest_path = write_dataset(out, &volumes, &manifest)?;

    let ids: Vec<_> = volumes.iter().map(|v| (v.id.clone(), v.label)).collect();
    write_reports(&out.join("reports.jsonl"), &synthetic_reports(&ids, cfg.data.seed))?;
    let refs: Vec<ReportRecord> = synthetic_corpus(REFS_PER_CLASS, cfg.data.seed, "ref")?
        .into_iter()
        .map(|i| ReportRecord { id: i.id, impression: i.text, label: Some(i.label) })
        .collect();
    write_reports(&out.join("reports_labeled.jsonl"), &refs)?;
    record_run(out, "gen-data", cfg.data.seed, &cfg)?;

    let [x, y, z] = phantom.out_dims;
    println!(
        "wrote {} volumes ({x}x{y}x{z}) and {} to {}",
        manifest.len(),
        manifest_path.file_name().and_then(|n| n.to_str()).unwrap_or("manifest"),
        out.display()
    );
    Ok(())
}

pub fn train_rl(a: TrainRlArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    let spec = &mut cfg.rl;
    if let Some(v) = a.episodes {
        spec.episodes = v;
    }
    if let Some(v) = a.test_every {
        spec.test_every = v;
    }
    if let Some(v) = a.batch {
        spec.batch = v;
    }
    if let Some(v) = a.lr {
        spec.lr = v;
    }
    if let Some(v) = a.gamma {
        spec.gamma = v;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let out = &a.common.out;
    let ds = load_dataset(&a.manifest, a.labels.as_deref())?;
    let dims = ds.dims().context("manifest lists no volumes")?;
    let net_config = NetworkConfig::standard(dims);
    record_run(out, "train-rl", cfg.seed, &cfg)?;

    let outcome = train_rl_with(&ds, &cfg.rl, &net_config, cfg.seed, |row| {
        if let Some(acc) = row.test_accuracy {
            eprintln!("episode {:>4}  epsilon {:.4}  test accuracy {acc:.4}", row.episode, row.epsilon);
        }
    })?;
    outcome.learner.net.save(&out.join("dqn.ckpt"))?;
    write(&out.join("network.json"), &serde_json::to_string_pretty(&net_config)?)?;
    write_metrics_csv(&out.join("metrics.csv"), &outcome.metrics)?;
    write_predictions(&out.join("predictions.jsonl"), &outcome.final_eval.predictions)?;
    write_json(
        &out.join("summary.json"),
        &json!({ "episodes": cfg.rl.episodes, "test_accuracy": outcome.final_eval.accuracy }),
    )?;
    println!("final test accuracy {:.4}", outcome.final_eval.accuracy);
    Ok(())
}

pub fn train_sdl(a: TrainSdlArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    if let Some(v) = a.epochs {
        cfg.sdl.epochs = v;
    }
    if let Some(v) = a.batch {
        cfg.sdl.batch = v;
    }
    if let Some(v) = a.lr {
        cfg.sdl.lr = v;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let out = &a.common.out;
    let ds = load_dataset(&a.manifest, a.labels.as_deref())?;
    let dims = ds.dims().context("manifest lists no volumes")?;
    let net_config = NetworkConfig::standard(dims);
    record_run(out, "train-sdl", cfg.seed, &cfg)?;

    let outcome = train_sdl_with(&ds, &cfg.sdl_config(), &net_config, |row| {
        if row.epoch % 10 == 0 {
            eprintln!("epoch {:>4}  loss {:.5}  train accuracy {:.4}", row.epoch, row.loss, row.train_accuracy);
        }
    })?;
    let train = predict_sdl(&outcome.net, &ds.train)?;
    let test = predict_sdl(&outcome.net, &ds.test)?;
    outcome.net.save(&out.join("sdl.ckpt"))?;
    write(&out.join("network.json"), &serde_json::to_string_pretty(&net_config)?)?;
    write_epochs_csv(&out.join("epochs.csv"), &outcome.epochs)?;
    write_predictions(&out.join("predictions.jsonl"), &test.predictions)?;
    write_json(
        &out.join("summary.json"),
        &json!({ "epochs": cfg.sdl.epochs, "train_accuracy": train.accuracy, "test_accuracy": test.accuracy }),
    )?;
    println!("train accuracy {:.4}, test accuracy {:.4}", train.accuracy, test.accuracy);
    Ok(())
}

pub fn labels_train(a: LabelsTrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    if let Some(v) = a.epochs {
        cfg.nlp.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.nlp.lr = v;
    }
    if let Some(v) = a.margin {
        cfg.nlp.margin = v;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let out = &a.common.out;
    let reports = read_reports(&a.reports)?;
    let refs = labeled_impressions(&reports)?;
    let pairs = generate_pairs(&refs)?;
    let same = pairs.iter().filter(|p| p.same_class).count();
    eprintln!("{} labelled reports, {} pairs ({same} same, {} different)", refs.len(), pairs.len(), pairs.len() - same);
    record_run(out, "labels-train", cfg.seed, &cfg)?;

    let nlp = cfg.nlp_config();
    let mut encoder = HashingEncoder::<f32>::new(nlp.seed)?;
    let losses = train_encoder(&mut encoder, &refs, &pairs, &nlp)?;
    encoder.save(&out.join("encoder.ckpt"))?;
    let labelled: Vec<ReportRecord> = reports.into_iter().filter(|r| r.label.is_some()).collect();
    write_reports(&out.join("refs.jsonl"), &labelled)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(csv, "{},{l}", i + 1);
    }
    write(&out.join("loss.csv"), &csv)?;
    println!("{} pairs, final loss {:.6}", pairs.len(), losses.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

pub fn labels_predict(a: LabelsPredictArgs) -> Result<()> {
    let encoder = HashingEncoder::<f32>::load(&a.model.join("encoder.ckpt"))?;
    let refs = labeled_impressions(&read_reports(&a.model.join("refs.jsonl"))?)?;
    let reports = read_reports(&a.reports)?;
    let manifest = Manifest::read(&a.manifest)?;
    let labels = label_manifest(&encoder, &refs, &reports, &manifest)?;
    write_label_map(&a.out, &labels)?;
    let tumor = labels.iter().filter(|r| r.label == dqclass::phantom::Label::Tumor).count();
    println!("labelled {} reports ({} normal, {tumor} tumor)", labels.len(), labels.len() - tumor);
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let pa = read_predictions(&a.a)?;
    let pb = read_predictions(&a.b)?;
    let paired = pair_predictions(&pa, &pb)?;
    let method = match a.method {
        MethodArg::Exact => McNemarMethod::Exact,
        MethodArg::Chi2Corrected => McNemarMethod::Chi2Corrected,
    };
    let report = compare(&paired, method)?;
    write(&a.out, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    println!(
        "accuracy A {:.4}, B {:.4}; b={} c={} p={:.6}",
        report.accuracy_a, report.accuracy_b, report.b, report.c, report.p_value
    );

    if let Some(metrics) = &a.metrics {
        let text = fs::read_to_string(metrics).with_context(|| format!("reading {}", metrics.display()))?;
        let rows = parse_metrics_csv(&text)?;
        let mut curve = String::from("episode,test_accuracy\n");
        let mut n = 0;
        for r in &rows {
            if let Some(acc) = r.test_accuracy {
                let _ = writeln!(curve, "{},{acc}", r.episode);
                n += 1;
            }
        }
        let path = a.curve.clone().unwrap_or_else(|| a.out.with_file_name("accuracy_curve.csv"));
        write(&path, &curve)?;
        println!("accuracy curve: {n} points in {}", path.display());
    }
    Ok(())
}
