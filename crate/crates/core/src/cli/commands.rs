use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::analysis::{compare, count_flops, data_flow_report, render_records, render_table};
use crate::autograd::evaluate;
use crate::blocks::ModelSpec;
use crate::data::{load_dataset, normalize, synthesize_split, Dataset, NormSource, Source, Split};
use crate::error::{Error, Result};
use crate::parallel::map_range;

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::specfile::{load_spec, spec_hash};
use super::train::{train_seed, AccuracyStats, RunRecord, Summary};
use super::{DataArgs, DataFormat, ReportFormat, SplitArg};

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("records serialize");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn cmd_analyze(spec_path: &Path, format: ReportFormat, out: &mut dyn Write) -> Result<()> {
    let spec = load_spec(spec_path)?.model;
    let cost = count_flops(&spec, spec.input_shape()?)?;
    let flow = data_flow_report(&spec)?;
    let text = match format {
        ReportFormat::Table => render_table(&cost, &flow),
        ReportFormat::Records => render_records(&cost, &flow),
    };
    emit(out, &text)
}

pub fn cmd_compare(specs: &[impl AsRef<Path>], runs: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let mut reports = Vec::new();
    let mut accuracy = Vec::new();
    for p in specs {
        let spec = load_spec(p.as_ref())?.model;
        reports.push(count_flops(&spec, spec.input_shape()?)?);
        let summary = runs
            .map(|r| r.join(&spec.name).join("summary.json"))
            .filter(|p| p.exists())
            .map(|p| -> Result<Summary> {
                let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))
            })
            .transpose()?;
        accuracy.push(summary.map(|s| s.final_accuracy.mean));
    }
    let rows = compare(&reports, 0)?;
    let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let mut text = format!(
        "{:<width$}  {:>13}  {:>10}  {:>6}\n",
        "model", "mean accuracy", "mil. flops", "factor"
    );
    for (r, acc) in rows.iter().zip(&accuracy) {
        let acc = acc.map_or("-".to_string(), |a| format!("{:.2}%", 100.0 * a));
        text.push_str(&format!(
            "{:<width$}  {:>13}  {:>10.2}  {:>6.2}\n",
            r.model,
            acc,
            r.flops as f64 / 1e6,
            r.rounded_factor()
        ));
    }
    emit(out, &text)
}

fn file_source(data: &DataArgs, images: &Path, labels: Option<&Path>, spec: &ModelSpec) -> Result<Source> {
    let labels = || {
        labels
            .map(Path::to_path_buf)
            .ok_or_else(|| Error::Param("a label file is required for this format".into()))
    };
    Ok(match data.format.unwrap_or(DataFormat::Raw) {
        DataFormat::Idx => Source::IdxPair {
            images: images.into(),
            labels: labels()?,
        },
        DataFormat::Csv => Source::Csv {
            path: images.into(),
            sample: spec.input,
        },
        DataFormat::Raw => Source::RawNchw {
            images: images.into(),
            labels: labels()?,
        },
    })
}

fn check_compatible(ds: &Dataset, spec: &ModelSpec) -> Result<()> {
    let s = ds.sample_shape();
    if [s.channels, s.height, s.width] != spec.input {
        return Err(Error::Compat(format!(
            "data samples are {s}, spec {} expects {:?}",
            spec.name, spec.input
        )));
    }
    Ok(())
}

fn load_split(data: &DataArgs, spec: &ModelSpec, split: Split) -> Result<Option<Dataset>> {
    let ds = if data.synthetic {
        let n = match split {
            Split::Train => data.synthetic_n,
            Split::Test => data.synthetic_test_n,
        };
        Some(synthesize_split(
            data.data_seed,
            n,
            spec.classes,
            spec.input,
            data.difficulty,
            split,
        )?)
    } else {
        let (images, labels) = match split {
            Split::Train => (data.images.as_deref(), data.labels.as_deref()),
            Split::Test => (data.test_images.as_deref(), data.test_labels.as_deref()),
        };
        match images {
            None if split == Split::Train => return Err(Error::Param("pass --synthetic or --images".into())),
            None => None,
            Some(images) => Some(load_dataset(
                &file_source(data, images, labels, spec)?,
                spec.classes,
                split,
            )?),
        }
    };
    if let Some(ds) = &ds {
        check_compatible(ds, spec)?;
    }
    Ok(ds)
}

/// Trains every seed (in parallel when enabled), writing
/// `run_seed<s>.json`, `seed_<s>/` checkpoints and `summary.json` to `dir`.
pub fn cmd_train(
    spec_path: &Path,
    data: &DataArgs,
    dir: &Path,
    seeds: Option<Vec<u64>>,
    max_steps: Option<usize>,
    out: &mut dyn Write,
) -> Result<Summary> {
    let file = load_spec(spec_path)?;
    let spec = file.model;
    let mut cfg = file.train;
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    if max_steps.is_some() {
        cfg.max_steps = max_steps;
    }
    let train_raw = load_split(data, &spec, Split::Train)?.expect("train split is required");
    let (train, stats) = normalize(&train_raw, NormSource::Compute)?;
    let test = load_split(data, &spec, Split::Test)?
        .map(|t| normalize(&t, NormSource::Given(&stats)).map(|(d, _)| d))
        .transpose()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let results = map_range(cfg.seeds.len(), |i| {
        train_seed(&spec, &cfg, &train, test.as_ref(), cfg.seeds[i])
    });

    let mut records: Vec<RunRecord> = Vec::new();
    let mut failed = Vec::new();
    let mut first_err = None;
    for (&seed, r) in cfg.seeds.iter().zip(results) {
        match r {
            Ok((record, graph)) => {
                save_checkpoint(&dir.join(format!("seed_{seed}")), &spec, seed, &graph, Some(&stats))?;
                write_json(&dir.join(format!("run_seed{seed}.json")), &record)?;
                let test = record
                    .final_test_accuracy
                    .map_or(String::new(), |a| format!(", test acc {:.4}", a));
                emit(
                    out,
                    &format!(
                        "seed {seed}: {} steps, train acc {:.4}{test}, {:.2} s\n",
                        record.steps, record.final_train_accuracy, record.wall_time_s
                    ),
                )?;
                records.push(record);
            }
            Err(e) => {
                emit(out, &format!("seed {seed}: aborted: {e}\n"))?;
                failed.push((seed, e.to_string()));
                first_err.get_or_insert(e);
            }
        }
    }
    if records.is_empty() {
        return Err(first_err.expect("no seeds ran and none failed"));
    }
    let summary = Summary {
        model: spec.name.clone(),
        spec_hash: spec_hash(&spec),
        seeds: records.iter().map(|r| r.seed).collect(),
        final_accuracy: AccuracyStats::from_values(records.iter().map(RunRecord::final_accuracy).collect()),
        final_train_accuracy: AccuracyStats::from_values(records.iter().map(|r| r.final_train_accuracy).collect()),
        failed,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    emit(
        out,
        &format!(
            "{}: mean final accuracy {:.4} (std {:.4}) over {} seed(s)\n",
            summary.model,
            summary.final_accuracy.mean,
            summary.final_accuracy.std,
            records.len()
        ),
    )?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: Vec<Option<f64>>,
    pub samples: usize,
}

pub fn cmd_eval(
    checkpoint: &Path,
    spec_path: &Path,
    data: &DataArgs,
    split: SplitArg,
    out: &mut dyn Write,
) -> Result<EvalReport> {
    let spec = load_spec(spec_path)?.model;
    let (mut graph, manifest) = load_checkpoint(checkpoint, &spec)?;
    let split = match split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    // File-backed evaluation reads --images/--labels whatever the split.
    let raw = if data.synthetic {
        load_split(data, &spec, split)?
    } else {
        load_split(data, &spec, Split::Train)?
    }
    .expect("evaluation data is required");
    let ds = match &manifest.norm {
        Some(stats) => normalize(&raw, NormSource::Given(stats))?.0,
        None => raw,
    };
    let (metrics, preds) = evaluate(&mut graph, &ds.images, &ds.labels, 256)?;
    let mut hits = vec![0usize; ds.class_count];
    let hist = ds.class_histogram();
    for (p, &l) in preds.iter().zip(&ds.labels) {
        if *p == l {
            hits[l] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = hits
        .iter()
        .zip(&hist)
        .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
        .collect();
    let mut text = format!("accuracy {:.4} over {} samples\n", metrics.accuracy, ds.len());
    for (c, acc) in per_class.iter().enumerate() {
        match acc {
            Some(a) => text.push_str(&format!("class {c}: {a:.4} ({} samples)\n", hist[c])),
            None => text.push_str(&format!("class {c}: - (0 samples)\n")),
        }
    }
    emit(out, &text)?;
    Ok(EvalReport {
        accuracy: metrics.accuracy,
        per_class,
        samples: ds.len(),
    })
}
