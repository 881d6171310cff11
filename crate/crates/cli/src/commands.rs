use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use hlfr::analysis::estimate_power;
use hlfr::boundtable::{default_n_grid, default_p_grid, BoundTable};
use hlfr::evaluation::{
    histogram, match_detections, pool_reports, precision_recall_curve, prequential_series,
    MatchReport, PrequentialSeries,
};
use hlfr::hht::{
    read_events, read_predictions, run_detector, write_events, write_outcomes, write_predictions,
    DetectorSpec, Prediction, RunLog,
};
use hlfr::streams::{generate, read_drifts, write_csv, write_drifts};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::svg::{self, Series};

/// Creates `path` and writes the provenance header: command, resolved config
/// and, for per-run files, the run index and seed.
fn create(path: &Path, command: &str, config: &ExperimentConfig, run: Option<(usize, u64)>) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# hlfr {command}")?;
    writeln!(out, "# config: {}", config.to_json_line())?;
    if let Some((r, seed)) = run {
        writeln!(out, "# run={r} seed={seed}")?;
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn save_config(out: &Path, config: &ExperimentConfig) -> Result<()> {
    let text = serde_json::to_string_pretty(config)? + "\n";
    write_text(&out.join("config.json"), &text)
}

fn drifts_path(dir: &Path, r: usize) -> PathBuf {
    dir.join(format!("drifts_{r:03}.txt"))
}

fn events_path(dir: &Path, name: &str, r: usize) -> PathBuf {
    dir.join(name).join(format!("run_{r:03}_events.csv"))
}

fn predictions_path(dir: &Path, name: &str, r: usize) -> PathBuf {
    dir.join(name).join(format!("run_{r:03}_predictions.csv"))
}

pub fn generate_streams(config: &ExperimentConfig, out: &Path) -> Result<()> {
    save_config(out, config)?;
    for r in 0..config.runs {
        let spec = config.run_stream(r)?;
        let stream = generate(&spec)?;
        let seed = config.run_seed(r);
        let path = out.join(format!("stream_{r:03}.csv"));
        let mut w = create(&path, "generate", config, Some((r, seed)))?;
        write_csv(&mut w, &stream.samples)?;
        w.flush()?;
        let drifts = drifts_path(out, r);
        write_drifts(&drifts, &stream.drift_times)?;
        println!("wrote {} ({} samples, drifts {:?})", path.display(), stream.len(), stream.drift_times);
    }
    Ok(())
}

pub fn build_table(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<()> {
    let t = &config.table;
    let table = BoundTable::build(
        &default_p_grid(),
        &t.eta,
        &t.significance,
        &default_n_grid(),
        t.m_draws,
        seed,
    )?;
    save_config(out, config)?;
    let path = out.join("bounds.csv");
    fs::create_dir_all(out)?;
    table.save(&path)?;
    println!("wrote {} ({} entries)", path.display(), table.len());
    Ok(())
}

fn table_if_needed(config: &ExperimentConfig) -> Result<Option<Arc<BoundTable>>> {
    if config.needs_table() {
        Ok(Some(Arc::new(config.load_table()?)))
    } else {
        Ok(None)
    }
}

struct Run {
    log: RunLog,
    drifts: Vec<usize>,
}

fn run_all(config: &ExperimentConfig, detector: &DetectorSpec, table: &Option<Arc<BoundTable>>) -> Result<Vec<Run>> {
    (0..config.runs)
        .into_par_iter()
        .map(|r| {
            let stream = generate(&config.run_stream(r)?)?;
            if stream.len() <= config.train_size {
                bail!(
                    "stream of {} samples leaves nothing after the {}-sample training prefix",
                    stream.len(),
                    config.train_size
                );
            }
            let spec = config.run_spec(detector, r);
            let log = run_detector(&spec, table.clone(), &stream.samples, config.train_size)
                .with_context(|| format!("run {r} of {}", detector.name(config.mode)))?;
            Ok(Run {
                log,
                drifts: stream.drift_times,
            })
        })
        .collect()
}

pub fn detect(config: &ExperimentConfig, out: &Path) -> Result<()> {
    config.stream()?;
    let table = table_if_needed(config)?;
    save_config(out, config)?;
    for detector in &config.detectors {
        let name = detector.name(config.mode);
        let runs = run_all(config, detector, &table)?;
        for (r, run) in runs.iter().enumerate() {
            let seed = config.run_seed(r);
            write_drifts(drifts_path(out, r), &run.drifts)?;
            let mut w = create(&events_path(out, &name, r), "detect", config, Some((r, seed)))?;
            write_events(&mut w, &run.log.events)?;
            w.flush()?;
            let mut w = create(&predictions_path(out, &name, r), "detect", config, Some((r, seed)))?;
            write_predictions(&mut w, &run.log.predictions)?;
            w.flush()?;
            if matches!(detector, DetectorSpec::Hlfr { .. }) {
                let path = out.join(&name).join(format!("run_{r:03}_outcomes.csv"));
                let mut w = create(&path, "detect", config, Some((r, seed)))?;
                write_outcomes(&mut w, &run.log.events)?;
                w.flush()?;
            }
        }
        let confirmed: usize = runs.iter().map(|r| r.log.detections().len()).sum();
        println!("{name}: {} runs, {confirmed} confirmed detections", runs.len());
    }
    Ok(())
}

const METRICS_HEADER: &str = "run,tp,fp,fn,precision,recall,mean_delay";

fn metrics_row(label: &str, m: &MatchReport) -> String {
    let delay = m.mean_delay().map_or(String::new(), |d| d.to_string());
    format!("{label},{},{},{},{},{},{delay}", m.tp, m.fp, m.fn_, m.precision, m.recall)
}

fn write_pr_curve(config: &ExperimentConfig, dir: &Path, title: &str, curve: &[(i64, MatchReport)]) -> Result<()> {
    let mut w = create(&dir.join("pr_curve.csv"), "evaluate", config, None)?;
    writeln!(w, "delay_range,precision,recall")?;
    for (d, m) in curve {
        writeln!(w, "{d},{},{}", m.precision, m.recall)?;
    }
    w.flush()?;
    let series = [
        Series {
            name: "precision".into(),
            points: curve.iter().map(|(d, m)| (*d as f64, m.precision)).collect(),
        },
        Series {
            name: "recall".into(),
            points: curve.iter().map(|(d, m)| (*d as f64, m.recall)).collect(),
        },
    ];
    write_text(
        &dir.join("pr_curve.svg"),
        &svg::line_plot(title, "delay range", "value", &series, Some((0.0, 1.0))),
    )
}

fn write_prequential(config: &ExperimentConfig, path: &Path, series: &PrequentialSeries) -> Result<()> {
    let mut w = create(path, "evaluate", config, None)?;
    series.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn prequential_plot(title: &str, series: &[(String, PrequentialSeries)]) -> String {
    let lines: Vec<Series> = series
        .iter()
        .map(|(name, s)| Series {
            name: name.clone(),
            points: s.t.iter().zip(&s.oac).map(|(&t, &a)| (t as f64, a)).collect(),
        })
        .collect();
    svg::line_plot(title, "t", "prequential accuracy", &lines, Some((0.0, 1.0)))
}

fn pooled_curve(config: &ExperimentConfig, per_run: &[(Vec<usize>, Vec<usize>)]) -> Result<Vec<(i64, MatchReport)>> {
    config
        .delay_grid
        .iter()
        .map(|&d| {
            let reports = per_run
                .iter()
                .map(|(dets, truth)| match_detections(dets, truth, d))
                .collect::<hlfr::Result<Vec<_>>>()?;
            Ok((d, pool_reports(&reports)))
        })
        .collect()
}

/// Scores one event log against its ground truth.
pub fn evaluate_files(
    config: &ExperimentConfig,
    events: &Path,
    drifts: &Path,
    predictions: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let detections: Vec<usize> = read_events(events)?
        .iter()
        .filter(|e| e.confirmed())
        .map(|e| e.t_pot)
        .collect();
    let truth = read_drifts(drifts)?;
    let report = match_detections(&detections, &truth, config.delay_range)?;
    let mut w = create(&out.join("metrics.csv"), "evaluate", config, None)?;
    writeln!(w, "{METRICS_HEADER}")?;
    writeln!(w, "{}", metrics_row("0", &report))?;
    w.flush()?;
    let curve = precision_recall_curve(&detections, &truth, &config.delay_grid)?;
    write_pr_curve(config, out, "precision and recall", &curve)?;
    if let Some(p) = predictions {
        let series = prequential_series(&read_predictions(p)?, config.prequential())?;
        write_prequential(config, &out.join("prequential.csv"), &series)?;
        write_text(
            &out.join("prequential.svg"),
            &prequential_plot("prequential accuracy", &[("run 0".into(), series)]),
        )?;
    }
    println!(
        "TP={} FP={} FN={} precision={:.3} recall={:.3}",
        report.tp, report.fp, report.fn_, report.precision, report.recall
    );
    Ok(())
}

/// Detector folders under `input` holding `run_*_events.csv` logs.
fn detector_dirs(input: &Path) -> Result<Vec<(String, usize)>> {
    let mut found = Vec::new();
    let entries = fs::read_dir(input).with_context(|| format!("cannot list {}", input.display()))?;
    for entry in entries {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let mut runs = 0;
        while events_path(input, &name, runs).exists() {
            runs += 1;
        }
        if runs > 0 {
            found.push((name, runs));
        }
    }
    found.sort();
    if found.is_empty() {
        bail!("no detection logs under {}; run `hlfr detect` first", input.display());
    }
    Ok(found)
}

/// Scores every detector folder written by `detect`.
pub fn evaluate_dir(config: &ExperimentConfig, input: &Path, out: &Path) -> Result<()> {
    save_config(out, config)?;
    let mut summary = create(&out.join("evaluation_summary.csv"), "evaluate", config, None)?;
    writeln!(summary, "detector,{}", &METRICS_HEADER["run,".len()..])?;
    let mut series_plot = Vec::new();
    for (name, runs) in detector_dirs(input)? {
        let dir = out.join(&name);
        let mut per_run = Vec::with_capacity(runs);
        let mut w = create(&dir.join("metrics.csv"), "evaluate", config, None)?;
        writeln!(w, "{METRICS_HEADER}")?;
        let mut reports = Vec::new();
        for r in 0..runs {
            let truth_file = drifts_path(input, r);
            let truth = read_drifts(&truth_file)
                .with_context(|| format!("missing ground truth {}", truth_file.display()))?;
            let dets: Vec<usize> = read_events(&events_path(input, &name, r))?
                .iter()
                .filter(|e| e.confirmed())
                .map(|e| e.t_pot)
                .collect();
            let report = match_detections(&dets, &truth, config.delay_range)?;
            writeln!(w, "{}", metrics_row(&r.to_string(), &report))?;
            reports.push(report);
            let preds_file = predictions_path(input, &name, r);
            if preds_file.exists() {
                let series = prequential_series(&read_predictions(&preds_file)?, config.prequential())?;
                write_prequential(config, &dir.join(format!("run_{r:03}_prequential.csv")), &series)?;
                if r == 0 {
                    series_plot.push((name.clone(), series));
                }
            }
            per_run.push((dets, truth));
        }
        let pooled = pool_reports(&reports);
        writeln!(w, "{}", metrics_row("pooled", &pooled))?;
        w.flush()?;
        let row = metrics_row(&name, &pooled);
        writeln!(summary, "{row}")?;
        write_pr_curve(config, &dir, &format!("{name}: precision and recall"), &pooled_curve(config, &per_run)?)?;
        println!("{row}");
    }
    summary.flush()?;
    if !series_plot.is_empty() {
        write_text(
            &out.join("prequential.svg"),
            &prequential_plot("prequential accuracy, run 0", &series_plot),
        )?;
    }
    Ok(())
}

pub fn power(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<()> {
    let table = Arc::new(config.load_table()?);
    let matrix = estimate_power(&config.power, table, seed)?;
    save_config(out, config)?;
    let mut w = create(&out.join("power.csv"), "power", config, None)?;
    matrix.write_csv(&mut w)?;
    w.flush()?;
    write_text(
        &out.join("power.svg"),
        &svg::heatmap(
            "detection power",
            "post-change rate q",
            "pre-change rate p",
            &matrix.grid,
            &matrix.power,
        ),
    )?;
    println!("wrote {} ({}x{} cells, {} runs each)", out.join("power.csv").display(), matrix.grid.len(), matrix.grid.len(), matrix.runs);
    Ok(())
}

fn mean_accuracy(preds: &[Prediction]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().filter(|p| p.y == p.yhat).count() as f64 / preds.len() as f64
}

/// Runs every detector on the same streams and writes the comparison tables
/// and figures.
pub fn compare(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let stream_kind = serde_json::to_value(&config.stream()?.generator)?
        .get("kind")
        .and_then(|k| k.as_str().map(str::to_string))
        .unwrap_or_else(|| "stream".into());
    let table = table_if_needed(config)?;
    save_config(out, config)?;

    let mut names = Vec::new();
    let mut pooled = Vec::new();
    let mut accuracy = Vec::new();
    let mut hist_series = Vec::new();
    let mut curves = Vec::new();
    for detector in &config.detectors {
        let name = detector.name(config.mode);
        let runs = run_all(config, detector, &table)?;
        let per_run: Vec<(Vec<usize>, Vec<usize>)> =
            runs.iter().map(|r| (r.log.detections(), r.drifts.clone())).collect();
        let reports = per_run
            .iter()
            .map(|(d, g)| match_detections(d, g, config.delay_range))
            .collect::<hlfr::Result<Vec<_>>>()?;
        pooled.push(pool_reports(&reports));
        accuracy.push(runs.iter().map(|r| mean_accuracy(&r.log.predictions)).sum::<f64>() / runs.len() as f64);
        let times: Vec<usize> = per_run.iter().flat_map(|(d, _)| d.iter().copied()).collect();
        hist_series.push((name.clone(), histogram(&times).into_iter().collect::<Vec<_>>()));
        curves.push(pooled_curve(config, &per_run)?);
        names.push(name);
    }

    // mean delay table, one column per detector
    let mut w = create(&out.join("summary.csv"), "compare", config, None)?;
    writeln!(w, "stream,{}", names.join(","))?;
    let delays: Vec<String> = pooled
        .iter()
        .map(|m| m.mean_delay().map_or("NA".into(), |d| format!("{d:.2}")))
        .collect();
    writeln!(w, "{stream_kind},{}", delays.join(","))?;
    w.flush()?;

    let mut w = create(&out.join("summary_metrics.csv"), "compare", config, None)?;
    writeln!(w, "detector,tp,fp,fn,precision,recall,mean_delay,mean_accuracy")?;
    for ((name, m), acc) in names.iter().zip(&pooled).zip(&accuracy) {
        let delay = m.mean_delay().map_or(String::new(), |d| d.to_string());
        writeln!(w, "{name},{},{},{},{},{},{delay},{acc}", m.tp, m.fp, m.fn_, m.precision, m.recall)?;
    }
    w.flush()?;

    let mut w = create(&out.join("histograms.csv"), "compare", config, None)?;
    writeln!(w, "detector,t,count")?;
    for (name, bins) in &hist_series {
        for (t, c) in bins {
            writeln!(w, "{name},{t},{c}")?;
        }
    }
    w.flush()?;
    write_text(
        &out.join("histograms.svg"),
        &svg::histogram("detection times over all runs", "t", &hist_series),
    )?;

    let mut w = create(&out.join("pr_curves.csv"), "compare", config, None)?;
    writeln!(w, "detector,delay_range,precision,recall")?;
    let mut precision = Vec::new();
    let mut recall = Vec::new();
    for (name, curve) in names.iter().zip(&curves) {
        for (d, m) in curve {
            writeln!(w, "{name},{d},{},{}", m.precision, m.recall)?;
        }
        precision.push(Series {
            name: name.clone(),
            points: curve.iter().map(|(d, m)| (*d as f64, m.precision)).collect(),
        });
        recall.push(Series {
            name: name.clone(),
            points: curve.iter().map(|(d, m)| (*d as f64, m.recall)).collect(),
        });
    }
    w.flush()?;
    write_text(
        &out.join("precision.svg"),
        &svg::line_plot("precision", "delay range", "precision", &precision, Some((0.0, 1.0))),
    )?;
    write_text(
        &out.join("recall.svg"),
        &svg::line_plot("recall", "delay range", "recall", &recall, Some((0.0, 1.0))),
    )?;

    let width = names.iter().map(String::len).max().unwrap_or(8).max(8);
    println!("{:width$}  {:>10}  {:>9}  {:>6}", "detector", "mean delay", "precision", "recall");
    for ((name, m), d) in names.iter().zip(&pooled).zip(&delays) {
        println!("{name:width$}  {d:>10}  {:>9.3}  {:>6.3}", m.precision, m.recall);
    }
    Ok(())
}
