use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use super::config::{BuildSettings, EffectiveConfig, FileConfig, FitSettings, SynthSettings};
use super::manifest::{RunManifest, MANIFEST_NAME};
use super::{BuildArgs, CliError, CompareArgs, FitArgs, GlobalArgs, ReportArgs, SynthArgs, EXIT_BULK_FAILURE, EXIT_FIT_FAILED};
use crate::cascade::{binned_series, build_cascades, parse_events, select_cascades, CascadeFile, MalformedLine};
use crate::error::Error;
use crate::fitting::{self, FitResult};
use crate::metrics::{ComparisonReport, ComparisonRow};
use crate::models::{Activity, ModelKind};
use crate::synth::{simulate_stochastic, TruthRecord};

pub const REPORT_NAME: &str = "build_report.json";
pub const BUNDLE_NAME: &str = "cascades.json";

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::input(format!("cannot create {}: {e}", path.display())))
}

/// File-system friendly version of an id.
fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' }).collect()
}

fn pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct TruncationEntry {
    root_id: String,
    events: usize,
}

#[derive(Serialize)]
struct SkewEntry {
    root_id: String,
    offenders: Vec<String>,
}

#[derive(Serialize)]
struct BuildReport {
    events: usize,
    roots: usize,
    orphans: Vec<String>,
    malformed: Vec<MalformedLine>,
    selected: usize,
    written: Vec<String>,
    truncated: Vec<TruncationEntry>,
    clock_skew: Vec<SkewEntry>,
}

pub fn build(_global: &GlobalArgs, file: &FileConfig, args: &BuildArgs) -> Result<(), CliError> {
    let (settings, horizon) = BuildSettings::resolve(args, file)?;
    let bytes = read_input(&args.input)?;
    ensure_dir(&args.out)?;
    let mut manifest = RunManifest::new("build-cascades", None, EffectiveConfig::Build(settings.clone()));
    manifest.add_input(&args.input, &bytes);

    let parsed = manifest.time("parse", || parse_events(bytes.as_slice(), settings.strict))?;
    if parsed.events.is_empty() {
        warn!("{} contains no events; no cascades written", args.input.display());
    }
    let built = manifest.time("build", || build_cascades(&parsed.events));
    let roots = built.trees.len();
    let selected = select_cascades(built.trees, settings.min_size, settings.top_k);
    let binned = manifest.time("bin", || {
        selected.par_iter().map(|tree| binned_series(tree, horizon)).collect::<Vec<_>>()
    });

    let mut files = Vec::new();
    let mut truncated = Vec::new();
    let mut clock_skew = Vec::new();
    for (tree, result) in selected.iter().zip(binned) {
        match result {
            Ok(b) => {
                if b.truncated > 0 {
                    truncated.push(TruncationEntry { root_id: tree.root_id.clone(), events: b.truncated });
                }
                files.push(CascadeFile::new(tree, b.series));
            }
            Err(Error::ClockSkew { offenders }) => {
                warn!("cascade {} skipped: {} event(s) precede the root", tree.root_id, offenders.len());
                clock_skew.push(SkewEntry { root_id: tree.root_id.clone(), offenders });
            }
            Err(e) => return Err(e.into()),
        }
    }
    // Output order follows the selection ranking; file names follow ids.
    let mut written = Vec::new();
    if settings.bundle {
        if !files.is_empty() {
            manifest.write_output(&args.out, BUNDLE_NAME, pretty_json(&files).as_bytes())?;
            written.push(BUNDLE_NAME.to_string());
        }
    } else {
        let mut taken = BTreeSet::new();
        for f in &files {
            let name = format!("{}.json", file_stem(&f.root_id));
            if !taken.insert(name.clone()) || name == REPORT_NAME || name == MANIFEST_NAME || name == BUNDLE_NAME {
                return Err(CliError::input(format!("root id {:?} maps to a clashing file name {name}", f.root_id)));
            }
            manifest.write_output(&args.out, &name, f.to_json().as_bytes())?;
            written.push(name);
        }
    }

    let report = BuildReport {
        events: parsed.events.len(),
        roots,
        orphans: built.orphans,
        malformed: parsed.malformed,
        selected: selected.len(),
        written,
        truncated,
        clock_skew,
    };
    manifest.write_output(&args.out, REPORT_NAME, pretty_json(&report).as_bytes())?;
    println!(
        "roots: {}  events: {}  orphans: {}  malformed: {}  cascades written: {}",
        report.roots,
        report.events,
        report.orphans.len(),
        report.malformed.len(),
        files.len()
    );
    manifest.finish(&args.out)
}

/// Hourly observed vs fitted curves, ready for plotting.
fn curve_csv(file: &CascadeFile, result: &FitResult) -> String {
    let s = &file.series;
    let mut out = String::from("hour,observed_total,model_total");
    let channels = result.trajectory.channels.as_ref();
    if channels.is_some() {
        for a in Activity::ALL {
            let _ = write!(out, ",observed_{0},model_{0}", a.as_str());
        }
    }
    out.push('\n');
    for j in 0..s.n_obs() {
        let _ = write!(out, "{j},{},{}", s.total[j], result.trajectory.total[j]);
        if let Some(ch) = channels {
            for a in Activity::ALL {
                let _ = write!(out, ",{},{}", s.channel(a)[j], ch[a.index()][j]);
            }
        }
        out.push('\n');
    }
    out
}

pub fn fit(global: &GlobalArgs, file: &FileConfig, args: &FitArgs) -> Result<(), CliError> {
    let settings = FitSettings::resolve(global, file)?;
    let bytes = read_input(&args.cascade)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::input(format!("{} is not UTF-8", args.cascade.display())))?;
    let cascade = CascadeFile::from_json(&text)
        .map_err(|e| CliError::input(format!("{}: {e}", args.cascade.display())))?;
    ensure_dir(&args.out)?;
    let mut manifest =
        RunManifest::new("fit", Some(settings.seed), EffectiveConfig::Fit { model: args.model, fit: settings.clone() });
    manifest.add_input(&args.cascade, &bytes);

    let config = settings.fit_config(args.model);
    let result = manifest
        .time("fit", || fitting::fit(&cascade.series, &config))
        .map_err(|e| CliError::new(EXIT_FIT_FAILED, format!("{} model on cascade {}: {e}", args.model, cascade.root_id)))?;

    let stem = format!("{}.{}", file_stem(&cascade.root_id), args.model.as_str());
    manifest.write_output(&args.out, &format!("{stem}.json"), pretty_json(&result).as_bytes())?;
    manifest.write_output(&args.out, &format!("{stem}.csv"), curve_csv(&cascade, &result).as_bytes())?;
    println!(
        "cascade {}  model {}  error {:.6}  mean deviation {:.6}",
        cascade.root_id, args.model, result.error, result.mean_deviation
    );
    manifest.finish(&args.out)
}

/// Cascade files from a directory (sorted by file name) or a bundle file,
/// with the raw bytes of every file read.
pub fn load_cascade_dir(path: &Path) -> Result<(Vec<CascadeFile>, Vec<(PathBuf, Vec<u8>)>), CliError> {
    let parse_bundle = |p: &Path, bytes: &[u8]| -> Result<Vec<CascadeFile>, CliError> {
        let files: Vec<CascadeFile> = serde_json::from_slice(bytes)
            .map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
        for f in &files {
            CascadeFile::from_json(&serde_json::to_string(f).expect("serializable"))
                .map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
        }
        Ok(files)
    };
    if path.is_file() {
        let bytes = read_input(path)?;
        return Ok((parse_bundle(path, &bytes)?, vec![(path.to_path_buf(), bytes)]));
    }
    let entries = std::fs::read_dir(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .filter(|p| p.file_name().is_some_and(|n| n != MANIFEST_NAME && n != REPORT_NAME))
        .collect();
    paths.sort();
    let mut files = Vec::new();
    let mut raw = Vec::new();
    for p in paths {
        let bytes = read_input(&p)?;
        if p.file_name().is_some_and(|n| n == BUNDLE_NAME) {
            files.extend(parse_bundle(&p, &bytes)?);
        } else {
            let text = std::str::from_utf8(&bytes).map_err(|_| CliError::input(format!("{} is not UTF-8", p.display())))?;
            files.push(CascadeFile::from_json(text).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?);
        }
        raw.push((p, bytes));
    }
    Ok((files, raw))
}

/// Fit all three models to every cascade, in parallel across cascades.
/// Failures are recorded in the row rather than aborting. Output is sorted
/// by cascade id.
pub fn compare_cascades(files: &[CascadeFile], settings: &FitSettings) -> Vec<(ComparisonRow, Vec<FitResult>)> {
    let mut out: Vec<(ComparisonRow, Vec<FitResult>)> = files
        .par_iter()
        .map(|f| {
            let mut row = ComparisonRow {
                cascade_id: f.root_id.clone(),
                size: f.size(),
                error_sis: None,
                error_seiz: None,
                error_cdseiz: None,
                mean_deviation_sis: None,
                mean_deviation_seiz: None,
                mean_deviation_cdseiz: None,
                status: String::new(),
            };
            let mut fits = Vec::new();
            let mut problems = Vec::new();
            for kind in ModelKind::ALL {
                match fitting::fit(&f.series, &settings.fit_config(kind)) {
                    Ok(r) => {
                        let (e, md) = match kind {
                            ModelKind::Sis => (&mut row.error_sis, &mut row.mean_deviation_sis),
                            ModelKind::Seiz => (&mut row.error_seiz, &mut row.mean_deviation_seiz),
                            ModelKind::CdSeiz => (&mut row.error_cdseiz, &mut row.mean_deviation_cdseiz),
                        };
                        *e = Some(r.error);
                        *md = Some(r.mean_deviation);
                        fits.push(r);
                    }
                    Err(e) => problems.push(format!("{kind}: {e}")),
                }
            }
            row.status = if problems.is_empty() { "ok".into() } else { problems.join("; ") };
            info!("cascade {} done ({})", f.root_id, row.status);
            (row, fits)
        })
        .collect();
    out.sort_by(|a, b| a.0.cascade_id.cmp(&b.0.cascade_id));
    out
}

fn write_report(manifest: &mut RunManifest, out: &Path, report: &ComparisonReport) -> Result<(), CliError> {
    manifest.write_output(out, "comparison.csv", report.rows_csv()?.as_bytes())?;
    manifest.write_output(out, "summary.json", report.summary_json().as_bytes())?;
    manifest.write_output(out, "histogram.csv", report.histogram_csv().as_bytes())
}

fn print_summary(report: &ComparisonReport) {
    for s in &report.summary {
        let median = s.median_error.map_or("n/a".to_string(), |m| format!("{m:.6}"));
        println!("{:<7} fitted {:>5}  failed {:>5}  median error {median}", s.model.as_str(), s.fitted, s.failed);
    }
    for t in &report.tests {
        match &t.result {
            Some(r) => println!("{:<16} U = {}  p = {:.4e}", t.label, r.u, r.p_value),
            None => println!("{:<16} {}", t.label, t.status),
        }
    }
}

pub fn compare(global: &GlobalArgs, file: &FileConfig, args: &CompareArgs) -> Result<(), CliError> {
    let settings = FitSettings::resolve(global, file)?;
    let mut manifest = RunManifest::new("compare", Some(settings.seed), EffectiveConfig::Compare(settings.clone()));
    let (files, raw) = manifest.time("load", || load_cascade_dir(&args.input))?;
    if files.is_empty() {
        return Err(CliError::input(format!("no cascade files found in {}", args.input.display())));
    }
    let mut ids = BTreeSet::new();
    for f in &files {
        if !ids.insert(f.root_id.as_str()) {
            return Err(CliError::input(format!("cascade {} appears more than once", f.root_id)));
        }
    }
    for (p, bytes) in &raw {
        manifest.add_input(p, bytes);
    }
    ensure_dir(&args.out)?;

    let results = manifest.time("fit", || compare_cascades(&files, &settings));
    let mut fits_csv = format!("cascade_id,{}\n", FitResult::CSV_HEADER);
    for (row, fits) in &results {
        for r in fits {
            let _ = writeln!(fits_csv, "{},{}", row.cascade_id, r.csv_row());
        }
    }
    let rows: Vec<ComparisonRow> = results.into_iter().map(|(row, _)| row).collect();
    let report = manifest.time("aggregate", || ComparisonReport::from_rows(rows))?;
    write_report(&mut manifest, &args.out, &report)?;
    manifest.write_output(&args.out, "fits.csv", fits_csv.as_bytes())?;
    print_summary(&report);
    manifest.finish(&args.out)?;

    let failed = report.rows.iter().filter(|r| r.failed()).count();
    if 2 * failed >= report.rows.len() {
        return Err(CliError::new(
            EXIT_BULK_FAILURE,
            format!("{failed} of {} cascades had at least one failed fit", report.rows.len()),
        ));
    }
    Ok(())
}

pub fn synth(global: &GlobalArgs, file: &FileConfig, args: &SynthArgs) -> Result<(), CliError> {
    let settings = SynthSettings::resolve(global, args, file)?;
    let config = settings.synth_config();
    config.validate()?;
    ensure_dir(&args.out)?;
    let mut manifest = RunManifest::new("synth", Some(settings.seed), EffectiveConfig::Synth(settings.clone()));
    let cascades = manifest.time("simulate", || simulate_stochastic(&config))?;

    let mut log = String::new();
    let mut n_events = 0;
    for c in &cascades {
        for e in &c.events {
            log.push_str(&serde_json::to_string(e).expect("event serializes"));
            log.push('\n');
        }
        n_events += c.events.len();
    }
    let truth: Vec<TruthRecord> = cascades.iter().map(|c| c.truth(&config)).collect();
    manifest.write_output(&args.out, "events.jsonl", log.as_bytes())?;
    manifest.write_output(&args.out, "truth.json", pretty_json(&truth).as_bytes())?;
    println!("cascades: {}  events: {n_events}", cascades.len());
    manifest.finish(&args.out)
}

pub fn report(_global: &GlobalArgs, _file: &FileConfig, args: &ReportArgs) -> Result<(), CliError> {
    let bytes = read_input(&args.rows)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| CliError::input(format!("{} is not UTF-8", args.rows.display())))?;
    let rows = ComparisonReport::rows_from_csv(text)?;
    ensure_dir(&args.out)?;
    let mut manifest = RunManifest::new("report", None, EffectiveConfig::Report {});
    manifest.add_input(&args.rows, &bytes);
    let report = ComparisonReport::from_rows(rows)?;
    manifest.write_output(&args.out, "summary.json", report.summary_json().as_bytes())?;
    manifest.write_output(&args.out, "histogram.csv", report.histogram_csv().as_bytes())?;
    print_summary(&report);
    manifest.finish(&args.out)
}
