use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;
use ura_core::harness::{find_min_ebn0, run_experiment, write_rows_csv, ExperimentResult, ExperimentSummary, SweepResult};
use ura_core::tx_chain::SensingMatrix;

use crate::config::{Group, Settings};
use crate::error::{io_at, CliError, Result};

pub const RESULTS_CSV: &str = "results.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const CONFIG_SNAPSHOT: &str = "config.txt";

#[derive(Debug, Clone, Default)]
pub struct RunManifest {
    pub config_path: Option<PathBuf>,
    pub preset: Option<String>,
    /// `key=value` assignments applied after the file.
    pub overrides: Vec<String>,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    /// Worker threads; 0 picks one per core.
    pub jobs: usize,
    pub genie_feedback: bool,
}

impl RunManifest {
    /// Preset, then file, then overrides, then flags.
    pub fn settings(&self) -> Result<Settings> {
        let mut s = match &self.preset {
            Some(p) => Settings::preset(p)?,
            None => Settings::default(),
        };
        if let Some(path) = &self.config_path {
            let text = std::fs::read_to_string(path).map_err(io_at(path))?;
            s.merge(&Settings::parse(&text)?);
        }
        for o in &self.overrides {
            s.apply_override(o)?;
        }
        if let Some(seed) = self.seed {
            s.set("seed", &seed.to_string())?;
        }
        if self.genie_feedback {
            s.set("genie_feedback", "true")?;
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub group: String,
    /// Absent when a sweep never met its target.
    pub summary: Option<ExperimentSummary>,
    pub sweep: Option<SweepResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub groups: Vec<GroupReport>,
}

/// Runs every group and writes the CSV rows, the JSON summary and the
/// resolved configuration into `out_dir`. Nothing is written unless every
/// group finishes.
pub fn run(manifest: &RunManifest) -> Result<RunReport> {
    let settings = manifest.settings()?;
    let groups = settings.resolve()?;
    std::fs::create_dir_all(&manifest.out_dir).map_err(io_at(&manifest.out_dir))?;
    if !manifest.out_dir.is_dir() {
        return Err(CliError::Io {
            path: manifest.out_dir.clone(),
            source: std::io::Error::new(std::io::ErrorKind::Other, "not a directory"),
        });
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(manifest.jobs)
        .build()
        .map_err(|e| CliError::Value { key: "jobs".into(), msg: e.to_string() })?;
    let results = pool.install(|| run_groups(&groups))?;

    let seed = groups[0].config.seed;
    let report = RunReport {
        seed,
        groups: results
            .iter()
            .map(|(g, r, s)| GroupReport { group: g.clone(), summary: r.as_ref().map(|r| r.summary.clone()), sweep: s.clone() })
            .collect(),
    };
    let rows: Vec<(String, &ExperimentResult)> =
        results.iter().filter_map(|(g, r, _)| r.as_ref().map(|r| (g.clone(), r))).collect();

    let dir = &manifest.out_dir;
    let mut csv = Vec::new();
    write_rows_csv(&mut csv, &rows)?;
    let json = serde_json::to_vec_pretty(&report).map_err(ura_core::Error::from)?;
    let snapshot = settings.render();
    let staged = [
        stage(dir, &csv)?,
        stage(dir, &json)?,
        stage(dir, snapshot.as_bytes())?,
    ];
    for (tmp, name) in staged.into_iter().zip([RESULTS_CSV, SUMMARY_JSON, CONFIG_SNAPSHOT]) {
        let target = dir.join(name);
        tmp.persist(&target).map_err(|e| CliError::Io { path: target, source: e.error })?;
    }
    Ok(report)
}

type GroupResult = (String, Option<ExperimentResult>, Option<SweepResult>);

fn run_groups(groups: &[Group]) -> Result<Vec<GroupResult>> {
    let mut dictionary: Option<SensingMatrix> = None;
    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        let cfg = &g.config;
        let reusable = dictionary.as_ref().is_some_and(|a| {
            a.seed() == cfg.dictionary_seed && a.rows() == cfg.n_p && a.preamble_bits() == cfg.preamble_bits
        });
        if !reusable {
            // Free the old matrix before allocating the next one.
            drop(dictionary.take());
            dictionary = Some(cfg.dictionary().map_err(|e| CliError::Run { group: g.label.clone(), source: e })?);
        }
        let a = dictionary.as_ref().expect("dictionary built above");
        let wrap = |e| CliError::Run { group: g.label.clone(), source: e };
        match &g.sweep {
            Some(sweep) => {
                let mut s = find_min_ebn0(cfg, a, sweep).map_err(wrap)?;
                let best = s.best_run.take();
                out.push((g.label.clone(), best, Some(s)));
            }
            None => out.push((g.label.clone(), Some(run_experiment(cfg, a).map_err(wrap)?), None)),
        }
    }
    Ok(out)
}

fn stage(dir: &Path, bytes: &[u8]) -> Result<NamedTempFile> {
    let mut f = NamedTempFile::new_in(dir).map_err(io_at(dir))?;
    f.write_all(bytes).map_err(io_at(f.path()))?;
    f.as_file().sync_all().map_err(io_at(f.path()))?;
    Ok(f)
}
