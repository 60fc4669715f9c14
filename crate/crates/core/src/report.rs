//! Report bundle emitted by evaluation runs: transcripts, per-case results,
//! aggregate CSV tables, a text summary and a JSON manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Combo, DatasetFile};
use crate::matcher::ErrorClass;
use crate::metrics::{aggregate, split_combo_label, AccuracyRow, Aggregates, CaseResult, MsssDenominator};
use crate::runner::{write_transcripts, CaseOutcome, CaseRun, RunConfig};

pub fn short_digest(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

/// Everything that can change results, hashed together.
#[derive(Debug, Clone, Serialize)]
struct HashedSettings<'a> {
    adapter: &'a str,
    dataset_digest: &'a str,
    teacher_forcing: bool,
    match_policy: &'a crate::matcher::MatchPolicy,
    max_turns_per_mission: Option<usize>,
    limits: &'a crate::plan::EnumLimits,
    msss_max_n: usize,
    msss_denominator: MsssDenominator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub adapter: String,
    pub config_hash: String,
    pub dataset_version: String,
    pub dataset_digest: String,
    pub created_unix: u64,
    pub config: RunConfig,
    pub msss_max_n: usize,
    pub msss_denominator: MsssDenominator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub metadata: RunMetadata,
    pub aggregates: Aggregates,
    pub cases: Vec<CaseOutcome>,
    pub manifest: Vec<String>,
}

impl ReportBundle {
    pub fn build(
        ds: &DatasetFile,
        runs: &[CaseRun],
        cfg: &RunConfig,
        adapter: &str,
        msss_max_n: usize,
        msss_denominator: MsssDenominator,
    ) -> Self {
        let dataset_digest = short_digest(ds.to_canonical_json().as_bytes());
        let settings = HashedSettings {
            adapter,
            dataset_digest: &dataset_digest,
            teacher_forcing: cfg.teacher_forcing,
            match_policy: &cfg.match_policy,
            max_turns_per_mission: cfg.max_turns_per_mission,
            limits: &cfg.limits,
            msss_max_n,
            msss_denominator,
        };
        let config_hash = short_digest(serde_json::to_string(&settings).expect("settings serialize").as_bytes());
        let scored: Vec<CaseResult> = runs.iter().filter_map(|r| r.outcome.scored().cloned()).collect();
        let combos: Vec<Combo> = ds.cases.iter().map(|c| Combo::of_actions(&c.combo())).collect();
        let aggregates = aggregate(&scored, runs.len() - scored.len(), &combos, msss_max_n);
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        ReportBundle {
            metadata: RunMetadata {
                adapter: adapter.to_string(),
                config_hash,
                dataset_version: ds.version.clone(),
                dataset_digest,
                created_unix,
                config: cfg.clone(),
                msss_max_n,
                msss_denominator,
            },
            aggregates,
            cases: runs.iter().map(|r| r.outcome.clone()).collect(),
            manifest: Vec::new(),
        }
    }

    /// Writes every output file into `dir` and fills the manifest.
    pub fn write(&mut self, dir: &Path, runs: &[CaseRun]) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut written: Vec<PathBuf> = Vec::new();
        let mut put = |name: &str, body: Vec<u8>| -> std::io::Result<()> {
            fs::write(dir.join(name), body)?;
            written.push(PathBuf::from(name));
            Ok(())
        };

        let mut transcripts = Vec::new();
        write_transcripts(&mut transcripts, runs.iter().flat_map(|r| &r.transcript))?;
        put("transcripts.jsonl", transcripts)?;
        put("results.json", to_json(&self.cases))?;

        let a = &self.aggregates;
        put("accuracy_by_mission_count.csv", accuracy_csv("mission_count", &a.by_mission_count)?)?;
        put("accuracy_by_action_type.csv", accuracy_csv("action_type", &a.by_action_type)?)?;
        put("accuracy_by_relation_type.csv", accuracy_csv("relation_type", &a.by_relation_type)?)?;
        put("combo_heatmap.csv", heatmap_csv(&a.combo_heatmap)?)?;
        put("metrics.csv", metrics_csv(a, self.metadata.msss_denominator)?)?;
        put("error_distribution.csv", errors_csv(a)?)?;
        put("summary.txt", self.summary().into_bytes())?;

        let mut manifest: Vec<String> = written.iter().map(|p| p.display().to_string()).collect();
        manifest.push("report.json".to_string());
        self.manifest = manifest;
        fs::write(dir.join("report.json"), to_json(&*self))?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let a = &self.aggregates;
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.2}"));
        let mut s = String::new();
        let _ = writeln!(s, "adapter:            {}", self.metadata.adapter);
        let _ = writeln!(s, "config hash:        {}", self.metadata.config_hash);
        let _ = writeln!(s, "dataset:            v{} ({})", self.metadata.dataset_version, self.metadata.dataset_digest);
        let _ = writeln!(s, "cases scored:       {} (unscored {})", a.scored_cases, a.unscored_cases);
        let _ = writeln!(s, "case pass rate:     {}", pct(a.case_pass_rate));
        let _ = writeln!(s, "optimal path rate:  {}", pct(a.optimal_path_rate));
        let _ = writeln!(s, "accomplished prog.: {}", pct(a.accomplished_progress));
        let _ = writeln!(s, "MSSS (cumulative):  {:.2}", a.msss_cumulative);
        let _ = writeln!(s, "MSSS (exact):       {:.2}", a.msss_exact);
        for (title, rows) in [
            ("accuracy by mission count", &a.by_mission_count),
            ("accuracy by action type", &a.by_action_type),
            ("accuracy by relation type", &a.by_relation_type),
        ] {
            let _ = writeln!(s, "\n{title}:");
            for r in rows {
                let _ = writeln!(s, "  {:<18} {:>7.2}  ({}/{})", r.group, r.accuracy, r.passed, r.total);
            }
        }
        let d = &a.error_distribution;
        let _ = writeln!(s, "\nerror distribution ({} failures):", d.failures);
        for (class, share) in &d.folded {
            let _ = writeln!(s, "  {:<26} {:>7.2}", class.label(), share);
        }
        s
    }
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("report values serialize");
    v.push(b'\n');
    v
}

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

fn finish(w: csv::Writer<Vec<u8>>) -> std::io::Result<Vec<u8>> {
    w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))
}

fn accuracy_csv(key: &str, rows: &[AccuracyRow]) -> std::io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([key, "passed", "total", "accuracy"])?;
    for r in rows {
        w.write_record([r.group.clone(), r.passed.to_string(), r.total.to_string(), fmt2(r.accuracy)])?;
    }
    finish(w)
}

fn heatmap_csv(rows: &[AccuracyRow]) -> std::io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["preceding", "action_type", "passed", "total", "accuracy"])?;
    for r in rows {
        let (preceding, current) = split_combo_label(&r.group);
        w.write_record([preceding.to_string(), current.to_string(), r.passed.to_string(), r.total.to_string(), fmt2(r.accuracy)])?;
    }
    finish(w)
}

fn metrics_csv(a: &Aggregates, denominator: MsssDenominator) -> std::io::Result<Vec<u8>> {
    let opt = |v: Option<f64>| v.map(fmt2).unwrap_or_default();
    let msss = match denominator {
        MsssDenominator::Cumulative => a.msss_cumulative,
        MsssDenominator::Exact => a.msss_exact,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "value"])?;
    for (k, v) in [
        ("scored_cases", a.scored_cases.to_string()),
        ("unscored_cases", a.unscored_cases.to_string()),
        ("case_pass_rate", opt(a.case_pass_rate)),
        ("optimal_path_rate", opt(a.optimal_path_rate)),
        ("accomplished_progress", opt(a.accomplished_progress)),
        ("msss", fmt2(msss)),
        ("msss_cumulative", fmt2(a.msss_cumulative)),
        ("msss_exact", fmt2(a.msss_exact)),
    ] {
        w.write_record([k, v.as_str()])?;
    }
    finish(w)
}

fn errors_csv(a: &Aggregates) -> std::io::Result<Vec<u8>> {
    let d = &a.error_distribution;
    let share = |view: &[(ErrorClass, f64)], class: ErrorClass| {
        view.iter().find(|(c, _)| *c == class).map(|(_, v)| fmt2(*v)).unwrap_or_default()
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["view".to_string(), "failures".to_string()];
    header.extend(ErrorClass::ALL.iter().map(|c| c.label().to_string()));
    w.write_record(&header)?;
    for (name, view) in [("folded", &d.folded), ("raw", &d.raw)] {
        let mut row = vec![name.to_string(), d.failures.to_string()];
        row.extend(ErrorClass::ALL.iter().map(|&c| share(view, c)));
        w.write_record(&row)?;
    }
    finish(w)
}
