use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError, Result, Variant};
use crate::sim::Metrics;

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Evaluation metrics of one training seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub rollouts: usize,
    pub sr: f64,
    pub fc: f64,
    /// Mean steps to success; `None` without successes.
    pub time_steps: Option<f64>,
    /// `time_steps * dt`.
    pub completion_time: Option<f64>,
}

impl SeedMetrics {
    pub fn from_metrics(seed: u64, m: &Metrics) -> Self {
        Self {
            seed,
            rollouts: m.rollouts,
            sr: m.sr,
            fc: m.fc,
            time_steps: m.mean_steps,
            completion_time: m.completion_time,
        }
    }
}

/// Averages over seeds. Times average over the seeds that had a success.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub sr: f64,
    pub fc: f64,
    pub time_steps: Option<f64>,
    pub completion_time: Option<f64>,
}

fn mean_some(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl MeanMetrics {
    pub fn over(seeds: &[SeedMetrics]) -> Self {
        let n = seeds.len() as f64;
        Self {
            sr: seeds.iter().map(|s| s.sr).sum::<f64>() / n,
            fc: seeds.iter().map(|s| s.fc).sum::<f64>() / n,
            time_steps: mean_some(seeds.iter().map(|s| s.time_steps)),
            completion_time: mean_some(seeds.iter().map(|s| s.completion_time)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format_version: u32,
    pub variant: Variant,
    pub config_hash: String,
    pub dt: f64,
    pub seeds: Vec<SeedMetrics>,
    pub mean: MeanMetrics,
    /// Written to `timing.json` so the metrics files stay reproducible.
    #[serde(skip)]
    pub wall_clock_s: Option<f64>,
}

/// One line of `metrics.csv`; `seed` is `mean` on the summary line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub variant: String,
    pub seed: String,
    pub sr: f64,
    pub fc: f64,
    pub time_steps: Option<f64>,
}

impl MetricsReport {
    /// Report over `seeds`, which must be exactly the configured seeds in order.
    pub fn new(cfg: &ExperimentConfig, seeds: Vec<SeedMetrics>) -> Result<Self> {
        let got: Vec<u64> = seeds.iter().map(|s| s.seed).collect();
        if got != cfg.train.seeds {
            return Err(HarnessError::Report(format!(
                "metrics for seeds {got:?}, config lists {:?}",
                cfg.train.seeds
            )));
        }
        Ok(Self {
            format_version: REPORT_FORMAT_VERSION,
            variant: cfg.variant,
            config_hash: cfg.hash(),
            dt: cfg.sim.dt,
            mean: MeanMetrics::over(&seeds),
            seeds,
            wall_clock_s: None,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn csv_rows(&self) -> Vec<CsvRow> {
        let v = self.variant.name().to_string();
        let mut rows: Vec<CsvRow> = self
            .seeds
            .iter()
            .map(|s| CsvRow {
                variant: v.clone(),
                seed: s.seed.to_string(),
                sr: s.sr,
                fc: s.fc,
                time_steps: s.time_steps,
            })
            .collect();
        rows.push(CsvRow {
            variant: v,
            seed: "mean".into(),
            sr: self.mean.sr,
            fc: self.mean.fc,
            time_steps: self.mean.time_steps,
        });
        rows
    }

    pub fn to_csv(&self) -> String {
        CsvRow::write_all(&self.csv_rows())
    }

    /// Writes `metrics.json`, `metrics.csv` and, when measured, `timing.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.json"), self.to_json())?;
        fs::write(dir.join("metrics.csv"), self.to_csv())?;
        if let Some(t) = self.wall_clock_s {
            let timing = serde_json::json!({ "variant": self.variant, "wall_clock_s": t });
            fs::write(dir.join("timing.json"), format!("{timing}\n"))?;
        }
        Ok(())
    }
}

impl CsvRow {
    pub fn write_all(rows: &[CsvRow]) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).expect("csv row serializes");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
    }

    pub fn parse_all(text: &str) -> Result<Vec<CsvRow>> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        if header != ["variant", "seed", "sr", "fc", "time_steps"] {
            return Err(HarnessError::Report(format!("unexpected metrics.csv header {header:?}")));
        }
        Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
    }
}

/// One row of the comparison table: seed-averaged metrics of a variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub sr: f64,
    pub fc: f64,
    pub time_steps: Option<f64>,
    pub completion_time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub reports: Vec<MetricsReport>,
}

impl AblationTable {
    pub fn new(reports: Vec<MetricsReport>) -> Self {
        Self { reports }
    }

    pub fn rows(&self) -> Vec<AblationRow> {
        self.reports
            .iter()
            .map(|r| AblationRow {
                variant: r.variant,
                sr: r.mean.sr,
                fc: r.mean.fc,
                time_steps: r.mean.time_steps,
                completion_time: r.mean.completion_time,
            })
            .collect()
    }

    pub fn sr(&self, v: Variant) -> Option<f64> {
        self.reports.iter().find(|r| r.variant == v).map(|r| r.mean.sr)
    }

    /// Markdown table with SR and FC in percent and completion time in seconds.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Variant | SR (%) | FC (%) | Time (s) |\n|---|---:|---:|---:|\n");
        for r in self.rows() {
            let time = r.completion_time.map_or_else(|| "—".to_string(), |t| format!("{t:.2}"));
            let _ = writeln!(s, "| {} | {:.1} | {:.1} | {} |", r.variant, 100.0 * r.sr, 100.0 * r.fc, time);
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in self.rows() {
            w.serialize((r.variant.name(), r.sr, r.fc, r.time_steps)).expect("csv row serializes");
        }
        let body = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8");
        format!("variant,sr,fc,time_steps\n{body}")
    }

    /// Writes `ablation.json`, `ablation.csv` and `ablation.md`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(dir.join("ablation.json"), json)?;
        fs::write(dir.join("ablation.csv"), self.to_csv())?;
        fs::write(dir.join("ablation.md"), self.to_markdown())?;
        Ok(())
    }

    /// `sata` must beat every listed baseline on mean SR by more than `margin`.
    pub fn check_ordering(&self, baselines: &[Variant], margin: f64) -> Result<()> {
        let sata = self
            .sr(Variant::Sata)
            .ok_or_else(|| HarnessError::Ordering("table has no sata row".into()))?;
        let mut failures = Vec::new();
        for &b in baselines {
            match self.sr(b) {
                None => failures.push(format!("no {b} row")),
                Some(sr) if sata - sr <= margin => failures.push(format!("SR(sata) {sata:.3} vs SR({b}) {sr:.3}")),
                Some(_) => {}
            }
        }
        if failures.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Ordering(failures.join("; ")))
        }
    }
}
