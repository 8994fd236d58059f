//! Report emission: JSON for machines, aligned text tables for people, PNG
//! plots for both. Also the content-addressed store of finished runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{EvalReport, RunResult};
use crate::label::EmotionLabel;
use crate::manifest::file_stem_for;
use crate::seed::hex_digest;

/// Finished runs keyed by a digest of everything that determines them.
#[derive(Clone, Debug)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn key(parts: &[&str]) -> String {
        let mut bytes = Vec::new();
        for p in parts {
            bytes.extend_from_slice(&(p.len() as u64).to_le_bytes());
            bytes.extend_from_slice(p.as_bytes());
        }
        hex_digest(&bytes)
    }

    fn path(&self, key: &str) -> PathBuf {
        self.root.join(format!("{key}.json"))
    }

    /// Unreadable or corrupt entries count as absent.
    pub fn load(&self, key: &str) -> Option<RunResult> {
        let text = fs::read_to_string(self.path(key)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// Writes through a temporary file so an interrupted save never leaves a
    /// truncated entry.
    pub fn save(&self, key: &str, result: &RunResult) -> Result<()> {
        let path = self.path(key);
        let tmp = self.root.join(format!("{key}.json.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(result)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

pub fn emit_json(report: &EvalReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

pub fn parse_json(text: &str) -> Result<EvalReport> {
    Ok(serde_json::from_str(text)?)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.0}", v * 100.0))
}

/// Human-readable rendering of one report.
pub fn emit_text(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{}", report.name);
    let _ = writeln!(s, "backbone  {}", report.backbone);
    let _ = writeln!(s, "train     {}", report.train_set);
    let _ = writeln!(s, "test      {}", report.test_set);
    let _ = writeln!(
        s,
        "accuracy  {:.2} ± {:.2} %  ({} of {} runs{}{})",
        report.mean_accuracy,
        report.std_accuracy,
        report.runs.len(),
        report.expected_runs,
        if report.single_run { ", n=1" } else { "" },
        if report.complete { "" } else { ", INCOMPLETE" }
    );
    let _ = writeln!(s, "\n{:<10}{:>10}", "run", "acc %");
    for r in &report.runs {
        let _ = writeln!(s, "{:<10}{:>10.2}", r.seed, r.accuracy * 100.0);
    }
    for f in &report.failures {
        let _ = writeln!(s, "{:<10}{:>10}  {}", f.seed, "failed", f.error);
    }
    if let Some(best) = report.best_run_id.as_deref() {
        let _ = writeln!(s, "\nper-class metrics of best run {best}");
        let _ = writeln!(s, "{:<10}{:>11}{:>8}", "class", "precision", "recall");
        for (label, m) in &report.per_class {
            let _ = writeln!(s, "{:<10}{:>11}{:>8}", label.as_str(), pct(m.precision), pct(m.recall));
        }
        if let Some(run) = report.runs.iter().find(|r| r.run_id == best) {
            let _ = writeln!(s, "\nconfusion (rows true, columns predicted)");
            let _ = write!(s, "{:<10}", "");
            for l in EmotionLabel::ALL {
                let _ = write!(s, "{:>9}", l.as_str());
            }
            s.push('\n');
            for t in EmotionLabel::ALL {
                let _ = write!(s, "{:<10}", t.as_str());
                for p in EmotionLabel::ALL {
                    let _ = write!(s, "{:>9}", run.confusion.get(t, p));
                }
                s.push('\n');
            }
        }
    }
    s
}

/// One line per report: backbone, train set, test set, mean ± std.
pub fn summary_table(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<20}{:<14}{:<20}{:>18}{:>6}",
        "backbone", "train", "test", "accuracy %", "n"
    );
    for r in reports {
        let cell = format!("{:.2} ± {:.2}", r.mean_accuracy, r.std_accuracy);
        let _ = writeln!(
            s,
            "{:<20}{:<14}{:<20}{:>18}{:>6}{}",
            r.backbone,
            r.train_set,
            r.test_set,
            cell,
            r.runs.len(),
            if r.complete { "" } else { "  INCOMPLETE" }
        );
    }
    s
}

/// Writes `<name>.json`, `<name>.txt` and, when a best run exists,
/// `<name>_confusion.png`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = file_stem_for(&report.name);
    let json = dir.join(format!("{stem}.json"));
    fs::write(&json, emit_json(report)?).map_err(|e| Error::io(&json, e))?;
    let txt = dir.join(format!("{stem}.txt"));
    fs::write(&txt, emit_text(report)).map_err(|e| Error::io(&txt, e))?;
    if let Some(run) = report
        .runs
        .iter()
        .find(|r| Some(&r.run_id) == report.best_run_id.as_ref())
    {
        confusion_heatmap(&run.confusion.0, &dir.join(format!("{stem}_confusion.png")))?;
    }
    Ok(())
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_json(&text)
}

/// Reads every `*.json` report in `dir`, sorted by file name.
pub fn read_reports(dir: &Path) -> Result<Vec<EvalReport>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        match read_report(&p) {
            Ok(r) => out.push(r),
            Err(e) => tracing::warn!(stage = "report", path = %p.display(), error = %e, "skipping non-report json"),
        }
    }
    Ok(out)
}

/// Fraction of each emotion group classified as that emotion, per classifier.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GanQualityReport {
    pub accuracy: BTreeMap<String, BTreeMap<EmotionLabel, f64>>,
}

impl GanQualityReport {
    pub fn from_map(map: &BTreeMap<(String, EmotionLabel), f64>) -> Self {
        let mut accuracy: BTreeMap<String, BTreeMap<EmotionLabel, f64>> = BTreeMap::new();
        for ((clf, label), v) in map {
            accuracy.entry(clf.clone()).or_default().insert(*label, *v);
        }
        Self { accuracy }
    }

    pub fn emit_text(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<20}", "classifier");
        for l in EmotionLabel::ALL {
            let _ = write!(s, "{:>9}", l.as_str());
        }
        s.push('\n');
        for (clf, row) in &self.accuracy {
            let _ = write!(s, "{clf:<20}");
            for l in EmotionLabel::ALL {
                match row.get(&l) {
                    Some(v) => {
                        let _ = write!(s, "{:>9.0}", v * 100.0);
                    }
                    None => {
                        let _ = write!(s, "{:>9}", "-");
                    }
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("gan_quality.json");
        fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        let txt = dir.join("gan_quality.txt");
        fs::write(&txt, self.emit_text()).map_err(|e| Error::io(&txt, e))?;
        Ok(())
    }
}

const CELL: u32 = 32;

/// Heatmap of row-normalized counts; darker cells hold more of the row.
pub fn confusion_heatmap(m: &[[u64; 7]; 7], path: &Path) -> Result<()> {
    let mut img = RgbImage::from_pixel(CELL * 7, CELL * 7, Rgb([255, 255, 255]));
    for (r, row) in m.iter().enumerate() {
        let total: u64 = row.iter().sum();
        for (c, &v) in row.iter().enumerate() {
            let frac = if total == 0 { 0.0 } else { v as f64 / total as f64 };
            let shade = (255.0 * (1.0 - frac)).round() as u8;
            let colour = Rgb([shade, shade, 255]);
            for y in 0..CELL - 1 {
                for x in 0..CELL - 1 {
                    img.put_pixel(c as u32 * CELL + x, r as u32 * CELL + y, colour);
                }
            }
        }
    }
    save(&img, path)
}

/// One bar per report, height proportional to mean accuracy, with a dark
/// whisker spanning ± one standard deviation.
pub fn accuracy_bars(reports: &[EvalReport], path: &Path) -> Result<()> {
    const H: u32 = 200;
    const BAR: u32 = 24;
    let w = (reports.len() as u32).max(1) * (BAR + 8) + 8;
    let mut img = RgbImage::from_pixel(w, H + 1, Rgb([255, 255, 255]));
    let y_of = |pct: f64| H - ((pct.clamp(0.0, 100.0) / 100.0) * H as f64).round() as u32;
    for (i, r) in reports.iter().enumerate() {
        let x0 = 8 + i as u32 * (BAR + 8);
        let top = y_of(r.mean_accuracy);
        for y in top..=H {
            for x in x0..x0 + BAR {
                img.put_pixel(x, y, Rgb([70, 130, 180]));
            }
        }
        let lo = y_of(r.mean_accuracy - r.std_accuracy);
        let hi = y_of(r.mean_accuracy + r.std_accuracy);
        for y in hi..=lo {
            img.put_pixel(x0 + BAR / 2, y, Rgb([20, 20, 20]));
        }
    }
    save(&img, path)
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}
