//! Confusion matrices, per-class precision/recall/F1, macro F1, comparison
//! tables and confusion heatmaps.
//!
//! Undefined ratios (0/0) count as 0, and macro F1 averages over every class
//! of the label vocabulary, including classes absent from the evaluated data.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{LabelVocabulary, LabeledExample};
use crate::error::{read_json, write_json, Error, Result};
use crate::models::{Architecture, Classifier};

/// `cell(i, j)` counts examples of gold class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension("confusion matrix must be square".into()));
        }
        Ok(Self {
            n_classes: k,
            counts: rows.into_iter().flatten().collect(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn cell(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold * self.n_classes + pred]
    }

    pub fn row_sum(&self, gold: usize) -> u64 {
        (0..self.n_classes).map(|j| self.cell(gold, j)).sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.n_classes).map(|i| self.cell(i, pred)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.n_classes).map(|i| self.cell(i, i)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.correct() as f64 / total as f64
        }
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.n_classes.max(1)).map(<[u64]>::to_vec).collect()
    }
}

pub fn confusion_matrix(gold: &[usize], pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if gold.len() != pred.len() {
        return Err(Error::Dimension(format!(
            "{} gold labels but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::invalid("cannot build a confusion matrix from no examples"));
    }
    let mut counts = vec![0u64; n_classes * n_classes];
    for (&g, &p) in gold.iter().zip(pred) {
        if g >= n_classes || p >= n_classes {
            return Err(Error::invalid(format!(
                "class index ({g}, {p}) outside [0, {n_classes})"
            )));
        }
        counts[g * n_classes + p] += 1;
    }
    Ok(ConfusionMatrix { n_classes, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn per_class_prf(cm: &ConfusionMatrix) -> Vec<ClassScores> {
    (0..cm.n_classes())
        .map(|c| {
            let tp = cm.cell(c, c) as f64;
            let precision = ratio(tp, cm.col_sum(c) as f64);
            let recall = ratio(tp, cm.row_sum(c) as f64);
            let f1 = ratio(2.0 * precision * recall, precision + recall);
            ClassScores { precision, recall, f1 }
        })
        .collect()
}

/// Classes whose precision or recall is 0/0.
pub fn undefined_classes(cm: &ConfusionMatrix) -> Vec<usize> {
    (0..cm.n_classes())
        .filter(|&c| cm.col_sum(c) == 0 || cm.row_sum(c) == 0)
        .collect()
}

/// Unweighted mean of per-class F1 values.
pub fn macro_f1(f1: &[f64]) -> Result<f64> {
    if f1.is_empty() {
        return Err(Error::invalid("macro F1 of zero classes"));
    }
    Ok(f1.iter().sum::<f64>() / f1.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model_id: String,
    pub dataset_id: String,
    pub architecture: Option<Architecture>,
    pub labels: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub examples: u64,
    pub accuracy: f64,
    pub per_class: Vec<ClassReport>,
    pub macro_f1: f64,
    /// Always `"vocabulary"`: absent classes contribute F1 = 0.
    pub macro_average_over: String,
    pub warnings: Vec<String>,
}

impl EvaluationReport {
    pub fn from_predictions(
        labels: &LabelVocabulary,
        gold: &[usize],
        pred: &[usize],
        model_id: &str,
        dataset_id: &str,
    ) -> Result<Self> {
        let cm = confusion_matrix(gold, pred, labels.len())?;
        let scores = per_class_prf(&cm);
        let f1: Vec<f64> = scores.iter().map(|s| s.f1).collect();
        let undefined = undefined_classes(&cm);
        let mut warnings = Vec::new();
        if !undefined.is_empty() {
            let names: Vec<&str> = undefined.iter().map(|&c| labels.label(c)).collect();
            let msg = format!("precision or recall undefined (0/0, scored as 0) for: {}", names.join(", "));
            log::warn!("{msg}");
            warnings.push(msg);
        }
        Ok(Self {
            model_id: model_id.to_string(),
            dataset_id: dataset_id.to_string(),
            architecture: None,
            labels: labels.labels().to_vec(),
            examples: cm.total(),
            accuracy: cm.accuracy(),
            per_class: scores
                .iter()
                .enumerate()
                .map(|(c, s)| ClassReport {
                    label: labels.label(c).to_string(),
                    precision: s.precision,
                    recall: s.recall,
                    f1: s.f1,
                    support: cm.row_sum(c),
                })
                .collect(),
            macro_f1: macro_f1(&f1)?,
            confusion: cm,
            macro_average_over: "vocabulary".into(),
            warnings,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }

    /// Human-readable summary with per-class rows.
    pub fn render_text(&self) -> String {
        let width = self.labels.iter().map(|l| l.chars().count()).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let _ = writeln!(s, "model: {}", self.model_id);
        let _ = writeln!(s, "dataset: {}", self.dataset_id);
        let _ = writeln!(s, "examples: {}", self.examples);
        let _ = writeln!(s, "accuracy: {}", format_percent(self.accuracy));
        let _ = writeln!(s, "macro F1: {}", format_percent(self.macro_f1));
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}", "label", "precision", "recall", "f1", "support");
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}",
                c.label,
                format_percent(c.precision),
                format_percent(c.recall),
                format_percent(c.f1),
                c.support
            );
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

/// Predicts every example and assembles a report.
pub fn evaluate(
    model: &dyn Classifier,
    data: &[LabeledExample],
    model_id: &str,
    dataset_id: &str,
) -> Result<EvaluationReport> {
    let labels = model.label_vocab();
    let gold = labels.encode(data.iter().map(|e| e.label.as_str()))?;
    let texts: Vec<String> = data.iter().map(|e| e.text.clone()).collect();
    let pred = model.predict_indices(&texts)?;
    EvaluationReport::from_predictions(labels, &gold, &pred, model_id, dataset_id)
}

/// `value × 100` with two decimals, rounding half to even.
pub fn format_percent(value: f64) -> String {
    let hundredths = percent_hundredths(value);
    let sign = if hundredths < 0 { "-" } else { "" };
    let a = hundredths.unsigned_abs();
    format!("{sign}{}.{:02}", a / 100, a % 100)
}

/// `value × 10⁴` rounded half-to-even; representation error below 1e-9 is
/// treated as an exact tie.
fn percent_hundredths(value: f64) -> i64 {
    let scaled = value * 10_000.0;
    let floor = scaled.floor();
    let frac = scaled - floor;
    let r = if (frac - 0.5).abs() < 1e-9 {
        if floor as i64 % 2 == 0 { floor } else { floor + 1.0 }
    } else {
        scaled.round()
    };
    r as i64
}

/// Macro F1 grid: rows are datasets, columns are models.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub datasets: Vec<String>,
    pub models: Vec<String>,
    /// `cells[row][col]` macro F1 in [0, 1].
    pub cells: Vec<Vec<f64>>,
}

const MARK: char = '*';

/// Groups reports by (dataset, model). Columns are ordered by architecture
/// (svm_tfidf, cnn_text, transformer_cls, transformer_cnn, then unknown) and
/// first appearance; rows by first appearance.
pub fn comparison_table(reports: &[EvaluationReport]) -> Result<ComparisonTable> {
    if reports.is_empty() {
        return Err(Error::invalid("no reports to tabulate"));
    }
    let mut datasets: Vec<String> = Vec::new();
    let mut models: Vec<(usize, usize, String)> = Vec::new();
    let mut cells: HashMap<(String, String), f64> = HashMap::new();
    let mut row_labels: HashMap<String, (Vec<String>, String)> = HashMap::new();
    for (i, r) in reports.iter().enumerate() {
        if !datasets.contains(&r.dataset_id) {
            datasets.push(r.dataset_id.clone());
        }
        if !models.iter().any(|m| m.2 == r.model_id) {
            let rank = r
                .architecture
                .and_then(|a| Architecture::ALL.iter().position(|&x| x == a))
                .unwrap_or(Architecture::ALL.len());
            models.push((rank, i, r.model_id.clone()));
        }
        match row_labels.get(&r.dataset_id) {
            Some((labels, other)) if labels != &r.labels => {
                return Err(Error::invalid(format!(
                    "dataset {}: models {} and {} use different label vocabularies",
                    r.dataset_id, other, r.model_id
                )));
            }
            Some(_) => {}
            None => {
                row_labels.insert(r.dataset_id.clone(), (r.labels.clone(), r.model_id.clone()));
            }
        }
        if cells
            .insert((r.dataset_id.clone(), r.model_id.clone()), r.macro_f1)
            .is_some()
        {
            return Err(Error::invalid(format!(
                "duplicate report for dataset {} and model {}",
                r.dataset_id, r.model_id
            )));
        }
    }
    models.sort();
    let models: Vec<String> = models.into_iter().map(|m| m.2).collect();
    let mut grid = Vec::with_capacity(datasets.len());
    for d in &datasets {
        let mut row = Vec::with_capacity(models.len());
        for m in &models {
            let v = cells.get(&(d.clone(), m.clone())).ok_or_else(|| {
                Error::invalid(format!("ragged grid: no report for dataset {d} and model {m}"))
            })?;
            row.push(*v);
        }
        grid.push(row);
    }
    Ok(ComparisonTable {
        datasets,
        models,
        cells: grid,
    })
}

impl ComparisonTable {
    /// Columns holding the row maximum at display precision (ties all marked).
    pub fn row_maxima(&self, row: usize) -> Vec<usize> {
        let vals: Vec<i64> = self.cells[row].iter().map(|&v| percent_hundredths(v)).collect();
        let best = vals.iter().copied().max().unwrap_or(0);
        (0..vals.len()).filter(|&j| vals[j] == best).collect()
    }

    fn cell_text(&self, row: usize, col: usize, marked: &[usize]) -> String {
        let mut s = format_percent(self.cells[row][col]);
        if marked.contains(&col) {
            s.push(MARK);
        }
        s
    }

    /// Space-aligned table; row maxima carry a trailing `*`.
    pub fn render_text(&self) -> String {
        let first = self
            .datasets
            .iter()
            .map(|d| d.chars().count())
            .chain(std::iter::once("dataset".len()))
            .max()
            .unwrap_or(7);
        let widths: Vec<usize> = self.models.iter().map(|m| m.chars().count().max(7)).collect();
        let mut s = String::new();
        let _ = write!(s, "{:<first$}", "dataset");
        for (m, w) in self.models.iter().zip(&widths) {
            let _ = write!(s, " {m:>w$}");
        }
        s.push('\n');
        for (i, d) in self.datasets.iter().enumerate() {
            let marked = self.row_maxima(i);
            let _ = write!(s, "{d:<first$}");
            for (j, w) in widths.iter().enumerate() {
                let _ = write!(s, " {:>w$}", self.cell_text(i, j, &marked));
            }
            s.push('\n');
        }
        s
    }

    /// Tab-separated values with the same `*` marks.
    pub fn render_tsv(&self) -> String {
        let mut s = String::from("dataset");
        for m in &self.models {
            let _ = write!(s, "\t{m}");
        }
        s.push('\n');
        for (i, d) in self.datasets.iter().enumerate() {
            let marked = self.row_maxima(i);
            s.push_str(d);
            for j in 0..self.models.len() {
                let _ = write!(s, "\t{}", self.cell_text(i, j, &marked));
            }
            s.push('\n');
        }
        s
    }

    /// Markdown table with row maxima in bold.
    pub fn render_markdown(&self) -> String {
        let mut s = String::from("| dataset |");
        for m in &self.models {
            let _ = write!(s, " {m} |");
        }
        s.push_str("\n|---|");
        s.push_str(&"---:|".repeat(self.models.len()));
        s.push('\n');
        for (i, d) in self.datasets.iter().enumerate() {
            let marked = self.row_maxima(i);
            let _ = write!(s, "| {d} |");
            for j in 0..self.models.len() {
                let v = format_percent(self.cells[i][j]);
                if marked.contains(&j) {
                    let _ = write!(s, " **{v}** |");
                } else {
                    let _ = write!(s, " {v} |");
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Aligned text grid: rows are gold labels, columns predicted labels.
pub fn confusion_grid(cm: &ConfusionMatrix, labels: &[String]) -> Result<String> {
    if labels.len() != cm.n_classes() {
        return Err(Error::Dimension(format!(
            "{} labels for a {}-class matrix",
            labels.len(),
            cm.n_classes()
        )));
    }
    let corner = "gold\\pred";
    let first = labels
        .iter()
        .map(|l| l.chars().count())
        .chain(std::iter::once(corner.len()))
        .max()
        .unwrap_or(0);
    let max_count = cm.rows().iter().flatten().copied().max().unwrap_or(0);
    let widths: Vec<usize> = labels
        .iter()
        .map(|l| l.chars().count().max(max_count.to_string().len()))
        .collect();
    let mut s = format!("{corner:<first$}");
    for (l, w) in labels.iter().zip(&widths) {
        let _ = write!(s, "  {l:>w$}");
    }
    s.push('\n');
    for (i, l) in labels.iter().enumerate() {
        let _ = write!(s, "{l:<first$}");
        for (j, w) in widths.iter().enumerate() {
            let _ = write!(s, "  {:>w$}", cm.cell(i, j));
        }
        s.push('\n');
    }
    Ok(s)
}

const CELL_PX: u32 = 32;

/// Writes a PNG heatmap (white → dark blue by count) and returns the text grid.
pub fn render_confusion(cm: &ConfusionMatrix, labels: &[String], image_path: &Path) -> Result<String> {
    let grid = confusion_grid(cm, labels)?;
    let k = cm.n_classes() as u32;
    let max = cm.rows().iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let side = (k * CELL_PX).max(1);
    let img = image::RgbImage::from_fn(side, side, |x, y| {
        let (i, j) = ((y / CELL_PX) as usize, (x / CELL_PX) as usize);
        if x % CELL_PX == 0 || y % CELL_PX == 0 {
            return image::Rgb([200, 200, 200]);
        }
        let t = cm.cell(i, j) as f64 / max;
        let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
        image::Rgb([lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0)])
    });
    img.save(image_path)?;
    Ok(grid)
}

/// Parses a grid written by [`confusion_grid`] back into counts.
pub fn parse_confusion_grid(grid: &str, n_classes: usize) -> Result<Vec<Vec<u64>>> {
    grid.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() < n_classes {
                return Err(Error::invalid(format!("short grid row: {line}")));
            }
            toks[toks.len() - n_classes..]
                .iter()
                .map(|t| t.parse::<u64>().map_err(|e| Error::invalid(format!("bad count {t:?}: {e}"))))
                .collect()
        })
        .collect()
}

/// Loads every report file, sorted by path.
pub fn load_reports(paths: &[std::path::PathBuf]) -> Result<Vec<EvaluationReport>> {
    let mut sorted = paths.to_vec();
    sorted.sort();
    sorted.iter().map(EvaluationReport::load).collect()
}

/// Per-dataset summary used when writing comparison outputs.
pub fn group_by_dataset(reports: &[EvaluationReport]) -> BTreeMap<String, Vec<&EvaluationReport>> {
    let mut out: BTreeMap<String, Vec<&EvaluationReport>> = BTreeMap::new();
    for r in reports {
        out.entry(r.dataset_id.clone()).or_default().push(r);
    }
    out
}
