//! Dataset loading (UCR text format), per-series z-normalization, synthetic
//! sinusoid data and results persistence.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::DenseMatrix;
use crate::trainer::{EpochLog, Timings};

/// Standard deviations below this are treated as zero by [`znorm`].
pub const ZNORM_STD_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesDataset {
    pub name: String,
    /// One series per row.
    pub series: DenseMatrix,
    /// Dense class ids in `0..class_names.len()`, when known.
    pub labels: Option<Vec<usize>>,
    /// Original label text of each class id.
    pub class_names: Vec<String>,
    /// Files the series were read from.
    pub provenance: Vec<PathBuf>,
}

impl TimeSeriesDataset {
    pub fn len(&self) -> usize {
        self.series.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.series.rows() == 0
    }

    pub fn series_len(&self) -> usize {
        self.series.cols()
    }

    /// Number of distinct ground-truth classes (0 when unlabeled).
    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    /// The same dataset with every series z-normalized.
    pub fn znormed(mut self) -> Self {
        self.series = znorm_rows(&self.series);
        self
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    #[default]
    Tab,
    Comma,
}

impl Delimiter {
    fn split(self, line: &str) -> Vec<&str> {
        match self {
            Delimiter::Tab => line.split('\t').collect(),
            Delimiter::Comma => line.split(',').collect(),
        }
    }
}

struct RawRows {
    labels: Vec<String>,
    values: Vec<Vec<f64>>,
}

fn canonical_label(s: &str) -> String {
    // "1", "1.0" and "1.0000000e+00" name the same class
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15 => format!("{}", v as i64),
        _ => s.to_string(),
    }
}

fn parse_file(path: &Path, delimiter: Delimiter, width: &mut Option<usize>) -> Result<RawRows> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = RawRows {
        labels: Vec::new(),
        values: Vec::new(),
    };
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let fields: Vec<&str> = delimiter.split(line).into_iter().map(str::trim).collect();
        if fields.len() < 2 {
            return Err(parse_err("expected a label followed by at least one value".into()));
        }
        let values = fields[1..]
            .iter()
            .enumerate()
            .map(|(j, f)| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(parse_err(format!("value {} is not finite ({f:?})", j + 1))),
                Err(_) => Err(parse_err(format!("value {} is not a number ({f:?})", j + 1))),
            })
            .collect::<Result<Vec<f64>>>()?;
        match *width {
            None => *width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(parse_err(format!("row has {} values, expected {w}", values.len())));
            }
            Some(_) => {}
        }
        rows.labels.push(canonical_label(fields[0]));
        rows.values.push(values);
    }
    if rows.values.is_empty() {
        return Err(Error::InvalidInput(format!("{} contains no series", path.display())));
    }
    Ok(rows)
}

/// Orders class names numerically when all are numbers, else lexically.
fn class_order(labels: &[String]) -> Vec<String> {
    let distinct: BTreeSet<&String> = labels.iter().collect();
    let mut names: Vec<String> = distinct.into_iter().cloned().collect();
    let numeric: Option<Vec<f64>> = names.iter().map(|s| s.parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut paired: Vec<(f64, String)> = nums.into_iter().zip(names).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0));
        names = paired.into_iter().map(|(_, s)| s).collect();
    }
    names
}

/// Reads a UCR-style file (one series per line, label first), optionally
/// followed by a second partition; rows keep file order, train first.
pub fn load_ucr(train: &Path, test: Option<&Path>, delimiter: Delimiter) -> Result<TimeSeriesDataset> {
    let mut width = None;
    let mut raw = parse_file(train, delimiter, &mut width)?;
    let mut provenance = vec![train.to_path_buf()];
    if let Some(test) = test {
        let more = parse_file(test, delimiter, &mut width)?;
        raw.labels.extend(more.labels);
        raw.values.extend(more.values);
        provenance.push(test.to_path_buf());
    }
    let class_names = class_order(&raw.labels);
    let labels = raw
        .labels
        .iter()
        .map(|l| class_names.iter().position(|c| c == l).expect("label was collected"))
        .collect();
    let series = DenseMatrix::from_rows(&raw.values)?;
    let name = train
        .file_stem()
        .and_then(|s| s.to_str())
        .map(|s| s.trim_end_matches("_TRAIN").to_string())
        .unwrap_or_default();
    Ok(TimeSeriesDataset {
        name,
        series,
        labels: Some(labels),
        class_names,
        provenance,
    })
}

/// Finds `<dir>/<name>_TRAIN.tsv` and, if present, `<dir>/<name>_TEST.tsv`.
pub fn ucr_paths(dir: &Path, name: &str) -> (PathBuf, Option<PathBuf>) {
    let train = dir.join(format!("{name}_TRAIN.tsv"));
    let test = dir.join(format!("{name}_TEST.tsv"));
    (train, test.exists().then_some(test))
}

/// `(x − mean) / std` with the population standard deviation; a constant
/// series maps to zeros.
pub fn znorm(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < ZNORM_STD_FLOOR {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / std).collect()
}

pub fn znorm_rows(m: &DenseMatrix) -> DenseMatrix {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let z = znorm(m.row(i));
        out.row_mut(i).copy_from_slice(&z);
    }
    out
}

/// Parameters of the synthetic sinusoid benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_per_class: usize,
    pub length: usize,
    pub k: usize,
    pub noise_std: f64,
    /// Phases are drawn uniformly from `[0, phase_spread)`.
    pub phase_spread: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_per_class: 50,
            length: 64,
            k: 3,
            noise_std: 0.1,
            phase_spread: std::f64::consts::FRAC_PI_2,
        }
    }
}

/// Class `c` is `sin(2π(c+1)t/L + φ)` with a random phase `φ`, plus white
/// Gaussian noise. Rows are grouped by class.
pub fn gen_synthetic<R: Rng + ?Sized>(cfg: &SyntheticConfig, rng: &mut R) -> Result<TimeSeriesDataset> {
    if cfg.k == 0 || cfg.length < 8 {
        return Err(Error::InvalidArgument("synthetic data needs k ≥ 1 and length ≥ 8".into()));
    }
    if !(cfg.phase_spread >= 0.0) || !cfg.phase_spread.is_finite() {
        return Err(Error::InvalidArgument("phase_spread must be finite and non-negative".into()));
    }
    let noise = Normal::new(0.0, cfg.noise_std)
        .map_err(|e| Error::InvalidArgument(format!("noise_std {}: {e}", cfg.noise_std)))?;
    let n = cfg.n_per_class * cfg.k;
    let mut series = DenseMatrix::zeros(n, cfg.length);
    let mut labels = Vec::with_capacity(n);
    let step = std::f64::consts::TAU / cfg.length as f64;
    for c in 0..cfg.k {
        for _ in 0..cfg.n_per_class {
            let i = labels.len();
            let phase = rng.random::<f64>() * cfg.phase_spread;
            for (t, v) in series.row_mut(i).iter_mut().enumerate() {
                *v = ((c + 1) as f64 * step * t as f64 + phase).sin() + noise.sample(rng);
            }
            labels.push(c);
        }
    }
    Ok(TimeSeriesDataset {
        name: "synthetic".into(),
        series,
        labels: Some(labels),
        class_names: (0..cfg.k).map(|c| c.to_string()).collect(),
        provenance: Vec::new(),
    })
}

pub const RESULTS_SCHEMA_VERSION: u32 = 1;

/// Results document of one clustering run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub schema_version: u32,
    pub dataset: String,
    pub n_series: usize,
    pub series_len: usize,
    pub k: usize,
    pub seed: u64,
    /// Echo of the configuration the run used.
    pub config: serde_json::Value,
    pub pretrain_losses: Vec<Vec<f64>>,
    pub epochs: Vec<EpochLog>,
    pub labels: Vec<usize>,
    pub rand_index: Option<f64>,
    pub nmi: Option<f64>,
    pub timings: Timings,
}

pub const RESULTS_FILE: &str = "results.json";
pub const LABELS_FILE: &str = "labels.csv";

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `results.json` and `labels.csv` (`index,label` rows) into `dir`,
/// creating it if needed.
pub fn save_results(run: &RunResults, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json_path = dir.join(RESULTS_FILE);
    let json = serde_json::to_vec_pretty(run).map_err(|source| Error::Json {
        path: json_path.clone(),
        source,
    })?;
    write(&json_path, &json)?;
    write(&dir.join(LABELS_FILE), labels_csv(&run.labels).as_bytes())
}

pub fn labels_csv(labels: &[usize]) -> String {
    let mut out = String::from("index,label\n");
    for (i, l) in labels.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}

pub fn load_results(path: &Path) -> Result<RunResults> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let run: RunResults = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    if run.schema_version != RESULTS_SCHEMA_VERSION {
        return Err(Error::InvalidInput(format!(
            "{}: unsupported results schema version {}",
            path.display(),
            run.schema_version
        )));
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn znorm_cases() {
        assert_eq!(znorm(&[5.0, 5.0, 5.0]), vec![0.0; 3]);
        let z = znorm(&[1.0, 2.0, 3.0]);
        let s = (1.5f64).sqrt();
        assert!((z[0] + s).abs() < 1e-12 && z[1].abs() < 1e-12 && (z[2] - s).abs() < 1e-12);
        assert!((z[0] + 1.2247).abs() < 1e-4);
        assert!(znorm(&[]).is_empty());
    }

    #[test]
    fn labels_canonicalize() {
        assert_eq!(canonical_label("1.0000000e+00"), "1");
        assert_eq!(canonical_label("-2"), "-2");
        assert_eq!(canonical_label("cat"), "cat");
        assert_eq!(
            class_order(&["10".into(), "2".into(), "10".into()]),
            vec!["2".to_string(), "10".to_string()]
        );
    }

    #[test]
    fn synthetic_shape() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let d = gen_synthetic(&SyntheticConfig::default(), &mut rng).unwrap();
        assert_eq!(d.series.shape(), (150, 64));
        let labels = d.labels.unwrap();
        for c in 0..3 {
            assert_eq!(labels.iter().filter(|&&l| l == c).count(), 50);
        }
        let bad = SyntheticConfig {
            length: 7,
            ..SyntheticConfig::default()
        };
        assert!(gen_synthetic(&bad, &mut rng).is_err());
    }
}
