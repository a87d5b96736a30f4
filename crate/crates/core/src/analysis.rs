//! Latent-code export, 2D PCA and clustering metrics.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::root_normalize;
use crate::motion::RotationalMotion;
use crate::nets::Model;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeKind {
    Content,
    Style,
    Adain,
}

impl CodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CodeKind::Content => "content",
            CodeKind::Style => "style",
            CodeKind::Adain => "adain",
        }
    }
}

impl std::str::FromStr for CodeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "content" => Ok(CodeKind::Content),
            "style" => Ok(CodeKind::Style),
            "adain" => Ok(CodeKind::Adain),
            _ => Err(Error::InvalidArgument(format!("unknown code kind {s:?} (content, style or adain)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeRow {
    pub id: String,
    pub label: String,
    pub vector: Vec<f64>,
}

/// Codes of one kind; every vector has the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeTable {
    pub kind: CodeKind,
    pub rows: Vec<CodeRow>,
}

impl CodeTable {
    pub fn new(kind: CodeKind, rows: Vec<CodeRow>) -> Result<Self> {
        if let Some(first) = rows.first() {
            if let Some(bad) = rows.iter().find(|r| r.vector.len() != first.vector.len()) {
                return Err(Error::ShapeMismatch(format!(
                    "row {} has {} values, row {} has {}",
                    bad.id,
                    bad.vector.len(),
                    first.id,
                    first.vector.len()
                )));
            }
        }
        Ok(Self { kind, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.vector.len())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["id".to_string(), "label".into(), "kind".into()];
        header.extend((0..self.dim()).map(|i| format!("v{i}")));
        let csv_err = |e: csv::Error| Error::InvalidArgument(e.to_string());
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.id.clone(), r.label.clone(), self.kind.as_str().to_string()];
            rec.extend(r.vector.iter().map(|v| format!("{v:e}")));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Csv {
            path: path.to_path_buf(),
            message,
        };
        let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
        let mut kind = None;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            if rec.len() < 3 {
                return Err(bad(format!("record with {} fields", rec.len())));
            }
            let k: CodeKind = rec[2].parse()?;
            if kind.is_some_and(|p| p != k) {
                return Err(bad("mixed code kinds".into()));
            }
            kind = Some(k);
            let vector = rec
                .iter()
                .skip(3)
                .map(|v| v.parse::<f64>().map_err(|e| bad(format!("{v:?}: {e}"))))
                .collect::<Result<_>>()?;
            rows.push(CodeRow {
                id: rec[0].to_string(),
                label: rec[1].to_string(),
                vector,
            });
        }
        Self::new(kind.unwrap_or(CodeKind::Style), rows)
    }
}

/// A window to embed, with its id and style label.
#[derive(Clone, Debug)]
pub struct LabeledClip {
    pub id: String,
    pub label: String,
    pub motion: RotationalMotion,
}

/// One row per clip. Content codes are flattened `[C_c, T']` tensors; AdaIN
/// rows concatenate `γ` then `β` for every layer.
pub fn export_codes(model: &Model, clips: &[LabeledClip], kind: CodeKind) -> Result<CodeTable> {
    let rows = clips
        .iter()
        .map(|c| {
            let vector = match kind {
                CodeKind::Style => model.style_code_of_clip(&c.motion)?,
                CodeKind::Content => model.content_code(&root_normalize(&c.motion).0)?.data,
                CodeKind::Adain => {
                    let code = model.style_code_of_clip(&c.motion)?;
                    model.adain_params(&code)?.into_iter().flat_map(|(g, b)| g.into_iter().chain(b)).collect()
                }
            };
            Ok(CodeRow {
                id: c.id.clone(),
                label: c.label.clone(),
                vector,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CodeTable::new(kind, rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pca2 {
    pub coords: Vec<[f64; 2]>,
    /// Fraction of total variance along each axis.
    pub explained: [f64; 2],
    pub components: [Vec<f64>; 2],
    pub mean: Vec<f64>,
}

/// Top two principal axes of the mean-centred vectors. Each axis is signed so
/// its largest-magnitude entry is positive.
pub fn pca2(table: &CodeTable) -> Result<Pca2> {
    let (n, d) = (table.len(), table.dim());
    if n < 3 {
        return Err(Error::Degenerate(format!("PCA needs at least 3 rows, got {n}")));
    }
    let mean: Vec<f64> = (0..d).map(|k| table.rows.iter().map(|r| r.vector[k]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, d, |i, k| table.rows[i].vector[k] - mean[k]);

    // eigen-decompose the smaller of XᵀX and XXᵀ
    let (values, axes) = if d <= n {
        let eig = SymmetricEigen::new(x.transpose() * &x);
        (eig.eigenvalues, eig.eigenvectors)
    } else {
        let eig = SymmetricEigen::new(&x * x.transpose());
        let mut v = x.transpose() * &eig.eigenvectors;
        for (j, mut col) in v.column_iter_mut().enumerate() {
            let s = eig.eigenvalues[j].max(0.0).sqrt();
            if s > 0.0 {
                col /= s;
            }
        }
        (eig.eigenvalues, v)
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    let (l1, l2) = (values[order[0]].max(0.0), values[order[1]].max(0.0));
    if total <= 0.0 || l2 <= 1e-12 * total {
        return Err(Error::Degenerate("codes span fewer than two dimensions".into()));
    }
    let components = [order[0], order[1]].map(|c| {
        let mut v: Vec<f64> = axes.column(c).iter().copied().collect();
        let big = v.iter().cloned().fold(0.0, |m: f64, e| if e.abs() > m.abs() { e } else { m });
        if big < 0.0 {
            v.iter_mut().for_each(|e| *e = -*e);
        }
        v
    });
    let coords = (0..n)
        .map(|i| std::array::from_fn(|a| x.row(i).iter().zip(&components[a]).map(|(p, q)| p * q).sum()))
        .collect();
    Ok(Pca2 {
        coords,
        explained: [l1 / total, l2 / total],
        components,
        mean,
    })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn label_groups(table: &CodeTable) -> Result<(Vec<String>, Vec<usize>)> {
    let mut names: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &table.rows {
        *names.entry(&r.label).or_default() += 1;
    }
    if names.len() < 2 {
        return Err(Error::Degenerate(format!("need at least 2 labels, got {}", names.len())));
    }
    if let Some((l, _)) = names.iter().find(|(_, c)| **c < 2) {
        return Err(Error::Degenerate(format!("label {l:?} has a single row")));
    }
    let labels: Vec<String> = names.keys().map(|s| s.to_string()).collect();
    let idx = table.rows.iter().map(|r| labels.iter().position(|l| *l == r.label).unwrap()).collect();
    Ok((labels, idx))
}

/// Mean silhouette with Euclidean distance; 0 for points whose intra- and
/// nearest inter-cluster distances both vanish.
pub fn silhouette(table: &CodeTable) -> Result<f64> {
    let (labels, idx) = label_groups(table)?;
    let n = table.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; labels.len()];
        let mut counts = vec![0usize; labels.len()];
        for j in 0..n {
            if i != j {
                sums[idx[j]] += distance(&table.rows[i].vector, &table.rows[j].vector);
                counts[idx[j]] += 1;
            }
        }
        let a = sums[idx[i]] / counts[idx[i]] as f64;
        let b = (0..labels.len())
            .filter(|&l| l != idx[i])
            .map(|l| sums[l] / counts[l] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        total += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    Ok(total / n as f64)
}

/// Settings of the linear probe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Stratified folds; each fold trains on the others.
    pub folds: usize,
    pub lr: f64,
    /// L2 penalty; `None` uses `1 / n_train`.
    pub l2: Option<f64>,
    pub steps: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            lr: 0.5,
            l2: None,
            steps: 1000,
        }
    }
}

/// Seeded fold index per row, dealt round-robin within each label.
fn stratified_folds(idx: &[usize], num_labels: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0; idx.len()];
    for l in 0..num_labels {
        let mut rows: Vec<usize> = (0..idx.len()).filter(|&i| idx[i] == l).collect();
        rows.shuffle(&mut rng);
        for (k, r) in rows.into_iter().enumerate() {
            out[r] = k % folds;
        }
    }
    out
}

/// Trains a multinomial logistic classifier on standardized features of
/// `train` and counts correct predictions on `test`.
fn probe_fold(table: &CodeTable, idx: &[usize], k: usize, train: &[usize], test: &[usize], cfg: &ProbeConfig) -> usize {
    let d = table.dim();
    let n = train.len() as f64;
    let mut mu = vec![0.0; d];
    let mut var = vec![0.0; d];
    for &i in train {
        for (m, v) in mu.iter_mut().zip(&table.rows[i].vector) {
            *m += v / n;
        }
    }
    for &i in train {
        for ((s, m), v) in var.iter_mut().zip(&mu).zip(&table.rows[i].vector) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let feats = |i: usize| -> Vec<f64> {
        let r = &table.rows[i].vector;
        let mut f: Vec<f64> = (0..d).map(|c| if var[c] > 1e-24 { (r[c] - mu[c]) / var[c].sqrt() } else { 0.0 }).collect();
        f.push(1.0);
        f
    };
    let xs: Vec<Vec<f64>> = train.iter().map(|&i| feats(i)).collect();
    let l2 = cfg.l2.unwrap_or(1.0 / n);
    let logits = |w: &[Vec<f64>], x: &[f64]| -> Vec<f64> { w.iter().map(|wk| wk.iter().zip(x).map(|(a, b)| a * b).sum()).collect() };
    let mut w = vec![vec![0.0; d + 1]; k];
    for _ in 0..cfg.steps {
        let mut grad = vec![vec![0.0; d + 1]; k];
        for (x, &i) in xs.iter().zip(train) {
            let z = logits(&w, x);
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..k {
                let p = e[c] / s - if c == idx[i] { 1.0 } else { 0.0 };
                for (g, xv) in grad[c].iter_mut().zip(x) {
                    *g += p * xv / n;
                }
            }
        }
        for (wk, gk) in w.iter_mut().zip(&grad) {
            for (a, g) in wk.iter_mut().zip(gk) {
                *a -= cfg.lr * (g + l2 * *a);
            }
        }
    }
    test.iter()
        .filter(|&&i| {
            let z = logits(&w, &feats(i));
            (0..k).max_by(|&a, &b| z[a].total_cmp(&z[b])).unwrap() == idx[i]
        })
        .count()
}

/// Held-out accuracy of a linear classifier, pooled over stratified folds
/// (five folds: each trains on 80% of the rows).
pub fn linear_probe(table: &CodeTable, seed: u64) -> Result<f64> {
    linear_probe_with(table, seed, &ProbeConfig::default())
}

pub fn linear_probe_with(table: &CodeTable, seed: u64, cfg: &ProbeConfig) -> Result<f64> {
    let (labels, idx) = label_groups(table)?;
    if cfg.folds < 2 || cfg.steps == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidArgument(format!("bad probe settings {cfg:?}")));
    }
    let fold = stratified_folds(&idx, labels.len(), cfg.folds, seed);
    let mut correct = 0;
    for f in 0..cfg.folds {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..idx.len()).partition(|&i| fold[i] == f);
        if !test.is_empty() {
            correct += probe_fold(table, &idx, labels.len(), &train, &test, cfg);
        }
    }
    Ok(correct as f64 / idx.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub silhouette: f64,
    pub probe_accuracy: f64,
    /// `1 / number of labels`.
    pub chance: f64,
}

pub fn cluster_metrics(table: &CodeTable, seed: u64) -> Result<ClusterMetrics> {
    let (labels, _) = label_groups(table)?;
    Ok(ClusterMetrics {
        silhouette: silhouette(table)?,
        probe_accuracy: linear_probe(table, seed)?,
        chance: 1.0 / labels.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn table(points: &[(&str, Vec<f64>)]) -> CodeTable {
        let rows = points
            .iter()
            .enumerate()
            .map(|(i, (l, v))| CodeRow {
                id: i.to_string(),
                label: l.to_string(),
                vector: v.clone(),
            })
            .collect();
        CodeTable::new(CodeKind::Style, rows).unwrap()
    }

    fn clouds(sep: f64, n: usize, seed: u64) -> CodeTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<(&str, Vec<f64>)> = (0..2 * n)
            .map(|i| {
                let (l, c) = if i % 2 == 0 { ("a", 0.0) } else { ("b", sep) };
                (l, (0..3).map(|_| c + rng.gen_range(-0.5..0.5)).collect())
            })
            .collect();
        table(&pts)
    }

    #[test]
    fn separated_clouds() {
        let m = cluster_metrics(&clouds(50.0, 20, 1), 0).unwrap();
        assert!(m.silhouette > 0.95);
        assert_eq!(m.probe_accuracy, 1.0);
        assert_eq!(m.chance, 0.5);
    }

    #[test]
    fn degenerate_inputs() {
        let same = table(&[("a", vec![1.0]), ("a", vec![1.0]), ("b", vec![1.0]), ("b", vec![1.0])]);
        assert_eq!(silhouette(&same).unwrap(), 0.0);
        let single = table(&[("a", vec![1.0]), ("a", vec![2.0]), ("b", vec![1.0])]);
        assert!(cluster_metrics(&single, 0).is_err());
        assert!(pca2(&table(&[("a", vec![1.0, 2.0]), ("b", vec![2.0, 4.0]), ("a", vec![3.0, 6.0])])).is_err());
        assert!(CodeTable::new(CodeKind::Content, vec![
            CodeRow { id: "0".into(), label: "a".into(), vector: vec![1.0] },
            CodeRow { id: "1".into(), label: "a".into(), vector: vec![1.0, 2.0] },
        ])
        .is_err());
    }

    #[test]
    fn planar_points_have_full_explained_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (u, v): (Vec<f64>, Vec<f64>) = ((0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(), (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let pts: Vec<(&str, Vec<f64>)> = (0..10)
            .map(|_| {
                let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
                ("x", u.iter().zip(&v).map(|(p, q)| 1.0 + a * p + b * q).collect())
            })
            .collect();
        let p = pca2(&table(&pts)).unwrap();
        assert!((p.explained[0] + p.explained[1] - 1.0).abs() < 1e-9);
        assert!(p.explained[0] >= p.explained[1]);
    }

    #[test]
    fn csv_round_trip() {
        let t = clouds(3.0, 3, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codes.csv");
        t.save_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,label,kind,v0,v1,v2\n"));
        assert_eq!(CodeTable::load_csv(&path).unwrap(), t);
    }
}
