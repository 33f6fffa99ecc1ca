//! Similarity, clustering quality, additivity, retrieval and projection.
//!
//! All arithmetic is f64 with a fixed reduction order, so results do not
//! depend on how pairwise work is scheduled across threads.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SplitMix64;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("silhouette needs at least 2 clusters, found {0}")]
    TooFewClusters(usize),
    #[error("model {0:?} has no label")]
    Unlabeled(String),
    #[error("duplicate model id {0:?}")]
    DuplicateId(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("projection to {k} components needs at least {need} points, got {got}")]
    TooFewPoints { k: usize, need: usize, got: usize },
    #[error("zero variance")]
    ZeroVariance,
    #[error("unknown {kind} {value:?}")]
    Parse { kind: &'static str, value: String },
}

fn norm(u: &[f32]) -> f64 {
    u.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// `u·v / (|u||v|)`, clamped to [-1, 1].
pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64, AnalysisError> {
    if u.len() != v.len() {
        return Err(AnalysisError::LengthMismatch(u.len(), v.len()));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(AnalysisError::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

fn cosine_f64(u: &[f64], v: &[f64]) -> Result<f64, AnalysisError> {
    if u.len() != v.len() {
        return Err(AnalysisError::LengthMismatch(u.len(), v.len()));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(AnalysisError::ZeroVector);
    }
    let d: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((d / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        })
    }
}

impl FromStr for Metric {
    type Err = AnalysisError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            _ => Err(AnalysisError::Parse {
                kind: "metric",
                value: s.to_string(),
            }),
        }
    }
}

/// Symmetric pairwise distance matrix.
pub fn distance_matrix<V: AsRef<[f32]> + Sync>(points: &[V], metric: Metric) -> Result<Vec<Vec<f64>>, AnalysisError> {
    let n = points.len();
    if let Some(p) = points.first() {
        let d = p.as_ref().len();
        if let Some(q) = points.iter().find(|q| q.as_ref().len() != d) {
            return Err(AnalysisError::LengthMismatch(d, q.as_ref().len()));
        }
    }
    let norms: Vec<f64> = points.iter().map(|p| norm(p.as_ref())).collect();
    if metric == Metric::Cosine && norms.contains(&0.0) {
        return Err(AnalysisError::ZeroVector);
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        return 0.0;
                    }
                    let (u, v) = (points[i].as_ref(), points[j].as_ref());
                    match metric {
                        Metric::Cosine => 1.0 - (dot(u, v) / (norms[i] * norms[j])).clamp(-1.0, 1.0),
                        Metric::Euclidean => u
                            .iter()
                            .zip(v)
                            .map(|(&a, &b)| {
                                let d = a as f64 - b as f64;
                                d * d
                            })
                            .sum::<f64>()
                            .sqrt(),
                    }
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SilhouetteReport {
    pub per_point: BTreeMap<String, f64>,
    pub mean: f64,
    pub metric: Metric,
}

/// Mean silhouette of labeled points. A point alone in its cluster scores 0.
pub fn silhouette_score<S, V>(
    points: &[(S, V)],
    labels: &BTreeMap<String, String>,
    metric: Metric,
) -> Result<SilhouetteReport, AnalysisError>
where
    S: AsRef<str>,
    V: AsRef<[f32]> + Sync,
{
    let mut seen = HashSet::new();
    let mut cluster_of = Vec::with_capacity(points.len());
    for (id, _) in points {
        let id = id.as_ref();
        if !seen.insert(id) {
            return Err(AnalysisError::DuplicateId(id.to_string()));
        }
        let label = labels.get(id).ok_or_else(|| AnalysisError::Unlabeled(id.to_string()))?;
        cluster_of.push(label.as_str());
    }
    let names: Vec<&str> = {
        let mut v = cluster_of.clone();
        v.sort_unstable();
        v.dedup();
        v
    };
    if names.len() < 2 {
        return Err(AnalysisError::TooFewClusters(names.len()));
    }
    let cid: Vec<usize> = cluster_of.iter().map(|l| names.binary_search(l).unwrap()).collect();
    let mut sizes = vec![0usize; names.len()];
    for &c in &cid {
        sizes[c] += 1;
    }
    let vectors: Vec<&[f32]> = points.iter().map(|(_, v)| v.as_ref()).collect();
    let dist = distance_matrix(&vectors, metric)?;

    let scores: Vec<f64> = (0..points.len())
        .map(|i| {
            let own = cid[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; names.len()];
            for (j, &cj) in cid.iter().enumerate() {
                if j != i {
                    sums[cj] += dist[i][j];
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..names.len())
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                ((b - a) / m).clamp(-1.0, 1.0)
            }
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let per_point = points.iter().map(|(id, _)| id.as_ref().to_string()).zip(scores).collect();
    Ok(SilhouetteReport { per_point, mean, metric })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdditiveReport {
    pub sim_d1: f64,
    pub sim_d2: f64,
    pub sim_sum: f64,
}

impl AdditiveReport {
    /// The mixed model is at least as close to the sum as to either part.
    pub fn sum_is_closest(&self) -> bool {
        self.sim_sum >= self.sim_d1.max(self.sim_d2)
    }
}

pub fn additive_check(v_mixed: &[f32], v_d1: &[f32], v_d2: &[f32]) -> Result<AdditiveReport, AnalysisError> {
    if v_d1.len() != v_d2.len() {
        return Err(AnalysisError::LengthMismatch(v_d1.len(), v_d2.len()));
    }
    let sum: Vec<f64> = v_d1.iter().zip(v_d2).map(|(&a, &b)| a as f64 + b as f64).collect();
    let mixed: Vec<f64> = v_mixed.iter().map(|&x| x as f64).collect();
    Ok(AdditiveReport {
        sim_d1: cosine_similarity(v_mixed, v_d1)?,
        sim_d2: cosine_similarity(v_mixed, v_d2)?,
        sim_sum: cosine_f64(&mixed, &sum)?,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    #[default]
    NearestModel,
    NearestCentroid,
}

impl FromStr for RetrievalMode {
    type Err = AnalysisError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "nearest_model" | "model" => Ok(RetrievalMode::NearestModel),
            "nearest_centroid" | "centroid" => Ok(RetrievalMode::NearestCentroid),
            _ => Err(AnalysisError::Parse {
                kind: "retrieval mode",
                value: s.to_string(),
            }),
        }
    }
}

/// One pool member: id, vector, label.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry<'a> {
    pub model_id: &'a str,
    pub vector: &'a [f32],
    pub label: &'a str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Retrieved {
    /// Matched model id, or the centroid's label in centroid mode.
    pub matched: String,
    pub label: String,
    pub similarity: f64,
}

/// Nearest pool model (or label centroid) to `query` by cosine. Equal
/// similarities resolve to the lexicographically smallest id (or label).
pub fn retrieve(query: &[f32], pool: &[PoolEntry<'_>], mode: RetrievalMode) -> Result<Retrieved, AnalysisError> {
    if pool.is_empty() {
        return Err(AnalysisError::EmptyInput("retrieval pool"));
    }
    let candidates: Vec<(String, String, Vec<f32>)> = match mode {
        RetrievalMode::NearestModel => pool
            .iter()
            .map(|p| (p.model_id.to_string(), p.label.to_string(), p.vector.to_vec()))
            .collect(),
        RetrievalMode::NearestCentroid => {
            let mut groups: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
            for p in pool {
                let (acc, n) = groups.entry(p.label).or_insert_with(|| (vec![0.0; p.vector.len()], 0));
                if acc.len() != p.vector.len() {
                    return Err(AnalysisError::LengthMismatch(acc.len(), p.vector.len()));
                }
                for (a, &x) in acc.iter_mut().zip(p.vector) {
                    *a += x as f64;
                }
                *n += 1;
            }
            groups
                .into_iter()
                .map(|(l, (acc, n))| (l.to_string(), l.to_string(), acc.iter().map(|a| (a / n as f64) as f32).collect()))
                .collect()
        }
    };
    let mut best: Option<Retrieved> = None;
    for (id, label, v) in candidates {
        let sim = cosine_similarity(query, &v)?;
        let better = match &best {
            None => true,
            Some(b) => sim > b.similarity || (sim == b.similarity && id < b.matched),
        };
        if better {
            best = Some(Retrieved {
                matched: id,
                label,
                similarity: sim,
            });
        }
    }
    Ok(best.expect("nonempty pool"))
}

/// Fraction of `(vector, label)` tasks whose retrieved label matches.
pub fn retrieval_rate<V: AsRef<[f32]>, L: AsRef<str>>(
    tasks: &[(V, L)],
    pool: &[PoolEntry<'_>],
    mode: RetrievalMode,
) -> Result<f64, AnalysisError> {
    if tasks.is_empty() {
        return Err(AnalysisError::EmptyInput("task embeddings"));
    }
    let mut hits = 0usize;
    for (v, l) in tasks {
        if retrieve(v.as_ref(), pool, mode)?.label == l.as_ref() {
            hits += 1;
        }
    }
    Ok(hits as f64 / tasks.len() as f64)
}

const POWER_MAX_ITERS: usize = 200_000;
const POWER_TOL: f64 = 1e-14;
const RELATIVE_EIGEN_FLOOR: f64 = 1e-12;

/// Top-k principal coordinates of mean-centered data.
///
/// Eigenvectors of the n x n Gram matrix come from power iteration with
/// deflation; a point's k-th coordinate is `sqrt(λ_k) u_k[i]`. Each
/// component is signed so its largest-magnitude coordinate is positive.
pub fn pca_project<S, V>(points: &[(S, V)], k: usize) -> Result<Vec<(String, Vec<f64>)>, AnalysisError>
where
    S: AsRef<str>,
    V: AsRef<[f32]>,
{
    let n = points.len();
    if k == 0 || n < k + 1 {
        return Err(AnalysisError::TooFewPoints { k, need: k + 1, got: n });
    }
    let d = points[0].1.as_ref().len();
    if let Some((_, v)) = points.iter().find(|(_, v)| v.as_ref().len() != d) {
        return Err(AnalysisError::LengthMismatch(d, v.as_ref().len()));
    }
    let mut mean = vec![0.0f64; d];
    for (_, v) in points {
        for (m, &x) in mean.iter_mut().zip(v.as_ref()) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|(_, v)| v.as_ref().iter().zip(&mean).map(|(&x, m)| x as f64 - m).collect())
        .collect();
    let mut gram = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let g: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            gram[i][j] = g;
            gram[j][i] = g;
        }
    }
    let trace: f64 = (0..n).map(|i| gram[i][i]).sum();
    if trace <= 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }

    let mut coords = vec![vec![0.0f64; k]; n];
    let mut rng = SplitMix64::new(0x5eed);
    let mut top = None;
    for c in 0..k {
        let (lambda, u) = power_iteration(&gram, &mut rng);
        let lambda1 = *top.get_or_insert(lambda);
        if lambda <= RELATIVE_EIGEN_FLOOR * lambda1 {
            break;
        }
        let sign = {
            let mut best = 0;
            for i in 1..n {
                if u[i].abs() > u[best].abs() {
                    best = i;
                }
            }
            u[best].signum()
        };
        let s = lambda.sqrt();
        for i in 0..n {
            coords[i][c] = sign * s * u[i];
        }
        for i in 0..n {
            for j in 0..n {
                gram[i][j] -= lambda * u[i] * u[j];
            }
        }
    }
    Ok(points.iter().map(|(id, _)| id.as_ref().to_string()).zip(coords).collect())
}

fn power_iteration(a: &[Vec<f64>], rng: &mut SplitMix64) -> (f64, Vec<f64>) {
    let n = a.len();
    let normalize = |v: &mut Vec<f64>| {
        let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if s > 0.0 {
            v.iter_mut().for_each(|x| *x /= s);
        }
        s
    };
    let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    normalize(&mut v);
    for _ in 0..POWER_MAX_ITERS {
        let mut w: Vec<f64> = a.iter().map(|row| row.iter().zip(&v).map(|(x, y)| x * y).sum()).collect();
        if normalize(&mut w) == 0.0 {
            return (0.0, v);
        }
        // Fix the sign so a converged vector compares equal to its predecessor.
        let dot: f64 = w.iter().zip(&v).map(|(x, y)| x * y).sum();
        if dot < 0.0 {
            w.iter_mut().for_each(|x| *x = -*x);
        }
        let delta = w.iter().zip(&v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        v = w;
        if delta < POWER_TOL {
            break;
        }
    }
    (rayleigh(a, &v).max(0.0), v)
}

fn rayleigh(a: &[Vec<f64>], v: &[f64]) -> f64 {
    a.iter()
        .zip(v)
        .map(|(row, vi)| vi * row.iter().zip(v).map(|(x, y)| x * y).sum::<f64>())
        .sum()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes `model_id,label,c1,c2,...` with LF line endings. Missing labels
/// are written as empty fields.
pub fn write_projection_csv<W: Write>(
    out: &mut W,
    coords: &[(String, Vec<f64>)],
    labels: &BTreeMap<String, String>,
) -> std::io::Result<()> {
    let k = coords.first().map_or(0, |(_, c)| c.len());
    let mut header = String::from("model_id,label");
    for c in 1..=k {
        header.push_str(&format!(",c{c}"));
    }
    writeln!(out, "{header}")?;
    for (id, c) in coords {
        let label = labels.get(id).map(String::as_str).unwrap_or("");
        let mut line = format!("{},{}", csv_field(id), csv_field(label));
        for x in c {
            line.push_str(&format!(",{x}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[3.0, 4.0], &[3.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(AnalysisError::ZeroVector));
        assert_eq!(cosine_similarity(&[1.0], &[1.0, 0.0]), Err(AnalysisError::LengthMismatch(1, 2)));
    }

    #[test]
    fn silhouette_of_two_1d_clusters() {
        let pts = [("a", vec![0.0f32]), ("b", vec![0.2]), ("c", vec![1.0]), ("d", vec![1.2])];
        let l = labels(&[("a", "x"), ("b", "x"), ("c", "y"), ("d", "y")]);
        let r = silhouette_score(&pts, &l, Metric::Euclidean).unwrap();
        // a: a=0.2, b=1.1 -> 0.8182; b: a=0.2, b=0.9 -> 0.7778
        let expect = (0.9 / 1.1 + 0.7 / 0.9) / 2.0;
        assert!((r.mean - expect).abs() < 1e-6, "{}", r.mean);
        assert!((r.per_point["a"] - 0.9 / 1.1).abs() < 1e-6);
    }

    #[test]
    fn silhouette_identical_within_clusters() {
        let pts = [("a", vec![1.0f32, 0.0]), ("b", vec![1.0, 0.0]), ("c", vec![0.0, 1.0]), ("d", vec![0.0, 1.0])];
        let l = labels(&[("a", "x"), ("b", "x"), ("c", "y"), ("d", "y")]);
        for m in [Metric::Cosine, Metric::Euclidean] {
            assert_eq!(silhouette_score(&pts, &l, m).unwrap().mean, 1.0);
        }
    }

    #[test]
    fn silhouette_edge_cases() {
        let pts = [("a", vec![1.0f32]), ("b", vec![2.0]), ("c", vec![5.0])];
        let l = labels(&[("a", "x"), ("b", "x"), ("c", "y")]);
        let r = silhouette_score(&pts, &l, Metric::Euclidean).unwrap();
        assert_eq!(r.per_point["c"], 0.0);
        let one = labels(&[("a", "x"), ("b", "x"), ("c", "x")]);
        assert_eq!(silhouette_score(&pts, &one, Metric::Euclidean), Err(AnalysisError::TooFewClusters(1)));
        let partial = labels(&[("a", "x"), ("b", "y")]);
        assert_eq!(
            silhouette_score(&pts, &partial, Metric::Euclidean),
            Err(AnalysisError::Unlabeled("c".into()))
        );
        let zero = [("a", vec![0.0f32]), ("c", vec![5.0])];
        assert_eq!(silhouette_score(&zero, &l, Metric::Cosine), Err(AnalysisError::ZeroVector));
    }

    #[test]
    fn additive_analytic() {
        let r = additive_check(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((r.sim_d1 - 1.0).abs() < 1e-15);
        assert_eq!(r.sim_d2, 0.0);
        assert!((r.sim_sum - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(!r.sum_is_closest());
        assert!(additive_check(&[1.0, 1.0], &[1.0, 0.0], &[0.0, 1.0]).unwrap().sum_is_closest());
    }

    #[test]
    fn retrieval_examples() {
        let a = [1.0f32, 0.0];
        let b = [0.0f32, 1.0];
        let pool = [
            PoolEntry { model_id: "m-b", vector: &b, label: "y" },
            PoolEntry { model_id: "m-a", vector: &a, label: "x" },
        ];
        assert_eq!(retrieval_rate(&[(a, "x"), (b, "y")], &pool, RetrievalMode::NearestModel).unwrap(), 1.0);
        // Equidistant: "m-a" < "m-b".
        let r = retrieve(&[1.0, 1.0], &pool, RetrievalMode::NearestModel).unwrap();
        assert_eq!(r.matched, "m-a");
        let r = retrieve(&[0.1, 1.0], &pool, RetrievalMode::NearestCentroid).unwrap();
        assert_eq!(r.label, "y");
        assert!(retrieval_rate::<[f32; 2], &str>(&[], &pool, RetrievalMode::NearestModel).is_err());
        assert!(retrieve(&a, &[], RetrievalMode::NearestModel).is_err());
    }

    #[test]
    fn pca_collinear_points() {
        let pts: Vec<(String, Vec<f32>)> = (0..5)
            .map(|i| (format!("p{i}"), vec![i as f32, 2.0 * i as f32, -(i as f32)]))
            .collect();
        let out = pca_project(&pts, 2).unwrap();
        for (_, c) in &out {
            assert!(c[1].abs() < 1e-9);
        }
        // 1-D distances are preserved along component 1.
        let d = (out[4].1[0] - out[0].1[0]).abs();
        assert!((d - (4.0f64 * 6.0f64.sqrt())).abs() < 1e-9);
        let max = out.iter().map(|(_, c)| c[0]).fold(f64::MIN, f64::max);
        let min = out.iter().map(|(_, c)| c[0]).fold(f64::MAX, f64::min);
        assert!(max.abs() >= min.abs() - 1e-12);
    }

    #[test]
    fn pca_errors_and_duplicates() {
        let same = vec![("a", vec![1.0f32, 2.0]); 4];
        assert_eq!(pca_project(&same, 2), Err(AnalysisError::ZeroVariance));
        let two = [("a", vec![1.0f32]), ("b", vec![2.0])];
        assert!(matches!(pca_project(&two, 2), Err(AnalysisError::TooFewPoints { .. })));
        let dup = [("a", vec![1.0f32, 0.0]), ("b", vec![1.0, 0.0]), ("c", vec![0.0, 3.0]), ("d", vec![2.0, 2.0])];
        let out = pca_project(&dup, 2).unwrap();
        assert_eq!(out[0].1, out[1].1);
    }

    #[test]
    fn projection_csv() {
        let coords = vec![("a,1".to_string(), vec![0.5, -1.0]), ("b".to_string(), vec![0.0, 2.0])];
        let mut buf = Vec::new();
        write_projection_csv(&mut buf, &coords, &labels(&[("b", "code")])).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "model_id,label,c1,c2\n\"a,1\",,0.5,-1\nb,code,0,2\n");
    }

    fn brute_silhouette(points: &[Vec<f32>], cl: &[usize], metric: Metric) -> f64 {
        let dist = |a: &[f32], b: &[f32]| -> f64 {
            match metric {
                Metric::Euclidean => a.iter().zip(b).map(|(x, y)| ((*x as f64) - (*y as f64)).powi(2)).sum::<f64>().sqrt(),
                Metric::Cosine => {
                    let d: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
                    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
                    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
                    1.0 - (d / (na * nb)).clamp(-1.0, 1.0)
                }
            }
        };
        let n = points.len();
        let mut total = 0.0;
        for i in 0..n {
            let same: Vec<usize> = (0..n).filter(|&j| j != i && cl[j] == cl[i]).collect();
            if same.is_empty() {
                continue;
            }
            let a = same.iter().map(|&j| dist(&points[i], &points[j])).sum::<f64>() / same.len() as f64;
            let mut b = f64::INFINITY;
            for c in cl.iter().copied().collect::<std::collections::BTreeSet<_>>() {
                if c == cl[i] {
                    continue;
                }
                let members: Vec<usize> = (0..n).filter(|&j| cl[j] == c).collect();
                b = b.min(members.iter().map(|&j| dist(&points[i], &points[j])).sum::<f64>() / members.len() as f64);
            }
            total += (b - a) / a.max(b);
        }
        total / n as f64
    }

    proptest! {
        #[test]
        fn silhouette_matches_brute_force(
            pts in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 4), 6..20),
            seed in any::<u64>(),
        ) {
            let mut rng = SplitMix64::new(seed);
            let mut cl: Vec<usize> = (0..pts.len()).map(|_| rng.below(3)).collect();
            cl[0] = 0;
            cl[1] = 1;
            let ids: Vec<String> = (0..pts.len()).map(|i| format!("m{i:02}")).collect();
            let l: BTreeMap<String, String> = ids.iter().zip(&cl).map(|(i, c)| (i.clone(), format!("c{c}"))).collect();
            let pairs: Vec<(String, Vec<f32>)> = ids.iter().cloned().zip(pts.iter().cloned()).collect();
            prop_assume!(pts.iter().all(|p| norm(p) > 1e-3));
            for m in [Metric::Cosine, Metric::Euclidean] {
                let r = silhouette_score(&pairs, &l, m).unwrap();
                prop_assert!((r.mean - brute_silhouette(&pts, &cl, m)).abs() < 1e-9);
                prop_assert!(r.per_point.values().all(|s| (-1.0..=1.0).contains(s)));
                // Positive scaling leaves every score unchanged.
                let scaled: Vec<(String, Vec<f32>)> = pairs.iter().map(|(i, v)| (i.clone(), v.iter().map(|x| x * 4.0).collect())).collect();
                prop_assert!((silhouette_score(&scaled, &l, m).unwrap().mean - r.mean).abs() < 1e-9);
                // Relabeling by a permutation of names changes nothing.
                let relabeled: BTreeMap<String, String> = l.iter().map(|(k, v)| (k.clone(), format!("z{v}"))).collect();
                prop_assert!((silhouette_score(&pairs, &relabeled, m).unwrap().mean - r.mean).abs() < 1e-12);
            }
        }

        #[test]
        fn cosine_is_scale_invariant(
            u in prop::collection::vec(-1.0f32..1.0, 5),
            v in prop::collection::vec(-1.0f32..1.0, 5),
            a in 0.01f32..100.0, b in 0.01f32..100.0,
        ) {
            prop_assume!(norm(&u) > 1e-3 && norm(&v) > 1e-3);
            let su: Vec<f32> = u.iter().map(|x| x * a).collect();
            let sv: Vec<f32> = v.iter().map(|x| x * b).collect();
            let s1 = cosine_similarity(&u, &v).unwrap();
            let s2 = cosine_similarity(&su, &sv).unwrap();
            // f32 rounding of the scaled inputs bounds the agreement.
            prop_assert!((s1 - s2).abs() < 1e-6);
            let u64v: Vec<f64> = u.iter().map(|&x| x as f64).collect();
            let v64: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            let s3 = cosine_f64(&u64v.iter().map(|x| x * a as f64).collect::<Vec<_>>(), &v64.iter().map(|x| x * b as f64).collect::<Vec<_>>()).unwrap();
            prop_assert!((cosine_f64(&u64v, &v64).unwrap() - s3).abs() < 1e-12);
        }

        #[test]
        fn exact_copy_is_always_retrieved(
            vs in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 3), 2..8),
            pick in any::<prop::sample::Index>(),
        ) {
            prop_assume!(vs.iter().all(|v| norm(v) > 1e-3));
            let ids: Vec<String> = (0..vs.len()).map(|i| format!("m{i}")).collect();
            let labels: Vec<String> = (0..vs.len()).map(|i| format!("l{i}")).collect();
            // Keep vectors distinct in direction so the copy is the unique best.
            for i in 0..vs.len() {
                for j in 0..i {
                    prop_assume!(cosine_similarity(&vs[i], &vs[j]).unwrap() < 1.0 - 1e-6);
                }
            }
            let pool: Vec<PoolEntry> = (0..vs.len()).map(|i| PoolEntry { model_id: &ids[i], vector: &vs[i], label: &labels[i] }).collect();
            let i = pick.index(vs.len());
            let rate = retrieval_rate(&[(vs[i].clone(), labels[i].clone())], &pool, RetrievalMode::NearestModel).unwrap();
            prop_assert_eq!(rate, 1.0);
        }

        #[test]
        fn pca_preserves_planar_distances(
            coef in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 4..10),
        ) {
            // Points in the plane spanned by two fixed directions in 4-D.
            let e1 = [0.5, 0.5, 0.5, 0.5];
            let e2 = [0.5, -0.5, 0.5, -0.5];
            let pts: Vec<(String, Vec<f32>)> = coef.iter().enumerate().map(|(i, (a, b))| {
                (format!("p{i}"), (0..4).map(|k| (a * e1[k] + b * e2[k]) as f32).collect())
            }).collect();
            let spread: f64 = coef.iter().map(|(a, b)| a * a + b * b).sum();
            prop_assume!(spread > 1.0);
            let out = pca_project(&pts, 2).unwrap();
            let n = pts.len();
            for i in 0..n {
                for j in 0..n {
                    let orig: f64 = pts[i].1.iter().zip(&pts[j].1).map(|(x, y)| ((*x as f64) - (*y as f64)).powi(2)).sum::<f64>().sqrt();
                    let proj = ((out[i].1[0] - out[j].1[0]).powi(2) + (out[i].1[1] - out[j].1[1]).powi(2)).sqrt();
                    prop_assert!((orig - proj).abs() < 1e-6, "{} vs {}", orig, proj);
                }
            }
        }

        #[test]
        fn pca_is_translation_invariant(
            pts in prop::collection::vec(prop::collection::vec(-50i32..50, 3), 4..10),
            shift in prop::collection::vec(-1000i32..1000, 3),
        ) {
            // Integer data keeps the shifted f32 inputs exact.
            let a: Vec<(String, Vec<f32>)> = pts.iter().enumerate().map(|(i, v)| (format!("p{i}"), v.iter().map(|&x| x as f32).collect())).collect();
            let b: Vec<(String, Vec<f32>)> = pts.iter().enumerate().map(|(i, v)| (format!("p{i}"), v.iter().zip(&shift).map(|(&x, &s)| (x + s) as f32).collect())).collect();
            match (pca_project(&a, 2), pca_project(&b, 2)) {
                (Ok(pa), Ok(pb)) => {
                    for ((_, ca), (_, cb)) in pa.iter().zip(&pb) {
                        for (x, y) in ca.iter().zip(cb) {
                            prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y);
                        }
                    }
                }
                (Err(ea), Err(eb)) => prop_assert_eq!(ea, eb),
                (ra, rb) => prop_assert!(false, "{:?} vs {:?}", ra, rb),
            }
        }
    }
}
