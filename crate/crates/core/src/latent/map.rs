use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tsne::{embed_tsne, TsneConfig, TsneOutput};
use crate::data::{Checkpoint, LabeledDataset, Split};
use crate::drivetrain::TORQUE_BINS;
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_TAU: f64 = 0.1;
const CHOLESKY_BOOST: f64 = 1e-9;
const MIN_CATEGORY: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PointLabel {
    pub vehicle_type: usize,
    pub torque_bin: usize,
}

/// A labeled region of the embedding: a vehicle type or a torque bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Category {
    Vehicle(usize),
    TorqueBin(usize),
}

impl Category {
    pub fn contains(self, l: &PointLabel) -> bool {
        match self {
            Category::Vehicle(v) => l.vehicle_type == v,
            Category::TorqueBin(b) => l.torque_bin == b,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Category::Vehicle(v) => write!(f, "vehicle:{v}"),
            Category::TorqueBin(b) => write!(f, "torque_bin:{b}"),
        }
    }
}

impl FromStr for Category {
    type Err = Error;

    /// `vehicle:N`, `torque_bin:N`, or a bare bin index `N`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Usage(format!(
                "unknown category `{s}` (use vehicle:N, torque_bin:N or N)"
            ))
        };
        let (kind, idx) = s.split_once(':').unwrap_or(("torque_bin", s));
        let idx: usize = idx.trim().parse().map_err(|_| bad())?;
        match kind.trim() {
            "vehicle" => Ok(Category::Vehicle(idx)),
            "torque_bin" | "bin" if idx < TORQUE_BINS => Ok(Category::TorqueBin(idx)),
            _ => Err(bad()),
        }
    }
}

/// Empirical 2D Gaussian of one category's embedded points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub category: Category,
    pub count: usize,
    pub mean: [f64; 2],
    /// Unbiased sample covariance.
    pub covariance: [[f64; 2]; 2],
}

/// Training latents, their 2D embedding and labels, row for row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMap {
    pub latents: Vec<Vec<f64>>,
    pub embedding: Vec<[f64; 2]>,
    pub labels: Vec<PointLabel>,
}

impl LatentMap {
    pub fn new(
        latents: Vec<Vec<f64>>,
        embedding: Vec<[f64; 2]>,
        labels: Vec<PointLabel>,
    ) -> Result<Self> {
        if latents.len() != embedding.len() || latents.len() != labels.len() {
            return Err(Error::shape(
                "latent map rows",
                latents.len(),
                (embedding.len(), labels.len()),
            ));
        }
        Ok(Self {
            latents,
            embedding,
            labels,
        })
    }

    /// Encodes the training split (posterior means) and embeds it with t-SNE.
    pub fn build(
        ckpt: &Checkpoint,
        dataset: &LabeledDataset,
        tsne: &TsneConfig,
    ) -> Result<(Self, TsneOutput)> {
        let idx = dataset.indices(Split::Train);
        let x = dataset.tensor(&idx)?;
        let cond = if ckpt.model.kind().is_conditional() {
            Some(dataset.conditions(&idx)?)
        } else {
            None
        };
        let latents = ckpt.model.encode(&x, cond.as_deref())?.means();
        let out = embed_tsne(&latents, tsne)?;
        let labels = idx
            .iter()
            .map(|&i| PointLabel {
                vehicle_type: dataset.samples[i].labels.vehicle_type,
                torque_bin: dataset.samples[i].labels.torque_bin,
            })
            .collect();
        Ok((Self::new(latents, out.embedding.clone(), labels)?, out))
    }

    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    pub fn members(&self, category: Category) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| category.contains(&self.labels[i]))
            .collect()
    }

    /// Every vehicle and torque-bin category present, in sorted order.
    pub fn categories(&self) -> Vec<Category> {
        let mut cats: Vec<Category> = self
            .labels
            .iter()
            .flat_map(|l| {
                [
                    Category::Vehicle(l.vehicle_type),
                    Category::TorqueBin(l.torque_bin),
                ]
            })
            .collect();
        cats.sort();
        cats.dedup();
        cats
    }

    pub fn category_stats(&self, category: Category) -> Result<CategoryStats> {
        let m = self.members(category);
        if m.len() < MIN_CATEGORY {
            return Err(Error::Parameter(format!(
                "category {category} has {} points, need at least {MIN_CATEGORY}",
                m.len()
            )));
        }
        let n = m.len() as f64;
        let mut mean = [0.0; 2];
        for &i in &m {
            mean[0] += self.embedding[i][0] / n;
            mean[1] += self.embedding[i][1] / n;
        }
        let mut cov = [[0.0; 2]; 2];
        for &i in &m {
            let d = [
                self.embedding[i][0] - mean[0],
                self.embedding[i][1] - mean[1],
            ];
            for a in 0..2 {
                for b in 0..2 {
                    cov[a][b] += d[a] * d[b] / (n - 1.0);
                }
            }
        }
        Ok(CategoryStats {
            category,
            count: m.len(),
            mean,
            covariance: cov,
        })
    }

    /// Stats of every category with enough members.
    pub fn all_category_stats(&self) -> Vec<CategoryStats> {
        self.categories()
            .into_iter()
            .filter_map(|c| self.category_stats(c).ok())
            .collect()
    }

    /// CSV `idx,z2_x,z2_y,vehicle,torque_bin`.
    pub fn embedding_csv(&self) -> String {
        let mut out = String::from("idx,z2_x,z2_y,vehicle,torque_bin\n");
        for (i, (p, l)) in self.embedding.iter().zip(&self.labels).enumerate() {
            out.push_str(&format!(
                "{i},{:?},{:?},{},{}\n",
                p[0], p[1], l.vehicle_type, l.torque_bin
            ));
        }
        out
    }

    pub fn categories_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.all_category_stats())
            .map_err(|e| Error::json("category stats", e))
    }
}

/// Lower Cholesky factor of a 2×2 covariance, boosting the diagonal if needed.
pub fn cholesky2(c: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let try_factor = |c: &[[f64; 2]; 2]| {
        let l00 = c[0][0].sqrt();
        if !(c[0][0] > 0.0) {
            return None;
        }
        let l10 = c[1][0] / l00;
        let r = c[1][1] - l10 * l10;
        (r > 0.0).then(|| [[l00, 0.0], [l10, r.sqrt()]])
    };
    try_factor(c).unwrap_or_else(|| {
        let boosted = [
            [c[0][0] + CHOLESKY_BOOST, c[0][1]],
            [c[1][0], c[1][1] + CHOLESKY_BOOST],
        ];
        try_factor(&boosted).unwrap_or([[CHOLESKY_BOOST.sqrt(), 0.0], [0.0, CHOLESKY_BOOST.sqrt()]])
    })
}

/// `n` draws from the category's empirical 2D Gaussian.
pub fn fit_and_sample_category(
    map: &LatentMap,
    category: Category,
    n: usize,
    seed_: u64,
) -> Result<Vec<[f64; 2]>> {
    let s = map.category_stats(category)?;
    let l = cholesky2(&s.covariance);
    let mut rng = seed::rng(seed::derive(seed_, &["category", &category.to_string()]));
    Ok((0..n)
        .map(|_| {
            let e: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
            [
                s.mean[0] + l[0][0] * e[0],
                s.mean[1] + l[1][0] * e[0] + l[1][1] * e[1],
            ]
        })
        .collect())
}

/// Indices of the `k` nearest embeddings and their softmax(−d/τ) weights.
pub fn knn_weights(
    point: [f64; 2],
    map: &LatentMap,
    k: usize,
    tau: f64,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if k == 0 || k > map.len() {
        return Err(Error::Parameter(format!(
            "k = {k} must be in 1..={}",
            map.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("tau {tau} must be positive")));
    }
    let mut d: Vec<(f64, usize)> = map
        .embedding
        .iter()
        .enumerate()
        .map(|(i, p)| {
            (
                ((p[0] - point[0]).powi(2) + (p[1] - point[1]).powi(2)).sqrt(),
                i,
            )
        })
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(k);
    let logits: Vec<f64> = d.iter().map(|(dist, _)| -dist / tau).collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok((
        d.iter().map(|&(_, i)| i).collect(),
        w.iter().map(|v| v / s).collect(),
    ))
}

/// Lifts a 2D point back to latent space as a weighted mean of neighbor latents.
pub fn knn_inverse_map(point: [f64; 2], map: &LatentMap, k: usize, tau: f64) -> Result<Vec<f64>> {
    let (idx, w) = knn_weights(point, map, k, tau)?;
    let dim = map.latents[0].len();
    let mut z = vec![0.0; dim];
    for (&i, &wi) in idx.iter().zip(&w) {
        for (acc, v) in z.iter_mut().zip(&map.latents[i]) {
            *acc += wi * v;
        }
    }
    Ok(z)
}
