//! Cluster-based top-`b` batch selection over a scored candidate grid.
//!
//! Candidates are walked in descending score order. Each one joins the
//! first existing cluster that accepts it, otherwise it opens a new cluster;
//! the walk stops once `b` clusters exist and the batch is the leading
//! (highest-scoring) point of every cluster.
//!
//! A singleton cluster `{c}` accepts `x` when the closed axis-aligned box
//! spanned by `c` and `x` contains at most `alpha` candidates, both
//! endpoints included. A larger cluster accepts `x` when its distance to
//! the centroid is strictly below `beta` times the mean member-to-centroid
//! distance.

use serde::{Deserialize, Serialize};

use crate::design::DesignMatrix;
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub b: usize,
    pub alpha: usize,
    pub beta: f64,
    /// Factor applied to `alpha` (rounded down, floor 1) when a walk ends
    /// with fewer than `b` clusters.
    #[serde(default = "default_alpha_decay")]
    pub alpha_decay: f64,
}

fn default_alpha_decay() -> f64 {
    0.5
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            b: 1,
            alpha: 15,
            beta: 5.0,
            alpha_decay: default_alpha_decay(),
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if self.b == 0 || self.alpha == 0 {
            return Err(Error::InvalidArgument(format!(
                "cluster parameters need b >= 1 and alpha >= 1 (got b = {}, alpha = {})",
                self.b, self.alpha
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        if !(self.alpha_decay > 0.0 && self.alpha_decay < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha_decay must lie in (0,1), got {}",
                self.alpha_decay
            )));
        }
        Ok(())
    }
}

/// Clusters formed by the walk and the chosen batch (candidate indices).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterPartition {
    /// Member indices per cluster in creation order; within a cluster the
    /// members are in descending score order, the first being its leader.
    pub clusters: Vec<Vec<usize>>,
    pub batch: Vec<usize>,
    pub alpha_used: usize,
    /// Set when the batch came from [`top_b_separated`] instead of clustering.
    #[serde(default)]
    pub fallback: bool,
}

/// Candidate indices sorted by descending score, ties by lower index.
pub fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn box_count(candidates: &DesignMatrix, a: &[f64], b: &[f64]) -> usize {
    candidates
        .rows()
        .filter(|row| {
            row.iter()
                .zip(a.iter().zip(b))
                .all(|(v, (p, q))| *v >= p.min(*q) && *v <= p.max(*q))
        })
        .count()
}

struct Cluster {
    members: Vec<usize>,
    sum: Vec<f64>,
}

impl Cluster {
    fn new(idx: usize, point: &[f64]) -> Self {
        Cluster {
            members: vec![idx],
            sum: point.to_vec(),
        }
    }

    fn push(&mut self, idx: usize, point: &[f64]) {
        self.members.push(idx);
        for (s, v) in self.sum.iter_mut().zip(point) {
            *s += v;
        }
    }

    fn accepts(&self, candidates: &DesignMatrix, x: &[f64], alpha: usize, beta: f64) -> bool {
        if self.members.len() > 1 {
            let k = self.members.len() as f64;
            let centroid: Vec<f64> = self.sum.iter().map(|s| s / k).collect();
            let mean_spread = self
                .members
                .iter()
                .map(|&i| distance(candidates.row(i), &centroid))
                .sum::<f64>()
                / k;
            distance(x, &centroid) < beta * mean_spread
        } else {
            box_count(candidates, candidates.row(self.members[0]), x) <= alpha
        }
    }
}

fn walk(
    candidates: &DesignMatrix,
    order: &[usize],
    b: usize,
    alpha: usize,
    beta: f64,
) -> Vec<Vec<usize>> {
    let mut clusters = vec![Cluster::new(order[0], candidates.row(order[0]))];
    for &idx in &order[1..] {
        if clusters.len() == b {
            break;
        }
        let x = candidates.row(idx);
        match clusters
            .iter_mut()
            .find(|c| c.accepts(candidates, x, alpha, beta))
        {
            Some(c) => c.push(idx, x),
            None => clusters.push(Cluster::new(idx, x)),
        }
    }
    clusters.into_iter().map(|c| c.members).collect()
}

/// Runs the clustering walk, lowering `alpha` until `b` clusters form.
///
/// Fails with [`Error::InsufficientClusters`] (carrying the last partial
/// partition) if even `alpha = 1` does not yield `b` clusters.
pub fn select_batch(
    candidates: &DesignMatrix,
    scores: &[f64],
    params: &ClusterParams,
) -> Result<ClusterPartition> {
    params.validate()?;
    check_dim(candidates.n(), scores.len())?;
    if candidates.n() < params.b {
        return Err(Error::InvalidArgument(format!(
            "{} candidates cannot supply a batch of {}",
            candidates.n(),
            params.b
        )));
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidArgument(format!(
            "score {bad} is not comparable"
        )));
    }
    let order = descending_order(scores);
    let mut alpha = params.alpha;
    loop {
        let clusters = walk(candidates, &order, params.b, alpha, params.beta);
        let partition = ClusterPartition {
            batch: clusters.iter().map(|c| c[0]).collect(),
            clusters,
            alpha_used: alpha,
            fallback: false,
        };
        if partition.clusters.len() == params.b {
            return Ok(partition);
        }
        if alpha == 1 {
            return Err(Error::InsufficientClusters {
                wanted: params.b,
                partial: Box::new(partition),
            });
        }
        alpha = ((alpha as f64 * params.alpha_decay).floor() as usize).max(1);
        log::debug!(
            "only {} clusters; retrying with alpha = {alpha}",
            partition.clusters.len()
        );
    }
}

/// Greedy fallback: the highest-scoring candidates that keep at least
/// `min_distance` from every point already taken. If the constraint cannot
/// fill the batch, the remaining slots go to the best unused candidates.
pub fn top_b_separated(
    candidates: &DesignMatrix,
    scores: &[f64],
    b: usize,
    min_distance: f64,
) -> Vec<usize> {
    let order = descending_order(scores);
    let mut chosen: Vec<usize> = Vec::with_capacity(b);
    for &i in &order {
        if chosen.len() == b {
            break;
        }
        if chosen
            .iter()
            .all(|&j| distance(candidates.row(i), candidates.row(j)) >= min_distance)
        {
            chosen.push(i);
        }
    }
    for &i in &order {
        if chosen.len() == b {
            break;
        }
        if !chosen.contains(&i) {
            chosen.push(i);
        }
    }
    chosen
}

/// [`select_batch`], switching to [`top_b_separated`] when clustering
/// cannot produce `b` clusters.
pub fn select_batch_with_fallback(
    candidates: &DesignMatrix,
    scores: &[f64],
    params: &ClusterParams,
    min_distance: f64,
) -> Result<ClusterPartition> {
    match select_batch(candidates, scores, params) {
        Err(Error::InsufficientClusters { partial, .. }) => {
            log::warn!("cluster selection fell back to separated top-b");
            Ok(ClusterPartition {
                batch: top_b_separated(candidates, scores, params.b, min_distance),
                fallback: true,
                ..*partial
            })
        }
        other => other,
    }
}

/// JSON document describing a partition: cluster membership with each
/// member's coordinates and score, plus the chosen batch.
pub fn partition_to_json(
    candidates: &DesignMatrix,
    scores: &[f64],
    partition: &ClusterPartition,
) -> serde_json::Value {
    let clusters: Vec<serde_json::Value> = partition
        .clusters
        .iter()
        .map(|members| {
            serde_json::Value::Array(
                members
                    .iter()
                    .map(|&i| {
                        serde_json::json!({
                            "index": i,
                            "point": candidates.row(i),
                            "score": scores[i],
                        })
                    })
                    .collect(),
            )
        })
        .collect();
    let batch: Vec<&[f64]> = partition.batch.iter().map(|&i| candidates.row(i)).collect();
    serde_json::json!({
        "alpha_used": partition.alpha_used,
        "fallback": partition.fallback,
        "batch_indices": partition.batch,
        "batch": batch,
        "clusters": clusters,
    })
}
