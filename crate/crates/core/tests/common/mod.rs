//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use seqkrig::DesignMatrix;

/// Mixture discrepancy by the textbook double sum, nothing cached.
pub fn naive_md_squared(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len() as f64;
    let m = rows[0].len() as i32;
    let mut single = 0.0;
    for x in rows {
        let mut prod = 1.0;
        for &v in x {
            let c = (v - 0.5).abs();
            prod *= 5.0 / 3.0 - 0.25 * c - 0.25 * c * c;
        }
        single += prod;
    }
    let mut pair = 0.0;
    for a in rows {
        for b in rows {
            let mut prod = 1.0;
            for j in 0..a.len() {
                let ca = (a[j] - 0.5).abs();
                let cb = (b[j] - 0.5).abs();
                let d = (a[j] - b[j]).abs();
                prod *= 15.0 / 8.0 - 0.25 * ca - 0.25 * cb - 0.75 * d + 0.5 * d * d;
            }
            pair += prod;
        }
    }
    (19.0f64 / 12.0).powi(m) - 2.0 / n * single + pair / (n * n)
}

/// Outcome of the literal clustering walk.
#[derive(Debug, PartialEq)]
pub enum WalkOutcome {
    Done {
        clusters: Vec<Vec<usize>>,
        alpha: usize,
    },
    Exhausted {
        clusters: Vec<Vec<usize>>,
    },
}

/// The batch-selection pseudocode transcribed line by line:
/// sort descending, then for each point try clusters in creation order.
pub fn literal_walk(
    points: &[Vec<f64>],
    scores: &[f64],
    b: usize,
    alpha: usize,
    beta: f64,
) -> WalkOutcome {
    let order = stable_descending(scores);
    let mut alpha = alpha;
    loop {
        let clusters = one_pass(points, &order, b, alpha, beta);
        if clusters.len() == b {
            return WalkOutcome::Done { clusters, alpha };
        }
        if alpha == 1 {
            return WalkOutcome::Exhausted { clusters };
        }
        alpha = ((alpha as f64 * 0.5).floor() as usize).max(1);
    }
}

/// One pass over `order` at a fixed `alpha`, stopping at `b` clusters.
pub fn one_pass(
    points: &[Vec<f64>],
    order: &[usize],
    b: usize,
    alpha: usize,
    beta: f64,
) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for &i in order {
        if clusters.len() == b {
            break;
        }
        let x = &points[i];
        let mut placed = false;
        for c in clusters.iter_mut() {
            if c.len() > 1 {
                let dim = x.len();
                let mut centroid = vec![0.0; dim];
                for &k in c.iter() {
                    for j in 0..dim {
                        centroid[j] += points[k][j] / c.len() as f64;
                    }
                }
                let dist = |p: &[f64]| -> f64 {
                    p.iter()
                        .zip(&centroid)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                };
                let mean: f64 = c.iter().map(|&k| dist(&points[k])).sum::<f64>() / c.len() as f64;
                if dist(x) < beta * mean {
                    c.push(i);
                    placed = true;
                    break;
                }
            } else {
                let xc = &points[c[0]];
                let inside = points
                    .iter()
                    .filter(|p| {
                        (0..x.len()).all(|j| {
                            let lo = xc[j].min(x[j]);
                            let hi = xc[j].max(x[j]);
                            p[j] >= lo && p[j] <= hi
                        })
                    })
                    .count();
                if inside <= alpha {
                    c.push(i);
                    placed = true;
                    break;
                }
            }
        }
        if !placed {
            clusters.push(vec![i]);
        }
    }
    clusters
}

/// Candidate indices by descending score; ties keep the lower index first.
pub fn stable_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap());
    order
}

pub fn min_pairwise_distance(d: &DesignMatrix, idx: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..idx.len() {
        for b in a + 1..idx.len() {
            let s: f64 = d
                .row(idx[a])
                .iter()
                .zip(d.row(idx[b]))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            best = best.min(s.sqrt());
        }
    }
    best
}
