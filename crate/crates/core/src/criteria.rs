//! Selection criteria: each scores a candidate point, and the next design
//! point is the candidate with the largest score.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{mixture_discrepancy, DesignMatrix};
use crate::error::{check_dim, Error, Result};
use crate::kriging::KrigingModel;

/// The seven point-selection criteria.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionSpec {
    /// Squared deviation from the nearest observation plus variance.
    #[serde(alias = "EI0")]
    Ei0,
    /// As `Ei0`, but against the first-order Taylor expansion at the
    /// nearest design point.
    #[serde(alias = "EI1")]
    Ei1,
    /// `Ei1` with its bias term weighted by the nearest-point distance.
    #[serde(alias = "EI2")]
    Ei2,
    /// Prediction variance.
    #[serde(alias = "s")]
    MaxVariance,
    /// Negative mixture discrepancy of the augmented design. Ignores
    /// responses.
    #[serde(alias = "MD")]
    Md,
    /// Expected gradient norm times nearest-point distance, plus the local
    /// response change.
    #[serde(alias = "gra")]
    Gradient,
    /// Minimum of the unscaled prediction sd and the gradient-variance bound.
    #[serde(alias = "var")]
    VarianceBound,
}

impl CriterionSpec {
    pub const ALL: [CriterionSpec; 7] = [
        CriterionSpec::Ei0,
        CriterionSpec::Ei1,
        CriterionSpec::Ei2,
        CriterionSpec::MaxVariance,
        CriterionSpec::Md,
        CriterionSpec::Gradient,
        CriterionSpec::VarianceBound,
    ];

    /// Whether the criterion needs a fitted model (all but MD).
    pub fn uses_observations(self) -> bool {
        !matches!(self, CriterionSpec::Md)
    }

    pub fn name(self) -> &'static str {
        match self {
            CriterionSpec::Ei0 => "ei0",
            CriterionSpec::Ei1 => "ei1",
            CriterionSpec::Ei2 => "ei2",
            CriterionSpec::MaxVariance => "max_variance",
            CriterionSpec::Md => "md",
            CriterionSpec::Gradient => "gradient",
            CriterionSpec::VarianceBound => "variance_bound",
        }
    }
}

impl fmt::Display for CriterionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CriterionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let kind = match key.as_str() {
            "ei0" => CriterionSpec::Ei0,
            "ei1" => CriterionSpec::Ei1,
            "ei2" => CriterionSpec::Ei2,
            "s" | "max_variance" | "variance" => CriterionSpec::MaxVariance,
            "md" => CriterionSpec::Md,
            "gra" | "gradient" => CriterionSpec::Gradient,
            "var" | "variance_bound" => CriterionSpec::VarianceBound,
            _ => return Err(Error::Parse(format!("unknown criterion '{s}'"))),
        };
        Ok(kind)
    }
}

/// Nearest existing design point to a candidate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NearestNeighborInfo {
    pub index: usize,
    pub distance: f64,
    pub f_star: f64,
}

/// Euclidean nearest design row; ties go to the lowest index.
pub fn nearest_neighbor(
    design: &DesignMatrix,
    observations: &[f64],
    x: &[f64],
) -> Result<NearestNeighborInfo> {
    check_dim(design.m(), x.len())?;
    check_dim(design.n(), observations.len())?;
    let (index, d2) = design
        .rows()
        .map(|row| {
            row.iter()
                .zip(x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .enumerate()
        .fold((usize::MAX, f64::INFINITY), |best, (i, d2)| {
            if d2 < best.1 {
                (i, d2)
            } else {
                best
            }
        });
    if index == usize::MAX {
        return Err(Error::InvalidArgument("design is empty".into()));
    }
    Ok(NearestNeighborInfo {
        index,
        distance: d2.sqrt(),
        f_star: observations[index],
    })
}

fn model_nearest(model: &KrigingModel, x: &[f64]) -> Result<NearestNeighborInfo> {
    nearest_neighbor(model.design(), model.observations(), x)
}

/// Prediction variance.
pub fn phi_s(model: &KrigingModel, x: &[f64]) -> Result<f64> {
    model.predict_variance(x)
}

/// `-MD²` of the current design with `x` appended. A candidate already in
/// the design is rejected by design construction.
pub fn phi_md(current: &DesignMatrix, x: &[f64]) -> Result<f64> {
    let augmented = current.with_point(x)?;
    Ok(-mixture_discrepancy(&augmented).md_squared)
}

pub fn phi_ei0(model: &KrigingModel, x: &[f64]) -> Result<f64> {
    let nn = model_nearest(model, x)?;
    let bias = model.predict(x)? - nn.f_star;
    Ok(bias * bias + model.predict_variance(x)?)
}

/// Deviation of the prediction from the first-order expansion at the
/// nearest design point, using the predictor gradient there.
fn taylor_deviation(model: &KrigingModel, x: &[f64], nn: &NearestNeighborInfo) -> Result<f64> {
    let x_star = model.design().row(nn.index);
    let grad = model.predict_gradient(x_star)?;
    let linear: f64 = grad
        .iter()
        .zip(x.iter().zip(x_star))
        .map(|(g, (a, b))| g * (a - b))
        .sum();
    Ok(model.predict(x)? - nn.f_star - linear)
}

pub fn phi_ei1(model: &KrigingModel, x: &[f64]) -> Result<f64> {
    let nn = model_nearest(model, x)?;
    let dev = taylor_deviation(model, x, &nn)?;
    Ok(dev * dev + model.predict_variance(x)?)
}

pub fn phi_ei2(model: &KrigingModel, x: &[f64]) -> Result<f64> {
    let nn = model_nearest(model, x)?;
    let dev = taylor_deviation(model, x, &nn)?;
    Ok(dev * dev * nn.distance + model.predict_variance(x)?)
}

/// `sqrt(E|grad f(x)|^2) * d(x, x*) + |y_hat(x) - f(x*)|`.
pub fn phi_gra(model: &KrigingModel, x: &[f64]) -> Result<f64> {
    let nn = model_nearest(model, x)?;
    let expected = model.gradient_norm_expectation(x)?;
    Ok(expected.sqrt() * nn.distance + (model.predict(x)? - nn.f_star).abs())
}

/// `min(sqrt(k(x,x) - r^T K^-1 r), sqrt(sum_i g_i(x)) * d(x, x*))`, without
/// the `tau^2` factor.
pub fn phi_var(model: &KrigingModel, x: &[f64]) -> Result<f64> {
    let nn = model_nearest(model, x)?;
    let sd = model.unscaled_variance(x)?.sqrt();
    let g: f64 = model.gradient_variance_diagonal(x)?.iter().sum();
    Ok(sd.min(g.sqrt() * nn.distance))
}

/// Scores `x` under `criterion`. `model` may be `None` only for MD.
pub fn score(
    criterion: CriterionSpec,
    model: Option<&KrigingModel>,
    current: &DesignMatrix,
    x: &[f64],
) -> Result<f64> {
    if criterion == CriterionSpec::Md {
        return phi_md(current, x);
    }
    let model = model.ok_or_else(|| {
        Error::InvalidArgument(format!("criterion {criterion} needs a fitted model"))
    })?;
    match criterion {
        CriterionSpec::Ei0 => phi_ei0(model, x),
        CriterionSpec::Ei1 => phi_ei1(model, x),
        CriterionSpec::Ei2 => phi_ei2(model, x),
        CriterionSpec::MaxVariance => phi_s(model, x),
        CriterionSpec::Gradient => phi_gra(model, x),
        CriterionSpec::VarianceBound => phi_var(model, x),
        CriterionSpec::Md => unreachable!(),
    }
}

/// Scores for a candidate set. Candidates already in the current design
/// are skipped and carry `-inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateScores {
    pub scores: Vec<f64>,
    pub best_index: usize,
    pub best_score: f64,
    pub skipped: Vec<usize>,
}

/// Evaluates the criterion on every candidate and returns the lowest-index
/// maximizer together with the full score vector. Parallel and serial
/// evaluation give identical results.
pub fn argmax_over_candidates(
    criterion: CriterionSpec,
    model: Option<&KrigingModel>,
    current: &DesignMatrix,
    candidates: &DesignMatrix,
    parallel: bool,
) -> Result<CandidateScores> {
    check_dim(current.m(), candidates.m())?;
    if criterion.uses_observations() && model.is_none() {
        return Err(Error::InvalidArgument(format!(
            "criterion {criterion} needs a fitted model"
        )));
    }
    let eval = |i: usize| -> Result<Option<f64>> {
        let x = candidates.row(i);
        if current.position(x).is_some() {
            return Ok(None);
        }
        let s = score(criterion, model, current, x)?;
        if s.is_nan() {
            return Err(Error::Numerical(format!(
                "criterion {criterion} is NaN at {x:?}"
            )));
        }
        Ok(Some(s))
    };
    let raw: Vec<Option<f64>> = if parallel {
        (0..candidates.n())
            .into_par_iter()
            .map(eval)
            .collect::<Result<_>>()?
    } else {
        (0..candidates.n()).map(eval).collect::<Result<_>>()?
    };

    let mut skipped = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let scores = raw
        .iter()
        .enumerate()
        .map(|(i, s)| match s {
            Some(v) => {
                if best.is_none_or(|(_, b)| *v > b) {
                    best = Some((i, *v));
                }
                *v
            }
            None => {
                skipped.push(i);
                f64::NEG_INFINITY
            }
        })
        .collect();
    let (best_index, best_score) = best.ok_or(Error::EmptyCandidates)?;
    Ok(CandidateScores {
        scores,
        best_index,
        best_score,
        skipped,
    })
}

/// Candidate coordinates and scores as CSV with a `x1,..,xm,score` header.
pub fn scores_to_csv(candidates: &DesignMatrix, scores: &[f64]) -> String {
    let mut out = String::new();
    for j in 1..=candidates.m() {
        let _ = write!(out, "x{j},");
    }
    out.push_str("score\n");
    for (row, s) in candidates.rows().zip(scores) {
        for v in row {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{s}");
    }
    out
}
