//! Two-stage touch predictor: a linear SVM decides touch versus no touch and
//! a Laplacian-kernel ridge regressor maps touch frames to (x, y, depth).

use std::path::Path;

use faer::prelude::*;
use faer::{Mat, Side};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocols::Dataset;
use crate::seed::Seed;
use crate::sensor::{extract_features, SignalFrame, FEATURE_DIM};

pub const MODEL_SCHEMA: &str = "edgelit-model/1";

/// Per-feature standardization fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().ok_or_else(|| Error::invalid("no rows to standardize"))?.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("rows differ in length"));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 && sd.is_finite() { sd } else { 1.0 }
            })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

fn l1(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b).abs()).sum()
}

/// exp(-gamma * |u - v|_1).
pub fn laplacian_kernel(u: &[f64], v: &[f64], gamma: f64) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::invalid(format!(
            "kernel arguments differ in length: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    if !(gamma >= 0.0) {
        return Err(Error::invalid("kernel bandwidth must be non-negative"));
    }
    Ok((-gamma * l1(u, v)).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KrrModel {
    pub lambda: f64,
    pub gamma: f64,
    pub train: Vec<Vec<f64>>,
    /// One row per training point: coefficients for x, y and depth.
    pub alpha: Vec<[f64; 3]>,
}

fn check_rows(rows: &[Vec<f64>]) -> Result<usize> {
    let dim = rows.first().ok_or_else(|| Error::invalid("no training rows"))?.len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::invalid("training rows differ in length"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite training feature".into()));
    }
    Ok(dim)
}

fn distance_matrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Mat<f64> {
    let cols: Vec<Vec<f64>> = b
        .par_iter()
        .map(|bj| a.iter().map(|ai| l1(ai, bj)).collect())
        .collect();
    Mat::from_fn(a.len(), b.len(), |i, j| cols[j][i])
}

fn targets_mat(t: &[[f64; 3]]) -> Mat<f64> {
    Mat::from_fn(t.len(), 3, |i, j| t[i][j])
}

fn frob(m: &Mat<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += m[(i, j)] * m[(i, j)];
        }
    }
    s.sqrt()
}

/// Solves (K + lambda I) alpha = Y with a Cholesky factorization and a few
/// rounds of iterative refinement. Returns alpha and the final relative
/// residual.
fn solve_regularized(k: &Mat<f64>, y: &Mat<f64>, lambda: f64) -> Result<(Mat<f64>, f64)> {
    let n = k.nrows();
    let mut a = k.clone();
    for i in 0..n {
        a[(i, i)] += lambda;
    }
    let llt = a
        .llt(Side::Lower)
        .map_err(|e| Error::Numerical(format!("kernel system is not positive definite: {e:?}")))?;
    let mut alpha = y.clone();
    llt.solve_in_place(alpha.as_mut());
    let ynorm = frob(y).max(f64::MIN_POSITIVE);
    let mut rel = f64::INFINITY;
    for _ in 0..4 {
        let r = y - &a * &alpha;
        rel = frob(&r) / ynorm;
        if !rel.is_finite() {
            return Err(Error::Numerical("kernel solve produced non-finite values".into()));
        }
        if rel < 1e-13 {
            break;
        }
        let mut dx = r;
        llt.solve_in_place(dx.as_mut());
        alpha += &dx;
    }
    let r = y - &a * &alpha;
    rel = rel.min(frob(&r) / ynorm);
    Ok((alpha, rel))
}

/// Largest relative residual accepted after a fit.
pub const KRR_RESIDUAL_TOL: f64 = 1e-8;

pub fn krr_fit(features: &[Vec<f64>], targets: &[[f64; 3]], lambda: f64, gamma: f64) -> Result<KrrModel> {
    check_rows(features)?;
    if features.len() != targets.len() {
        return Err(Error::invalid("feature and target counts differ"));
    }
    if !(lambda > 0.0) || !(gamma >= 0.0) {
        return Err(Error::invalid("need lambda > 0 and gamma >= 0"));
    }
    if targets.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite training target".into()));
    }
    let mut k = distance_matrix(features, features);
    for j in 0..k.ncols() {
        for i in 0..k.nrows() {
            k[(i, j)] = (-gamma * k[(i, j)]).exp();
        }
    }
    let y = targets_mat(targets);
    let alpha = if frob(&y) == 0.0 {
        Mat::zeros(features.len(), 3)
    } else {
        let (alpha, rel) = solve_regularized(&k, &y, lambda)?;
        if !(rel < KRR_RESIDUAL_TOL) {
            return Err(Error::Numerical(format!(
                "kernel ridge residual {rel:e} exceeds {KRR_RESIDUAL_TOL:e}"
            )));
        }
        alpha
    };
    Ok(KrrModel {
        lambda,
        gamma,
        train: features.to_vec(),
        alpha: (0..features.len())
            .map(|i| [alpha[(i, 0)], alpha[(i, 1)], alpha[(i, 2)]])
            .collect(),
    })
}

impl KrrModel {
    pub fn predict(&self, feature: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (t, a) in self.train.iter().zip(&self.alpha) {
            let k = (-self.gamma * l1(t, feature)).exp();
            for (o, ai) in out.iter_mut().zip(a) {
                *o += k * ai;
            }
        }
        out
    }

    /// ||(K + lambda I) alpha - Y|| / ||Y|| for the stored training set.
    pub fn residual(&self, targets: &[[f64; 3]]) -> f64 {
        let n = self.train.len();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            let mut row = [0.0; 3];
            for j in 0..n {
                let k = (-self.gamma * l1(&self.train[i], &self.train[j])).exp();
                for c in 0..3 {
                    row[c] += k * self.alpha[j][c];
                }
            }
            for c in 0..3 {
                let r = row[c] + self.lambda * self.alpha[i][c] - targets[i][c];
                num += r * r;
                den += targets[i][c] * targets[i][c];
            }
        }
        if den == 0.0 { num.sqrt() } else { (num / den).sqrt() }
    }
}

pub fn krr_predict(model: &KrrModel, feature: &[f64]) -> [f64; 3] {
    model.predict(feature)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
}

impl LinearSvmModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.decision(x) > 0.0
    }

    /// 1/2 |(w, b)|^2 + C sum max(0, 1 - y (w.x + b)): the bias is treated as
    /// the weight of a constant feature and regularized with the rest.
    pub fn primal_objective(&self, features: &[Vec<f64>], labels: &[f64]) -> f64 {
        let reg = 0.5 * (self.weights.iter().map(|w| w * w).sum::<f64>() + self.bias * self.bias);
        let loss: f64 = features
            .iter()
            .zip(labels)
            .map(|(x, y)| (1.0 - y * self.decision(x)).max(0.0))
            .sum();
        reg + self.c * loss
    }
}

/// Relative duality gap at which the SVM solver stops.
pub const SVM_TOL: f64 = 1e-6;
const SVM_MAX_EPOCHS: usize = 50_000;

/// Soft-margin linear SVM with hinge loss, solved by dual coordinate descent
/// on the bias-augmented problem. Labels are +1 / -1.
pub fn svm_train(features: &[Vec<f64>], labels: &[f64], c: f64) -> Result<LinearSvmModel> {
    let dim = check_rows(features)?;
    if features.len() != labels.len() {
        return Err(Error::invalid("feature and label counts differ"));
    }
    if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::invalid("labels must be +1 or -1"));
    }
    if !labels.contains(&1.0) || !labels.contains(&-1.0) {
        return Err(Error::invalid("both classes must be present"));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid("C must be positive"));
    }
    let n = features.len();
    let qii: Vec<f64> = features
        .iter()
        .map(|x| x.iter().map(|v| v * v).sum::<f64>() + 1.0)
        .collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; dim + 1];
    let dot = |w: &[f64], x: &[f64]| w[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[dim];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Seed(0x5eed).derive("svm-order", n as u64).rng();
    for _ in 0..SVM_MAX_EPOCHS {
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, y) = (&features[i], labels[i]);
            let g = y * dot(&w, x) - 1.0;
            let new = (alpha[i] - g / qii[i]).clamp(0.0, c);
            let delta = new - alpha[i];
            if delta != 0.0 {
                alpha[i] = new;
                let s = delta * y;
                for (wk, xk) in w[..dim].iter_mut().zip(x) {
                    *wk += s * xk;
                }
                w[dim] += s;
            }
        }
        let wsq: f64 = w.iter().map(|v| v * v).sum();
        let loss: f64 = features
            .iter()
            .zip(labels)
            .map(|(x, y)| (1.0 - y * dot(&w, x)).max(0.0))
            .sum();
        let primal = 0.5 * wsq + c * loss;
        let dual = alpha.iter().sum::<f64>() - 0.5 * wsq;
        if primal - dual <= SVM_TOL * primal.abs().max(1.0) {
            return Ok(LinearSvmModel {
                weights: w[..dim].to_vec(),
                bias: w[dim],
                c,
            });
        }
    }
    Err(Error::Numerical(format!(
        "SVM did not reach duality gap {SVM_TOL:e} in {SVM_MAX_EPOCHS} epochs"
    )))
}

/// Log-spaced grid of `points` values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..points)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (points - 1) as f64))
                .collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub lambda: f64,
    pub gamma: f64,
    /// Mean Euclidean (x, y, depth) error on the held-out half.
    pub score: f64,
    /// scores[g][l] for gammas[g], lambdas[l]; infinite where the fit failed.
    pub scores: Vec<Vec<f64>>,
}

fn mean_error(pred: &Mat<f64>, truth: &[[f64; 3]]) -> f64 {
    let s: f64 = truth
        .iter()
        .enumerate()
        .map(|(i, t)| {
            ((pred[(i, 0)] - t[0]).powi(2) + (pred[(i, 1)] - t[1]).powi(2) + (pred[(i, 2)] - t[2]).powi(2)).sqrt()
        })
        .sum();
    s / truth.len() as f64
}

/// Fits on `fit`, scores on `held`, over every (gamma, lambda) cell. Ties go
/// to the smaller gamma, then the smaller lambda.
pub fn grid_search_split(
    fit: (&[Vec<f64>], &[[f64; 3]]),
    held: (&[Vec<f64>], &[[f64; 3]]),
    lambdas: &[f64],
    gammas: &[f64],
) -> Result<GridSearchResult> {
    if lambdas.is_empty() || gammas.is_empty() {
        return Err(Error::invalid("grid search needs non-empty grids"));
    }
    if lambdas.iter().any(|&l| !(l > 0.0)) || gammas.iter().any(|&g| !(g >= 0.0)) {
        return Err(Error::invalid("grid values must be positive"));
    }
    check_rows(fit.0)?;
    check_rows(held.0)?;
    let d_fit = distance_matrix(fit.0, fit.0);
    let d_held = distance_matrix(held.0, fit.0);
    let y = targets_mat(fit.1);
    let scores: Vec<Vec<f64>> = gammas
        .iter()
        .map(|&g| {
            let k = Mat::from_fn(d_fit.nrows(), d_fit.ncols(), |i, j| (-g * d_fit[(i, j)]).exp());
            let kh = Mat::from_fn(d_held.nrows(), d_held.ncols(), |i, j| (-g * d_held[(i, j)]).exp());
            lambdas
                .par_iter()
                .map(|&l| match solve_regularized(&k, &y, l) {
                    Ok((alpha, rel)) if rel < KRR_RESIDUAL_TOL => mean_error(&(&kh * &alpha), held.1),
                    _ => f64::INFINITY,
                })
                .collect()
        })
        .collect();
    let mut best: Option<(usize, usize)> = None;
    for (gi, row) in scores.iter().enumerate() {
        for (li, &s) in row.iter().enumerate() {
            let better = match best {
                None => s.is_finite(),
                Some((bg, bl)) => {
                    let b = scores[bg][bl];
                    s < b || (s == b && (gammas[gi], lambdas[li]) < (gammas[bg], lambdas[bl]))
                }
            };
            if better {
                best = Some((gi, li));
            }
        }
    }
    let (gi, li) = best.ok_or_else(|| Error::Numerical("every grid-search cell failed".into()))?;
    Ok(GridSearchResult {
        lambda: lambdas[li],
        gamma: gammas[gi],
        score: scores[gi][li],
        scores,
    })
}

/// Splits rows in half by group (indentation location) with a seeded
/// shuffle, so that held-out rows come from locations the fit never saw.
/// Returns (fit indices, held indices).
pub fn split_half(groups: &[(f64, f64)], seed: Seed) -> (Vec<usize>, Vec<usize>) {
    let mut keys: Vec<(u64, u64)> = groups.iter().map(|&(x, y)| (x.to_bits(), y.to_bits())).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.shuffle(&mut seed.derive("split", 0).rng());
    let half = keys.len() / 2;
    let fit_keys: std::collections::HashSet<(u64, u64)> = keys[..half].iter().copied().collect();
    let (mut fit, mut held) = (Vec::new(), Vec::new());
    for (i, &(x, y)) in groups.iter().enumerate() {
        if fit_keys.contains(&(x.to_bits(), y.to_bits())) {
            fit.push(i);
        } else {
            held.push(i);
        }
    }
    (fit, held)
}

/// Seeded subsample of at most `cap` indices, kept in ascending order.
fn subsample(mut idx: Vec<usize>, cap: usize, seed: Seed) -> Vec<usize> {
    if idx.len() > cap {
        idx.shuffle(&mut seed.rng());
        idx.truncate(cap);
        idx.sort_unstable();
    }
    idx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    pub svm_c: f64,
    /// Fixed (lambda, gamma); skips the grid search when set.
    pub fixed: Option<(f64, f64)>,
    pub lambda_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    /// Upper bound on regressor training points (the kernel system is dense).
    pub max_regression_samples: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            svm_c: 1.0,
            fixed: None,
            lambda_grid: log_grid(1e-4, 1e1, 11),
            gamma_grid: log_grid(1e-4, 1e0, 9),
            max_regression_samples: 8000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub lambda: f64,
    pub gamma: f64,
    pub grid_searched: bool,
    pub validation_error: Option<f64>,
    pub split_seed: u64,
    pub svm_samples: usize,
    pub regression_samples: usize,
    pub svm_train_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoStageModel {
    pub schema: String,
    pub config_hash: String,
    pub train_seed: u64,
    pub dataset_seeds: Vec<u64>,
    pub normalization: Standardizer,
    pub classifier: LinearSvmModel,
    pub regressor: KrrModel,
    pub report: TrainingReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "touch", rename_all = "snake_case")]
pub enum TouchReport {
    NoTouch,
    Touch { x: f64, y: f64, d: f64 },
}

impl TwoStageModel {
    pub fn is_touch(&self, frame: &SignalFrame) -> bool {
        let f = self.normalization.apply(extract_features(frame).as_slice());
        self.classifier.predict(&f)
    }

    /// Regressor output regardless of the classifier.
    pub fn regress(&self, frame: &SignalFrame) -> [f64; 3] {
        let f = self.normalization.apply(extract_features(frame).as_slice());
        self.regressor.predict(&f)
    }

    pub fn predict(&self, frame: &SignalFrame) -> TouchReport {
        let f = self.normalization.apply(extract_features(frame).as_slice());
        if !self.classifier.predict(&f) {
            return TouchReport::NoTouch;
        }
        let [x, y, d] = self.regressor.predict(&f);
        TouchReport::Touch { x, y, d }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: TwoStageModel = serde_json::from_str(&text).map_err(|e| Error::Format {
            kind: "model",
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        if m.schema != MODEL_SCHEMA {
            return Err(Error::Format {
                kind: "model",
                path: path.to_path_buf(),
                msg: format!("unsupported schema {:?}", m.schema),
            });
        }
        if m.classifier.weights.len() != FEATURE_DIM || m.normalization.mean.len() != FEATURE_DIM {
            return Err(Error::Format {
                kind: "model",
                path: path.to_path_buf(),
                msg: "feature dimension mismatch".into(),
            });
        }
        Ok(m)
    }
}

/// Trains both stages on the pooled samples of `datasets`.
pub fn train(datasets: &[&Dataset], params: &TrainParams) -> Result<TwoStageModel> {
    let config_hash = Dataset::check_same_sensor(datasets)?;
    let samples: Vec<_> = datasets.iter().flat_map(|d| d.samples.iter()).collect();
    let raw: Vec<Vec<f64>> = samples.iter().map(|s| s.features().into_inner()).collect();
    let norm = Standardizer::fit(&raw)?;
    let feats: Vec<Vec<f64>> = raw.iter().map(|r| norm.apply(r)).collect();

    let labels: Vec<f64> = samples.iter().map(|s| if s.in_contact() { 1.0 } else { -1.0 }).collect();
    let classifier = svm_train(&feats, &labels, params.svm_c)?;
    let correct = feats
        .iter()
        .zip(&labels)
        .filter(|(f, &y)| classifier.predict(f) == (y > 0.0))
        .count();

    let seed = Seed(params.seed);
    let contact: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].in_contact()).collect();
    if contact.is_empty() {
        return Err(Error::invalid("no contact samples to train the regressor"));
    }
    let target = |i: usize| [samples[i].x, samples[i].y, samples[i].d];
    let rows = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<[f64; 3]>) {
        (idx.iter().map(|&i| feats[i].clone()).collect(), idx.iter().map(|&i| target(i)).collect())
    };

    let cap = params.max_regression_samples.max(1);
    let (lambda, gamma, validation_error, grid_searched) = match params.fixed {
        Some((l, g)) => (l, g, None, false),
        None => {
            let groups: Vec<(f64, f64)> = contact.iter().map(|&i| (samples[i].x, samples[i].y)).collect();
            let (fit, held) = split_half(&groups, seed);
            let fit: Vec<usize> = fit.into_iter().map(|k| contact[k]).collect();
            let held: Vec<usize> = held.into_iter().map(|k| contact[k]).collect();
            if fit.is_empty() || held.is_empty() {
                return Err(Error::invalid("grid search needs at least two indentation locations"));
            }
            // The search fits on as many points as the final regressor so the
            // chosen bandwidth suits that density; scoring only needs predictions.
            let fit = subsample(fit, cap, seed.derive("split-fit", 0));
            let held = subsample(held, cap / 2, seed.derive("split-held", 0));
            let (fx, fy) = rows(&fit);
            let (hx, hy) = rows(&held);
            let r = grid_search_split((&fx, &fy), (&hx, &hy), &params.lambda_grid, &params.gamma_grid)?;
            (r.lambda, r.gamma, Some(r.score), true)
        }
    };
    let chosen = subsample(contact, cap, seed.derive("regression", 0));
    let (kx, ky) = rows(&chosen);
    let regressor = krr_fit(&kx, &ky, lambda, gamma)?;

    Ok(TwoStageModel {
        schema: MODEL_SCHEMA.into(),
        config_hash,
        train_seed: params.seed,
        dataset_seeds: datasets.iter().map(|d| d.meta.seed).collect(),
        normalization: norm,
        classifier,
        report: TrainingReport {
            lambda,
            gamma,
            grid_searched,
            validation_error,
            split_seed: seed.derive("split", 0).0,
            svm_samples: feats.len(),
            regression_samples: chosen.len(),
            svm_train_accuracy: correct as f64 / feats.len() as f64,
        },
        regressor,
    })
}
