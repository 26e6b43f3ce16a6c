//! Binary soft-margin RBF SVM trained by sequential minimal optimization.
//!
//! The solver works on the dual
//!
//! ```text
//! min_a  ½ aᵀQa − eᵀa   s.t.  yᵀa = 0,  0 ≤ a_i ≤ C,   Q_ij = y_i y_j K(x_i, x_j)
//! ```
//!
//! choosing the maximal violating pair at every step and stopping when the
//! violation gap drops below `tol`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::persist;

pub const DEFAULT_TOL: f64 = 1e-3;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub gamma: f64,
}

impl KernelParams {
    pub fn rbf(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Parameter(format!("RBF gamma must be positive, got {gamma}")));
        }
        Ok(Self { gamma })
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        (-self.gamma * squared_distance(a, b)).exp()
    }
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` for each support vector.
    pub coefficients: Vec<f64>,
    pub bias: f64,
    pub kernel: KernelParams,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    /// Hard cap on pair updates; `None` picks `max(100_000, 200 n)`.
    pub max_iter: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: None,
        }
    }
}

/// Solver diagnostics for a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Dual variables for every training row, in input order.
    pub alpha: Vec<f64>,
    pub iterations: usize,
    /// Final maximal-violation gap `m(a) - M(a)`.
    pub gap: f64,
    /// `Σa − ½ aᵀQa` (the maximisation form).
    pub dual_objective: f64,
}

/// Dense kernel matrix over the training rows.
struct KernelMatrix {
    n: usize,
    values: Vec<f64>,
}

impl KernelMatrix {
    fn from_distances(d2: &[f64], n: usize, gamma: f64) -> Self {
        Self {
            n,
            values: d2.iter().map(|&d| (-gamma * d).exp()).collect(),
        }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

fn distance_matrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() * b.len()];
    out.par_chunks_mut(b.len().max(1))
        .zip(a.par_iter())
        .for_each(|(row, x)| {
            for (slot, z) in row.iter_mut().zip(b) {
                *slot = squared_distance(x, z);
            }
        });
    out
}

fn validate_training(x: &[Vec<f64>], y: &[i8]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("{} rows vs {} labels", x.len(), y.len())));
    }
    if let Some(bad) = y.iter().find(|&&v| v != 1 && v != -1) {
        return Err(Error::Input(format!("label {bad} is not ±1")));
    }
    if !(y.contains(&1) && y.contains(&-1)) {
        return Err(Error::Training("training data must contain both labels".into()));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::Dimension("ragged feature matrix".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite feature value".into()));
    }
    Ok(())
}

#[derive(Clone)]
struct Solution {
    alpha: Vec<f64>,
    bias: f64,
    iterations: usize,
    gap: f64,
    dual_objective: f64,
}

fn smo(k: &KernelMatrix, y: &[i8], c: f64, opts: SolverOptions, warm: Option<&[f64]>) -> Result<Solution> {
    let n = y.len();
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let mut alpha = match warm {
        Some(a) => a.iter().map(|&v| v.min(c)).collect(),
        None => vec![0.0; n],
    };
    // G = Qa - e
    let mut grad = vec![-1.0; n];
    for j in 0..n {
        if alpha[j] != 0.0 {
            let row = k.row(j);
            for i in 0..n {
                grad[i] += yf[i] * yf[j] * row[i] * alpha[j];
            }
        }
    }
    let max_iter = opts.max_iter.unwrap_or_else(|| (200 * n).max(100_000));
    let in_up = |a: f64, y: f64| (y > 0.0 && a < c) || (y < 0.0 && a > 0.0);
    let in_low = |a: f64, y: f64| (y > 0.0 && a > 0.0) || (y < 0.0 && a < c);

    let mut iterations = 0;
    let gap = loop {
        let (mut i, mut m) = (usize::MAX, f64::NEG_INFINITY);
        let (mut j, mut big_m) = (usize::MAX, f64::INFINITY);
        for t in 0..n {
            let v = -yf[t] * grad[t];
            if in_up(alpha[t], yf[t]) && v > m {
                m = v;
                i = t;
            }
            if in_low(alpha[t], yf[t]) && v < big_m {
                big_m = v;
                j = t;
            }
        }
        let gap = m - big_m;
        if i == usize::MAX || j == usize::MAX || gap < opts.tol {
            break gap.max(0.0);
        }
        if iterations >= max_iter {
            return Err(Error::Convergence { iterations, gap });
        }
        iterations += 1;

        let (ki, kj) = (k.row(i), k.row(j));
        let qij = yf[i] * yf[j] * ki[j];
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if yf[i] != yf[j] {
            let quad = (ki[i] + kj[j] + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (ki[i] + kj[j] - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += yf[t] * (yf[i] * ki[t] * di + yf[j] * kj[t] * dj);
        }
    };

    // rho from free variables, or the midpoint of the feasible interval
    let (mut ub, mut lb, mut sum, mut nfree) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n {
        let yg = yf[t] * grad[t];
        if alpha[t] >= c {
            if yf[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if yf[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            sum += yg;
            nfree += 1;
        }
    }
    let rho = if nfree > 0 { sum / nfree as f64 } else { (ub + lb) / 2.0 };
    let dual_objective = alpha
        .iter()
        .zip(&grad)
        .map(|(a, g)| a - 0.5 * a * (g + 1.0))
        .sum();
    Ok(Solution {
        alpha,
        bias: -rho,
        iterations,
        gap,
        dual_objective,
    })
}

fn build_model(x: &[Vec<f64>], y: &[i8], sol: &Solution, c: f64, kernel: KernelParams) -> SvmModel {
    let mut support_vectors = Vec::new();
    let mut coefficients = Vec::new();
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            support_vectors.push(x[i].clone());
            coefficients.push(a * y[i] as f64);
        }
    }
    SvmModel {
        support_vectors,
        coefficients,
        bias: sol.bias,
        kernel,
        c,
    }
}

fn check_c(c: f64) -> Result<()> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Parameter(format!("C must be positive, got {c}")));
    }
    Ok(())
}

/// Trains a binary SVM; labels must be ±1.
pub fn train_binary_svm(x: &[Vec<f64>], y: &[i8], c: f64, kernel: KernelParams, tol: f64) -> Result<SvmModel> {
    let opts = SolverOptions { tol, max_iter: None };
    train_binary_svm_detailed(x, y, c, kernel, opts).map(|(m, _)| m)
}

pub fn train_binary_svm_detailed(
    x: &[Vec<f64>],
    y: &[i8],
    c: f64,
    kernel: KernelParams,
    opts: SolverOptions,
) -> Result<(SvmModel, TrainReport)> {
    validate_training(x, y)?;
    check_c(c)?;
    let d2 = distance_matrix(x, x);
    let k = KernelMatrix::from_distances(&d2, x.len(), kernel.gamma);
    let sol = smo(&k, y, c, opts, None)?;
    let model = build_model(x, y, &sol, c, kernel);
    let report = TrainReport {
        alpha: sol.alpha,
        iterations: sol.iterations,
        gap: sol.gap,
        dual_objective: sol.dual_objective,
    };
    Ok((model, report))
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.first().map_or(0, Vec::len)
    }

    /// Signed distance-like score `Σ coef_i k(sv_i, x) + bias`.
    pub fn decision_score(&self, x: &[f64]) -> Result<f64> {
        if !self.support_vectors.is_empty() && x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(self.score_unchecked(x))
    }

    fn score_unchecked(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.coefficients)
            .map(|(sv, &a)| a * self.kernel.eval(sv, x))
            .sum::<f64>()
            + self.bias
    }

    /// Sign of the decision score; an exact zero goes to `+1`.
    pub fn predict_binary(&self, x: &[f64]) -> Result<i8> {
        Ok(sign(self.decision_score(x)?))
    }
}

pub fn decision_score(model: &SvmModel, x: &[f64]) -> Result<f64> {
    model.decision_score(x)
}

pub fn predict_binary(model: &SvmModel, x: &[f64]) -> Result<i8> {
    model.predict_binary(x)
}

#[inline]
pub fn sign(score: f64) -> i8 {
    if score >= 0.0 {
        1
    } else {
        -1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainGrid {
    pub c_values: Vec<f64>,
    pub gamma_values: Vec<f64>,
}

pub const C_RANGE: (f64, f64) = (1e3, 1e9);
pub const GAMMA_RANGE: (f64, f64) = (1e-3, 0.1);

impl Default for TrainGrid {
    fn default() -> Self {
        Self {
            c_values: vec![1e3, 1e4, 1e5, 1e6, 1e7, 1e8, 1e9],
            gamma_values: vec![0.001, 0.005, 0.01, 0.05, 0.1],
        }
    }
}

impl TrainGrid {
    pub fn new(c_values: Vec<f64>, gamma_values: Vec<f64>) -> Result<Self> {
        let grid = Self {
            c_values,
            gamma_values,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_values.is_empty() || self.gamma_values.is_empty() {
            return Err(Error::Parameter("grid must have at least one C and one gamma".into()));
        }
        let within = |v: f64, (lo, hi): (f64, f64)| v >= lo * (1.0 - 1e-12) && v <= hi * (1.0 + 1e-12);
        if let Some(c) = self.c_values.iter().find(|&&c| !within(c, C_RANGE)) {
            return Err(Error::Parameter(format!("C = {c} outside [1e3, 1e9]")));
        }
        if let Some(g) = self.gamma_values.iter().find(|&&g| !within(g, GAMMA_RANGE)) {
            return Err(Error::Parameter(format!("gamma = {g} outside [0.001, 0.1]")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.c_values.len() * self.gamma_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How a grid cell is scored on validation data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SelectionMetric {
    Accuracy,
    BalancedAccuracy,
    /// `w * recall(+1) + (1 - w) * recall(-1)`; `w = 0.5` is balanced accuracy.
    PositiveWeighted(f64),
}

impl SelectionMetric {
    pub fn score(self, truth: &[i8], predicted: &[i8]) -> f64 {
        let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t > 0 {
                pos += 1;
                tp += (p > 0) as usize;
            } else {
                neg += 1;
                tn += (p < 0) as usize;
            }
        }
        let rate = |hit: usize, total: usize| if total == 0 { 1.0 } else { hit as f64 / total as f64 };
        match self {
            SelectionMetric::Accuracy => rate(tp + tn, pos + neg),
            SelectionMetric::BalancedAccuracy => 0.5 * (rate(tp, pos) + rate(tn, neg)),
            SelectionMetric::PositiveWeighted(w) => w * rate(tp, pos) + (1.0 - w) * rate(tn, neg),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub c: f64,
    pub gamma: f64,
    /// Value of the selection metric on the validation split.
    pub score: f64,
    /// Plain validation accuracy of the chosen model.
    pub accuracy: f64,
    pub model: SvmModel,
}

/// Exhaustive search using validation accuracy.
pub fn grid_search(
    x_train: &[Vec<f64>],
    y_train: &[i8],
    x_val: &[Vec<f64>],
    y_val: &[i8],
    grid: &TrainGrid,
) -> Result<GridResult> {
    grid_search_with(x_train, y_train, x_val, y_val, grid, SelectionMetric::Accuracy, SolverOptions::default())
}

/// Exhaustive grid search. Ties go to the smaller C, then the smaller gamma.
/// Cells whose solver hits the iteration cap are skipped.
pub fn grid_search_with(
    x_train: &[Vec<f64>],
    y_train: &[i8],
    x_val: &[Vec<f64>],
    y_val: &[i8],
    grid: &TrainGrid,
    metric: SelectionMetric,
    opts: SolverOptions,
) -> Result<GridResult> {
    validate_training(x_train, y_train)?;
    if grid.is_empty() {
        return Err(Error::Parameter("empty grid".into()));
    }
    if x_val.is_empty() || x_val.len() != y_val.len() {
        return Err(Error::InsufficientData("validation split is empty or mismatched".into()));
    }
    let mut c_values = grid.c_values.clone();
    c_values.sort_by(f64::total_cmp);
    c_values.dedup();
    let n = x_train.len();
    let d_train = distance_matrix(x_train, x_train);
    let d_val = distance_matrix(x_val, x_train);

    let cells: Vec<(f64, f64, f64, f64, SvmModel)> = grid
        .gamma_values
        .par_iter()
        .map(|&gamma| {
            let kernel = KernelParams::rbf(gamma)?;
            let k = KernelMatrix::from_distances(&d_train, n, gamma);
            let k_val: Vec<f64> = d_val.iter().map(|&d| (-gamma * d).exp()).collect();
            let mut out = Vec::with_capacity(c_values.len());
            let mut previous: Option<(f64, Solution)> = None;
            for &c in &c_values {
                let attempt = match previous.take() {
                    // No variable at the bound: the solution stays optimal for any larger C.
                    Some((prev_c, p)) if p.alpha.iter().all(|&a| a < prev_c) => Ok(p),
                    Some((_, p)) => smo(&k, y_train, c, opts, Some(&p.alpha)),
                    None => smo(&k, y_train, c, opts, None),
                };
                let sol = match attempt {
                    Ok(s) => s,
                    Err(Error::Convergence { .. }) => continue,
                    Err(e) => return Err(e),
                };
                let predicted: Vec<i8> = (0..x_val.len())
                    .map(|v| {
                        let row = &k_val[v * n..(v + 1) * n];
                        let s: f64 = sol
                            .alpha
                            .iter()
                            .zip(y_train)
                            .zip(row)
                            .filter(|((&a, _), _)| a > 0.0)
                            .map(|((&a, &y), &kv)| a * y as f64 * kv)
                            .sum::<f64>()
                            + sol.bias;
                        sign(s)
                    })
                    .collect();
                let score = metric.score(y_val, &predicted);
                let accuracy = SelectionMetric::Accuracy.score(y_val, &predicted);
                out.push((c, gamma, score, accuracy, build_model(x_train, y_train, &sol, c, kernel)));
                previous = Some((c, sol));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    cells
        .into_iter()
        .min_by(|a, b| {
            b.2.total_cmp(&a.2)
                .then(a.0.total_cmp(&b.0))
                .then(a.1.total_cmp(&b.1))
        })
        .map(|(c, gamma, score, accuracy, model)| GridResult {
            c,
            gamma,
            score,
            accuracy,
            model,
        })
        .ok_or_else(|| Error::Training("no grid cell converged".into()))
}

const SVM_FORMAT: &str = "hep2-svm";
const SVM_VERSION: u32 = 1;

impl SvmModel {
    /// Versioned JSON text.
    pub fn to_text(&self) -> String {
        persist::to_text(SVM_FORMAT, SVM_VERSION, self)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        persist::from_text(SVM_FORMAT, SVM_VERSION, text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rbf(g: f64) -> KernelParams {
        KernelParams::rbf(g).unwrap()
    }

    #[test]
    fn symmetric_pair() {
        let x = vec![vec![-1.0], vec![1.0]];
        let y = vec![-1, 1];
        let m = train_binary_svm(&x, &y, 1e6, rbf(0.5), 1e-6).unwrap();
        assert!(m.decision_score(&[0.0]).unwrap().abs() < 1e-6);
        assert_eq!(m.predict_binary(&[1.0]).unwrap(), 1);
        assert_eq!(m.predict_binary(&[-1.0]).unwrap(), -1);
        // both points sit on the margin
        assert!((m.decision_score(&[1.0]).unwrap() - 1.0).abs() < 1e-5);
        assert!((m.decision_score(&[-1.0]).unwrap() + 1.0).abs() < 1e-5);
    }

    #[test]
    fn xor_matches_closed_form_dual() {
        // By symmetry every alpha equals a; W(a) = 4a - 2a²(1-e^-1)², so
        // a* = 1/(1-e^-1)² and W* = 2/(1-e^-1)².
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let y = vec![-1, -1, 1, 1];
        let (m, report) =
            train_binary_svm_detailed(&x, &y, 1e3, rbf(1.0), SolverOptions { tol: 1e-9, max_iter: None }).unwrap();
        let s = (1.0 - (-1.0f64).exp()).powi(2);
        for a in &report.alpha {
            assert!((a - 1.0 / s).abs() < 1e-6);
        }
        assert!((report.dual_objective - 2.0 / s).abs() < 1e-6);
        for (xi, &yi) in x.iter().zip(&y) {
            assert_eq!(m.predict_binary(xi).unwrap(), yi);
        }
    }

    #[test]
    fn conflicting_labels_soft_margin() {
        let x = vec![vec![0.0], vec![0.0], vec![3.0], vec![-3.0]];
        let y = vec![1, -1, 1, -1];
        let (m, report) = train_binary_svm_detailed(&x, &y, 0.5, rbf(0.5), SolverOptions::default()).unwrap();
        let violations = x
            .iter()
            .zip(&y)
            .filter(|(xi, &yi)| yi as f64 * m.decision_score(xi).unwrap() < 1.0 - 1e-3)
            .count();
        assert!(violations >= 1);
        assert!(report.alpha.iter().all(|&a| a <= 0.5 + 1e-12));
    }

    #[test]
    fn training_errors() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            train_binary_svm(&x, &[1, 1], 1.0, rbf(1.0), 1e-3),
            Err(Error::Training(_))
        ));
        assert!(matches!(
            train_binary_svm(&[vec![f64::NAN], vec![1.0]], &[1, -1], 1.0, rbf(1.0), 1e-3),
            Err(Error::Input(_))
        ));
        assert!(KernelParams::rbf(0.0).is_err());
        let m = train_binary_svm(&x, &[1, -1], 1.0, rbf(1.0), 1e-3).unwrap();
        assert!(matches!(m.decision_score(&[1.0, 2.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn iteration_cap_reports_convergence_failure() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let y: Vec<i8> = (0..40).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let r = train_binary_svm_detailed(&x, &y, 1e3, rbf(1.0), SolverOptions { tol: 1e-3, max_iter: Some(3) });
        assert!(matches!(r, Err(Error::Convergence { .. })));
    }

    #[test]
    fn predict_tie_rule() {
        let m = SvmModel {
            support_vectors: vec![vec![0.0]],
            coefficients: vec![0.0],
            bias: 0.0,
            kernel: rbf(1.0),
            c: 1.0,
        };
        assert_eq!(m.predict_binary(&[0.0]).unwrap(), 1);
        assert_eq!(sign(2.3), 1);
        assert_eq!(sign(-0.4), -1);
        assert_eq!(sign(0.0), 1);
    }

    fn blobs(seed: u64, n: usize, sep: f64) -> (Vec<Vec<f64>>, Vec<i8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label: i8 = if i % 2 == 0 { 1 } else { -1 };
            let c = sep * label as f64;
            x.push(vec![c + rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5]);
            y.push(label);
        }
        (x, y)
    }

    #[test]
    fn grid_search_examples() {
        let (x, y) = blobs(1, 40, 2.0);
        let (xv, yv) = blobs(2, 20, 2.0);
        let single = TrainGrid::new(vec![1e3], vec![0.01]).unwrap();
        let r = grid_search(&x, &y, &xv, &yv, &single).unwrap();
        assert_eq!((r.c, r.gamma), (1e3, 0.01));
        assert_eq!(r.accuracy, 1.0);
        // Separable: every C reaches the same accuracy, so the smallest wins.
        let grid = TrainGrid::new(vec![1e5, 1e3, 1e4], vec![0.1, 0.05]).unwrap();
        let r = grid_search(&x, &y, &xv, &yv, &grid).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.c, 1e3);
        assert_eq!(r.gamma, 0.05);
        assert!(TrainGrid::new(vec![1.0], vec![0.01]).is_err());
        assert!(TrainGrid::new(vec![1e3], vec![0.5]).is_err());
        assert!(TrainGrid::new(vec![], vec![0.01]).is_err());
    }

    #[test]
    fn grid_reuse_matches_fresh_training() {
        let (x, y) = blobs(5, 60, 0.4);
        let (xv, yv) = blobs(6, 30, 0.4);
        let grid = TrainGrid::new(vec![1e3, 1e4], vec![0.1]).unwrap();
        let r = grid_search(&x, &y, &xv, &yv, &grid).unwrap();
        let fresh = train_binary_svm(&x, &y, r.c, rbf(r.gamma), DEFAULT_TOL).unwrap();
        for v in &xv {
            let a = r.model.decision_score(v).unwrap();
            let b = fresh.decision_score(v).unwrap();
            assert!((a - b).abs() < 5e-2 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn text_round_trip_and_version() {
        let (x, y) = blobs(9, 30, 1.0);
        let m = train_binary_svm(&x, &y, 10.0, rbf(0.3), 1e-3).unwrap();
        let back = SvmModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        let bad = m.to_text().replace("\"version\": 1", "\"version\": 7");
        assert!(matches!(SvmModel::from_text(&bad), Err(Error::Version { .. })));
        let text = m.to_text();
        assert!(matches!(SvmModel::from_text(&text[..text.len() / 2]), Err(Error::Corrupt { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn permutation_does_not_change_scores(seed in 0u64..500) {
            let (x, y) = blobs(seed, 24, 0.6);
            let opts = SolverOptions { tol: 1e-10, max_iter: None };
            let (m1, _) = train_binary_svm_detailed(&x, &y, 5.0, rbf(0.7), opts).unwrap();
            let mut idx: Vec<usize> = (0..x.len()).collect();
            idx.reverse();
            idx.rotate_left((seed % 7) as usize);
            let xp: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
            let yp: Vec<i8> = idx.iter().map(|&i| y[i]).collect();
            let (m2, _) = train_binary_svm_detailed(&xp, &yp, 5.0, rbf(0.7), opts).unwrap();
            for q in [[0.0, 0.0], [0.3, -0.2], [1.0, 0.5]] {
                let d = (m1.decision_score(&q).unwrap() - m2.decision_score(&q).unwrap()).abs();
                prop_assert!(d < 1e-6, "diff {d}");
            }
        }

        #[test]
        fn feature_scaling_with_gamma_compensation(seed in 0u64..500, scale in 0.1f64..10.0) {
            let (x, y) = blobs(seed, 20, 0.8);
            let xs: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
            let g = 0.9;
            let a = KernelParams::rbf(g).unwrap();
            let b = KernelParams::rbf(g / (scale * scale)).unwrap();
            for i in 0..x.len() {
                for j in 0..x.len() {
                    prop_assert!((a.eval(&x[i], &x[j]) - b.eval(&xs[i], &xs[j])).abs() < 1e-9);
                }
            }
            let opts = SolverOptions { tol: 1e-8, max_iter: None };
            let (m1, _) = train_binary_svm_detailed(&x, &y, 3.0, a, opts).unwrap();
            let (m2, _) = train_binary_svm_detailed(&xs, &y, 3.0, b, opts).unwrap();
            for r in &x {
                let rs: Vec<f64> = r.iter().map(|v| v * scale).collect();
                prop_assert!((m1.decision_score(r).unwrap() - m2.decision_score(&rs).unwrap()).abs() < 1e-6);
            }
        }
    }
}
