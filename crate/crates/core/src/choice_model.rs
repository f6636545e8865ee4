//! Binary logistic regression of the evacuation decision.
//!
//! Fitted by Newton iterations on the Bernoulli log-likelihood with step
//! halving. Columns are rescaled to unit RMS before the solve and the
//! estimates mapped back, which keeps the information matrix well
//! conditioned when predictors live on very different scales (income vs.
//! fractions).

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::enrich::DeviceContext;
use crate::evacuation::EvacuationProfile;
use crate::geo::OrderType;
use crate::mobility::MobilityBaseline;

pub const INTERCEPT: &str = "intercept";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("no complete rows to fit")]
    EmptyDesign,
    #[error("{n} rows is not enough for {k} parameters")]
    TooFewRows { n: usize, k: usize },
    #[error("column `{column}` is linearly dependent on the columns before it")]
    RankDeficient { column: String },
    #[error("no convergence after {} iterations", fit.iterations)]
    NotConverged { fit: Box<LogisticFit> },
    #[error("models are not nested: {small_n} vs {big_n} rows")]
    NotNested { small_n: usize, big_n: usize },
    #[error("duplicate predictor `{0}`")]
    DuplicatePredictor(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("response must be 0 or 1, found {0}")]
    NonBinaryResponse(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    EvacuationOrder,
    Elevation,
    MedianAge,
    MedianIncome,
    VehicleAvailability,
    RaceWhite,
    AvgDailyTrips,
    AvgHullArea,
}

impl Predictor {
    pub const DEMOGRAPHIC: [Predictor; 6] = [
        Predictor::EvacuationOrder,
        Predictor::Elevation,
        Predictor::MedianAge,
        Predictor::MedianIncome,
        Predictor::VehicleAvailability,
        Predictor::RaceWhite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Predictor::EvacuationOrder => "evacuation_order",
            Predictor::Elevation => "elevation",
            Predictor::MedianAge => "median_age",
            Predictor::MedianIncome => "median_income",
            Predictor::VehicleAvailability => "vehicle_availability",
            Predictor::RaceWhite => "race_white",
            Predictor::AvgDailyTrips => "avg_daily_trips",
            Predictor::AvgHullArea => "avg_hull_area",
        }
    }

    fn needs_baseline(self) -> bool {
        matches!(self, Predictor::AvgDailyTrips | Predictor::AvgHullArea)
    }
}

/// How the three-level evacuation order enters the design.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderEncoding {
    /// One numeric column: none 0, voluntary 1, mandatory 2.
    #[default]
    Ordinal,
    /// Two indicator columns against the no-order baseline.
    Dummies,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub predictors: Vec<Predictor>,
    pub order_encoding: OrderEncoding,
}

impl ModelSpec {
    pub fn new(name: &str, predictors: Vec<Predictor>, order_encoding: OrderEncoding) -> Result<Self, ModelError> {
        for (i, p) in predictors.iter().enumerate() {
            if predictors[..i].contains(p) {
                return Err(ModelError::DuplicatePredictor(p.name().into()));
            }
        }
        Ok(Self { name: name.into(), predictors, order_encoding })
    }

    pub fn without_mobility(enc: OrderEncoding) -> Self {
        Self::new("without_mobility", Predictor::DEMOGRAPHIC.to_vec(), enc).expect("distinct")
    }

    pub fn with_mobility(enc: OrderEncoding) -> Self {
        let mut p = Predictor::DEMOGRAPHIC.to_vec();
        p.extend([Predictor::AvgDailyTrips, Predictor::AvgHullArea]);
        Self::new("with_mobility", p, enc).expect("distinct")
    }

    /// Design column names, intercept excluded.
    pub fn columns(&self) -> Vec<String> {
        let mut out = Vec::new();
        for p in &self.predictors {
            match (p, self.order_encoding) {
                (Predictor::EvacuationOrder, OrderEncoding::Dummies) => {
                    out.push("order_voluntary".into());
                    out.push("order_mandatory".into());
                }
                _ => out.push(p.name().into()),
            }
        }
        out
    }
}

/// Row accounting for one design assembly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignDrops {
    pub profiles: u64,
    pub inactive: u64,
    pub missing_context: u64,
    pub missing_baseline: u64,
    pub incomplete_predictors: u64,
    pub rows: u64,
}

impl DesignDrops {
    pub fn dropped(&self) -> u64 {
        self.missing_context + self.missing_baseline + self.incomplete_predictors
    }

    pub fn is_conserved(&self) -> bool {
        self.profiles == self.inactive + self.rows + self.dropped()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub columns: Vec<String>,
    /// n × p, no intercept column.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub device_ids: Vec<String>,
    pub drops: DesignDrops,
}

impl Design {
    /// The submatrix holding `columns`, in that order.
    pub fn select(&self, columns: &[String]) -> Result<DMatrix<f64>, ModelError> {
        let idx: Vec<usize> = columns
            .iter()
            .map(|c| self.columns.iter().position(|d| d == c).ok_or_else(|| ModelError::UnknownColumn(c.clone())))
            .collect::<Result<_, _>>()?;
        Ok(DMatrix::from_fn(self.x.nrows(), idx.len(), |i, j| self.x[(i, idx[j])]))
    }
}

fn predictor_values(p: Predictor, enc: OrderEncoding, c: &DeviceContext, b: Option<&MobilityBaseline>, out: &mut Vec<f64>) -> bool {
    let v = match p {
        Predictor::EvacuationOrder => {
            match enc {
                OrderEncoding::Ordinal => out.push(f64::from(c.order_code())),
                OrderEncoding::Dummies => {
                    out.push(f64::from(u8::from(c.order_type == OrderType::Voluntary)));
                    out.push(f64::from(u8::from(c.order_type == OrderType::Mandatory)));
                }
            }
            return true;
        }
        Predictor::Elevation => c.elevation_m,
        Predictor::MedianAge => c.median_age,
        Predictor::MedianIncome => c.median_income,
        Predictor::VehicleAvailability => c.vehicle_availability_pct,
        Predictor::RaceWhite => c.race_white_frac,
        Predictor::AvgDailyTrips => b.map(|b| b.avg_daily_trips),
        Predictor::AvgHullArea => b.map(|b| b.avg_daily_hull_area_km2),
    };
    match v {
        Some(v) if v.is_finite() => {
            out.push(v);
            true
        }
        _ => false,
    }
}

/// Joins profiles, contexts and baselines into a design matrix over active
/// devices with every predictor present. Row order follows `profiles`.
pub fn assemble_design(
    profiles: &[EvacuationProfile],
    contexts: &[DeviceContext],
    baselines: &[MobilityBaseline],
    spec: &ModelSpec,
) -> Result<Design, ModelError> {
    let ctx: HashMap<&str, &DeviceContext> = contexts.iter().map(|c| (c.device_id.as_str(), c)).collect();
    let base: HashMap<&str, &MobilityBaseline> = baselines.iter().map(|b| (b.device_id.as_str(), b)).collect();
    let needs_baseline = spec.predictors.iter().any(|p| p.needs_baseline());
    let columns = spec.columns();
    let mut drops = DesignDrops::default();
    let mut data = Vec::new();
    let mut y = Vec::new();
    let mut ids = Vec::new();
    let mut row = Vec::with_capacity(columns.len());
    for p in profiles {
        drops.profiles += 1;
        if !p.active {
            drops.inactive += 1;
            continue;
        }
        let Some(c) = ctx.get(p.device_id.as_str()) else {
            drops.missing_context += 1;
            continue;
        };
        let b = base.get(p.device_id.as_str()).copied();
        if needs_baseline && b.is_none() {
            drops.missing_baseline += 1;
            continue;
        }
        row.clear();
        if !spec.predictors.iter().all(|&pr| predictor_values(pr, spec.order_encoding, c, b, &mut row)) {
            drops.incomplete_predictors += 1;
            continue;
        }
        data.extend_from_slice(&row);
        y.push(if p.evacuated { 1.0 } else { 0.0 });
        ids.push(p.device_id.clone());
    }
    drops.rows = y.len() as u64;
    if y.is_empty() {
        return Err(ModelError::EmptyDesign);
    }
    Ok(Design {
        x: DMatrix::from_row_slice(y.len(), columns.len(), &data),
        columns,
        y: DVector::from_vec(y),
        device_ids: ids,
        drops,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub model: String,
    /// Intercept first.
    pub terms: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub z_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub log_likelihood: f64,
    pub null_log_likelihood: f64,
    pub n: usize,
    pub k: usize,
    pub aic: f64,
    pub mcfadden_r2: f64,
    pub iterations: usize,
    pub converged: bool,
    pub ll_trace: Vec<f64>,
}

impl LogisticFit {
    pub fn coefficient(&self, term: &str) -> Option<f64> {
        self.terms.iter().position(|t| t == term).map(|i| self.coefficients[i])
    }

    pub fn std_error(&self, term: &str) -> Option<f64> {
        self.terms.iter().position(|t| t == term).map(|i| self.std_errors[i])
    }

    /// Fitted probabilities for rows of `x` (no intercept column).
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                let eta = self.coefficients[0] + (0..x.ncols()).map(|j| x[(i, j)] * self.coefficients[j + 1]).sum::<f64>();
                sigmoid(eta)
            })
            .collect()
    }
}

pub fn aic(log_likelihood: f64, k: usize) -> f64 {
    2.0 * k as f64 - 2.0 * log_likelihood
}

pub fn mcfadden_r2(log_likelihood: f64, null_log_likelihood: f64) -> f64 {
    if null_log_likelihood == 0.0 {
        0.0
    } else {
        1.0 - log_likelihood / null_log_likelihood
    }
}

/// Log-likelihood of the intercept-only model, in closed form.
pub fn null_log_likelihood(y: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let ones = y.sum();
    let xlogx = |c: f64| if c > 0.0 { c * (c / n).ln() } else { 0.0 };
    xlogx(ones) + xlogx(n - ones)
}

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^eta) without overflow.
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Prepends a column of ones.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols() + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] })
}

/// Bernoulli log-likelihood; `x` includes any intercept column.
pub fn log_likelihood(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    compensated_sum(eta.iter().zip(y.iter()).map(|(&e, &yi)| yi * e - softplus(e)))
}

/// Neumaier summation; near the optimum the per-step gain is far below the
/// rounding error of a naive sum over many rows.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

/// Gradient of [`log_likelihood`].
pub fn score(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
    let eta = x * beta;
    let resid = DVector::from_iterator(y.len(), y.iter().zip(eta.iter()).map(|(&yi, &e)| yi - sigmoid(e)));
    x.transpose() * resid
}

/// Hessian of [`log_likelihood`] (negative semi-definite).
pub fn hessian(x: &DMatrix<f64>, beta: &DVector<f64>) -> DMatrix<f64> {
    -information(x, &(x * beta))
}

fn information(x: &DMatrix<f64>, eta: &DVector<f64>) -> DMatrix<f64> {
    let k = x.ncols();
    let mut h = DMatrix::<f64>::zeros(k, k);
    for (i, &e) in eta.iter().enumerate() {
        let p = sigmoid(e);
        let w = p * (1.0 - p);
        if w == 0.0 {
            continue;
        }
        for a in 0..k {
            let wa = w * x[(i, a)];
            for b in 0..=a {
                h[(a, b)] += wa * x[(i, b)];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            h[(b, a)] = h[(a, b)];
        }
    }
    h
}

/// Modified Gram-Schmidt; names the first column that adds no new direction.
fn check_rank(x: &DMatrix<f64>, names: &[String]) -> Result<(), ModelError> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm = col.norm();
        let mut v = col;
        for q in &basis {
            let d = q.dot(&v);
            v.axpy(-d, q, 1.0);
        }
        let rn = v.norm();
        if norm == 0.0 || rn <= 1e-9 * norm {
            return Err(ModelError::RankDeficient { column: names[j].clone() });
        }
        basis.push(v / rn);
    }
    Ok(())
}

fn solve(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    match h.clone().cholesky() {
        Some(c) => Some(c.solve(g)),
        None => h.clone().lu().solve(g),
    }
}

fn invert(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    match h.clone().cholesky() {
        Some(c) => Some(c.inverse()),
        None => h.clone().try_inverse(),
    }
}

/// Maximum-likelihood logistic fit. `x` excludes the intercept, which is
/// added here; `columns` names the columns of `x`.
pub fn fit_logistic(
    model: &str,
    x: &DMatrix<f64>,
    columns: &[String],
    y: &DVector<f64>,
    opts: FitOptions,
) -> Result<LogisticFit, ModelError> {
    let n = y.len();
    let k = x.ncols() + 1;
    assert_eq!(x.nrows(), n, "row count mismatch");
    assert_eq!(columns.len(), x.ncols(), "column names mismatch");
    if n == 0 {
        return Err(ModelError::EmptyDesign);
    }
    if n <= k {
        return Err(ModelError::TooFewRows { n, k });
    }
    if let Some(&bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(ModelError::NonBinaryResponse(bad));
    }
    let mut terms = vec![INTERCEPT.to_string()];
    terms.extend(columns.iter().cloned());

    let mut xs = with_intercept(x);
    let mut scale = vec![1.0; k];
    for j in 1..k {
        let rms = (xs.column(j).norm_squared() / n as f64).sqrt();
        if rms > 0.0 && rms.is_finite() {
            scale[j] = rms;
            xs.column_mut(j).scale_mut(1.0 / rms);
        }
    }
    check_rank(&xs, &terms)?;

    let mut beta = DVector::<f64>::zeros(k);
    let mut ll = log_likelihood(&xs, y, &beta);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let score_tol = opts.tol * n as f64;
    while iterations < opts.max_iter {
        let g = score(&xs, y, &beta);
        if g.amax() < score_tol {
            converged = true;
            break;
        }
        let info = information(&xs, &(&xs * &beta));
        let Some(step) = solve(&info, &g) else { break };
        iterations += 1;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &beta + &step * t;
            let cand_ll = log_likelihood(&xs, y, &cand);
            if cand_ll.is_finite() && cand_ll >= ll {
                accepted = Some((cand, cand_ll));
                break;
            }
            t *= 0.5;
        }
        let Some((next, next_ll)) = accepted else { break };
        let rel = (next_ll - ll).abs() / ll.abs().max(f64::MIN_POSITIVE);
        beta = next;
        ll = next_ll;
        trace.push(ll);
        if rel < opts.tol {
            converged = true;
            break;
        }
    }

    let info = information(&xs, &(&xs * &beta));
    let cov = invert(&info);
    let mut coefficients = Vec::with_capacity(k);
    let mut std_errors = Vec::with_capacity(k);
    let mut z_values = Vec::with_capacity(k);
    let mut p_values = Vec::with_capacity(k);
    for j in 0..k {
        let b = beta[j] / scale[j];
        let se = cov.as_ref().map_or(f64::NAN, |c| c[(j, j)].max(0.0).sqrt() / scale[j]);
        let z = b / se;
        coefficients.push(b);
        std_errors.push(se);
        z_values.push(z);
        p_values.push(if z.is_nan() { f64::NAN } else { erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0) });
    }
    let null_ll = null_log_likelihood(y);
    let fit = LogisticFit {
        model: model.into(),
        terms,
        coefficients,
        std_errors,
        z_values,
        p_values,
        log_likelihood: ll,
        null_log_likelihood: null_ll,
        n,
        k,
        aic: aic(ll, k),
        mcfadden_r2: mcfadden_r2(ll, null_ll),
        iterations,
        converged,
        ll_trace: trace,
    };
    if converged {
        Ok(fit)
    } else {
        Err(ModelError::NotConverged { fit: Box::new(fit) })
    }
}

/// Fits `spec` on the rows of `design`, which must contain its columns.
pub fn fit_spec(design: &Design, spec: &ModelSpec, opts: FitOptions) -> Result<LogisticFit, ModelError> {
    let columns = spec.columns();
    let x = design.select(&columns)?;
    fit_logistic(&spec.name, &x, &columns, &design.y, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrTest {
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Likelihood-ratio test from log-likelihoods and parameter counts.
pub fn lr_test(ll_small: f64, k_small: usize, ll_big: f64, k_big: usize) -> LrTest {
    let chi2 = (2.0 * (ll_big - ll_small)).max(0.0);
    let df = k_big.saturating_sub(k_small);
    let p_value = if df == 0 || chi2 == 0.0 {
        1.0
    } else {
        ChiSquared::new(df as f64).expect("df > 0").sf(chi2)
    };
    LrTest { chi2, df, p_value }
}

pub fn compare_models(small: &LogisticFit, big: &LogisticFit) -> Result<LrTest, ModelError> {
    if small.n != big.n {
        return Err(ModelError::NotNested { small_n: small.n, big_n: big.n });
    }
    Ok(lr_test(small.log_likelihood, small.k, big.log_likelihood, big.k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub order_encoding: OrderEncoding,
    pub design: DesignDrops,
    pub models: Vec<LogisticFit>,
    pub comparison: Option<LrTest>,
}

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "<0.001".into()
    } else {
        format!("{p:.3}")
    }
}

/// Side-by-side coefficient table with fit statistics underneath.
pub fn render_table(summary: &ModelSummary) -> String {
    let mut terms: Vec<&str> = Vec::new();
    for m in &summary.models {
        for t in &m.terms {
            if !terms.contains(&t.as_str()) {
                terms.push(t);
            }
        }
    }
    let mut s = String::new();
    let _ = write!(s, "{:<24}", "variable");
    for m in &summary.models {
        let _ = write!(s, " | {:>14} {:>9}", format!("{} coef", truncate(&m.model, 9)), "p-value");
    }
    s.push('\n');
    for t in &terms {
        let _ = write!(s, "{t:<24}");
        for m in &summary.models {
            match m.terms.iter().position(|x| x == t) {
                Some(i) => {
                    let _ = write!(s, " | {:>14.3e} {:>9}", m.coefficients[i], fmt_p(m.p_values[i]));
                }
                None => {
                    let _ = write!(s, " | {:>14} {:>9}", "-", "-");
                }
            }
        }
        s.push('\n');
    }
    let stat_rows: [(&str, fn(&LogisticFit) -> String); 4] = [
        ("observations", |m| m.n.to_string()),
        ("log likelihood", |m| format!("{:.1} (df={})", m.log_likelihood, m.k)),
        ("AIC", |m| format!("{:.1}", m.aic)),
        ("McFadden R2", |m| format!("{:.4}", m.mcfadden_r2)),
    ];
    for (label, f) in stat_rows {
        let _ = write!(s, "{label:<24}");
        for m in &summary.models {
            let _ = write!(s, " | {:>24}", f(m));
        }
        s.push('\n');
    }
    if let Some(lr) = summary.comparison {
        let _ = writeln!(s, "LR test: chi2 = {:.1}, df = {}, p = {}", lr.chi2, lr.df, fmt_p(lr.p_value));
    }
    s
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
