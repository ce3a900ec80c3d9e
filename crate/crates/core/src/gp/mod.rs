//! Exact Gaussian-process regression.
//!
//! The surrogate uses an ARD squared-exponential kernel
//!
//! ```text
//! k(a, b) = s² · exp(-½ Σ_j ((a_j - b_j) / ℓ_j)²)
//! ```
//!
//! a constant mean equal to the empirical mean of the outputs, and Gaussian
//! observation noise σ². Posterior quantities are computed from a Cholesky
//! factor of `K + (σ² + jitter) I`. Kernel parameters are fitted by
//! maximising the log marginal likelihood with a multi-start Nelder-Mead
//! search in log space.

mod nelder_mead;

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

/// Base diagonal jitter, relative to the signal variance.
pub const JITTER_START: f64 = 1e-10;
/// Largest relative jitter tried before giving up on a factorization.
pub const JITTER_MAX: f64 = 1e-4;

pub const LENGTHSCALE_BOUNDS: (f64, f64) = (1e-3, 10.0);
pub const SIGNAL_VARIANCE_BOUNDS: (f64, f64) = (1e-4, 1e2);
pub const NOISE_VARIANCE_BOUNDS: (f64, f64) = (1e-8, 1.0);

/// Parameters used when there is too little data to fit.
pub const DEFAULT_LENGTHSCALE: f64 = 0.5;
pub const DEFAULT_SIGNAL_VARIANCE: f64 = 1.0;
pub const DEFAULT_NOISE_VARIANCE: f64 = 1e-2;

pub const DEFAULT_RESTARTS: usize = 5;

/// Training pairs for the surrogate. Inputs live in the unit cube.
#[derive(Clone, Debug, PartialEq)]
pub struct GpDataset {
    dim: usize,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
}

impl GpDataset {
    pub fn new(dim: usize) -> Self {
        GpDataset {
            dim,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn from_rows(dim: usize, inputs: Vec<Vec<f64>>, outputs: Vec<f64>) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::invalid(format!(
                "{} input rows but {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        let mut ds = GpDataset::new(dim);
        for (x, y) in inputs.into_iter().zip(outputs) {
            ds.push(x, y)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, input: Vec<f64>, output: f64) -> Result<()> {
        check_point(self.dim, &input)?;
        if !output.is_finite() {
            return Err(Error::invalid(format!("non-finite output {output}")));
        }
        self.inputs.push(input);
        self.outputs.push(output);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn mean_output(&self) -> f64 {
        if self.outputs.is_empty() {
            0.0
        } else {
            self.outputs.iter().sum::<f64>() / self.outputs.len() as f64
        }
    }

    fn output_variance(&self) -> f64 {
        let m = self.mean_output();
        let n = self.outputs.len().max(1) as f64;
        self.outputs.iter().map(|y| (y - m).powi(2)).sum::<f64>() / n
    }
}

fn check_point(dim: usize, x: &[f64]) -> Result<()> {
    if x.len() != dim {
        return Err(Error::invalid(format!(
            "point has dimension {} but the model expects {dim}",
            x.len()
        )));
    }
    if let Some(v) = x.iter().find(|v| !v.is_finite() || !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!(
            "coordinate {v} is not a finite value in [0, 1]"
        )));
    }
    Ok(())
}

/// ARD squared-exponential kernel parameters plus observation noise.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn isotropic(dim: usize, lengthscale: f64, signal_variance: f64, noise_variance: f64) -> Self {
        KernelParams {
            lengthscales: vec![lengthscale; dim],
            signal_variance,
            noise_variance,
        }
    }

    pub fn default_for(dim: usize) -> Self {
        Self::isotropic(
            dim,
            DEFAULT_LENGTHSCALE,
            DEFAULT_SIGNAL_VARIANCE,
            DEFAULT_NOISE_VARIANCE,
        )
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self
            .lengthscales
            .iter()
            .find(|l| !l.is_finite() || **l <= 0.0)
        {
            return Err(Error::invalid(format!("lengthscale {l} must be positive")));
        }
        if !self.signal_variance.is_finite() || self.signal_variance <= 0.0 {
            return Err(Error::invalid("signal variance must be positive"));
        }
        if !self.noise_variance.is_finite() || self.noise_variance < 0.0 {
            return Err(Error::invalid("noise variance must be non-negative"));
        }
        Ok(())
    }

    fn to_log_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.lengthscales.iter().map(|l| l.ln()).collect();
        v.push(self.signal_variance.ln());
        v.push(self.noise_variance.ln());
        v
    }

    fn from_log_vec(v: &[f64]) -> Self {
        let d = v.len() - 2;
        KernelParams {
            lengthscales: v[..d].iter().map(|x| x.exp()).collect(),
            signal_variance: v[d].exp(),
            noise_variance: v[d + 1].exp(),
        }
    }

    fn clamped(mut self) -> Self {
        let (llo, lhi) = LENGTHSCALE_BOUNDS;
        self.lengthscales.iter_mut().for_each(|l| *l = l.clamp(llo, lhi));
        self.signal_variance = self
            .signal_variance
            .clamp(SIGNAL_VARIANCE_BOUNDS.0, SIGNAL_VARIANCE_BOUNDS.1);
        self.noise_variance = self
            .noise_variance
            .clamp(NOISE_VARIANCE_BOUNDS.0, NOISE_VARIANCE_BOUNDS.1);
        self
    }
}

#[inline]
fn sq_exp(a: &[f64], b: &[f64], params: &KernelParams) -> f64 {
    let mut s = 0.0;
    for ((x, y), l) in a.iter().zip(b).zip(&params.lengthscales) {
        let r = (x - y) / l;
        s += r * r;
    }
    params.signal_variance * (-0.5 * s).exp()
}

/// Squared-exponential covariance between two encoded points.
pub fn kernel_eval(x1: &[f64], x2: &[f64], params: &KernelParams) -> Result<f64> {
    let d = params.dim();
    if x1.len() != d || x2.len() != d {
        return Err(Error::invalid(format!(
            "kernel expects dimension {d}, got {} and {}",
            x1.len(),
            x2.len()
        )));
    }
    Ok(sq_exp(x1, x2, params))
}

/// Covariance matrix `K` of the dataset inputs (no noise, no jitter).
pub fn kernel_matrix(inputs: &[Vec<f64>], params: &KernelParams) -> DMatrix<f64> {
    let n = inputs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = params.signal_variance;
        for j in 0..i {
            let v = sq_exp(&inputs[i], &inputs[j], params);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky factor of `K + (σ² + jitter) I` with escalating jitter.
fn factorize(inputs: &[Vec<f64>], params: &KernelParams) -> Result<(DMatrix<f64>, f64)> {
    let mut k = kernel_matrix(inputs, params);
    for i in 0..k.nrows() {
        k[(i, i)] += params.noise_variance;
    }
    let mut rel = JITTER_START;
    loop {
        let jitter = rel * params.signal_variance;
        let mut m = k.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = m.cholesky() {
            return Ok((chol.unpack(), jitter));
        }
        if rel >= JITTER_MAX {
            return Err(Error::Numerical {
                msg: format!("kernel matrix of size {} is not positive definite", k.nrows()),
                jitter,
            });
        }
        rel *= 10.0;
    }
}

fn centered(outputs: &[f64], mean: f64) -> DVector<f64> {
    DVector::from_iterator(outputs.len(), outputs.iter().map(|y| y - mean))
}

fn solve_alpha(chol: &DMatrix<f64>, resid: &DVector<f64>) -> DVector<f64> {
    let z = chol
        .solve_lower_triangular(resid)
        .expect("Cholesky factor has a positive diagonal");
    chol.tr_solve_lower_triangular(&z)
        .expect("Cholesky factor has a positive diagonal")
}

/// GP posterior: dataset, kernel parameters, constant mean and the cached
/// factorization needed for prediction.
#[derive(Clone, Debug)]
pub struct GpModel {
    dataset: GpDataset,
    params: KernelParams,
    mean_constant: f64,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpModel {
    /// Builds the posterior with the mean set to the empirical output mean.
    pub fn new(dataset: GpDataset, params: KernelParams) -> Result<Self> {
        let mean = dataset.mean_output();
        Self::with_mean(dataset, params, mean)
    }

    pub fn with_mean(dataset: GpDataset, params: KernelParams, mean_constant: f64) -> Result<Self> {
        params.validate()?;
        if params.dim() != dataset.dim() {
            return Err(Error::invalid(format!(
                "kernel has {} lengthscales for {}-dimensional inputs",
                params.dim(),
                dataset.dim()
            )));
        }
        if !mean_constant.is_finite() {
            return Err(Error::invalid("mean constant must be finite"));
        }
        let (chol, jitter) = factorize(dataset.inputs(), &params)?;
        let alpha = solve_alpha(&chol, &centered(dataset.outputs(), mean_constant));
        Ok(GpModel {
            dataset,
            params,
            mean_constant,
            chol,
            alpha,
            jitter,
        })
    }

    /// Prior-only model over `dim` inputs.
    pub fn empty(dim: usize, params: KernelParams) -> Result<Self> {
        Self::new(GpDataset::new(dim), params)
    }

    pub fn dataset(&self) -> &GpDataset {
        &self.dataset
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn mean_constant(&self) -> f64 {
        self.mean_constant
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Diagonal jitter that was needed to factorize `K + σ²I`.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    /// Posterior mean and (clamped, noise-free) variance at `query`.
    pub fn predict(&self, query: &[f64]) -> Result<(f64, f64)> {
        if query.len() != self.dataset.dim() || query.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "query must be {} finite coordinates",
                self.dataset.dim()
            )));
        }
        Ok(self.predict_unchecked(query))
    }

    pub(crate) fn predict_unchecked(&self, query: &[f64]) -> (f64, f64) {
        let prior = self.params.signal_variance;
        let n = self.dataset.len();
        if n == 0 {
            return (self.mean_constant, prior);
        }
        let kstar = DVector::from_iterator(
            n,
            self.dataset.inputs().iter().map(|x| sq_exp(x, query, &self.params)),
        );
        let mean = self.mean_constant + kstar.dot(&self.alpha);
        let v = self
            .chol
            .solve_lower_triangular(&kstar)
            .expect("Cholesky factor has a positive diagonal");
        let var = (prior - v.norm_squared()).max(0.0);
        (mean, var)
    }

    /// Adds one observation. The factorization is extended by one row when
    /// that stays positive definite and rebuilt otherwise; the constant mean
    /// is re-estimated from the enlarged output set.
    pub fn augment(&self, input: Vec<f64>, output: f64) -> Result<GpModel> {
        let mut dataset = self.dataset.clone();
        dataset.push(input, output)?;
        let n = self.dataset.len();
        let x = &dataset.inputs()[n];

        let kvec = DVector::from_iterator(
            n,
            self.dataset.inputs().iter().map(|xi| sq_exp(xi, x, &self.params)),
        );
        let row = self
            .chol
            .solve_lower_triangular(&kvec)
            .expect("Cholesky factor has a positive diagonal");
        let diag2 =
            self.params.signal_variance + self.params.noise_variance + self.jitter - row.norm_squared();
        let pivot_floor = JITTER_START * self.params.signal_variance;

        let mean = dataset.mean_output();
        if diag2 > pivot_floor && diag2.is_finite() {
            let mut chol = self.chol.clone().resize(n + 1, n + 1, 0.0);
            for j in 0..n {
                chol[(n, j)] = row[j];
            }
            chol[(n, n)] = diag2.sqrt();
            let alpha = solve_alpha(&chol, &centered(dataset.outputs(), mean));
            Ok(GpModel {
                dataset,
                params: self.params.clone(),
                mean_constant: mean,
                chol,
                alpha,
                jitter: self.jitter,
            })
        } else {
            GpModel::with_mean(dataset, self.params.clone(), mean)
        }
    }

    /// Rebuilds the posterior for new kernel parameters on the same data.
    pub fn with_params(&self, params: KernelParams) -> Result<GpModel> {
        GpModel::new(self.dataset.clone(), params)
    }

    /// Writes inputs, outputs and fitted parameters as CSV for inspection.
    pub fn write_debug_csv(&self, path: &Path) -> Result<()> {
        let d = self.dataset.dim();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# signal_variance={:e} noise_variance={:e} mean={:e} jitter={:e}",
            self.params.signal_variance, self.params.noise_variance, self.mean_constant, self.jitter
        );
        let ls: Vec<String> = self.params.lengthscales.iter().map(|l| format!("{l:e}")).collect();
        let _ = writeln!(out, "# lengthscales={}", ls.join(";"));
        let header: Vec<String> = (0..d).map(|j| format!("x{j}")).chain(["y".into()]).collect();
        let _ = writeln!(out, "{}", header.join(","));
        for (x, y) in self.dataset.inputs().iter().zip(self.dataset.outputs()) {
            let row: Vec<String> = x.iter().chain([y]).map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Log marginal likelihood of the data under `params` and a constant mean.
pub fn log_marginal_likelihood(dataset: &GpDataset, params: &KernelParams, mean_constant: f64) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::invalid("log marginal likelihood needs at least one observation"));
    }
    params.validate()?;
    if params.dim() != dataset.dim() {
        return Err(Error::invalid("kernel dimension does not match the dataset"));
    }
    let (chol, _) = factorize(dataset.inputs(), params)?;
    Ok(lml_from_factor(&chol, &centered(dataset.outputs(), mean_constant)))
}

fn lml_from_factor(chol: &DMatrix<f64>, resid: &DVector<f64>) -> f64 {
    let n = resid.len() as f64;
    let z = chol
        .solve_lower_triangular(resid)
        .expect("Cholesky factor has a positive diagonal");
    let half_logdet: f64 = chol.diagonal().iter().map(|v| v.ln()).sum();
    -0.5 * z.norm_squared() - half_logdet - 0.5 * n * (2.0 * PI).ln()
}

/// One multi-start run of the MLE search.
#[derive(Clone, Debug)]
pub struct RestartTrace {
    pub initial: KernelParams,
    pub initial_lml: f64,
    pub final_lml: f64,
}

#[derive(Clone, Debug)]
pub struct MleFit {
    pub model: GpModel,
    pub lml: f64,
    /// Set when there were fewer than two observations and the default
    /// parameters were used unfitted.
    pub fallback: bool,
    pub restarts: Vec<RestartTrace>,
}

/// Fits kernel parameters by maximising the log marginal likelihood.
///
/// The first restart starts from a data-driven guess, the others from
/// log-uniform draws inside the parameter bounds. The best parameters over
/// all restarts are kept.
pub fn fit_mle(dataset: &GpDataset, restarts: usize, seed: u64) -> Result<MleFit> {
    fit_mle_bounded(dataset, restarts, seed, &vec![LENGTHSCALE_BOUNDS; dataset.dim()])
}

/// [`fit_mle`] with per-dimension lengthscale bounds, each inside
/// [`LENGTHSCALE_BOUNDS`].
pub fn fit_mle_bounded(
    dataset: &GpDataset,
    restarts: usize,
    seed: u64,
    lengthscale_bounds: &[(f64, f64)],
) -> Result<MleFit> {
    let dim = dataset.dim();
    if lengthscale_bounds.len() != dim
        || lengthscale_bounds.iter().any(|(l, h)| {
            !(*l >= LENGTHSCALE_BOUNDS.0 && *h <= LENGTHSCALE_BOUNDS.1 && l <= h)
        })
    {
        return Err(Error::invalid(format!(
            "need {dim} lengthscale bounds inside {LENGTHSCALE_BOUNDS:?}"
        )));
    }
    if dataset.len() < 2 {
        let model = GpModel::new(dataset.clone(), KernelParams::default_for(dim))?;
        let lml = if dataset.is_empty() {
            f64::NAN
        } else {
            log_marginal_likelihood(dataset, model.params(), model.mean_constant())?
        };
        return Ok(MleFit {
            model,
            lml,
            fallback: true,
            restarts: Vec::new(),
        });
    }

    let mean = dataset.mean_output();
    let resid = centered(dataset.outputs(), mean);
    let objective = |logp: &[f64]| -> f64 {
        let params = KernelParams::from_log_vec(logp);
        match factorize(dataset.inputs(), &params) {
            Ok((chol, _)) => -lml_from_factor(&chol, &resid),
            Err(_) => f64::INFINITY,
        }
    };

    let mut lo: Vec<f64> = lengthscale_bounds.iter().map(|b| b.0.ln()).collect();
    let mut hi: Vec<f64> = lengthscale_bounds.iter().map(|b| b.1.ln()).collect();
    lo.extend([SIGNAL_VARIANCE_BOUNDS.0.ln(), NOISE_VARIANCE_BOUNDS.0.ln()]);
    hi.extend([SIGNAL_VARIANCE_BOUNDS.1.ln(), NOISE_VARIANCE_BOUNDS.1.ln()]);

    let var = dataset.output_variance().max(SIGNAL_VARIANCE_BOUNDS.0);
    let guess = KernelParams::isotropic(dim, DEFAULT_LENGTHSCALE, var, 1e-2 * var).clamped();

    let mut rng = rng::seeded(seed);
    let opts = nelder_mead::Options {
        max_evals: 300 * (dim + 2),
        ..Default::default()
    };
    let mut traces = Vec::with_capacity(restarts.max(1));
    let mut best: Option<(Vec<f64>, f64)> = None;
    for r in 0..restarts.max(1) {
        let start: Vec<f64> = if r == 0 {
            let mut g = guess.to_log_vec();
            for ((v, l), h) in g.iter_mut().zip(&lo).zip(&hi) {
                *v = v.clamp(*l, *h);
            }
            g
        } else {
            lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..*h)).collect()
        };
        let initial_lml = -objective(&start);
        let m = nelder_mead::minimize(objective, &start, &lo, &hi, &opts);
        traces.push(RestartTrace {
            initial: KernelParams::from_log_vec(&start),
            initial_lml,
            final_lml: -m.f,
        });
        if best.as_ref().is_none_or(|(_, f)| m.f < *f) {
            best = Some((m.x, m.f));
        }
    }

    let (x, f) = best.expect("at least one restart");
    if !f.is_finite() {
        return Err(Error::Numerical {
            msg: "no restart produced a factorizable kernel matrix".into(),
            jitter: JITTER_MAX,
        });
    }
    let params = KernelParams::from_log_vec(&x);
    let model = GpModel::with_mean(dataset.clone(), params, mean)?;
    Ok(MleFit {
        model,
        lml: -f,
        fallback: false,
        restarts: traces,
    })
}
