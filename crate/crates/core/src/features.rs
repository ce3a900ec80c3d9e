//! Feature scaling and PCA projection, fitted on the training split only.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const STD_FLOOR: f64 = 1e-12;

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues (descending) and eigenvectors as columns.
pub fn symmetric_eigen(matrix: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::invalid("eigen-decomposition needs a square matrix"));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let mut a = matrix.clone();
    let mut v = Array2::<f64>::eye(n);
    let scale = a.iter().map(|x| x.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = Array1::from_iter(order.iter().map(|&i| a[(i, i)]));
    let mut vectors = v.select(Axis(1), &order);
    for mut col in vectors.columns_mut() {
        let lead = col.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            col.mapv_inplace(|x| -x);
        }
    }
    Ok((values, vectors))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// Features × features, columns are eigenvectors.
    pub components: Array2<f64>,
    /// Sorted descending, clamped at zero.
    pub eigenvalues: Array1<f64>,
}

/// Sample covariance (divisor n − 1) of the rows of `x`.
pub fn covariance(x: ArrayView2<'_, f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::invalid(format!("covariance needs at least 2 rows, got {n}")));
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / (n - 1) as f64;
    // exact symmetry
    let cov = (&cov + &cov.t()) * 0.5;
    Ok((mean, cov))
}

pub fn fit_pca(train: ArrayView2<'_, f64>) -> Result<PcaModel> {
    if train.ncols() == 0 {
        return Err(Error::invalid("PCA needs at least one feature"));
    }
    let (mean, cov) = covariance(train)?;
    let (values, components) = symmetric_eigen(&cov)?;
    Ok(PcaModel {
        mean,
        components,
        eigenvalues: values.mapv(|v| v.max(0.0)),
    })
}

/// `(features − mean) · components[:, ..m]`.
pub fn project(pca: &PcaModel, features: ArrayView2<'_, f64>, m: usize) -> Result<Array2<f64>> {
    let f = pca.mean.len();
    if m == 0 || m > f {
        return Err(Error::invalid(format!("component count {m} outside [1, {f}]")));
    }
    if features.ncols() != f {
        return Err(Error::invalid(format!("PCA fitted on {f} features, got {}", features.ncols())));
    }
    let centered = &features - &pca.mean;
    Ok(centered.dot(&pca.components.slice(ndarray::s![.., ..m])))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalingMethod {
    L1,
    L2,
    Standardise,
    MinMax,
    None,
}

impl ScalingMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ScalingMethod::L1 => "l1",
            ScalingMethod::L2 => "l2",
            ScalingMethod::Standardise => "standardise",
            ScalingMethod::MinMax => "minmax",
            ScalingMethod::None => "none",
        }
    }
}

impl fmt::Display for ScalingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScalingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "l1" => ScalingMethod::L1,
            "l2" => ScalingMethod::L2,
            "standardise" => ScalingMethod::Standardise,
            "minmax" => ScalingMethod::MinMax,
            "none" => ScalingMethod::None,
            other => return Err(Error::invalid(format!("unknown scaling method `{other}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalerModel {
    pub method: ScalingMethod,
    /// Per-feature offset (mean or min); empty for row-wise methods.
    pub offset: Array1<f64>,
    /// Per-feature divisor (std or range); empty for row-wise methods.
    pub divisor: Array1<f64>,
}

pub fn fit_scaler(method: ScalingMethod, train: ArrayView2<'_, f64>) -> Result<ScalerModel> {
    let (offset, divisor) = match method {
        ScalingMethod::L1 | ScalingMethod::L2 | ScalingMethod::None => (Array1::zeros(0), Array1::zeros(0)),
        ScalingMethod::Standardise => {
            if train.nrows() == 0 {
                return Err(Error::invalid("cannot standardise an empty matrix"));
            }
            let mean = train.mean_axis(Axis(0)).expect("non-empty");
            let std = train.std_axis(Axis(0), 0.0).mapv(|s| s.max(STD_FLOOR));
            (mean, std)
        }
        ScalingMethod::MinMax => {
            if train.nrows() == 0 {
                return Err(Error::invalid("cannot min-max scale an empty matrix"));
            }
            let min = train.fold_axis(Axis(0), f64::INFINITY, |a, &b| a.min(b));
            let max = train.fold_axis(Axis(0), f64::NEG_INFINITY, |a, &b| a.max(b));
            // constant features get range 1 so they map to 0
            let range = Array1::from_iter(min.iter().zip(&max).map(|(lo, hi)| if hi > lo { hi - lo } else { 1.0 }));
            (min, range)
        }
    };
    Ok(ScalerModel {
        method,
        offset,
        divisor,
    })
}

pub fn apply_scaler(scaler: &ScalerModel, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    match scaler.method {
        ScalingMethod::None => Ok(features.to_owned()),
        ScalingMethod::L1 | ScalingMethod::L2 => {
            let mut out = features.to_owned();
            for mut row in out.rows_mut() {
                let norm = if scaler.method == ScalingMethod::L1 {
                    row.iter().map(|v| v.abs()).sum::<f64>()
                } else {
                    row.iter().map(|v| v * v).sum::<f64>().sqrt()
                };
                if norm > 0.0 {
                    row.mapv_inplace(|v| v / norm);
                }
            }
            Ok(out)
        }
        ScalingMethod::Standardise | ScalingMethod::MinMax => {
            if features.ncols() != scaler.offset.len() {
                return Err(Error::invalid(format!(
                    "scaler fitted on {} features, got {}",
                    scaler.offset.len(),
                    features.ncols()
                )));
            }
            Ok((&features - &scaler.offset) / &scaler.divisor)
        }
    }
}

/// Scaler followed by an optional PCA projection.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePipeline {
    pub scaler: ScalerModel,
    pub pca: Option<(PcaModel, usize)>,
}

impl FeaturePipeline {
    /// Fits on training features; `pca_count = None` skips PCA.
    pub fn fit(train: ArrayView2<'_, f64>, method: ScalingMethod, pca_count: Option<usize>) -> Result<Self> {
        let scaler = fit_scaler(method, train)?;
        let pca = match pca_count {
            Some(m) => {
                let scaled = apply_scaler(&scaler, train)?;
                let model = fit_pca(scaled.view())?;
                if m == 0 || m > model.mean.len() {
                    return Err(Error::invalid(format!(
                        "pca_count {m} outside [1, {}]",
                        model.mean.len()
                    )));
                }
                Some((model, m))
            }
            None => None,
        };
        Ok(FeaturePipeline { scaler, pca })
    }

    pub fn apply(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let scaled = apply_scaler(&self.scaler, features)?;
        match &self.pca {
            Some((model, m)) => project(model, scaled.view(), *m),
            None => Ok(scaled),
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        self.pca.as_ref().map_or(input_dim, |(_, m)| *m)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("boloc-pipeline v1\n");
        let join = |v: &mut dyn Iterator<Item = &f64>| v.map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "scaling {}", self.scaler.method);
        let _ = writeln!(out, "offset {}", join(&mut self.scaler.offset.iter()));
        let _ = writeln!(out, "divisor {}", join(&mut self.scaler.divisor.iter()));
        match &self.pca {
            None => out.push_str("pca none\n"),
            Some((model, m)) => {
                let f = model.mean.len();
                let _ = writeln!(out, "pca {m} {f}");
                let _ = writeln!(out, "mean {}", join(&mut model.mean.iter()));
                let _ = writeln!(out, "eigenvalues {}", join(&mut model.eigenvalues.iter()));
                for row in model.components.rows() {
                    let _ = writeln!(out, "row {}", join(&mut row.iter()));
                }
            }
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let lines: Vec<&str> = text.lines().collect();
        let get = |i: usize, key: &str| -> Result<&str> {
            let line = lines.get(i).ok_or_else(|| perr(i + 1, &format!("missing `{key}` line")))?;
            let rest = line
                .strip_prefix(key)
                .ok_or_else(|| perr(i + 1, &format!("expected `{key}`")))?;
            Ok(rest.trim())
        };
        let floats = |i: usize, s: &str| -> Result<Array1<f64>> {
            s.split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| perr(i + 1, &format!("bad value `{t}`")))
                })
                .collect::<Result<Vec<_>>>()
                .map(Array1::from)
        };
        if lines.first() != Some(&"boloc-pipeline v1") {
            return Err(perr(1, "expected `boloc-pipeline v1`"));
        }
        let method: ScalingMethod = get(1, "scaling")?.parse().map_err(|_| perr(2, "bad scaling method"))?;
        let offset = floats(2, get(2, "offset")?)?;
        let divisor = floats(3, get(3, "divisor")?)?;
        if offset.len() != divisor.len() {
            return Err(perr(4, "offset and divisor lengths differ"));
        }
        let scaler = ScalerModel {
            method,
            offset,
            divisor,
        };
        let pca_line = get(4, "pca")?;
        if pca_line == "none" {
            return Ok(FeaturePipeline { scaler, pca: None });
        }
        let mut it = pca_line.split_whitespace().map(|t| t.parse::<usize>());
        let (Some(Ok(m)), Some(Ok(f))) = (it.next(), it.next()) else {
            return Err(perr(5, "bad pca line"));
        };
        let mean = floats(5, get(5, "mean")?)?;
        let eigenvalues = floats(6, get(6, "eigenvalues")?)?;
        let mut components = Array2::zeros((f, f));
        for r in 0..f {
            let row = floats(7 + r, get(7 + r, "row")?)?;
            if row.len() != f {
                return Err(perr(8 + r, "component row has wrong length"));
            }
            components.row_mut(r).assign(&row);
        }
        if mean.len() != f || eigenvalues.len() != f || m == 0 || m > f {
            return Err(perr(5, "inconsistent PCA dimensions"));
        }
        Ok(FeaturePipeline {
            scaler,
            pca: Some((
                PcaModel {
                    mean,
                    components,
                    eigenvalues,
                },
                m,
            )),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}
