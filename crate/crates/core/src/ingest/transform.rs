//! Column statistics and transforms: sample skewness, the Yeo-Johnson
//! power transform with maximum-likelihood exponent, and min-max scaling.

use serde::{Deserialize, Serialize};

use super::IngestError;

/// Lower/upper end of the exponent search interval.
pub const LAMBDA_RANGE: (f64, f64) = (-5.0, 5.0);
const LAMBDA_TOL: f64 = 1e-6;

/// Adjusted Fisher-Pearson sample skewness
/// `G1 = sqrt(n (n - 1)) / (n - 2) * m3 / m2^(3/2)` with central moments `m2`, `m3`.
pub fn skewness(column: &[f64]) -> Result<f64, IngestError> {
    let n = column.len();
    if n < 3 {
        return Err(IngestError::DegenerateColumn(format!(
            "skewness needs at least 3 values, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = column.iter().sum::<f64>() / nf;
    let (mut m2, mut m3) = (0.0, 0.0);
    for &x in column {
        let d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= nf;
    m3 /= nf;
    if m2 <= (f64::EPSILON * mean.abs().max(1.0)).powi(2) {
        return Err(IngestError::DegenerateColumn("zero variance".into()));
    }
    let g1 = m3 / m2.powf(1.5);
    Ok((nf * (nf - 1.0)).sqrt() / (nf - 2.0) * g1)
}

/// Yeo-Johnson transform of a single value.
pub fn yeo_johnson(x: f64, lambda: f64) -> f64 {
    const EPS: f64 = 1e-12;
    if x >= 0.0 {
        if lambda.abs() < EPS {
            x.ln_1p()
        } else {
            ((x + 1.0).powf(lambda) - 1.0) / lambda
        }
    } else if (lambda - 2.0).abs() < EPS {
        -(-x).ln_1p()
    } else {
        -((1.0 - x).powf(2.0 - lambda) - 1.0) / (2.0 - lambda)
    }
}

/// Profile log-likelihood of the exponent under a normal model for the
/// transformed data: `-n/2 ln(var) + (lambda - 1) * sum(sign(x) ln(|x| + 1))`.
pub fn yeo_johnson_log_likelihood(column: &[f64], lambda: f64) -> f64 {
    let n = column.len() as f64;
    let transformed: Vec<f64> = column.iter().map(|&x| yeo_johnson(x, lambda)).collect();
    let mean = transformed.iter().sum::<f64>() / n;
    let var = transformed.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let jacobian: f64 = column.iter().map(|&x| x.signum() * x.abs().ln_1p()).sum();
    let ll = -0.5 * n * var.ln() + (lambda - 1.0) * jacobian;
    if ll.is_finite() {
        ll
    } else {
        f64::NEG_INFINITY
    }
}

/// Maximum-likelihood Yeo-Johnson exponent by golden-section search on
/// [`LAMBDA_RANGE`].
pub fn fit_yeo_johnson_lambda(column: &[f64]) -> Result<f64, IngestError> {
    skewness(column)?;
    let objective = |l: f64| -yeo_johnson_log_likelihood(column, l);
    Ok(golden_section_min(
        objective,
        LAMBDA_RANGE.0,
        LAMBDA_RANGE.1,
        LAMBDA_TOL,
    ))
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

/// How a column is mapped into `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleKind {
    /// `(x - min) / (max - min)` after the optional power transform.
    MinMax,
    /// Binary 0/1 column passed through as-is.
    Binary,
    /// Constant column, mapped to 0.
    Constant,
}

/// Stored per-column transform so the exact mapping can be re-applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub column: String,
    pub lambda: Option<f64>,
    pub min: f64,
    pub max: f64,
    pub kind: ScaleKind,
}

impl TransformSpec {
    pub fn apply(&self, x: f64) -> f64 {
        match self.kind {
            ScaleKind::Binary => x,
            ScaleKind::Constant => 0.0,
            ScaleKind::MinMax => {
                let t = match self.lambda {
                    Some(l) => yeo_johnson(x, l),
                    None => x,
                };
                ((t - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
            }
        }
    }

    pub fn apply_column(&self, column: &[f64]) -> Vec<f64> {
        column.iter().map(|&x| self.apply(x)).collect()
    }
}

fn min_max(column: &[f64]) -> (f64, f64) {
    column
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

/// Min-max scaling to `[0, 1]`, returning the spec that reproduces it.
pub fn min_max_scale(column: &[f64]) -> Result<(Vec<f64>, TransformSpec), IngestError> {
    min_max_spec("", column, None).map(|spec| (spec.apply_column(column), spec))
}

pub(crate) fn min_max_spec(
    name: &str,
    column: &[f64],
    lambda: Option<f64>,
) -> Result<TransformSpec, IngestError> {
    let transformed: Vec<f64> = match lambda {
        Some(l) => column.iter().map(|&x| yeo_johnson(x, l)).collect(),
        None => column.to_vec(),
    };
    let (min, max) = min_max(&transformed);
    if column.is_empty() || max <= min {
        return Err(IngestError::DegenerateColumn(format!(
            "column {name:?} is constant"
        )));
    }
    Ok(TransformSpec {
        column: name.to_string(),
        lambda,
        min,
        max,
        kind: ScaleKind::MinMax,
    })
}
