//! Discriminant Information (DI) of a layer's feature maps.
//!
//! With features `X` (`D x N`), one-hot labels `Y` (`K x N`) and the centering
//! operator `C = I - 11^T / N`:
//!
//! * noise matrix `Kbar = X C X^T`
//! * signal matrix `K_B = X C Y^T Y C^T X^T`
//! * `DI = trace((Kbar + rho I)^-1 K_B)`
//!
//! DI is also `||Y C||_F^2` minus the minimum ridge least-squares error of
//! predicting `Y` from `X` ([`mrlse_oracle`] evaluates that error directly).
//!
//! Channel influence is either the exact drop in DI when a channel is
//! removed ([`influence_exact`]) or the derivative of DI with respect to a
//! multiplicative channel mask at `m = 1` ([`influence_derivative`]), which is
//! `2 rho (A^-1 K_B A^-1)_jj` with `A = Kbar + rho I`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Mat};
use crate::netgraph::TapStage;

pub const DEFAULT_RHO: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Mat,
    layer: String,
    stage: TapStage,
}

impl FeatureMatrix {
    pub fn new(values: Mat, layer: impl Into<String>, stage: TapStage) -> Result<Self> {
        if values.rows() == 0 {
            return Err(Error::DegenerateInput("feature matrix has no channels".into()));
        }
        if values.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite feature value".into()));
        }
        Ok(FeatureMatrix {
            values,
            layer: layer.into(),
            stage,
        })
    }

    /// Features not tied to any layer, for direct numerical use.
    pub fn from_mat(values: Mat) -> Result<Self> {
        Self::new(values, "", TapStage::default())
    }

    pub fn values(&self) -> &Mat {
        &self.values
    }

    pub fn layer(&self) -> &str {
        &self.layer
    }

    pub fn stage(&self) -> TapStage {
        self.stage
    }

    pub fn channels(&self) -> usize {
        self.values.rows()
    }

    pub fn samples(&self) -> usize {
        self.values.cols()
    }

    pub fn select_channels(&self, idx: &[usize]) -> Result<FeatureMatrix> {
        FeatureMatrix::new(self.values.select_rows(idx), self.layer.clone(), self.stage)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    values: Mat,
}

impl LabelMatrix {
    pub fn from_labels(labels: &[usize], num_classes: usize) -> Result<Self> {
        let mut m = Mat::zeros(num_classes, labels.len());
        for (col, &k) in labels.iter().enumerate() {
            if k >= num_classes {
                return Err(Error::DegenerateInput(format!(
                    "label {k} out of range for {num_classes} classes"
                )));
            }
            m[(k, col)] = 1.0;
        }
        Ok(LabelMatrix { values: m })
    }

    pub fn values(&self) -> &Mat {
        &self.values
    }

    pub fn classes(&self) -> usize {
        self.values.rows()
    }

    pub fn samples(&self) -> usize {
        self.values.cols()
    }

    /// Class index of every column.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.samples())
            .map(|c| {
                (0..self.classes())
                    .find(|&k| self.values[(k, c)] == 1.0)
                    .expect("one-hot column")
            })
            .collect()
    }

    /// `||Y C||_F^2`.
    pub fn centered_energy(&self) -> f64 {
        self.values.center_rows().frobenius_sq()
    }
}

/// Noise and signal matrices of one layer together with the ridge constant.
#[derive(Debug, Clone, PartialEq)]
pub struct DiGrams {
    pub kbar: Mat,
    pub kb: Mat,
    pub rho: f64,
}

impl DiGrams {
    pub fn dim(&self) -> usize {
        self.kbar.rows()
    }

    /// Grams restricted to the channel subset `idx`; identical to recomputing
    /// from the corresponding rows of `X`.
    pub fn restrict(&self, idx: &[usize]) -> DiGrams {
        DiGrams {
            kbar: self.kbar.principal(idx),
            kb: self.kb.principal(idx),
            rho: self.rho,
        }
    }

    fn regularized(&self) -> Result<Cholesky> {
        if !(self.rho > 0.0) {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        Cholesky::factor(&self.kbar.add_diagonal(self.rho))
    }
}

fn check_pair(x: &FeatureMatrix, y: &LabelMatrix, rho: f64) -> Result<()> {
    if x.samples() != y.samples() {
        return Err(Error::Shape(format!(
            "{} feature columns vs {} label columns",
            x.samples(),
            y.samples()
        )));
    }
    if x.samples() < 2 {
        return Err(Error::DegenerateInput(format!(
            "centering needs at least 2 samples, got {}",
            x.samples()
        )));
    }
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::Config(format!("rho must be positive, got {rho}")));
    }
    Ok(())
}

/// Builds `Kbar` and `K_B` by row-mean subtraction (the `N x N` centering
/// matrix is never formed).
pub fn compute_grams(x: &FeatureMatrix, y: &LabelMatrix, rho: f64) -> Result<DiGrams> {
    check_pair(x, y, rho)?;
    let xc = x.values().center_rows();
    let kbar = xc.gram();
    // X C Y^T = Xc Y^T since C is idempotent and symmetric.
    let cross = xc.mul_transpose(y.values());
    let kb = cross.gram();
    Ok(DiGrams { kbar, kb, rho })
}

/// `trace((Kbar + rho I)^-1 K_B)` via a Cholesky solve.
pub fn di(g: &DiGrams) -> Result<f64> {
    if g.dim() == 0 {
        return Ok(0.0);
    }
    let chol = g.regularized()?;
    let z = chol.solve(&g.kb);
    let value = z.trace();
    if !value.is_finite() {
        return Err(Error::Numerical("DI is not finite".into()));
    }
    Ok(value)
}

/// DI of the channel subset `idx` (empty subset has DI 0).
pub fn di_subset(g: &DiGrams, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    di(&g.restrict(idx))
}

/// Closed-form ridge regressor of `Y` on `X` and its training error.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    /// Objective `||F^T X + b 1^T - Y||_F^2 + rho ||F||_F^2` at the optimum.
    pub mrlse: f64,
    /// `D x K` weights `(Kbar + rho I)^-1 X C Y^T`.
    pub weights: Mat,
    /// `K` biases `(Y 1 - F^T X 1) / N`.
    pub bias: Vec<f64>,
    /// `||Y C||_F^2`.
    pub label_energy: f64,
}

/// Fits the ridge regressor and evaluates its objective literally, as an
/// independent check on [`di`].
pub fn mrlse_oracle(x: &FeatureMatrix, y: &LabelMatrix, rho: f64) -> Result<RidgeFit> {
    check_pair(x, y, rho)?;
    let xv = x.values();
    let yv = y.values();
    let n = xv.cols();
    let (d, k) = (xv.rows(), yv.rows());

    // Uncentered moments, centered via the rank-one correction.
    let row_sum = |m: &Mat, i: usize| m.row(i).iter().sum::<f64>();
    let xsum: Vec<f64> = (0..d).map(|i| row_sum(xv, i)).collect();
    let ysum: Vec<f64> = (0..k).map(|i| row_sum(yv, i)).collect();
    let nf = n as f64;
    let mut a = xv.gram();
    let mut xcy = xv.mul_transpose(yv);
    for i in 0..d {
        for j in 0..d {
            a[(i, j)] -= xsum[i] * xsum[j] / nf;
        }
        for j in 0..k {
            xcy[(i, j)] -= xsum[i] * ysum[j] / nf;
        }
    }
    let chol = Cholesky::factor(&a.add_diagonal(rho))?;
    let weights = chol.solve(&xcy);

    let bias: Vec<f64> = (0..k)
        .map(|c| {
            let fx1: f64 = (0..d).map(|i| weights[(i, c)] * xsum[i]).sum();
            (ysum[c] - fx1) / nf
        })
        .collect();

    let mut residual = 0.0;
    for s in 0..n {
        for c in 0..k {
            let mut pred = bias[c];
            for i in 0..d {
                pred += weights[(i, c)] * xv[(i, s)];
            }
            let r = pred - yv[(c, s)];
            residual += r * r;
        }
    }
    let mrlse = residual + rho * weights.frobenius_sq();
    Ok(RidgeFit {
        mrlse,
        weights,
        bias,
        label_energy: y.centered_energy(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfluenceMethod {
    #[default]
    Derivative,
    ExactDifference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceVector {
    pub scores: Vec<f64>,
    pub method: InfluenceMethod,
}

/// `DI(all) - DI(all \ {j})` for one channel.
pub fn influence_exact(x: &FeatureMatrix, y: &LabelMatrix, rho: f64, j: usize) -> Result<f64> {
    let d = x.channels();
    if j >= d {
        return Err(Error::Config(format!("channel {j} out of range for {d} channels")));
    }
    let g = compute_grams(x, y, rho)?;
    influence_exact_from_grams(&g, j)
}

pub fn influence_exact_from_grams(g: &DiGrams, j: usize) -> Result<f64> {
    let full = di(g)?;
    let rest: Vec<usize> = (0..g.dim()).filter(|&i| i != j).collect();
    Ok(full - di_subset(g, &rest)?)
}

/// Exact influence of every channel (one DI evaluation per channel).
pub fn influence_exact_all(g: &DiGrams) -> Result<InfluenceVector> {
    let full = di(g)?;
    let scores = (0..g.dim())
        .map(|j| {
            let rest: Vec<usize> = (0..g.dim()).filter(|&i| i != j).collect();
            Ok(full - di_subset(g, &rest)?)
        })
        .collect::<Result<_>>()?;
    Ok(InfluenceVector {
        scores,
        method: InfluenceMethod::ExactDifference,
    })
}

/// `2 rho diag(A^-1 K_B A^-1)` with `A = Kbar + rho I`, from one factorization.
pub fn influence_derivative(g: &DiGrams) -> Result<InfluenceVector> {
    let chol = g.regularized()?;
    let p = chol.solve(&g.kb); // A^-1 K_B
    let q = chol.solve(&p.transpose()); // A^-1 K_B A^-1
    let scores: Vec<f64> = (0..g.dim()).map(|j| 2.0 * g.rho * q[(j, j)]).collect();
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite influence score".into()));
    }
    Ok(InfluenceVector {
        scores,
        method: InfluenceMethod::Derivative,
    })
}

pub fn influence(g: &DiGrams, method: InfluenceMethod) -> Result<InfluenceVector> {
    match method {
        InfluenceMethod::Derivative => influence_derivative(g),
        InfluenceMethod::ExactDifference => influence_exact_all(g),
    }
}
