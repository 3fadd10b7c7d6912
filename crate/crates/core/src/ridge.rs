//! Regularised least squares shared by both agents.
//!
//! A [`GramState`] keeps `Λ = λI + Σ_τ φ_τ φ_τᵀ` together with `Λ⁻¹`, updated
//! by rank-one Sherman-Morrison steps. The inverse is recomputed densely
//! every [`REFRESH_EVERY`] insertions, and earlier whenever the identity
//! residual `‖ΛΛ⁻¹ - I‖_∞` checked every [`CHECK_EVERY`] insertions exceeds
//! [`RESIDUAL_TOL`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tv::{clamp_value, WeightedValueList};

pub const REFRESH_EVERY: usize = 256;
pub const CHECK_EVERY: usize = 32;
pub const RESIDUAL_TOL: f64 = 1e-8;
const NORM_SLACK: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct GramState {
    lambda: f64,
    gram: DMatrix<f64>,
    inverse: DMatrix<f64>,
    /// Stored feature vectors, one column per sample.
    features: Vec<DVector<f64>>,
    since_refresh: usize,
}

impl GramState {
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("regulariser {lambda} must be positive")));
        }
        Ok(Self {
            lambda,
            gram: DMatrix::identity(dim, dim) * lambda,
            inverse: DMatrix::identity(dim, dim) / lambda,
            features: Vec::new(),
            since_refresh: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn features(&self) -> &[DVector<f64>] {
        &self.features
    }

    pub fn insert(&mut self, phi: &[f64]) -> Result<()> {
        let d = self.dim();
        if phi.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: phi.len() });
        }
        let phi = DVector::from_column_slice(phi);
        let norm = phi.norm();
        if !norm.is_finite() || norm > 1.0 + NORM_SLACK {
            return Err(Error::FeatureNorm(norm));
        }
        self.gram.ger(1.0, &phi, &phi, 1.0);
        if norm > 0.0 {
            // (Λ + φφᵀ)⁻¹ = Λ⁻¹ - (Λ⁻¹φ)(Λ⁻¹φ)ᵀ / (1 + φᵀΛ⁻¹φ)
            let u = &self.inverse * &phi;
            let denom = 1.0 + phi.dot(&u);
            self.inverse.ger(-1.0 / denom, &u, &u, 1.0);
        }
        self.features.push(phi);
        self.since_refresh += 1;

        let drifted = self.since_refresh.is_multiple_of(CHECK_EVERY) && self.residual() > RESIDUAL_TOL;
        if self.since_refresh >= REFRESH_EVERY || drifted {
            self.refresh()?;
        }
        Ok(())
    }

    /// `‖ΛΛ⁻¹ - I‖_∞` (max absolute row sum).
    pub fn residual(&self) -> f64 {
        let d = self.dim();
        let prod = &self.gram * &self.inverse - DMatrix::<f64>::identity(d, d);
        prod.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Recomputes `Λ⁻¹` from `Λ` by Cholesky factorisation.
    pub fn refresh(&mut self) -> Result<()> {
        let chol = self
            .gram
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("Gram matrix lost positive definiteness".into()))?;
        let mut inv = chol.inverse();
        // symmetrise
        inv = (&inv + inv.transpose()) * 0.5;
        self.inverse = inv;
        self.since_refresh = 0;
        Ok(())
    }

    fn check_targets(&self, targets: &[f64]) -> Result<()> {
        if targets.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: targets.len() });
        }
        Ok(())
    }

    /// `Λ⁻¹ Σ_τ φ_τ min(target_τ, α)`.
    pub fn solve_truncated(&self, targets: &[f64], alpha: f64) -> Result<Vec<f64>> {
        self.check_targets(targets)?;
        let mut rhs = DVector::zeros(self.dim());
        for (phi, &t) in self.features.iter().zip(targets) {
            rhs.axpy(t.min(alpha), phi, 1.0);
        }
        Ok((&self.inverse * rhs).iter().copied().collect())
    }

    /// Matrix of per-sample coefficients `C = Λ⁻¹ Φ` (d x n), so that
    /// `z_i(α) = Σ_τ C[i, τ] min(v_τ, α)`.
    pub fn coefficients(&self) -> DMatrix<f64> {
        if self.features.is_empty() {
            return DMatrix::zeros(self.dim(), 0);
        }
        let phi = DMatrix::from_columns(&self.features);
        &self.inverse * phi
    }

    /// Coefficient/value pairs whose sweep yields `max_α z_i(α) - ρ α`.
    pub fn per_coordinate_dual_inputs(&self, targets: &[f64], i: usize, cap: f64) -> Result<WeightedValueList> {
        self.check_targets(targets)?;
        if i >= self.dim() {
            return Err(Error::InvalidInput(format!("coordinate {i} out of range for dimension {}", self.dim())));
        }
        let row = self.inverse.row(i);
        let pairs = self
            .features
            .iter()
            .zip(targets)
            .map(|(phi, &v)| Ok((row.dot(&phi.transpose()), clamp_value(v, cap)?)))
            .collect::<Result<Vec<_>>>()?;
        WeightedValueList::new(pairs, cap)
    }

    /// `√(e_iᵀ Λ⁻¹ e_i)` for each coordinate.
    pub fn bonus_diagonal(&self) -> Vec<f64> {
        self.inverse.diagonal().iter().map(|x| x.max(0.0).sqrt()).collect()
    }

    /// `√(φᵀ Λ⁻¹ φ)`.
    pub fn quadratic_bonus(&self, phi: &[f64]) -> f64 {
        let v = DVector::from_column_slice(phi);
        v.dot(&(&self.inverse * &v)).max(0.0).sqrt()
    }
}
