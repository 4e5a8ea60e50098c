//! Energy minimization over the bandlimited initial velocity.
//!
//! The shooting energy `E(v0) = gamma/2 * Dist(S o psi_1, T) + 1/2 (L v0, v0)`
//! is minimized by safeguarded gradient descent. The gradient is central
//! finite differences over the independent real parameters of the Hermitian
//! coefficient block: one real pair (re, im) per conjugate coefficient pair
//! plus the real DC entry of each component. The parameter space is small by
//! construction, so the 2x(parameter count) energy evaluations per gradient
//! stay affordable.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freq::{
    hermitian_inner, make_operator, BandSpec, FreqVectorField, SmoothingOperator,
};
use crate::parallel::par_map;
use crate::shooting::{det_jacobian, integrate_diffeo, integrate_epdiff, to_deformation, warp};
use crate::spatial::{mean_ssd, SpatialImage};

/// All scalars steering one registration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegConfig {
    /// Image-match weight (gamma).
    pub gamma: f64,
    /// Regularizer weight (alpha).
    pub alpha: f64,
    /// Regularizer exponent (c).
    pub power: u32,
    /// Retained frequencies per axis.
    pub band: usize,
    /// Spatial resolution per axis.
    pub grid: usize,
    /// Spatial dimension (2 or 3).
    pub dim: usize,
    /// Euler steps for geodesic shooting.
    pub steps: usize,
    /// Gradient-descent iteration cap.
    pub max_iters: usize,
    /// Initial descent step.
    pub step_size: f64,
    /// Relative energy-decrease stopping threshold.
    pub tol: f64,
    /// Finite-difference probe size.
    pub fd_eps: f64,
}

impl Default for RegConfig {
    fn default() -> Self {
        RegConfig {
            gamma: 1.0,
            alpha: 3.0,
            power: 6,
            band: 16,
            grid: 100,
            dim: 2,
            steps: 10,
            max_iters: 200,
            step_size: 0.1,
            tol: 1e-6,
            fd_eps: 1e-4,
        }
    }
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma", self.gamma),
            ("alpha", self.alpha),
            ("step_size", self.step_size),
            ("fd_eps", self.fd_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.power < 1 || self.steps < 1 || self.max_iters < 1 {
            return Err(Error::InvalidParameter(
                "power, steps, and max_iters must be >= 1".into(),
            ));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tol must lie in (0, 1), got {}",
                self.tol
            )));
        }
        self.band_spec().map(|_| ())
    }

    pub fn band_spec(&self) -> Result<BandSpec> {
        BandSpec::square(self.dim, self.band, self.grid)
    }

    pub fn operator(&self) -> Result<SmoothingOperator> {
        make_operator(self.alpha, self.power, &self.band_spec()?)
    }

    pub fn grid_dims(&self) -> Vec<usize> {
        vec![self.grid; self.dim]
    }
}

/// Outcome of one registration.
#[derive(Debug, Clone)]
pub struct RegResult {
    pub v_opt: FreqVectorField,
    /// Accepted energy after each iteration, starting with the initial energy.
    pub energy_trace: Vec<f64>,
    pub initial_ssd: f64,
    pub final_ssd: f64,
    pub min_detjac: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when backtracking ran out of halvings and the best-so-far iterate
    /// was returned.
    pub backtracking_exhausted: bool,
}

/// Independent real parameters of a Hermitian coefficient block: the real DC
/// entry plus one (re, im) pair per conjugate pair, per component.
#[derive(Debug, Clone)]
pub struct HermitianCoords {
    spec: BandSpec,
    /// (representative flat index, mirror flat index); DC has rep == mirror.
    pairs: Vec<(usize, usize)>,
}

impl HermitianCoords {
    pub fn new(spec: &BandSpec) -> Self {
        let d = spec.dim();
        let mut idx = vec![0usize; d];
        let mut mir = vec![0usize; d];
        let mut pairs = Vec::new();
        for flat in 0..spec.band_len() {
            spec.decode(flat, &mut idx);
            if !spec.mirror(&idx, &mut mir) {
                continue; // forced hyperplane, not a degree of freedom
            }
            let m = spec.encode(&mir);
            if flat <= m {
                pairs.push((flat, m));
            }
        }
        HermitianCoords {
            spec: spec.clone(),
            pairs,
        }
    }

    /// Real parameters per component (DC contributes one, pairs two).
    pub fn params_per_component(&self) -> usize {
        self.pairs
            .iter()
            .map(|&(a, b)| if a == b { 1 } else { 2 })
            .sum()
    }

    /// Total parameter count across the `d` components.
    pub fn param_count(&self) -> usize {
        self.spec.dim() * self.params_per_component()
    }

    /// Enumerate (component, pair, is_imaginary) triplets in parameter order.
    fn coords(&self) -> Vec<(usize, usize, bool)> {
        let mut out = Vec::with_capacity(self.param_count());
        for comp in 0..self.spec.dim() {
            for (p, &(rep, mir)) in self.pairs.iter().enumerate() {
                out.push((comp, p, false));
                if rep != mir {
                    out.push((comp, p, true));
                }
            }
        }
        out
    }

    /// Add `step` to one real coordinate, keeping the field Hermitian.
    fn perturb(&self, v: &mut FreqVectorField, comp: usize, pair: usize, imag: bool, step: f64) {
        let (rep, mir) = self.pairs[pair];
        let coeffs = v.component_mut(comp).coeffs_mut();
        if rep == mir {
            coeffs[rep] += Complex64::new(step, 0.0);
        } else if imag {
            coeffs[rep] += Complex64::new(0.0, step);
            coeffs[mir] -= Complex64::new(0.0, step);
        } else {
            coeffs[rep] += Complex64::new(step, 0.0);
            coeffs[mir] += Complex64::new(step, 0.0);
        }
    }

    /// Assemble per-coordinate derivatives into a Hermitian gradient field
    /// such that the full-band inner product with any Hermitian direction
    /// equals the reduced-coordinate dot product.
    fn assemble(&self, derivs: &[f64]) -> FreqVectorField {
        let mut g = FreqVectorField::zeros(&self.spec);
        let mut cursor = 0usize;
        for comp in 0..self.spec.dim() {
            for &(rep, mir) in &self.pairs {
                if rep == mir {
                    let d = derivs[cursor];
                    cursor += 1;
                    g.component_mut(comp).coeffs_mut()[rep] = Complex64::new(d, 0.0);
                } else {
                    let dre = derivs[cursor];
                    let dim_ = derivs[cursor + 1];
                    cursor += 2;
                    let half = Complex64::new(0.5 * dre, 0.5 * dim_);
                    g.component_mut(comp).coeffs_mut()[rep] = half;
                    g.component_mut(comp).coeffs_mut()[mir] = half.conj();
                }
            }
        }
        g
    }
}

fn ensure_normalized(img: &SpatialImage, name: &str) -> Result<()> {
    let (lo, hi) = (img.min(), img.max());
    if lo < -1e-9 || hi > 1.0 + 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "{name} must be normalized to [0, 1], found range [{lo}, {hi}]"
        )));
    }
    Ok(())
}

/// Shoot `v0` to its terminal deformation on the configured grid.
pub fn shoot_to_deformation(
    v0: &FreqVectorField,
    op: &SmoothingOperator,
    steps: usize,
    grid: &[usize],
) -> Result<crate::shooting::DeformationField> {
    let path = integrate_epdiff(v0, op, steps)?;
    let u = integrate_diffeo(&path)?;
    to_deformation(&u, grid)
}

/// Regularizer term `1/2 (L v, v)` as a coefficientwise Hermitian pairing.
pub fn regularizer(op: &SmoothingOperator, v: &FreqVectorField) -> Result<f64> {
    let lv = op.apply_l(v)?;
    Ok(0.5 * hermitian_inner(&lv, v))
}

fn energy_with(
    v0: &FreqVectorField,
    op: &SmoothingOperator,
    source: &SpatialImage,
    target: &SpatialImage,
    cfg: &RegConfig,
) -> Result<f64> {
    let psi = shoot_to_deformation(v0, op, cfg.steps, &cfg.grid_dims())?;
    let warped = warp(source, &psi)?;
    let dist = mean_ssd(&warped, target)?;
    let e = 0.5 * cfg.gamma * dist + regularizer(op, v0)?;
    if !e.is_finite() {
        return Err(Error::EnergyDiverged(format!("energy = {e}")));
    }
    Ok(e)
}

/// Shooting energy of `v0` for the pair `(source, target)`.
///
/// The distance term is the mean squared intensity difference, so `gamma` is
/// resolution independent.
pub fn energy(
    v0: &FreqVectorField,
    source: &SpatialImage,
    target: &SpatialImage,
    cfg: &RegConfig,
) -> Result<f64> {
    cfg.validate()?;
    check_grids(source, target, cfg)?;
    energy_with(v0, &cfg.operator()?, source, target, cfg)
}

fn check_grids(source: &SpatialImage, target: &SpatialImage, cfg: &RegConfig) -> Result<()> {
    let dims = cfg.grid_dims();
    if source.dims() != dims || target.dims() != dims {
        return Err(Error::GridMismatch(format!(
            "images {:?}/{:?} vs configured grid {:?}",
            source.dims(),
            target.dims(),
            dims
        )));
    }
    Ok(())
}

/// Central finite-difference gradient over Hermitian-reduced coordinates,
/// assembled back into a Hermitian field.
pub fn gradient_fd(
    v0: &FreqVectorField,
    source: &SpatialImage,
    target: &SpatialImage,
    cfg: &RegConfig,
) -> Result<FreqVectorField> {
    cfg.validate()?;
    check_grids(source, target, cfg)?;
    let op = cfg.operator()?;
    gradient_fd_with(v0, &op, source, target, cfg)
}

fn gradient_fd_with(
    v0: &FreqVectorField,
    op: &SmoothingOperator,
    source: &SpatialImage,
    target: &SpatialImage,
    cfg: &RegConfig,
) -> Result<FreqVectorField> {
    let coords = HermitianCoords::new(v0.spec());
    let plan = coords.coords();
    let eps = cfg.fd_eps;
    let derivs: Vec<Result<f64>> = par_map(&plan, |&(comp, pair, imag)| {
        let mut plus = v0.clone();
        coords.perturb(&mut plus, comp, pair, imag, eps);
        let mut minus = v0.clone();
        coords.perturb(&mut minus, comp, pair, imag, -eps);
        Ok((energy_with(&plus, op, source, target, cfg)?
            - energy_with(&minus, op, source, target, cfg)?)
            / (2.0 * eps))
    });
    let derivs = derivs.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(coords.assemble(&derivs))
}

/// Gradient descent with backtracking on the shooting energy.
pub fn register(
    source: &SpatialImage,
    target: &SpatialImage,
    cfg: &RegConfig,
) -> Result<RegResult> {
    cfg.validate()?;
    check_grids(source, target, cfg)?;
    ensure_normalized(source, "source")?;
    ensure_normalized(target, "target")?;

    let op = cfg.operator()?;
    let spec = cfg.band_spec()?;
    let initial_ssd = mean_ssd(source, target)?;

    let mut v = FreqVectorField::zeros(&spec);
    let mut e = energy_with(&v, &op, source, target, cfg)?;
    let mut trace = vec![e];
    let mut converged = false;
    let mut backtracking_exhausted = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iters {
        let grad = gradient_fd_with(&v, &op, source, target, cfg)?;
        // descend along the K-smoothed (Sobolev) gradient: the raw
        // coefficient gradient is hopelessly ill-conditioned because the
        // metric multipliers span many orders of magnitude across the band
        let direction = op.apply_k(&grad)?;
        let slope = hermitian_inner(&grad, &direction);
        if slope <= 1e-24 {
            converged = true;
            break;
        }

        let mut step = cfg.step_size;
        let mut accepted = None;
        for _ in 0..30 {
            let mut candidate = v.clone();
            candidate.axpy(-step, &direction);
            match energy_with(&candidate, &op, source, target, cfg) {
                Ok(e_new) if e_new < e => {
                    accepted = Some((candidate, e_new));
                    break;
                }
                // non-finite energies behave like failed steps
                Ok(_) | Err(Error::EnergyDiverged(_)) | Err(Error::IntegrationDiverged { .. }) => {
                    step *= 0.5;
                }
                Err(other) => return Err(other),
            }
        }

        let Some((v_new, e_new)) = accepted else {
            backtracking_exhausted = true;
            break;
        };
        iterations += 1;
        let rel_drop = (e - e_new) / e.max(f64::MIN_POSITIVE);
        v = v_new;
        e = e_new;
        trace.push(e);
        if rel_drop < cfg.tol {
            converged = true;
            break;
        }
    }
    if iterations == cfg.max_iters {
        converged = true;
    }

    let psi = shoot_to_deformation(&v, &op, cfg.steps, &cfg.grid_dims())?;
    let warped = warp(source, &psi)?;
    let final_ssd = mean_ssd(&warped, target)?;
    let min_detjac = det_jacobian(&psi).min();

    Ok(RegResult {
        v_opt: v,
        energy_trace: trace,
        initial_ssd,
        final_ssd,
        min_detjac,
        iterations,
        converged,
        backtracking_exhausted,
    })
}
