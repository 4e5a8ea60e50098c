//! Loss, manual backprop, SGD training, and prediction.

use serde::{Deserialize, Serialize};

use crate::dualnet::net::{
    combine_and_symmetrize, input_planes, subnet_backward, subnet_forward,
    symmetrize_adjoint_planes, ConvLayer, DualNetWeights, NetArch,
};
use crate::dualnet::Planes;
use crate::error::{Error, Result};
use crate::freq::{spatial_to_band, FreqScalarField, FreqVectorField};
use crate::parallel::par_map;
use crate::registration::{shoot_to_deformation, RegConfig};
use crate::shooting::{det_jacobian, warp, DeformationField};
use crate::spatial::{mean_ssd, SpatialImage};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// One labeled pair: band spectra of the images plus the optimal velocity.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub s_freq: FreqScalarField,
    pub t_freq: FreqScalarField,
    pub v_opt: FreqVectorField,
}

impl TrainingExample {
    pub fn new(
        s_freq: FreqScalarField,
        t_freq: FreqScalarField,
        v_opt: FreqVectorField,
    ) -> Result<Self> {
        s_freq.spec().ensure_matches(t_freq.spec(), "example images")?;
        s_freq.spec().ensure_matches(v_opt.spec(), "example label")?;
        Ok(TrainingExample {
            s_freq,
            t_freq,
            v_opt,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    PlainSgd,
    MomentumSgd,
}

/// Training hyperparameters; the architecture is part of the config so tests
/// can use small stacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight-decay strength on kernels.
    pub lambda: f64,
    /// Learning rate.
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub momentum: f64,
    pub arch: NetArch,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1e-4,
            lr: 1e-4,
            batch: 64,
            epochs: 2000,
            seed: 0,
            optimizer: Optimizer::MomentumSgd,
            momentum: 0.9,
            arch: NetArch::default_for(2),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::InvalidParameter("lambda must be >= 0".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidParameter("lr must be positive".into()));
        }
        if self.batch < 1 || self.epochs < 1 {
            return Err(Error::InvalidParameter("batch and epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Squared L2 distance between two coefficient blocks, evaluated in the
/// decoupled form: real-plane residual plus imaginary-plane residual.
pub fn velocity_loss(pre: &FreqVectorField, opt: &FreqVectorField) -> f64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for (cp, co) in pre.components().iter().zip(opt.components()) {
        for (a, b) in cp.coeffs().iter().zip(co.coeffs()) {
            let dre = a.re - b.re;
            let dim_ = a.im - b.im;
            re += dre * dre;
            im += dim_ * dim_;
        }
    }
    re + im
}

/// Batch loss: `sum_n ||v_opt - v_pre||^2 + lambda * ||kernels||^2`.
pub fn loss(batch: &[TrainingExample], weights: &DualNetWeights, cfg: &TrainConfig) -> Result<f64> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let data: f64 = batch
        .iter()
        .map(|ex| {
            let pre = super::forward(&ex.s_freq, &ex.t_freq, weights)?;
            Ok(velocity_loss(&pre, &ex.v_opt))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum();
    Ok(data + cfg.lambda * weights.kernel_norm_sq())
}

/// Per-layer kernel/bias gradients for both sub-networks.
#[derive(Debug, Clone)]
pub struct DualNetGradients {
    pub r_layers: Vec<ConvLayer>,
    pub i_layers: Vec<ConvLayer>,
}

impl DualNetGradients {
    fn zeros(weights: &DualNetWeights) -> Self {
        let zero = |layers: &[ConvLayer]| {
            layers
                .iter()
                .map(|l| ConvLayer {
                    kernel: vec![0.0; l.kernel.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect()
        };
        DualNetGradients {
            r_layers: zero(&weights.r_layers),
            i_layers: zero(&weights.i_layers),
        }
    }

    fn accumulate(&mut self, other: &DualNetGradients) {
        let add = |dst: &mut Vec<ConvLayer>, src: &[ConvLayer]| {
            for (d, s) in dst.iter_mut().zip(src) {
                for (a, b) in d.kernel.iter_mut().zip(&s.kernel) {
                    *a += b;
                }
                for (a, b) in d.bias.iter_mut().zip(&s.bias) {
                    *a += b;
                }
            }
        };
        add(&mut self.r_layers, &other.r_layers);
        add(&mut self.i_layers, &other.i_layers);
    }
}

fn example_gradients(
    ex: &TrainingExample,
    weights: &DualNetWeights,
) -> Result<(f64, DualNetGradients)> {
    let spec = ex.s_freq.spec();
    let r_trace = subnet_forward(
        &weights.arch,
        &weights.r_layers,
        input_planes(&ex.s_freq, &ex.t_freq, false),
    )?;
    let i_trace = subnet_forward(
        &weights.arch,
        &weights.i_layers,
        input_planes(&ex.s_freq, &ex.t_freq, true),
    )?;
    let pre = combine_and_symmetrize(spec, &r_trace.output, &i_trace.output)?;
    let l = velocity_loss(&pre, &ex.v_opt);

    // d/d(pre) of the squared residual, per plane
    let d = spec.dim();
    let mut grad_re = Planes::zeros(d, spec.band());
    let mut grad_im = Planes::zeros(d, spec.band());
    for j in 0..d {
        for (flat, (p, o)) in pre
            .component(j)
            .coeffs()
            .iter()
            .zip(ex.v_opt.component(j).coeffs())
            .enumerate()
        {
            grad_re.plane_mut(j)[flat] = 2.0 * (p.re - o.re);
            grad_im.plane_mut(j)[flat] = 2.0 * (p.im - o.im);
        }
    }
    let (g_re, g_im) = symmetrize_adjoint_planes(spec, &grad_re, &grad_im);
    let r_grads = subnet_backward(&weights.arch, &weights.r_layers, &r_trace, g_re);
    let i_grads = subnet_backward(&weights.arch, &weights.i_layers, &i_trace, g_im);
    Ok((
        l,
        DualNetGradients {
            r_layers: r_grads,
            i_layers: i_grads,
        },
    ))
}

/// Exact reverse-mode gradients of [`loss`]. Per-example gradients are
/// evaluated independently (in parallel when enabled) and reduced in batch
/// order, so the result is identical across thread counts.
pub fn backward(
    batch: &[TrainingExample],
    weights: &DualNetWeights,
    cfg: &TrainConfig,
) -> Result<(f64, DualNetGradients)> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let per_example = par_map(batch, |ex| example_gradients(ex, weights));
    let mut total = DualNetGradients::zeros(weights);
    let mut data_loss = 0.0;
    for item in per_example {
        let (l, g) = item?;
        data_loss += l;
        total.accumulate(&g);
    }
    // weight-decay term: d/dW of lambda * ||W||^2 (kernels only)
    if cfg.lambda > 0.0 {
        let decay = |grads: &mut Vec<ConvLayer>, layers: &[ConvLayer]| {
            for (g, w) in grads.iter_mut().zip(layers) {
                for (gk, wk) in g.kernel.iter_mut().zip(&w.kernel) {
                    *gk += 2.0 * cfg.lambda * wk;
                }
            }
        };
        decay(&mut total.r_layers, &weights.r_layers);
        decay(&mut total.i_layers, &weights.i_layers);
    }
    Ok((data_loss + cfg.lambda * weights.kernel_norm_sq(), total))
}

/// Per-epoch mean training loss and held-out validation loss.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

fn sgd_step(
    weights: &mut DualNetWeights,
    grads: &DualNetGradients,
    velocity: &mut DualNetGradients,
    cfg: &TrainConfig,
) {
    let momentum = match cfg.optimizer {
        Optimizer::PlainSgd => 0.0,
        Optimizer::MomentumSgd => cfg.momentum,
    };
    let update = |w: &mut Vec<ConvLayer>, g: &[ConvLayer], v: &mut Vec<ConvLayer>| {
        for ((wl, gl), vl) in w.iter_mut().zip(g).zip(v.iter_mut()) {
            for ((wk, gk), vk) in wl.kernel.iter_mut().zip(&gl.kernel).zip(vl.kernel.iter_mut()) {
                *vk = momentum * *vk + gk;
                *wk -= cfg.lr * *vk;
            }
            for ((wb, gb), vb) in wl.bias.iter_mut().zip(&gl.bias).zip(vl.bias.iter_mut()) {
                *vb = momentum * *vb + gb;
                *wb -= cfg.lr * *vb;
            }
        }
    };
    update(&mut weights.r_layers, &grads.r_layers, &mut velocity.r_layers);
    update(&mut weights.i_layers, &grads.i_layers, &mut velocity.i_layers);
}

/// Mini-batch SGD over a training set, with an optional held-out validation
/// set evaluated once per epoch. Shuffling, initialization, and reduction
/// order are all driven by `cfg.seed`, so training is bit-reproducible.
pub fn train(
    train_set: &[TrainingExample],
    val_set: &[TrainingExample],
    cfg: &TrainConfig,
) -> Result<(DualNetWeights, TrainHistory)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidParameter("empty training set".into()));
    }
    let spec = train_set[0].s_freq.spec().clone();
    cfg.arch.validate(&spec)?;

    let mut weights = DualNetWeights::init(&cfg.arch, cfg.seed);
    let mut velocity = DualNetGradients::zeros(&weights);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<TrainingExample> =
                chunk.iter().map(|&i| train_set[i].clone()).collect();
            let (l, grads) = backward(&batch, &weights, cfg)?;
            if !l.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            sgd_step(&mut weights, &grads, &mut velocity, cfg);
            epoch_loss += l;
            batches += 1;
        }
        history.train_loss.push(epoch_loss / batches as f64);
        if !val_set.is_empty() {
            history.val_loss.push(loss(val_set, &weights, cfg)?);
        }
    }
    Ok((weights, history))
}

/// Prediction outcome: the velocity, its deformation, and match diagnostics.
#[derive(Debug, Clone)]
pub struct PredictOutcome {
    pub v_pre: FreqVectorField,
    pub deformation: DeformationField,
    pub ssd_before: f64,
    pub ssd_after: f64,
    pub min_detjac: f64,
}

/// Forward pass on an image pair followed by geodesic shooting.
pub fn predict(
    source: &SpatialImage,
    target: &SpatialImage,
    weights: &DualNetWeights,
    cfg: &RegConfig,
) -> Result<PredictOutcome> {
    cfg.validate()?;
    let spec = cfg.band_spec()?;
    let s_freq = spatial_to_band(source, &spec)?;
    let t_freq = spatial_to_band(target, &spec)?;
    let v_pre = super::forward(&s_freq, &t_freq, weights)?;
    let op = cfg.operator()?;
    let deformation = shoot_to_deformation(&v_pre, &op, cfg.steps, &cfg.grid_dims())?;
    let warped = warp(source, &deformation)?;
    Ok(PredictOutcome {
        ssd_before: mean_ssd(source, target)?,
        ssd_after: mean_ssd(&warped, target)?,
        min_detjac: det_jacobian(&deformation).min(),
        v_pre,
        deformation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freq::BandSpec;
    use num_complex::Complex64;

    fn spec() -> BandSpec {
        BandSpec::square(2, 8, 32).unwrap()
    }

    fn toy_example(spec: &BandSpec, seed: u64) -> TrainingExample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rand_scalar = || {
            let coeffs: Vec<Complex64> = (0..spec.band_len())
                .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            FreqScalarField::from_coeffs(spec, coeffs).unwrap().symmetrize()
        };
        let s = rand_scalar();
        let t = rand_scalar();
        let v = FreqVectorField::from_components(vec![rand_scalar(), rand_scalar()])
            .unwrap()
            .scaled(0.1);
        TrainingExample::new(s, t, v).unwrap()
    }

    fn toy_cfg() -> TrainConfig {
        TrainConfig {
            arch: NetArch::two_layer(2, 4),
            batch: 4,
            epochs: 3,
            lr: 1e-3,
            lambda: 1e-4,
            seed: 42,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn perfect_prediction_zero_lambda_gives_zero_loss_and_gradient() {
        let spec = spec();
        let mut cfg = toy_cfg();
        cfg.lambda = 0.0;
        let weights = DualNetWeights::zeros(&cfg.arch);
        // with zero weights the prediction is zero; label zero matches it
        let ex = TrainingExample::new(
            toy_example(&spec, 1).s_freq,
            toy_example(&spec, 2).t_freq,
            FreqVectorField::zeros(&spec),
        )
        .unwrap();
        let l = loss(&[ex.clone()], &weights, &cfg).unwrap();
        assert_eq!(l, 0.0);
        let (_, grads) = backward(&[ex], &weights, &cfg).unwrap();
        let flat: f64 = grads
            .r_layers
            .iter()
            .chain(&grads.i_layers)
            .map(|l| l.kernel.iter().chain(&l.bias).map(|v| v.abs()).sum::<f64>())
            .sum();
        assert_eq!(flat, 0.0);
    }

    #[test]
    fn single_coefficient_residual_gives_squared_magnitude() {
        let spec = spec();
        let mut v_pre = FreqVectorField::zeros(&spec);
        let flat = spec.encode(&[5, 6]);
        v_pre.component_mut(0).coeffs_mut()[flat] = Complex64::new(3.0, 4.0);
        let v_opt = FreqVectorField::zeros(&spec);
        assert_eq!(velocity_loss(&v_pre, &v_opt), 25.0);
    }

    #[test]
    fn decoupled_loss_matches_complex_norm() {
        let spec = spec();
        for seed in 0..20 {
            let a = toy_example(&spec, seed).v_opt;
            let b = toy_example(&spec, seed + 1000).v_opt;
            let decoupled = velocity_loss(&a, &b);
            let complex: f64 = a
                .components()
                .iter()
                .zip(b.components())
                .map(|(x, y)| {
                    x.coeffs()
                        .iter()
                        .zip(y.coeffs())
                        .map(|(p, q)| (p - q).norm_sqr())
                        .sum::<f64>()
                })
                .sum();
            assert!((decoupled - complex).abs() <= 1e-12 * complex.max(1.0));
        }
    }

    #[test]
    fn lambda_gradient_is_two_lambda_w() {
        let spec = spec();
        let cfg = TrainConfig {
            lambda: 0.37,
            ..toy_cfg()
        };
        let weights = DualNetWeights::init(&cfg.arch, 7);
        // zero label and zero input: data term contributes nothing through
        // the kernels only if the input planes are zero
        let zero_field = FreqScalarField::zeros(&spec);
        let ex = TrainingExample::new(
            zero_field.clone(),
            zero_field.clone(),
            FreqVectorField::zeros(&spec),
        )
        .unwrap();
        // biases make the data gradient nonzero in general; zero them
        let mut weights = weights;
        for l in weights.r_layers.iter_mut().chain(weights.i_layers.iter_mut()) {
            for b in &mut l.bias {
                *b = 0.0;
            }
        }
        let (_, grads) = backward(&[ex], &weights, &cfg).unwrap();
        for (g, w) in grads.r_layers.iter().zip(&weights.r_layers) {
            for (gk, wk) in g.kernel.iter().zip(&w.kernel) {
                assert!((gk - 2.0 * cfg.lambda * wk).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let spec = spec();
        let cfg = toy_cfg();
        let batch: Vec<TrainingExample> = (0..3).map(|i| toy_example(&spec, i)).collect();
        let weights = DualNetWeights::init(&cfg.arch, 11);
        let (_, grads) = backward(&batch, &weights, &cfg).unwrap();

        let eps = 1e-6;
        let mut checked = 0;
        // probe a few kernel and bias coordinates in every layer of both nets
        for (net, glayers) in [(0usize, &grads.r_layers), (1, &grads.i_layers)] {
            for layer in 0..cfg.arch.layers.len() {
                for &(is_bias, probe) in &[(false, 0usize), (false, 5), (true, 0)] {
                    let mut wp = weights.clone();
                    let mut wm = weights.clone();
                    {
                        let (lp, lm) = if net == 0 {
                            (&mut wp.r_layers[layer], &mut wm.r_layers[layer])
                        } else {
                            (&mut wp.i_layers[layer], &mut wm.i_layers[layer])
                        };
                        if is_bias {
                            lp.bias[probe] += eps;
                            lm.bias[probe] -= eps;
                        } else {
                            lp.kernel[probe] += eps;
                            lm.kernel[probe] -= eps;
                        }
                    }
                    let fd = (loss(&batch, &wp, &cfg).unwrap()
                        - loss(&batch, &wm, &cfg).unwrap())
                        / (2.0 * eps);
                    let got = if is_bias {
                        glayers[layer].bias[probe]
                    } else {
                        glayers[layer].kernel[probe]
                    };
                    assert!(
                        (fd - got).abs() <= 1e-4 * fd.abs().max(1e-8),
                        "net {net} layer {layer} bias={is_bias} probe {probe}: fd {fd} vs {got}"
                    );
                    checked += 1;
                }
            }
        }
        assert!(checked >= 12);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let spec = spec();
        let examples: Vec<TrainingExample> = (0..6).map(|i| toy_example(&spec, i)).collect();
        let cfg = toy_cfg();
        let (w1, h1) = train(&examples, &examples[..2], &cfg).unwrap();
        let (w2, h2) = train(&examples, &examples[..2], &cfg).unwrap();
        assert_eq!(w1, w2);
        assert_eq!(h1.train_loss, h2.train_loss);
        assert_eq!(h1.val_loss, h2.val_loss);
    }

    #[test]
    fn overfits_a_tiny_set() {
        // labels carry a simple structure (scaled spectral difference), so a
        // small net must be able to drive the training loss toward zero
        let spec = spec();
        let examples: Vec<TrainingExample> = (0..10)
            .map(|i| {
                let base = toy_example(&spec, 100 + i);
                let mut diff = base.s_freq.clone();
                diff.axpy(-1.0, &base.t_freq);
                let v = FreqVectorField::from_components(vec![
                    {
                        let mut c = diff.clone();
                        c.scale(0.1);
                        c
                    },
                    {
                        let mut c = diff.clone();
                        c.scale(-0.05);
                        c
                    },
                ])
                .unwrap()
                .symmetrize();
                TrainingExample::new(base.s_freq, base.t_freq, v).unwrap()
            })
            .collect();
        let cfg = TrainConfig {
            arch: NetArch::two_layer(2, 16),
            batch: 10,
            epochs: 200,
            lr: 2e-3,
            lambda: 0.0,
            seed: 3,
            ..TrainConfig::default()
        };
        let (_, history) = train(&examples, &[], &cfg).unwrap();
        let first = history.train_loss[0];
        let last = *history.train_loss.last().unwrap();
        assert!(
            last <= 0.1 * first,
            "expected >= 90% loss reduction, got {first} -> {last}"
        );
    }

    #[test]
    fn empty_batch_is_rejected() {
        let cfg = toy_cfg();
        let weights = DualNetWeights::zeros(&cfg.arch);
        assert!(loss(&[], &weights, &cfg).is_err());
        assert!(backward(&[], &weights, &cfg).is_err());
    }
}
