//! The dual network: twin real-valued CNNs over the real and imaginary
//! coefficient planes.
//!
//! Both sub-networks share one architecture. The real net consumes the
//! stacked real planes of the source/target spectra and emits the real plane
//! of the predicted velocity; the imaginary net does the same for the
//! imaginary planes. Because convolution with a real kernel and the
//! plane-wise rectifier never mix planes, running the two nets is equivalent
//! to one complex-valued network when the kernels are tied.

use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dualnet::conv::{
    complex_conv, conv_backward, conv_forward, conv_out_dims, crelu, ComplexPlanes, Planes,
};
use crate::error::{Error, Result};
use crate::freq::{BandSpec, FreqScalarField, FreqVectorField};

/// One convolution layer: channel counts, odd kernel size, stride, and
/// whether a rectifier follows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub activate: bool,
}

/// Layer stack shared by the two sub-networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetArch {
    pub dim: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetArch {
    /// Stock architecture: 2 -> 16 -> 32 -> 32 -> d, 3^d kernels, stride 1,
    /// rectified between layers.
    pub fn default_for(dim: usize) -> Self {
        let chain = [2, 16, 32, 32, dim];
        let layers = chain
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                in_ch: w[0],
                out_ch: w[1],
                kernel: 3,
                stride: 1,
                activate: i + 2 < chain.len(),
            })
            .collect();
        NetArch { dim, layers }
    }

    /// Small stack for tests: 2 -> hidden -> d.
    pub fn two_layer(dim: usize, hidden: usize) -> Self {
        NetArch {
            dim,
            layers: vec![
                LayerSpec {
                    in_ch: 2,
                    out_ch: hidden,
                    kernel: 3,
                    stride: 1,
                    activate: true,
                },
                LayerSpec {
                    in_ch: hidden,
                    out_ch: dim,
                    kernel: 3,
                    stride: 1,
                    activate: false,
                },
            ],
        }
    }

    /// Check channel chaining and that the final feature map keeps the band
    /// shape of `spec` (the prediction must cover every retained frequency).
    pub fn validate(&self, spec: &BandSpec) -> Result<()> {
        if self.dim != spec.dim() {
            return Err(Error::ShapeMismatch(format!(
                "architecture dimension {} vs spec dimension {}",
                self.dim,
                spec.dim()
            )));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidParameter("architecture has no layers".into()));
        }
        if self.layers[0].in_ch != 2 {
            return Err(Error::ShapeMismatch(
                "first layer must take 2 channels (stacked source/target planes)".into(),
            ));
        }
        if self.layers.last().unwrap().out_ch != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "last layer must emit {} channels",
                self.dim
            )));
        }
        let mut dims = spec.band().to_vec();
        for (p, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_ch != pair[1].in_ch {
                return Err(Error::ShapeMismatch(format!(
                    "channel chain breaks between layers {p} and {}",
                    p + 1
                )));
            }
        }
        for layer in &self.layers {
            if layer.kernel % 2 == 0 || layer.kernel == 0 || layer.stride == 0 {
                return Err(Error::InvalidParameter(
                    "kernel sizes must be odd and strides positive".into(),
                ));
            }
            dims = conv_out_dims(&dims, layer.kernel, layer.stride);
        }
        if dims != spec.band() {
            return Err(Error::ShapeMismatch(format!(
                "network output grid {dims:?} does not match band {:?}",
                spec.band()
            )));
        }
        Ok(())
    }

    pub fn kernel_volume(&self, layer: usize) -> usize {
        self.layers[layer].kernel.pow(self.dim as u32)
    }
}

/// Kernels and biases of one convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    fn zeros_like(arch: &NetArch, layer: usize) -> Self {
        let spec = &arch.layers[layer];
        ConvLayer {
            kernel: vec![0.0; spec.out_ch * spec.in_ch * arch.kernel_volume(layer)],
            bias: vec![0.0; spec.out_ch],
        }
    }
}

/// Weights of the two structurally identical sub-networks.
#[derive(Debug, Clone, PartialEq)]
pub struct DualNetWeights {
    pub arch: NetArch,
    pub r_layers: Vec<ConvLayer>,
    pub i_layers: Vec<ConvLayer>,
}

impl DualNetWeights {
    /// Zero-initialized weights (predicts the zero velocity).
    pub fn zeros(arch: &NetArch) -> Self {
        let layers: Vec<ConvLayer> = (0..arch.layers.len())
            .map(|p| ConvLayer::zeros_like(arch, p))
            .collect();
        DualNetWeights {
            arch: arch.clone(),
            r_layers: layers.clone(),
            i_layers: layers,
        }
    }

    /// Seeded fan-in initialization: kernels uniform in [-k, k] with
    /// `k = 1/sqrt(in_ch * kernel_volume)`, biases zero.
    pub fn init(arch: &NetArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |fan_in: usize, len: usize| -> Vec<f64> {
            let k = 1.0 / (fan_in as f64).sqrt();
            (0..len).map(|_| rng.random_range(-k..k)).collect()
        };
        let mut build = |arch: &NetArch| -> Vec<ConvLayer> {
            (0..arch.layers.len())
                .map(|p| {
                    let spec = &arch.layers[p];
                    let kvol = arch.kernel_volume(p);
                    ConvLayer {
                        kernel: draw(spec.in_ch * kvol, spec.out_ch * spec.in_ch * kvol),
                        bias: vec![0.0; spec.out_ch],
                    }
                })
                .collect()
        };
        let r_layers = build(arch);
        let i_layers = build(arch);
        DualNetWeights {
            arch: arch.clone(),
            r_layers,
            i_layers,
        }
    }

    /// Copy the real-net kernels and biases into the imaginary net, giving a
    /// weight set with an exact single-complex-network equivalent.
    pub fn tie(&mut self) {
        self.i_layers = self.r_layers.clone();
    }

    /// Squared L2 norm of all kernels (biases excluded).
    pub fn kernel_norm_sq(&self) -> f64 {
        self.r_layers
            .iter()
            .chain(&self.i_layers)
            .map(|l| l.kernel.iter().map(|w| w * w).sum::<f64>())
            .sum()
    }
}

/// Per-layer inputs and pre-activation outputs retained for backprop.
pub(crate) struct SubnetTrace {
    pub inputs: Vec<Planes>,
    pub preact: Vec<Planes>,
    pub output: Planes,
}

pub(crate) fn subnet_forward(
    arch: &NetArch,
    layers: &[ConvLayer],
    input: Planes,
) -> Result<SubnetTrace> {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut preact = Vec::with_capacity(layers.len());
    let mut x = input;
    for (p, layer) in layers.iter().enumerate() {
        let spec = &arch.layers[p];
        let y = conv_forward(
            &layer.kernel,
            &layer.bias,
            &x,
            spec.in_ch,
            spec.out_ch,
            spec.kernel,
            spec.stride,
        )?;
        inputs.push(x);
        let activated = if spec.activate {
            let mut a = y.clone();
            for v in &mut a.data {
                *v = v.max(0.0);
            }
            a
        } else {
            y.clone()
        };
        preact.push(y);
        x = activated;
    }
    Ok(SubnetTrace {
        inputs,
        preact,
        output: x,
    })
}

/// Backprop one sub-network; returns per-layer (kernel, bias) gradients.
pub(crate) fn subnet_backward(
    arch: &NetArch,
    layers: &[ConvLayer],
    trace: &SubnetTrace,
    grad_output: Planes,
) -> Vec<ConvLayer> {
    let mut grads: Vec<ConvLayer> = (0..layers.len())
        .map(|p| ConvLayer::zeros_like(arch, p))
        .collect();
    let mut g = grad_output;
    for p in (0..layers.len()).rev() {
        let spec = &arch.layers[p];
        if spec.activate {
            for (gv, &pre) in g.data.iter_mut().zip(&trace.preact[p].data) {
                if pre <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        let (gk, gb, gi) = conv_backward(
            &layers[p].kernel,
            &trace.inputs[p],
            &g,
            spec.in_ch,
            spec.out_ch,
            spec.kernel,
            spec.stride,
        );
        grads[p].kernel = gk;
        grads[p].bias = gb;
        g = gi;
    }
    grads
}

/// Stack the real (or imaginary) planes of the source and target spectra as
/// a 2-channel input block.
pub(crate) fn input_planes(
    s: &FreqScalarField,
    t: &FreqScalarField,
    imaginary: bool,
) -> Planes {
    let dims = s.spec().band().to_vec();
    let mut p = Planes::zeros(2, &dims);
    for (i, c) in s.coeffs().iter().enumerate() {
        p.plane_mut(0)[i] = if imaginary { c.im } else { c.re };
    }
    for (i, c) in t.coeffs().iter().enumerate() {
        p.plane_mut(1)[i] = if imaginary { c.im } else { c.re };
    }
    p
}

/// Assemble the two sub-network outputs into a Hermitian-symmetrized
/// prediction.
pub(crate) fn combine_and_symmetrize(
    spec: &BandSpec,
    re: &Planes,
    im: &Planes,
) -> Result<FreqVectorField> {
    let d = spec.dim();
    if re.channels != d || im.channels != d || re.dims != spec.band() || im.dims != spec.band() {
        return Err(Error::ShapeMismatch(format!(
            "network emitted {}x{:?}, expected {d}x{:?}",
            re.channels,
            re.dims,
            spec.band()
        )));
    }
    let mut comps = Vec::with_capacity(d);
    for j in 0..d {
        let coeffs: Vec<Complex64> = re
            .plane(j)
            .iter()
            .zip(im.plane(j))
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect();
        comps.push(FreqScalarField::from_coeffs(spec, coeffs)?.symmetrize());
    }
    FreqVectorField::from_components(comps)
}

/// Adjoint of the symmetrization for the real plane: `(g + g∘mirror)/2`,
/// zero on the forced hyperplanes.
pub(crate) fn symmetrize_adjoint_planes(
    spec: &BandSpec,
    grad_re: &Planes,
    grad_im: &Planes,
) -> (Planes, Planes) {
    let d = spec.dim();
    let mut out_re = Planes::zeros(d, spec.band());
    let mut out_im = Planes::zeros(d, spec.band());
    let mut idx = vec![0usize; d];
    let mut mir = vec![0usize; d];
    for j in 0..d {
        for flat in 0..spec.band_len() {
            spec.decode(flat, &mut idx);
            if !spec.mirror(&idx, &mut mir) {
                continue;
            }
            let m = spec.encode(&mir);
            out_re.plane_mut(j)[flat] = 0.5 * (grad_re.plane(j)[flat] + grad_re.plane(j)[m]);
            out_im.plane_mut(j)[flat] = 0.5 * (grad_im.plane(j)[flat] - grad_im.plane(j)[m]);
        }
    }
    (out_re, out_im)
}

/// Prediction: run both sub-networks on the spectra of a pair and combine.
pub fn forward(
    s_freq: &FreqScalarField,
    t_freq: &FreqScalarField,
    weights: &DualNetWeights,
) -> Result<FreqVectorField> {
    s_freq.spec().ensure_matches(t_freq.spec(), "dual-net inputs")?;
    let spec = s_freq.spec();
    weights.arch.validate(spec)?;
    let r = subnet_forward(
        &weights.arch,
        &weights.r_layers,
        input_planes(s_freq, t_freq, false),
    )?;
    let i = subnet_forward(
        &weights.arch,
        &weights.i_layers,
        input_planes(s_freq, t_freq, true),
    )?;
    combine_and_symmetrize(spec, &r.output, &i.output)
}

/// Reference forward pass in explicit complex arithmetic: a chain of
/// [`complex_conv`] + complex bias + [`crelu`] with the real-net kernels.
/// Requires tied weights; the complex bias pairs the real-net bias with the
/// imaginary-net bias.
pub fn forward_complex_reference(
    s_freq: &FreqScalarField,
    t_freq: &FreqScalarField,
    weights: &DualNetWeights,
) -> Result<FreqVectorField> {
    let spec = s_freq.spec();
    weights.arch.validate(spec)?;
    for (r, i) in weights.r_layers.iter().zip(&weights.i_layers) {
        if r.kernel != i.kernel {
            return Err(Error::InvalidParameter(
                "complex reference path requires tied kernels".into(),
            ));
        }
    }

    let dims = spec.band().to_vec();
    let mut x = ComplexPlanes::zeros(2, &dims);
    for (i, (cs, ct)) in s_freq.coeffs().iter().zip(t_freq.coeffs()).enumerate() {
        x.plane_mut(0)[i] = *cs;
        x.plane_mut(1)[i] = *ct;
    }
    for (p, layer) in weights.r_layers.iter().enumerate() {
        let lspec = &weights.arch.layers[p];
        let mut y = complex_conv(
            &x,
            &layer.kernel,
            lspec.in_ch,
            lspec.out_ch,
            lspec.kernel,
            lspec.stride,
        )?;
        let plane_len = y.plane_len();
        for o in 0..lspec.out_ch {
            let bias = Complex64::new(layer.bias[o], weights.i_layers[p].bias[o]);
            for v in &mut y.plane_mut(o)[..plane_len] {
                *v += bias;
            }
        }
        x = if lspec.activate { crelu(&y) } else { y };
    }

    let (re, im) = x.split();
    combine_and_symmetrize(spec, &re, &im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freq::spatial_to_band;
    use crate::spatial::SpatialImage;

    fn spec() -> BandSpec {
        BandSpec::square(2, 8, 32).unwrap()
    }

    fn sample_inputs(spec: &BandSpec) -> (FreqScalarField, FreqScalarField) {
        let img_s = SpatialImage::from_fn(&[32, 32], |idx| {
            0.5 + 0.3 * ((idx[0] as f64 * 0.41).sin() * (idx[1] as f64 * 0.23).cos())
        });
        let img_t = SpatialImage::from_fn(&[32, 32], |idx| {
            0.5 + 0.3 * ((idx[0] as f64 * 0.29).cos() * (idx[1] as f64 * 0.37).sin())
        });
        (
            spatial_to_band(&img_s, spec).unwrap(),
            spatial_to_band(&img_t, spec).unwrap(),
        )
    }

    #[test]
    fn default_arch_validates_and_zero_weights_predict_zero() {
        let spec = spec();
        let arch = NetArch::default_for(2);
        arch.validate(&spec).unwrap();
        let w = DualNetWeights::zeros(&arch);
        let (s, t) = sample_inputs(&spec);
        let v = forward(&s, &t, &w).unwrap();
        assert_eq!(v.norm_sq(), 0.0);
    }

    #[test]
    fn forward_output_is_hermitian() {
        let spec = spec();
        let arch = NetArch::default_for(2);
        let w = DualNetWeights::init(&arch, 99);
        let (s, t) = sample_inputs(&spec);
        let v = forward(&s, &t, &w).unwrap();
        assert_eq!(v.spec(), &spec);
        assert_eq!(v.hermitian_residual(), 0.0);
    }

    #[test]
    fn dual_forward_equals_complex_reference_with_tied_weights() {
        let spec = spec();
        let arch = NetArch::two_layer(2, 6);
        let mut w = DualNetWeights::init(&arch, 5);
        w.tie();
        let (s, t) = sample_inputs(&spec);
        let dual = forward(&s, &t, &w).unwrap();
        let complex = forward_complex_reference(&s, &t, &w).unwrap();
        let diff = dual.sub(&complex).norm();
        assert!(diff < 1e-12, "dual vs complex forward differ by {diff}");
    }

    #[test]
    fn complex_reference_requires_tied_kernels() {
        let spec = spec();
        let arch = NetArch::two_layer(2, 4);
        let w = DualNetWeights::init(&arch, 6);
        let (s, t) = sample_inputs(&spec);
        assert!(forward_complex_reference(&s, &t, &w).is_err());
    }

    #[test]
    fn arch_mismatches_are_rejected() {
        let spec = spec();
        let mut arch = NetArch::default_for(2);
        arch.layers[0].in_ch = 3;
        assert!(arch.validate(&spec).is_err());

        let mut arch = NetArch::default_for(2);
        arch.layers[1].stride = 2; // shrinks the band grid
        assert!(arch.validate(&spec).is_err());

        let arch3 = NetArch::default_for(3);
        assert!(arch3.validate(&spec).is_err());
    }
}
