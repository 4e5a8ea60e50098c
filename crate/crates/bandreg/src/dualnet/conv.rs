//! Convolution primitives for the coefficient-block networks.
//!
//! Feature maps are tiny (one band block per channel), so convolutions are
//! plain direct loops. Kernels are real; the complex variants convolve the
//! real and imaginary planes independently with the same kernel.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spatial::decode;

/// Channel-major real feature maps over a small row-major grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Planes {
    pub channels: usize,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Planes {
    pub fn zeros(channels: usize, dims: &[usize]) -> Self {
        Planes {
            channels,
            dims: dims.to_vec(),
            data: vec![0.0; channels * dims.iter().product::<usize>()],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn plane(&self, ch: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[ch * n..(ch + 1) * n]
    }

    pub fn plane_mut(&mut self, ch: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[ch * n..(ch + 1) * n]
    }
}

/// Channel-major complex feature maps; the complex-arithmetic counterpart of
/// [`Planes`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexPlanes {
    pub channels: usize,
    pub dims: Vec<usize>,
    pub data: Vec<Complex64>,
}

impl ComplexPlanes {
    pub fn zeros(channels: usize, dims: &[usize]) -> Self {
        ComplexPlanes {
            channels,
            dims: dims.to_vec(),
            data: vec![Complex64::ZERO; channels * dims.iter().product::<usize>()],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn plane(&self, ch: usize) -> &[Complex64] {
        let n = self.plane_len();
        &self.data[ch * n..(ch + 1) * n]
    }

    pub fn plane_mut(&mut self, ch: usize) -> &mut [Complex64] {
        let n = self.plane_len();
        &mut self.data[ch * n..(ch + 1) * n]
    }

    /// Split into (real, imaginary) plane stacks.
    pub fn split(&self) -> (Planes, Planes) {
        let mut re = Planes::zeros(self.channels, &self.dims);
        let mut im = Planes::zeros(self.channels, &self.dims);
        for (i, c) in self.data.iter().enumerate() {
            re.data[i] = c.re;
            im.data[i] = c.im;
        }
        (re, im)
    }

    pub fn combine(re: &Planes, im: &Planes) -> Result<Self> {
        if re.channels != im.channels || re.dims != im.dims {
            return Err(Error::ShapeMismatch(
                "real/imaginary plane stacks disagree".into(),
            ));
        }
        let mut out = ComplexPlanes::zeros(re.channels, &re.dims);
        for i in 0..out.data.len() {
            out.data[i] = Complex64::new(re.data[i], im.data[i]);
        }
        Ok(out)
    }
}

/// Output grid size of a same-padded strided convolution.
pub fn conv_out_dims(in_dims: &[usize], kernel: usize, stride: usize) -> Vec<usize> {
    let pad = (kernel - 1) / 2;
    in_dims
        .iter()
        .map(|&n| (n + 2 * pad - kernel) / stride + 1)
        .collect()
}

/// Direct convolution with zero padding `(kernel - 1) / 2` per side.
/// `kernel` layout: `out_ch x in_ch x kernel^d`, row-major.
pub fn conv_forward(
    kernel: &[f64],
    bias: &[f64],
    input: &Planes,
    in_ch: usize,
    out_ch: usize,
    ksize: usize,
    stride: usize,
) -> Result<Planes> {
    if input.channels != in_ch {
        return Err(Error::ShapeMismatch(format!(
            "conv input has {} channels, kernel expects {in_ch}",
            input.channels
        )));
    }
    if ksize % 2 == 0 || stride == 0 {
        return Err(Error::InvalidParameter(
            "kernel size must be odd and stride positive".into(),
        ));
    }
    let d = input.dims.len();
    let kvol = ksize.pow(d as u32);
    if kernel.len() != out_ch * in_ch * kvol || bias.len() != out_ch {
        return Err(Error::ShapeMismatch("kernel/bias payload size".into()));
    }
    let out_dims = conv_out_dims(&input.dims, ksize, stride);
    let pad = ((ksize - 1) / 2) as i64;
    let mut out = Planes::zeros(out_ch, &out_dims);

    let out_len: usize = out_dims.iter().product();
    let kdims = vec![ksize; d];
    let mut opos = vec![0usize; d];
    let mut kpos = vec![0usize; d];
    for o in 0..out_ch {
        for oflat in 0..out_len {
            decode(&out_dims, oflat, &mut opos);
            let mut acc = bias[o];
            for i in 0..in_ch {
                let plane = input.plane(i);
                let kbase = (o * in_ch + i) * kvol;
                'kernel: for kflat in 0..kvol {
                    decode(&kdims, kflat, &mut kpos);
                    let mut iflat = 0usize;
                    for axis in 0..d {
                        let p =
                            (opos[axis] * stride) as i64 + kpos[axis] as i64 - pad;
                        if p < 0 || p >= input.dims[axis] as i64 {
                            continue 'kernel;
                        }
                        iflat = iflat * input.dims[axis] + p as usize;
                    }
                    acc += kernel[kbase + kflat] * plane[iflat];
                }
            }
            out.plane_mut(o)[oflat] = acc;
        }
    }
    Ok(out)
}

/// Gradients of [`conv_forward`] with respect to kernel, bias, and input.
pub fn conv_backward(
    kernel: &[f64],
    input: &Planes,
    grad_out: &Planes,
    in_ch: usize,
    out_ch: usize,
    ksize: usize,
    stride: usize,
) -> (Vec<f64>, Vec<f64>, Planes) {
    let d = input.dims.len();
    let kvol = ksize.pow(d as u32);
    let pad = ((ksize - 1) / 2) as i64;
    let out_dims = &grad_out.dims;
    let out_len: usize = out_dims.iter().product();
    let kdims = vec![ksize; d];

    let mut grad_kernel = vec![0.0; kernel.len()];
    let mut grad_bias = vec![0.0; out_ch];
    let mut grad_input = Planes::zeros(in_ch, &input.dims);

    let mut opos = vec![0usize; d];
    let mut kpos = vec![0usize; d];
    for o in 0..out_ch {
        let gplane = grad_out.plane(o);
        for oflat in 0..out_len {
            let g = gplane[oflat];
            if g == 0.0 {
                continue;
            }
            grad_bias[o] += g;
            decode(out_dims, oflat, &mut opos);
            for i in 0..in_ch {
                let iplane = input.plane(i);
                let kbase = (o * in_ch + i) * kvol;
                'kernel: for kflat in 0..kvol {
                    decode(&kdims, kflat, &mut kpos);
                    let mut iflat = 0usize;
                    for axis in 0..d {
                        let p = (opos[axis] * stride) as i64 + kpos[axis] as i64 - pad;
                        if p < 0 || p >= input.dims[axis] as i64 {
                            continue 'kernel;
                        }
                        iflat = iflat * input.dims[axis] + p as usize;
                    }
                    grad_kernel[kbase + kflat] += g * iplane[iflat];
                    grad_input.plane_mut(i)[iflat] += g * kernel[kbase + kflat];
                }
            }
        }
    }
    (grad_kernel, grad_bias, grad_input)
}

/// Complex convolution with a real kernel: the kernel is applied to the real
/// and imaginary planes independently and the results recombined.
pub fn complex_conv(
    x: &ComplexPlanes,
    kernel: &[f64],
    in_ch: usize,
    out_ch: usize,
    ksize: usize,
    stride: usize,
) -> Result<ComplexPlanes> {
    let (re, im) = x.split();
    let zero_bias = vec![0.0; out_ch];
    let out_re = conv_forward(kernel, &zero_bias, &re, in_ch, out_ch, ksize, stride)?;
    let out_im = conv_forward(kernel, &zero_bias, &im, in_ch, out_ch, ksize, stride)?;
    ComplexPlanes::combine(&out_re, &out_im)
}

/// Rectifier applied to both planes of every neuron.
pub fn crelu(y: &ComplexPlanes) -> ComplexPlanes {
    let mut out = y.clone();
    for c in &mut out.data {
        *c = Complex64::new(c.re.max(0.0), c.im.max(0.0));
    }
    out
}
