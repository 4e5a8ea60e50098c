//! Binary containers and PGM image I/O.
//!
//! All containers are little-endian with a 4-byte magic and a u32 version:
//!
//! * `BLFF` — bandlimited frequency vector field: d, band per axis, grid per
//!   axis, then interleaved (re, im) f64 coefficients in row-major centered
//!   order, component by component. A JSON sidecar (`<file>.json`) mirrors
//!   the header.
//! * `SPDF` — spatial deformation field: same header layout with band ==
//!   grid, then raw f64 displacement components.
//! * `SPIM` — spatial image: d, axis sizes, then the row-major f64 payload.
//! * `DFW1` — dual-net weights: dimension, architecture descriptor block,
//!   then raw f64 kernels and biases layer by layer, real net first. The
//!   sidecar carries the architecture and training metadata.
//!
//! Images can also be stored as 16-bit binary PGM (P5, big-endian samples),
//! quantizing intensities from [0, 1]; masks store raw label values.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dualnet::{ConvLayer, DualNetWeights, LayerSpec, NetArch};
use crate::error::{Error, Result};
use crate::freq::{BandSpec, FreqScalarField, FreqVectorField};
use crate::shooting::DeformationField;
use crate::spatial::{LabelMask, SpatialImage};

const VERSION: u32 = 1;

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8], path: &Path) -> Self {
        Cursor {
            buf,
            pos: 0,
            path: path.display().to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(&self.path, "truncated payload"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::format(
                &self.path,
                format!("bad magic {:?}, expected {:?}", got, magic),
            ));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                &self.path,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldSidecar {
    magic: String,
    version: u32,
    dim: usize,
    band: Vec<usize>,
    grid: Vec<usize>,
}

fn write_sidecar(path: &Path, sidecar: &impl Serialize) -> Result<()> {
    let mut name = path.as_os_str().to_os_string();
    name.push(".json");
    let body = serde_json::to_vec_pretty(sidecar)?;
    write_file(Path::new(&name), &body)
}

/// Serialize a frequency vector field (`BLFF`).
pub fn save_field(path: &Path, field: &FreqVectorField) -> Result<()> {
    let spec = field.spec();
    let mut out = Vec::new();
    out.extend_from_slice(b"BLFF");
    push_u32(&mut out, VERSION);
    push_u32(&mut out, spec.dim() as u32);
    for &b in spec.band() {
        push_u32(&mut out, b as u32);
    }
    for &g in spec.grid() {
        push_u32(&mut out, g as u32);
    }
    for comp in field.components() {
        for c in comp.coeffs() {
            push_f64(&mut out, c.re);
            push_f64(&mut out, c.im);
        }
    }
    write_file(path, &out)?;
    write_sidecar(
        path,
        &FieldSidecar {
            magic: "BLFF".into(),
            version: VERSION,
            dim: spec.dim(),
            band: spec.band().to_vec(),
            grid: spec.grid().to_vec(),
        },
    )
}

pub fn load_field(path: &Path) -> Result<FreqVectorField> {
    let bytes = read_file(path)?;
    let mut cur = Cursor::new(&bytes, path);
    cur.expect_magic(b"BLFF")?;
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::format(
            path.display().to_string(),
            format!("unsupported version {version}"),
        ));
    }
    let d = cur.u32()? as usize;
    if !(2..=3).contains(&d) {
        return Err(Error::format(path.display().to_string(), "bad dimension"));
    }
    let mut band = vec![0usize; d];
    for b in &mut band {
        *b = cur.u32()? as usize;
    }
    let mut grid = vec![0usize; d];
    for g in &mut grid {
        *g = cur.u32()? as usize;
    }
    let spec = BandSpec::new(&band, &grid)?;
    let mut comps = Vec::with_capacity(d);
    for _ in 0..d {
        let mut coeffs = Vec::with_capacity(spec.band_len());
        for _ in 0..spec.band_len() {
            let re = cur.f64()?;
            let im = cur.f64()?;
            coeffs.push(Complex64::new(re, im));
        }
        comps.push(FreqScalarField::from_coeffs(&spec, coeffs)?);
    }
    cur.finish()?;
    FreqVectorField::from_components(comps)
}

/// Serialize a deformation field (`SPDF`).
pub fn save_deformation(path: &Path, psi: &DeformationField) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(b"SPDF");
    push_u32(&mut out, VERSION);
    push_u32(&mut out, psi.dim() as u32);
    for &g in psi.dims() {
        push_u32(&mut out, g as u32);
    }
    for &g in psi.dims() {
        push_u32(&mut out, g as u32);
    }
    for comp in psi.displacement() {
        for &v in comp.data() {
            push_f64(&mut out, v);
        }
    }
    write_file(path, &out)?;
    write_sidecar(
        path,
        &FieldSidecar {
            magic: "SPDF".into(),
            version: VERSION,
            dim: psi.dim(),
            band: psi.dims().to_vec(),
            grid: psi.dims().to_vec(),
        },
    )
}

pub fn load_deformation(path: &Path) -> Result<DeformationField> {
    let bytes = read_file(path)?;
    let mut cur = Cursor::new(&bytes, path);
    cur.expect_magic(b"SPDF")?;
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::format(path.display().to_string(), "unsupported version"));
    }
    let d = cur.u32()? as usize;
    let mut dims = vec![0usize; d];
    for g in &mut dims {
        *g = cur.u32()? as usize;
    }
    let mut grid = vec![0usize; d];
    for g in &mut grid {
        *g = cur.u32()? as usize;
    }
    if dims != grid {
        return Err(Error::format(
            path.display().to_string(),
            "deformation header band/grid disagree",
        ));
    }
    let n: usize = dims.iter().product();
    let mut comps = Vec::with_capacity(d);
    for _ in 0..d {
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(cur.f64()?);
        }
        comps.push(SpatialImage::from_data(&dims, data)?);
    }
    cur.finish()?;
    DeformationField::from_displacement(comps)
}

/// Serialize a spatial image in the raw f64 container (`SPIM`).
pub fn save_image_spim(path: &Path, img: &SpatialImage) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(b"SPIM");
    push_u32(&mut out, VERSION);
    push_u32(&mut out, img.dims().len() as u32);
    for &g in img.dims() {
        push_u32(&mut out, g as u32);
    }
    for &v in img.data() {
        push_f64(&mut out, v);
    }
    write_file(path, &out)
}

pub fn load_image_spim(path: &Path) -> Result<SpatialImage> {
    let bytes = read_file(path)?;
    let mut cur = Cursor::new(&bytes, path);
    cur.expect_magic(b"SPIM")?;
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::format(path.display().to_string(), "unsupported version"));
    }
    let d = cur.u32()? as usize;
    if d == 0 || d > 3 {
        return Err(Error::format(path.display().to_string(), "bad dimension"));
    }
    let mut dims = vec![0usize; d];
    for g in &mut dims {
        *g = cur.u32()? as usize;
    }
    let n: usize = dims.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(cur.f64()?);
    }
    cur.finish()?;
    SpatialImage::from_data(&dims, data)
}

/// Write a 2D image as 16-bit binary PGM, quantizing [0, 1] to [0, 65535].
pub fn save_image_pgm(path: &Path, img: &SpatialImage) -> Result<()> {
    if img.dims().len() != 2 {
        return Err(Error::ShapeMismatch("PGM images must be 2D".into()));
    }
    let (rows, cols) = (img.dims()[0], img.dims()[1]);
    let mut out = Vec::new();
    write!(out, "P5\n{cols} {rows}\n65535\n").expect("in-memory write");
    for &v in img.data() {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    write_file(path, &out)
}

/// Read a 16-bit binary PGM back to intensities in [0, 1].
pub fn load_image_pgm(path: &Path) -> Result<SpatialImage> {
    let (dims, samples) = read_pgm(path)?;
    let data = samples.iter().map(|&s| s as f64 / 65535.0).collect();
    SpatialImage::from_data(&dims, data)
}

/// Write a label mask as 16-bit binary PGM with raw label values.
pub fn save_mask_pgm(path: &Path, mask: &LabelMask) -> Result<()> {
    if mask.dims().len() != 2 {
        return Err(Error::ShapeMismatch("PGM masks must be 2D".into()));
    }
    let (rows, cols) = (mask.dims()[0], mask.dims()[1]);
    let mut out = Vec::new();
    write!(out, "P5\n{cols} {rows}\n65535\n").expect("in-memory write");
    for &v in mask.labels() {
        out.extend_from_slice(&v.to_be_bytes());
    }
    write_file(path, &out)
}

pub fn load_mask_pgm(path: &Path) -> Result<LabelMask> {
    let (dims, samples) = read_pgm(path)?;
    LabelMask::from_labels(&dims, samples)
}

fn read_pgm(path: &Path) -> Result<(Vec<usize>, Vec<u16>)> {
    let bytes = read_file(path)?;
    let pathstr = path.display().to_string();
    // header: "P5" <ws> width <ws> height <ws> maxval <single ws> payload
    let mut pos = 0usize;
    let token = |bytes: &[u8], pos: &mut usize| -> Result<String> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        // comment lines
        while *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::format(&pathstr, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if token(&bytes, &mut pos)? != "P5" {
        return Err(Error::format(&pathstr, "not a binary PGM (P5)"));
    }
    let cols: usize = token(&bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::format(&pathstr, "bad width"))?;
    let rows: usize = token(&bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::format(&pathstr, "bad height"))?;
    let maxval: usize = token(&bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::format(&pathstr, "bad maxval"))?;
    if maxval != 65535 {
        return Err(Error::format(&pathstr, "expected 16-bit PGM (maxval 65535)"));
    }
    pos += 1; // single whitespace after maxval
    let n = rows * cols;
    if bytes.len() < pos + 2 * n {
        return Err(Error::format(&pathstr, "truncated payload"));
    }
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        samples.push(u16::from_be_bytes([bytes[pos + 2 * i], bytes[pos + 2 * i + 1]]));
    }
    Ok((vec![rows, cols], samples))
}

/// Dispatch image save on extension: `.pgm` quantizes, anything else writes
/// the raw f64 container.
pub fn save_image(path: &Path, img: &SpatialImage) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => save_image_pgm(path, img),
        _ => save_image_spim(path, img),
    }
}

pub fn load_image(path: &Path) -> Result<SpatialImage> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => load_image_pgm(path),
        _ => load_image_spim(path),
    }
}

/// Training metadata carried by the weights sidecar.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct WeightsMeta {
    pub seed: u64,
    pub epochs: usize,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsSidecar {
    magic: String,
    version: u32,
    arch: NetArch,
    meta: WeightsMeta,
}

/// Serialize dual-net weights (`DFW1`), real net first.
pub fn save_weights(path: &Path, weights: &DualNetWeights, meta: &WeightsMeta) -> Result<()> {
    let arch = &weights.arch;
    let mut out = Vec::new();
    out.extend_from_slice(b"DFW1");
    push_u32(&mut out, VERSION);
    push_u32(&mut out, arch.dim as u32);
    push_u32(&mut out, arch.layers.len() as u32);
    for l in &arch.layers {
        push_u32(&mut out, l.in_ch as u32);
        push_u32(&mut out, l.out_ch as u32);
        push_u32(&mut out, l.kernel as u32);
        push_u32(&mut out, l.stride as u32);
        push_u32(&mut out, l.activate as u32);
    }
    for layers in [&weights.r_layers, &weights.i_layers] {
        for l in layers {
            for &w in &l.kernel {
                push_f64(&mut out, w);
            }
            for &b in &l.bias {
                push_f64(&mut out, b);
            }
        }
    }
    write_file(path, &out)?;
    write_sidecar(
        path,
        &WeightsSidecar {
            magic: "DFW1".into(),
            version: VERSION,
            arch: arch.clone(),
            meta: meta.clone(),
        },
    )
}

pub fn load_weights(path: &Path) -> Result<DualNetWeights> {
    let bytes = read_file(path)?;
    let mut cur = Cursor::new(&bytes, path);
    cur.expect_magic(b"DFW1")?;
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::format(path.display().to_string(), "unsupported version"));
    }
    let dim = cur.u32()? as usize;
    let n_layers = cur.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        layers.push(LayerSpec {
            in_ch: cur.u32()? as usize,
            out_ch: cur.u32()? as usize,
            kernel: cur.u32()? as usize,
            stride: cur.u32()? as usize,
            activate: cur.u32()? != 0,
        });
    }
    let arch = NetArch { dim, layers };
    let read_net = |cur: &mut Cursor| -> Result<Vec<ConvLayer>> {
        let mut out = Vec::with_capacity(arch.layers.len());
        for (p, l) in arch.layers.iter().enumerate() {
            let kvol = arch.kernel_volume(p);
            let mut kernel = Vec::with_capacity(l.out_ch * l.in_ch * kvol);
            for _ in 0..l.out_ch * l.in_ch * kvol {
                kernel.push(cur.f64()?);
            }
            let mut bias = Vec::with_capacity(l.out_ch);
            for _ in 0..l.out_ch {
                bias.push(cur.f64()?);
            }
            out.push(ConvLayer { kernel, bias });
        }
        Ok(out)
    };
    let r_layers = read_net(&mut cur)?;
    let i_layers = read_net(&mut cur)?;
    cur.finish()?;
    Ok(DualNetWeights {
        arch,
        r_layers,
        i_layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dualnet::NetArch;
    use crate::freq::BandSpec;
    use std::path::PathBuf;

    fn tmp(name: &str) -> PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("bandreg-io-{}-{name}", std::process::id()));
        p
    }

    #[test]
    fn field_roundtrip_is_exact() {
        let spec = BandSpec::square(2, 4, 16).unwrap();
        let mut v = FreqVectorField::zeros(&spec);
        for (i, c) in v.component_mut(0).coeffs_mut().iter_mut().enumerate() {
            *c = Complex64::new(i as f64 * 0.1, -(i as f64) * 0.2);
        }
        let v = v.symmetrize();
        let path = tmp("field.blff");
        save_field(&path, &v).unwrap();
        let back = load_field(&path).unwrap();
        assert_eq!(v, back);
        // sidecar exists
        let sidecar = format!("{}.json", path.display());
        assert!(std::path::Path::new(&sidecar).exists());
    }

    #[test]
    fn image_spim_roundtrip_is_exact() {
        let img = SpatialImage::from_fn(&[5, 7], |idx| idx[0] as f64 * 0.31 - idx[1] as f64);
        let path = tmp("img.spim");
        save_image_spim(&path, &img).unwrap();
        assert_eq!(load_image_spim(&path).unwrap(), img);
    }

    #[test]
    fn pgm_roundtrip_is_exact_on_quantized_images() {
        let img = SpatialImage::from_fn(&[6, 4], |idx| {
            ((idx[0] * 4 + idx[1]) as f64 * 1000.0 / 65535.0).min(1.0)
        });
        let path = tmp("img.pgm");
        save_image_pgm(&path, &img).unwrap();
        let back = load_image_pgm(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_pgm_roundtrip_keeps_labels() {
        let mut mask = LabelMask::zeros(&[3, 3]);
        mask.labels_mut()[4] = 2;
        mask.labels_mut()[1] = 1;
        let path = tmp("mask.pgm");
        save_mask_pgm(&path, &mask).unwrap();
        assert_eq!(load_mask_pgm(&path).unwrap(), mask);
    }

    #[test]
    fn weights_roundtrip_is_exact() {
        let arch = NetArch::two_layer(2, 3);
        let w = DualNetWeights::init(&arch, 9);
        let path = tmp("weights.dfw");
        save_weights(&path, &w, &WeightsMeta::default()).unwrap();
        assert_eq!(load_weights(&path).unwrap(), w);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let path = tmp("bad.blff");
        std::fs::write(&path, b"NOPE0000").unwrap();
        match load_field(&path) {
            Err(Error::Format { .. }) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let spec = BandSpec::square(2, 4, 16).unwrap();
        let v = FreqVectorField::zeros(&spec);
        let path = tmp("trunc.blff");
        save_field(&path, &v).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        match load_field(&path) {
            Err(Error::Format { reason, .. }) => assert!(reason.contains("truncated")),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn deformation_roundtrip_is_exact() {
        let psi = DeformationField::from_displacement(vec![
            SpatialImage::from_fn(&[4, 4], |idx| idx[0] as f64 * 0.1),
            SpatialImage::from_fn(&[4, 4], |idx| -(idx[1] as f64) * 0.2),
        ])
        .unwrap();
        let path = tmp("psi.spdf");
        save_deformation(&path, &psi).unwrap();
        assert_eq!(load_deformation(&path).unwrap(), psi);
    }
}
