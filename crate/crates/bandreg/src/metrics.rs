//! Evaluation and reporting: Dice overlap, the convolution-layer cost model,
//! and the optimizer-vs-predictor timing harness.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dualnet::{predict, DualNetWeights, NetArch};
use crate::error::{Error, Result};
use crate::parallel::with_thread_limit;
use crate::registration::{register, RegConfig};
use crate::spatial::LabelMask;

/// Per-label Dice scores and their mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiceReport {
    pub per_label: BTreeMap<u16, f64>,
    pub mean: f64,
    /// Requested labels absent from both masks.
    pub skipped: Vec<u16>,
}

/// Dice over an explicit label set: `2 |A ∩ B| / (|A| + |B|)` per label.
/// Labels present in neither mask are skipped with a note.
pub fn dice_with_labels(a: &LabelMask, b: &LabelMask, labels: &[u16]) -> Result<DiceReport> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "dice over {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut per_label = BTreeMap::new();
    let mut skipped = Vec::new();
    for &label in labels {
        let mut count_a = 0usize;
        let mut count_b = 0usize;
        let mut overlap = 0usize;
        for (&x, &y) in a.labels().iter().zip(b.labels()) {
            let in_a = x == label;
            let in_b = y == label;
            count_a += in_a as usize;
            count_b += in_b as usize;
            overlap += (in_a && in_b) as usize;
        }
        if count_a + count_b == 0 {
            skipped.push(label);
        } else {
            per_label.insert(label, 2.0 * overlap as f64 / (count_a + count_b) as f64);
        }
    }
    let mean = if per_label.is_empty() {
        0.0
    } else {
        per_label.values().sum::<f64>() / per_label.len() as f64
    };
    Ok(DiceReport {
        per_label,
        mean,
        skipped,
    })
}

/// Dice over every nonzero label present in either mask.
pub fn dice(a: &LabelMask, b: &LabelMask) -> Result<DiceReport> {
    let mut labels: Vec<u16> = a
        .labels()
        .iter()
        .chain(b.labels())
        .copied()
        .filter(|&l| l != 0)
        .collect();
    labels.sort_unstable();
    labels.dedup();
    dice_with_labels(a, b, &labels)
}

/// One convolution layer in the cost model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub out_positions: usize,
    pub macs: f64,
}

/// Multiply-accumulate model `sum_p b_{p-1} h_p^d b_p |output_p|`, with the
/// output size counted as the number of emitted elements.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostModel {
    pub layers: Vec<CostLayer>,
    pub total: f64,
}

fn cost_at(arch: &NetArch, dims: &[usize]) -> CostModel {
    let mut cur = dims.to_vec();
    let mut layers = Vec::with_capacity(arch.layers.len());
    let mut total = 0.0;
    for (p, l) in arch.layers.iter().enumerate() {
        cur = crate::dualnet::conv_out_dims(&cur, l.kernel, l.stride);
        let out_positions: usize = cur.iter().product();
        let kvol = arch.kernel_volume(p) as f64;
        let macs = l.in_ch as f64 * kvol * l.out_ch as f64 * out_positions as f64;
        total += macs;
        layers.push(CostLayer {
            in_ch: l.in_ch,
            out_ch: l.out_ch,
            kernel: l.kernel,
            out_positions,
            macs,
        });
    }
    CostModel { layers, total }
}

/// Evaluate the cost model at full-resolution and bandlimited feature sizes;
/// returns `(full, band, full/band ratio)`.
pub fn layer_cost(
    arch: &NetArch,
    full_dims: &[usize],
    band_dims: &[usize],
) -> Result<(CostModel, CostModel, f64)> {
    if full_dims.len() != arch.dim || band_dims.len() != arch.dim {
        return Err(Error::ShapeMismatch(format!(
            "dims rank vs architecture dimension {}",
            arch.dim
        )));
    }
    if full_dims.iter().chain(band_dims).any(|&v| v == 0) {
        return Err(Error::InvalidParameter("dims must be positive".into()));
    }
    let full = cost_at(arch, full_dims);
    let band = cost_at(arch, band_dims);
    let ratio = full.total / band.total;
    Ok((full, band, ratio))
}

/// One timed run in the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingRow {
    pub pair_id: usize,
    pub method: String,
    pub wall_ms: f64,
    pub final_ssd: f64,
    pub min_detjac: f64,
}

/// Optimization-vs-prediction wall-clock comparison on a shared pair set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
    pub median_register_ms: f64,
    pub median_predict_ms: f64,
    pub pair_count: usize,
    pub config_hash: String,
}

impl TimingReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair_id,method,wall_ms,final_ssd,min_detjac\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.3},{:.6e},{:.6e}\n",
                r.pair_id, r.method, r.wall_ms, r.final_ssd, r.min_detjac
            ));
        }
        out
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite timing values"));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Short stable identifier of a serializable config.
pub fn config_hash(cfg: &impl Serialize) -> String {
    let body = serde_json::to_vec(cfg).expect("config serialization");
    let digest = Sha256::digest(&body);
    let hex = format!("{digest:x}");
    hex[..16].to_string()
}

/// Time `register` and `predict` on the same pairs. The measured region is
/// pinned to one worker so medians compare like with like.
pub fn timing_report(
    pairs: &[(crate::spatial::SpatialImage, crate::spatial::SpatialImage)],
    cfg: &RegConfig,
    weights: &DualNetWeights,
) -> Result<TimingReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidParameter("no pairs to time".into()));
    }
    let mut rows = Vec::with_capacity(pairs.len() * 2);
    let mut reg_times = Vec::with_capacity(pairs.len());
    let mut pre_times = Vec::with_capacity(pairs.len());
    with_thread_limit(1, || -> Result<()> {
        for (pair_id, (s, t)) in pairs.iter().enumerate() {
            let start = Instant::now();
            let reg = register(s, t, cfg)?;
            let reg_ms = start.elapsed().as_secs_f64() * 1e3;
            reg_times.push(reg_ms);
            rows.push(TimingRow {
                pair_id,
                method: "register".into(),
                wall_ms: reg_ms,
                final_ssd: reg.final_ssd,
                min_detjac: reg.min_detjac,
            });

            let start = Instant::now();
            let pred = predict(s, t, weights, cfg)?;
            let pre_ms = start.elapsed().as_secs_f64() * 1e3;
            pre_times.push(pre_ms);
            rows.push(TimingRow {
                pair_id,
                method: "predict".into(),
                wall_ms: pre_ms,
                final_ssd: pred.ssd_after,
                min_detjac: pred.min_detjac,
            });
        }
        Ok(())
    })?;
    Ok(TimingReport {
        rows,
        median_register_ms: median(&reg_times),
        median_predict_ms: median(&pre_times),
        pair_count: pairs.len(),
        config_hash: config_hash(cfg),
    })
}
