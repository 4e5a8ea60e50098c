//! Labeled datasets: ground-truth generation via the registration optimizer,
//! train/val/test splits, and directory-backed persistence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::bulleye::BullEye;
use crate::dualnet::TrainingExample;
use crate::error::{Error, Result};
use crate::freq::spatial_to_band;
use crate::io;
use crate::parallel::{par_map, with_thread_limit};
use crate::registration::{register, RegConfig};
use crate::spatial::{LabelMask, SpatialImage};

/// A source/target pair queued for labeling, masks optional.
#[derive(Debug, Clone)]
pub struct ImagePair {
    pub source: SpatialImage,
    pub target: SpatialImage,
    pub source_mask: Option<LabelMask>,
    pub target_mask: Option<LabelMask>,
}

impl ImagePair {
    pub fn from_bulleyes(source: &BullEye, target: &BullEye) -> Self {
        ImagePair {
            source: source.image.clone(),
            target: target.image.clone(),
            source_mask: Some(source.mask.clone()),
            target_mask: Some(target.mask.clone()),
        }
    }
}

/// Optimizer diagnostics kept with every accepted label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairDiagnostics {
    pub initial_ssd: f64,
    pub final_ssd: f64,
    pub min_detjac: f64,
    pub iterations: usize,
    pub converged: bool,
    pub backtracking_exhausted: bool,
}

/// One labeled pair with its spatial data retained for evaluation.
#[derive(Debug, Clone)]
pub struct LabeledPair {
    pub source: SpatialImage,
    pub target: SpatialImage,
    pub source_mask: Option<LabelMask>,
    pub target_mask: Option<LabelMask>,
    pub example: TrainingExample,
    pub diagnostics: PairDiagnostics,
}

/// Disjoint index sets covering all examples.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n {
                return Err(Error::InvalidParameter(format!(
                    "split index {i} out of range for {n} examples"
                )));
            }
            if seen[i] {
                return Err(Error::InvalidParameter(format!(
                    "split index {i} appears twice"
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidParameter(
                "split does not cover every example".into(),
            ));
        }
        Ok(())
    }

    /// Deterministic split of `n` items: seeded shuffle, then test and val
    /// counts carved off the front.
    pub fn random(n: usize, seed: u64, val_frac: f64, test_frac: f64) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x517f_17e5);
        order.shuffle(&mut rng);
        let n_test = (n as f64 * test_frac).round() as usize;
        let n_val = (n as f64 * val_frac).round() as usize;
        let test = order[..n_test].to_vec();
        let val = order[n_test..n_test + n_val].to_vec();
        let train = order[n_test + n_val..].to_vec();
        SplitSpec { train, val, test }
    }

    /// Fixed counts from the front of the natural order (test last).
    pub fn by_counts(train: usize, val: usize, test: usize) -> Self {
        SplitSpec {
            train: (0..train).collect(),
            val: (train..train + val).collect(),
            test: (train + val..train + val + test).collect(),
        }
    }
}

/// A pair dropped during labeling, with the reason.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExcludedPair {
    pub index: usize,
    pub reason: String,
}

/// Everything needed to regenerate the dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub reg_config: RegConfig,
    pub tool_version: String,
    pub excluded: Vec<ExcludedPair>,
    #[serde(default)]
    pub checksums: BTreeMap<String, String>,
}

/// In-memory labeled dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub pairs: Vec<LabeledPair>,
    pub split: SplitSpec,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn examples_for(&self, indices: &[usize]) -> Vec<TrainingExample> {
        indices.iter().map(|&i| self.pairs[i].example.clone()).collect()
    }

    pub fn train_examples(&self) -> Vec<TrainingExample> {
        self.examples_for(&self.split.train)
    }

    pub fn val_examples(&self) -> Vec<TrainingExample> {
        self.examples_for(&self.split.val)
    }

    pub fn test_pairs(&self) -> Vec<&LabeledPair> {
        self.split.test.iter().map(|&i| &self.pairs[i]).collect()
    }
}

/// Register every pair and keep those that converge to a diffeomorphic map.
///
/// Pairs run on a bounded worker pool (`workers == 0` uses the default);
/// failures and non-diffeomorphic results are excluded and logged in the
/// provenance, not fatal. The split is a deterministic function of
/// `(seed, accepted count)`.
pub fn make_labels(
    pairs: &[ImagePair],
    cfg: &RegConfig,
    workers: usize,
    seed: u64,
    val_frac: f64,
    test_frac: f64,
) -> Result<Dataset> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidParameter("no pairs to label".into()));
    }
    let spec = cfg.band_spec()?;
    let results = with_thread_limit(workers, || {
        par_map(pairs, |pair| -> Result<LabeledPair> {
            let reg = register(&pair.source, &pair.target, cfg)?;
            if reg.min_detjac <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "registration folded (min DetJac {:.3e})",
                    reg.min_detjac
                )));
            }
            let example = TrainingExample::new(
                spatial_to_band(&pair.source, &spec)?,
                spatial_to_band(&pair.target, &spec)?,
                reg.v_opt.clone(),
            )?;
            Ok(LabeledPair {
                source: pair.source.clone(),
                target: pair.target.clone(),
                source_mask: pair.source_mask.clone(),
                target_mask: pair.target_mask.clone(),
                example,
                diagnostics: PairDiagnostics {
                    initial_ssd: reg.initial_ssd,
                    final_ssd: reg.final_ssd,
                    min_detjac: reg.min_detjac,
                    iterations: reg.iterations,
                    converged: reg.converged,
                    backtracking_exhausted: reg.backtracking_exhausted,
                },
            })
        })
    });

    let mut accepted = Vec::new();
    let mut excluded = Vec::new();
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(lp) => accepted.push(lp),
            Err(e) => excluded.push(ExcludedPair {
                index,
                reason: e.to_string(),
            }),
        }
    }
    if accepted.is_empty() {
        return Err(Error::InvalidParameter(
            "every pair failed registration".into(),
        ));
    }
    let split = SplitSpec::random(accepted.len(), seed, val_frac, test_frac);
    Ok(Dataset {
        pairs: accepted,
        split,
        provenance: Provenance {
            seed,
            reg_config: cfg.clone(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            excluded,
            checksums: BTreeMap::new(),
        },
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ExampleRecord {
    source: String,
    target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_mask: Option<String>,
    label: String,
    diagnostics: PairDiagnostics,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    examples: Vec<ExampleRecord>,
    split: SplitSpec,
    provenance: Provenance,
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Write the dataset as a directory: `manifest.json` plus per-example binary
/// files, with sha256 checksums recorded in the provenance.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut records = Vec::with_capacity(dataset.pairs.len());
    let mut checksums = BTreeMap::new();
    for (i, pair) in dataset.pairs.iter().enumerate() {
        let stem = format!("examples/{i:04}");
        std::fs::create_dir_all(dir.join("examples"))
            .map_err(|e| Error::io(dir.display().to_string(), e))?;
        let source = format!("{stem}_source.spim");
        let target = format!("{stem}_target.spim");
        let label = format!("{stem}_label.blff");
        io::save_image_spim(&dir.join(&source), &pair.source)?;
        io::save_image_spim(&dir.join(&target), &pair.target)?;
        io::save_field(&dir.join(&label), &pair.example.v_opt)?;
        let mut record = ExampleRecord {
            source,
            target,
            source_mask: None,
            target_mask: None,
            label,
            diagnostics: pair.diagnostics.clone(),
        };
        if let Some(mask) = &pair.source_mask {
            let p = format!("{stem}_source_mask.pgm");
            io::save_mask_pgm(&dir.join(&p), mask)?;
            record.source_mask = Some(p);
        }
        if let Some(mask) = &pair.target_mask {
            let p = format!("{stem}_target_mask.pgm");
            io::save_mask_pgm(&dir.join(&p), mask)?;
            record.target_mask = Some(p);
        }
        for p in [Some(&record.source), Some(&record.target), Some(&record.label)]
            .into_iter()
            .flatten()
            .chain(record.source_mask.iter())
            .chain(record.target_mask.iter())
        {
            checksums.insert(p.clone(), sha256_hex(&dir.join(p))?);
        }
        records.push(record);
    }
    let mut provenance = dataset.provenance.clone();
    provenance.checksums = checksums;
    let manifest = DatasetManifest {
        examples: records,
        split: dataset.split.clone(),
        provenance,
    };
    let body = serde_json::to_vec_pretty(&manifest)?;
    std::fs::write(dir.join("manifest.json"), body)
        .map_err(|e| Error::io(dir.join("manifest.json").display().to_string(), e))
}

/// Load a dataset directory, verifying recorded checksums.
pub fn load_dataset(dir: &Path, reg_cfg: &RegConfig) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let body = std::fs::read(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let manifest: DatasetManifest = serde_json::from_slice(&body)?;
    let spec = reg_cfg.band_spec()?;

    let mut pairs = Vec::with_capacity(manifest.examples.len());
    for rec in &manifest.examples {
        let resolve = |rel: &String| -> Result<PathBuf> {
            let p = dir.join(rel);
            if !p.exists() {
                return Err(Error::format(p.display().to_string(), "referenced file missing"));
            }
            if let Some(expect) = manifest.provenance.checksums.get(rel) {
                let got = sha256_hex(&p)?;
                if &got != expect {
                    return Err(Error::format(
                        p.display().to_string(),
                        format!("checksum mismatch: {got} != {expect}"),
                    ));
                }
            }
            Ok(p)
        };
        let source = io::load_image_spim(&resolve(&rec.source)?)?;
        let target = io::load_image_spim(&resolve(&rec.target)?)?;
        let v_opt = io::load_field(&resolve(&rec.label)?)?;
        let source_mask = rec
            .source_mask
            .as_ref()
            .map(|p| io::load_mask_pgm(&resolve(p)?.as_path()))
            .transpose()?;
        let target_mask = rec
            .target_mask
            .as_ref()
            .map(|p| io::load_mask_pgm(&resolve(p)?.as_path()))
            .transpose()?;
        let example = TrainingExample::new(
            spatial_to_band(&source, &spec)?,
            spatial_to_band(&target, &spec)?,
            v_opt,
        )?;
        pairs.push(LabeledPair {
            source,
            target,
            source_mask,
            target_mask,
            example,
            diagnostics: rec.diagnostics.clone(),
        });
    }
    manifest.split.validate(pairs.len())?;
    Ok(Dataset {
        pairs,
        split: manifest.split,
        provenance: manifest.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::bulleye::gen_bulleye;

    fn tiny_cfg() -> RegConfig {
        RegConfig {
            band: 4,
            grid: 32,
            max_iters: 3,
            ..RegConfig::default()
        }
    }

    #[test]
    fn identical_pair_labels_to_near_zero_field() {
        let eyes = gen_bulleye(1, 1, 32).unwrap();
        let pair = ImagePair::from_bulleyes(&eyes[0], &eyes[0]);
        let ds = make_labels(&[pair], &tiny_cfg(), 1, 0, 0.0, 0.0).unwrap();
        assert_eq!(ds.pairs.len(), 1);
        assert!(ds.pairs[0].example.v_opt.norm() < 1e-8);
        assert!(ds.pairs[0].diagnostics.final_ssd < 1e-12);
    }

    #[test]
    fn provenance_records_config_and_split_is_deterministic() {
        let eyes = gen_bulleye(4, 2, 32).unwrap();
        let pairs: Vec<ImagePair> = eyes
            .chunks(2)
            .map(|c| ImagePair::from_bulleyes(&c[0], &c[1]))
            .collect();
        let cfg = tiny_cfg();
        let ds1 = make_labels(&pairs, &cfg, 1, 7, 0.0, 0.5).unwrap();
        let ds2 = make_labels(&pairs, &cfg, 2, 7, 0.0, 0.5).unwrap();
        assert_eq!(ds1.provenance.reg_config, cfg);
        assert_eq!(ds1.split, ds2.split);
        // labels computed on different worker counts agree bitwise
        for (a, b) in ds1.pairs.iter().zip(&ds2.pairs) {
            assert_eq!(a.example.v_opt, b.example.v_opt);
        }
    }

    #[test]
    fn split_validation_catches_overlap_and_gaps() {
        let mut s = SplitSpec::by_counts(2, 1, 1);
        s.validate(4).unwrap();
        s.val[0] = 0;
        assert!(s.validate(4).is_err());
        let s = SplitSpec::by_counts(2, 0, 1);
        assert!(s.validate(4).is_err());
    }

    #[test]
    fn dataset_roundtrip_and_checksum_guard() {
        let eyes = gen_bulleye(2, 3, 32).unwrap();
        let pair = ImagePair::from_bulleyes(&eyes[0], &eyes[1]);
        let cfg = tiny_cfg();
        let ds = make_labels(&[pair], &cfg, 1, 1, 0.0, 0.0).unwrap();
        let dir = std::env::temp_dir().join(format!("bandreg-ds-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        save_dataset(&dir, &ds).unwrap();
        let back = load_dataset(&dir, &cfg).unwrap();
        assert_eq!(back.pairs.len(), 1);
        assert_eq!(back.pairs[0].example.v_opt, ds.pairs[0].example.v_opt);
        assert_eq!(back.pairs[0].source, ds.pairs[0].source);

        // corrupt one byte of the label and expect a checksum failure
        let label = dir.join("examples/0000_label.blff");
        let mut bytes = std::fs::read(&label).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        std::fs::write(&label, &bytes).unwrap();
        match load_dataset(&dir, &cfg) {
            Err(Error::Format { reason, .. }) => assert!(reason.contains("checksum")),
            other => panic!("expected checksum error, got {other:?}"),
        }

        // remove it entirely and expect a missing-file error naming the path
        std::fs::remove_file(&label).unwrap();
        match load_dataset(&dir, &cfg) {
            Err(Error::Format { path, .. }) => assert!(path.contains("0000_label.blff")),
            other => panic!("expected missing-file error, got {other:?}"),
        }
        let _ = std::fs::remove_dir_all(&dir);
    }
}
