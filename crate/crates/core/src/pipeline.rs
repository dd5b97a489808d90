//! Glue between the stages: preprocessing, feature extraction, train/test
//! splits and the persisted model bundle.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{hex_digest, Extractor, PipelineConfig};
use crate::container::read_file;
use crate::enhance::equalize;
use crate::error::{Error, Result};
use crate::feature::{FeatureVector, Modality};
use crate::fuse::{fit_whitening, Fuser, WhiteningStats};
use crate::gabor::{build_bank, extract_features, FilterBank};
use crate::imageio::{ingest, load_pgm, resample, DatasetManifest, GrayImage};
use crate::linalg::Matrix;
use crate::reduce::{fit_pca, fit_w2dpca, project, project_w2dpca, PcaMethod, PcaModel, W2dpcaModel};

/// Resamples to the working resolution and equalizes.
pub fn preprocess(img: &GrayImage, cfg: &PipelineConfig) -> Result<GrayImage> {
    Ok(equalize(&resample(img, cfg.width, cfg.height)?))
}

pub fn load_preprocessed(path: &Path, cfg: &PipelineConfig) -> Result<GrayImage> {
    preprocess(&load_pgm(path)?, cfg)
}

fn image_matrix(img: &GrayImage) -> Matrix {
    Matrix::from_row_major(img.height(), img.width(), img.to_f64()).expect("pixel count matches")
}

/// A ready-to-run feature extractor.
#[derive(Debug, Clone)]
pub enum FeatureExtractor {
    Gabor { bank: FilterBank, downsample: usize },
    Pixels,
    W2dpca(W2dpcaModel),
}

impl FeatureExtractor {
    /// Extractors that need no training data. `w2dpca` must be fitted with
    /// [`FeatureExtractor::fit_w2dpca`].
    pub fn untrained(cfg: &PipelineConfig) -> Result<Self> {
        match cfg.extractor {
            Extractor::Gabor => Ok(FeatureExtractor::Gabor {
                bank: build_bank(&cfg.bank)?,
                downsample: cfg.downsample,
            }),
            Extractor::Pixels => Ok(FeatureExtractor::Pixels),
            Extractor::W2dpca => Err(Error::Config(
                "the w2dpca extractor is fitted per evaluation and cannot be used here".into(),
            )),
        }
    }

    /// Fits weighted 2DPCA on preprocessed training images; `sample_index`
    /// selects each image's weight from the configured list (cycled).
    pub fn fit_w2dpca(cfg: &PipelineConfig, images: &[(usize, &GrayImage)]) -> Result<Self> {
        let mats: Vec<Matrix> = images.iter().map(|(_, img)| image_matrix(img)).collect();
        let weights: Vec<f64> = images
            .iter()
            .map(|(j, _)| {
                if cfg.w2dpca_weights.is_empty() {
                    1.0
                } else {
                    cfg.w2dpca_weights[j % cfg.w2dpca_weights.len()]
                }
            })
            .collect();
        Ok(FeatureExtractor::W2dpca(fit_w2dpca(&mats, &weights, cfg.w2dpca_components)?))
    }

    pub fn extract(&self, img: &GrayImage, modality: Modality) -> Result<FeatureVector> {
        match self {
            FeatureExtractor::Gabor { bank, downsample } => extract_features(img, bank, *downsample, modality),
            FeatureExtractor::Pixels => FeatureVector::new(modality, img.to_f64()),
            FeatureExtractor::W2dpca(model) => project_w2dpca(model, &image_matrix(img), modality),
        }
    }
}

/// One subject's samples divided into training and test paths.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSubject {
    pub id: String,
    pub train: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub subjects: Vec<SplitSubject>,
    /// Subjects without enough samples for the requested split.
    pub excluded: Vec<String>,
}

/// First `train_count` samples of each subject train (default: half,
/// rounded up), the rest test. With `need_test`, a subject must keep at
/// least one test sample.
pub fn split_manifest(manifest: &DatasetManifest, train_count: Option<usize>, need_test: bool) -> Split {
    let mut subjects = Vec::new();
    let mut excluded = Vec::new();
    for s in &manifest.subjects {
        let n = s.samples.len();
        let t = train_count.unwrap_or(n.div_ceil(2));
        let enough = if need_test { t >= 1 && n > t } else { t >= 1 && n >= t };
        if !enough {
            excluded.push(s.id.clone());
            continue;
        }
        subjects.push(SplitSubject {
            id: s.id.clone(),
            train: s.samples[..t].to_vec(),
            test: s.samples[t..].to_vec(),
        });
    }
    Split { subjects, excluded }
}

/// Extracted vectors of one modality, grouped like the split.
#[derive(Debug, Clone)]
pub struct SplitFeatures {
    pub ids: Vec<String>,
    pub train: Vec<Vec<FeatureVector>>,
    pub test: Vec<Vec<FeatureVector>>,
}

impl SplitFeatures {
    pub fn train_flat(&self) -> Vec<FeatureVector> {
        self.train.iter().flatten().cloned().collect()
    }

    pub fn map(&self, f: impl Fn(&FeatureVector) -> Result<FeatureVector> + Sync) -> Result<SplitFeatures> {
        let apply = |groups: &Vec<Vec<FeatureVector>>| -> Result<Vec<Vec<FeatureVector>>> {
            groups.iter().map(|g| g.iter().map(&f).collect()).collect()
        };
        Ok(SplitFeatures {
            ids: self.ids.clone(),
            train: apply(&self.train)?,
            test: apply(&self.test)?,
        })
    }
}

/// Loads, preprocesses and extracts every image of a split in parallel.
/// A `w2dpca` extractor is fitted on the split's training images first.
pub fn extract_split(split: &Split, modality: Modality, cfg: &PipelineConfig) -> Result<SplitFeatures> {
    // (subject, is_train, sample index within its group, path)
    let jobs: Vec<(usize, bool, usize, &PathBuf)> = split
        .subjects
        .iter()
        .enumerate()
        .flat_map(|(si, s)| {
            let train = s.train.iter().enumerate().map(move |(j, p)| (si, true, j, p));
            let test = s.test.iter().enumerate().map(move |(j, p)| (si, false, j, p));
            train.chain(test)
        })
        .collect();
    let images: Vec<GrayImage> = jobs
        .par_iter()
        .map(|(_, _, _, p)| load_preprocessed(p, cfg))
        .collect::<Result<_>>()?;

    let extractor = match cfg.extractor {
        Extractor::W2dpca => {
            let training: Vec<(usize, &GrayImage)> = jobs
                .iter()
                .zip(&images)
                .filter(|((_, is_train, _, _), _)| *is_train)
                .map(|((_, _, j, _), img)| (*j, img))
                .collect();
            FeatureExtractor::fit_w2dpca(cfg, &training)?
        }
        _ => FeatureExtractor::untrained(cfg)?,
    };
    let vectors: Vec<FeatureVector> = images
        .par_iter()
        .map(|img| extractor.extract(img, modality))
        .collect::<Result<_>>()?;

    let n = split.subjects.len();
    let mut out = SplitFeatures {
        ids: split.subjects.iter().map(|s| s.id.clone()).collect(),
        train: vec![Vec::new(); n],
        test: vec![Vec::new(); n],
    };
    for ((si, is_train, _, _), v) in jobs.into_iter().zip(vectors) {
        if is_train {
            out.train[si].push(v);
        } else {
            out.test[si].push(v);
        }
    }
    Ok(out)
}

/// Fits PCA on the training vectors of each modality and truncates all
/// models to the smallest selected component count, so fused vectors have
/// one shared dimension.
pub fn fit_matched_pca(cfg: &PipelineConfig, training: &[&[FeatureVector]]) -> Result<Vec<PcaModel>> {
    let models: Vec<PcaModel> = training
        .iter()
        .map(|t| fit_pca(t, cfg.pca_target, PcaMethod::Auto))
        .collect::<Result<_>>()?;
    let k = models.iter().map(PcaModel::components).min().unwrap_or(0);
    models.iter().map(|m| m.truncate(k)).collect()
}

pub fn project_split(model: &PcaModel, features: &SplitFeatures) -> Result<SplitFeatures> {
    features.map(|v| project(model, v))
}

const BUNDLE_FILES: [&str; 4] = ["face.pca", "fingerprint.pca", "face.ws", "fingerprint.ws"];
const BUNDLE_MANIFEST: &str = "bundle.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format_version: u32,
    pub config_digest: String,
    pub components: usize,
    /// File name to hex SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

/// Trained models for operational enroll / identify / verify.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub face_pca: PcaModel,
    pub fingerprint_pca: PcaModel,
    pub fuser: Fuser,
}

impl ModelBundle {
    pub fn pca(&self, modality: Modality) -> Result<&PcaModel> {
        match modality {
            Modality::Face => Ok(&self.face_pca),
            Modality::Fingerprint => Ok(&self.fingerprint_pca),
            Modality::Fused => Err(Error::Config("no PCA model for fused vectors".into())),
        }
    }

    pub fn stats(&self, modality: Modality) -> Result<&WhiteningStats> {
        match modality {
            Modality::Face => Ok(&self.fuser.face),
            Modality::Fingerprint => Ok(&self.fuser.fingerprint),
            Modality::Fused => Err(Error::Config("no whitening stats for fused vectors".into())),
        }
    }

    /// Writes the four model files and `bundle.json`.
    pub fn save(&self, dir: &Path, cfg: &PipelineConfig) -> Result<BundleManifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let blobs = [
            self.face_pca.to_bytes(),
            self.fingerprint_pca.to_bytes(),
            self.fuser.face.to_bytes(),
            self.fuser.fingerprint.to_bytes(),
        ];
        let mut files = BTreeMap::new();
        for (name, bytes) in BUNDLE_FILES.iter().zip(&blobs) {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            files.insert(name.to_string(), hex_digest(bytes));
        }
        let manifest = BundleManifest {
            format_version: crate::FORMAT_VERSION,
            config_digest: cfg.digest(),
            components: self.face_pca.components(),
            files,
        };
        let path = dir.join(BUNDLE_MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    /// Loads a bundle, checking every file against its recorded digest.
    pub fn load(dir: &Path, tanh_c: f64) -> Result<Self> {
        let mpath = dir.join(BUNDLE_MANIFEST);
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: BundleManifest = serde_json::from_str(&text).map_err(|e| Error::Container {
            path: mpath.display().to_string(),
            reason: e.to_string(),
        })?;
        if manifest.format_version != crate::FORMAT_VERSION {
            return Err(Error::Container {
                path: mpath.display().to_string(),
                reason: format!("unsupported bundle version {}", manifest.format_version),
            });
        }
        let mut blobs = Vec::new();
        for name in BUNDLE_FILES {
            let path = dir.join(name);
            let bytes = read_file(&path)?;
            if manifest.files.get(name) != Some(&hex_digest(&bytes)) {
                return Err(Error::Container {
                    path: path.display().to_string(),
                    reason: "digest does not match bundle.json".into(),
                });
            }
            blobs.push((path.display().to_string(), bytes));
        }
        let bundle = ModelBundle {
            face_pca: PcaModel::from_bytes(&blobs[0].1, &blobs[0].0)?,
            fingerprint_pca: PcaModel::from_bytes(&blobs[1].1, &blobs[1].0)?,
            fuser: Fuser {
                face: WhiteningStats::from_bytes(&blobs[2].1, &blobs[2].0)?,
                fingerprint: WhiteningStats::from_bytes(&blobs[3].1, &blobs[3].0)?,
                tanh_c,
            },
        };
        Ok(bundle)
    }
}

/// Ingests both datasets named in the config.
pub fn ingest_datasets(cfg: &PipelineConfig) -> Result<(DatasetManifest, Option<DatasetManifest>)> {
    let face_root = cfg
        .face_root
        .as_ref()
        .ok_or_else(|| Error::Config("face.root is not set".into()))?;
    let face = ingest(face_root, cfg.face_layout, Modality::Face)?;
    let fingerprint = cfg
        .fingerprint_root
        .as_ref()
        .map(|root| ingest(root, cfg.fingerprint_layout, Modality::Fingerprint))
        .transpose()?;
    Ok((face, fingerprint))
}

/// Fits the operational model bundle on the training portion of both
/// datasets.
pub fn train(face: &DatasetManifest, fingerprint: &DatasetManifest, cfg: &PipelineConfig) -> Result<ModelBundle> {
    FeatureExtractor::untrained(cfg)?;
    let face_split = split_manifest(face, cfg.train_count, false);
    let fp_split = split_manifest(fingerprint, cfg.train_count, false);
    let short: Vec<String> = face_split
        .excluded
        .iter()
        .map(|s| format!("face:{s}"))
        .chain(fp_split.excluded.iter().map(|s| format!("fingerprint:{s}")))
        .collect();
    if !short.is_empty() {
        return Err(Error::InsufficientData(format!(
            "subjects with fewer samples than split.train_count: {}",
            short.join(", ")
        )));
    }
    let face_feats = extract_split(&face_split, Modality::Face, cfg)?;
    let fp_feats = extract_split(&fp_split, Modality::Fingerprint, cfg)?;
    let face_train = face_feats.train_flat();
    let fp_train = fp_feats.train_flat();
    let models = fit_matched_pca(cfg, &[&face_train, &fp_train])?;
    let (face_pca, fingerprint_pca) = (models[0].clone(), models[1].clone());
    let face_proj: Vec<FeatureVector> = face_train.iter().map(|v| project(&face_pca, v)).collect::<Result<_>>()?;
    let fp_proj: Vec<FeatureVector> = fp_train.iter().map(|v| project(&fingerprint_pca, v)).collect::<Result<_>>()?;
    Ok(ModelBundle {
        fuser: Fuser {
            face: fit_whitening(&face_proj, cfg.sigma_floor)?,
            fingerprint: fit_whitening(&fp_proj, cfg.sigma_floor)?,
            tanh_c: cfg.tanh_c,
        },
        face_pca,
        fingerprint_pca,
    })
}

/// Single-image operation against a trained bundle.
pub struct Operational {
    pub cfg: PipelineConfig,
    pub extractor: FeatureExtractor,
    pub bundle: ModelBundle,
}

impl Operational {
    pub fn new(cfg: PipelineConfig, bundle: ModelBundle) -> Result<Self> {
        let extractor = FeatureExtractor::untrained(&cfg)?;
        Ok(Operational { cfg, extractor, bundle })
    }

    /// PCA-projected vector of one image.
    pub fn unimodal(&self, path: &Path, modality: Modality) -> Result<FeatureVector> {
        let img = load_preprocessed(path, &self.cfg)?;
        let v = self.extractor.extract(&img, modality)?;
        project(self.bundle.pca(modality)?, &v)
    }

    pub fn fused(&self, face: &Path, fingerprint: &Path) -> Result<FeatureVector> {
        let f = self.unimodal(face, Modality::Face)?;
        let p = self.unimodal(fingerprint, Modality::Fingerprint)?;
        self.bundle.fuser.fuse_projected(&f, &p)
    }
}
