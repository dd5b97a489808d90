//! Recognition-rate and ROC evaluation over face / fingerprint datasets,
//! plus CSV and JSON report export.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{PairingMode, PipelineConfig};
use crate::error::{Error, Result};
use crate::feature::{FeatureVector, Modality};
use crate::fuse::{fit_whitening, Fuser};
use crate::imageio::DatasetManifest;
use crate::matching::{equal_error_rate, roc_curve, Metric, MetricKind, RocPoint, TemplateStore};
use crate::pipeline::{extract_split, fit_matched_pca, project_split, split_manifest, SplitFeatures};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_digest: String,
    /// Rate of the headline mode: fused when both modalities ran, face otherwise.
    pub rank1_rate: f64,
    pub face_rate: Option<f64>,
    pub fingerprint_rate: Option<f64>,
    pub fused_rate: Option<f64>,
    pub eer: Option<f64>,
    pub components: usize,
    pub probes: usize,
    pub warnings: usize,
    pub excluded_subjects: Vec<String>,
    pub roc: Vec<RocPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Gallery and probe sets of one matching mode.
pub struct ModeData<'a> {
    pub ids: &'a [String],
    pub gallery: &'a [Vec<FeatureVector>],
    pub probes: &'a [Vec<FeatureVector>],
}

/// Outcome of running every probe against a gallery.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeResult {
    pub rank1_rate: f64,
    pub probes: usize,
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

/// Enrolls the gallery, identifies every probe and collects per-subject
/// verification scores (genuine against the probe's own subject, impostor
/// against every other). Probes run in parallel; results keep probe order.
pub fn run_mode(data: &ModeData<'_>, metric: Metric, k: usize) -> Result<ModeResult> {
    let first = data
        .gallery
        .iter()
        .flatten()
        .next()
        .ok_or_else(|| Error::InsufficientData("empty gallery".into()))?;
    let mut store = TemplateStore::new(first.modality(), first.dim(), metric)?;
    for (id, vs) in data.ids.iter().zip(data.gallery) {
        for v in vs {
            store.enroll(id.clone(), v.clone())?;
        }
    }
    let probes: Vec<(&String, &FeatureVector)> = data
        .ids
        .iter()
        .zip(data.probes)
        .flat_map(|(id, vs)| vs.iter().map(move |v| (id, v)))
        .collect();
    if probes.is_empty() {
        return Err(Error::InsufficientData("no probes".into()));
    }
    let outcomes: Vec<(bool, Vec<(bool, f64)>)> = probes
        .par_iter()
        .map(|(id, v)| -> Result<_> {
            let hit = store.identify(v, k)?.subject == **id;
            let scores = store
                .subject_scores(v)?
                .into_iter()
                .map(|(s, d)| (s == **id, d))
                .collect();
            Ok((hit, scores))
        })
        .collect::<Result<_>>()?;
    let hits = outcomes.iter().filter(|(h, _)| *h).count();
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for (_, scores) in &outcomes {
        for &(same, d) in scores {
            if same {
                genuine.push(d);
            } else {
                impostor.push(d);
            }
        }
    }
    Ok(ModeResult {
        rank1_rate: hits as f64 / probes.len() as f64,
        probes: probes.len(),
        genuine,
        impostor,
    })
}

fn unimodal_metric(cfg: &PipelineConfig, projected: &SplitFeatures) -> Result<Metric> {
    Ok(match cfg.metric {
        MetricKind::Euclidean => Metric::Euclidean,
        MetricKind::Mahalanobis => Metric::Mahalanobis(fit_whitening(&projected.train_flat(), cfg.sigma_floor)?),
    })
}

fn run_unimodal(cfg: &PipelineConfig, projected: &SplitFeatures) -> Result<ModeResult> {
    let data = ModeData {
        ids: &projected.ids,
        gallery: &projected.train,
        probes: &projected.test,
    };
    run_mode(&data, unimodal_metric(cfg, projected)?, cfg.match_k)
}

/// Fingerprint subject index paired with each face subject index.
pub fn chimeric_pairing(faces: usize, fingerprints: usize, mode: PairingMode, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..fingerprints).collect();
    if mode == PairingMode::Shuffled {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    (0..faces).map(|i| order[i % fingerprints]).collect()
}

fn fuse_groups(
    fuser: &Fuser,
    faces: &[Vec<FeatureVector>],
    fps: &[Vec<FeatureVector>],
    pairing: &[usize],
) -> Result<Vec<Vec<FeatureVector>>> {
    faces
        .iter()
        .zip(pairing)
        .map(|(fg, &pi)| {
            let pg = &fps[pi];
            fg.iter()
                .enumerate()
                .map(|(j, f)| fuser.fuse_projected(f, &pg[j % pg.len()]))
                .collect()
        })
        .collect()
}

/// Runs the full pipeline on train/test splits of both datasets and reports
/// face-only, fingerprint-only and fused rank-1 rates with the ROC of the
/// headline mode. Without a fingerprint manifest only the face mode runs.
pub fn evaluate(
    face: &DatasetManifest,
    fingerprint: Option<&DatasetManifest>,
    cfg: &PipelineConfig,
) -> Result<EvalReport> {
    let face_split = split_manifest(face, cfg.train_count, true);
    let fp_split = fingerprint.map(|m| split_manifest(m, cfg.train_count, true));
    let mut excluded: Vec<String> = face_split.excluded.iter().map(|s| format!("face:{s}")).collect();
    if let Some(s) = &fp_split {
        excluded.extend(s.excluded.iter().map(|s| format!("fingerprint:{s}")));
    }
    if !excluded.is_empty() {
        log::warn!("excluded {} subjects without enough samples", excluded.len());
    }
    if face_split.subjects.is_empty() || fp_split.as_ref().is_some_and(|s| s.subjects.is_empty()) {
        return Err(Error::InsufficientData(format!(
            "no subject has enough samples for the split (excluded: {})",
            excluded.join(", ")
        )));
    }

    let face_feats = extract_split(&face_split, Modality::Face, cfg)?;
    let fp_feats = fp_split
        .as_ref()
        .map(|s| extract_split(s, Modality::Fingerprint, cfg))
        .transpose()?;

    let face_train = face_feats.train_flat();
    let fp_train = fp_feats.as_ref().map(SplitFeatures::train_flat);
    let mut training: Vec<&[FeatureVector]> = vec![&face_train];
    if let Some(t) = &fp_train {
        training.push(t);
    }
    let models = fit_matched_pca(cfg, &training)?;
    let components = models[0].components();
    let face_proj = project_split(&models[0], &face_feats)?;
    let fp_proj = fp_feats.as_ref().map(|f| project_split(&models[1], f)).transpose()?;

    let face_result = run_unimodal(cfg, &face_proj)?;
    let mut fp_rate = None;
    let mut fused_result = None;
    if let Some(fp_proj) = &fp_proj {
        fp_rate = Some(run_unimodal(cfg, fp_proj)?.rank1_rate);
        let fuser = Fuser {
            face: fit_whitening(&face_proj.train_flat(), cfg.sigma_floor)?,
            fingerprint: fit_whitening(&fp_proj.train_flat(), cfg.sigma_floor)?,
            tanh_c: cfg.tanh_c,
        };
        let pairing = chimeric_pairing(face_proj.ids.len(), fp_proj.ids.len(), cfg.pairing, cfg.pairing_seed);
        let ids: Vec<String> = face_proj
            .ids
            .iter()
            .zip(&pairing)
            .map(|(f, &p)| format!("{f}+{}", fp_proj.ids[p]))
            .collect();
        let gallery = fuse_groups(&fuser, &face_proj.train, &fp_proj.train, &pairing)?;
        let probes = fuse_groups(&fuser, &face_proj.test, &fp_proj.test, &pairing)?;
        let data = ModeData {
            ids: &ids,
            gallery: &gallery,
            probes: &probes,
        };
        fused_result = Some(run_mode(&data, Metric::Euclidean, cfg.match_k)?);
    }

    let headline = fused_result.as_ref().unwrap_or(&face_result);
    let roc = roc_curve(&headline.genuine, &headline.impostor);
    Ok(EvalReport {
        config_digest: cfg.digest(),
        rank1_rate: headline.rank1_rate,
        face_rate: Some(face_result.rank1_rate),
        fingerprint_rate: fp_rate,
        fused_rate: fused_result.as_ref().map(|r| r.rank1_rate),
        eer: equal_error_rate(&roc),
        components,
        probes: headline.probes,
        warnings: excluded.len(),
        excluded_subjects: excluded,
        roc,
    })
}

const SUMMARY_HEADER: [&str; 2] = ["key", "value"];
const ROC_HEADER: [&str; 3] = ["threshold", "far", "frr"];

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid report json: {e}")))
    }

    /// Summary block (`key,value` rows) followed, when the ROC is non-empty,
    /// by a `threshold,far,frr` table.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
        let rows: [(&str, String); 10] = [
            ("config_digest", self.config_digest.clone()),
            ("rank1_rate", num(self.rank1_rate)),
            ("face_rate", opt(self.face_rate)),
            ("fingerprint_rate", opt(self.fingerprint_rate)),
            ("fused_rate", opt(self.fused_rate)),
            ("eer", opt(self.eer)),
            ("components", self.components.to_string()),
            ("probes", self.probes.to_string()),
            ("warnings", self.warnings.to_string()),
            ("excluded_subjects", self.excluded_subjects.join(";")),
        ];
        let write = |w: &mut csv::Writer<Vec<u8>>, rec: &[&str]| w.write_record(rec).expect("in-memory write");
        write(&mut w, &SUMMARY_HEADER);
        for (k, v) in &rows {
            write(&mut w, &[k, v]);
        }
        if !self.roc.is_empty() {
            write(&mut w, &ROC_HEADER);
            for p in &self.roc {
                write(&mut w, &[&num(p.threshold), &num(p.far), &num(p.frr)]);
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Config(format!("invalid report csv: {m}"));
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut records = r.records();
        let header = records.next().ok_or_else(|| bad("empty".into()))?.map_err(|e| bad(e.to_string()))?;
        if header.iter().collect::<Vec<_>>() != SUMMARY_HEADER {
            return Err(bad("missing key,value header".into()));
        }
        let mut fields = std::collections::BTreeMap::new();
        let mut roc = Vec::new();
        let mut in_roc = false;
        for rec in records {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let cols: Vec<&str> = rec.iter().collect();
            if !in_roc && cols == ROC_HEADER {
                in_roc = true;
                continue;
            }
            if in_roc {
                let parse = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
                if cols.len() != 3 {
                    return Err(bad("roc rows need three columns".into()));
                }
                roc.push(RocPoint {
                    threshold: parse(cols[0])?,
                    far: parse(cols[1])?,
                    frr: parse(cols[2])?,
                });
            } else {
                if cols.len() != 2 {
                    return Err(bad("summary rows need two columns".into()));
                }
                fields.insert(cols[0].to_string(), cols[1].to_string());
            }
        }
        let get = |k: &str| fields.get(k).cloned().ok_or_else(|| bad(format!("missing {k}")));
        let float = |k: &str| -> Result<Option<f64>> {
            let v = get(k)?;
            if v.is_empty() {
                return Ok(None);
            }
            v.parse().map(Some).map_err(|_| bad(format!("{k}: bad number {v:?}")))
        };
        let count = |k: &str| -> Result<usize> {
            let v = get(k)?;
            v.parse().map_err(|_| bad(format!("{k}: bad count {v:?}")))
        };
        let excluded = get("excluded_subjects")?;
        Ok(EvalReport {
            config_digest: get("config_digest")?,
            rank1_rate: float("rank1_rate")?.ok_or_else(|| bad("rank1_rate is empty".into()))?,
            face_rate: float("face_rate")?,
            fingerprint_rate: float("fingerprint_rate")?,
            fused_rate: float("fused_rate")?,
            eer: float("eer")?,
            components: count("components")?,
            probes: count("probes")?,
            warnings: count("warnings")?,
            excluded_subjects: if excluded.is_empty() {
                Vec::new()
            } else {
                excluded.split(';').map(str::to_string).collect()
            },
            roc,
        })
    }
}

pub fn export_report(report: &EvalReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Json => report.to_json(),
    };
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
