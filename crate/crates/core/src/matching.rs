//! Template storage, nearest-neighbour identification, threshold
//! verification and ROC / EER computation.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::container::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::feature::{euclidean, FeatureVector, Modality};
use crate::fuse::WhiteningStats;

const MAGIC: &[u8; 4] = b"BFTS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MetricKind {
    #[default]
    Euclidean,
    Mahalanobis,
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(MetricKind::Euclidean),
            "mahalanobis" => Ok(MetricKind::Mahalanobis),
            other => Err(Error::Config(format!(
                "unknown metric {other:?} (expected euclidean or mahalanobis)"
            ))),
        }
    }
}

/// Distance between probe and template.
#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Euclidean,
    /// Euclidean distance after dividing each component by the stats' sigma.
    Mahalanobis(WhiteningStats),
}

impl Metric {
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => euclidean(a, b),
            Metric::Mahalanobis(stats) => a
                .iter()
                .zip(b)
                .zip(stats.sigma())
                .map(|((x, y), s)| {
                    let d = (x - y) / s;
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub subject: String,
    pub vector: FeatureVector,
}

/// Enrolled templates sharing one dimension and modality, kept in
/// insertion order. A subject may own several templates.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateStore {
    modality: Modality,
    dim: usize,
    metric: Metric,
    templates: Vec<Template>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub subject: String,
    pub distance: f64,
    /// Enrollment index of the template.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Identification {
    /// Every template, nearest first; ties keep enrollment order.
    pub ranked: Vec<Candidate>,
    /// Majority subject among the `k` nearest templates.
    pub subject: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verification {
    pub accepted: bool,
    pub score: f64,
}

impl TemplateStore {
    pub fn new(modality: Modality, dim: usize, metric: Metric) -> Result<Self> {
        if let Metric::Mahalanobis(stats) = &metric {
            if stats.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: stats.dim(),
                });
            }
        }
        Ok(TemplateStore {
            modality,
            dim,
            metric,
            templates: Vec::new(),
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    fn check(&self, v: &FeatureVector) -> Result<()> {
        v.check_dim(self.dim)?;
        if v.modality() != self.modality {
            return Err(Error::ModalityMismatch {
                expected: self.modality.to_string(),
                actual: v.modality().to_string(),
            });
        }
        Ok(())
    }

    pub fn enroll(&mut self, subject: impl Into<String>, v: FeatureVector) -> Result<()> {
        self.check(&v)?;
        self.templates.push(Template {
            subject: subject.into(),
            vector: v,
        });
        Ok(())
    }

    fn ranked(&self, probe: &FeatureVector) -> Result<Vec<Candidate>> {
        if self.templates.is_empty() {
            return Err(Error::EmptyStore);
        }
        self.check(probe)?;
        let mut ranked: Vec<Candidate> = self
            .templates
            .iter()
            .enumerate()
            .map(|(index, t)| Candidate {
                subject: t.subject.clone(),
                distance: self.metric.distance(probe.values(), t.vector.values()),
                index,
            })
            .collect();
        // stable: equal distances keep enrollment order
        ranked.sort_by(|a, b| a.distance.total_cmp(&b.distance));
        Ok(ranked)
    }

    /// Ranks all templates and votes among the `k` nearest; vote ties go to
    /// the subject whose template ranks first.
    pub fn identify(&self, probe: &FeatureVector, k: usize) -> Result<Identification> {
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let ranked = self.ranked(probe)?;
        let mut votes: Vec<(&str, usize)> = Vec::new();
        for c in ranked.iter().take(k) {
            match votes.iter_mut().find(|(s, _)| *s == c.subject) {
                Some((_, n)) => *n += 1,
                None => votes.push((&c.subject, 1)),
            }
        }
        // votes are in rank order; only a strictly larger count displaces
        let mut best = votes[0];
        for &v in &votes[1..] {
            if v.1 > best.1 {
                best = v;
            }
        }
        let subject = best.0.to_string();
        Ok(Identification { ranked, subject })
    }

    /// Smallest distance from `probe` to each enrolled subject, in order of
    /// first enrollment.
    pub fn subject_scores(&self, probe: &FeatureVector) -> Result<Vec<(String, f64)>> {
        if self.templates.is_empty() {
            return Err(Error::EmptyStore);
        }
        self.check(probe)?;
        let mut order: Vec<String> = Vec::new();
        let mut best: HashMap<&str, f64> = HashMap::new();
        for t in &self.templates {
            let d = self.metric.distance(probe.values(), t.vector.values());
            match best.get_mut(t.subject.as_str()) {
                Some(b) => *b = b.min(d),
                None => {
                    order.push(t.subject.clone());
                    best.insert(&t.subject, d);
                }
            }
        }
        Ok(order
            .into_iter()
            .map(|s| {
                let d = best[s.as_str()];
                (s, d)
            })
            .collect())
    }

    /// Accepts when the closest template of `claimed` lies within `threshold`.
    pub fn verify(&self, claimed: &str, probe: &FeatureVector, threshold: f64) -> Result<Verification> {
        self.check(probe)?;
        let score = self
            .templates
            .iter()
            .filter(|t| t.subject == claimed)
            .map(|t| self.metric.distance(probe.values(), t.vector.values()))
            .min_by(f64::total_cmp)
            .ok_or_else(|| Error::UnknownSubject(claimed.to_string()))?;
        Ok(Verification {
            accepted: score <= threshold,
            score,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC);
        w.u8(self.modality.code()).u64(self.dim as u64);
        match &self.metric {
            Metric::Euclidean => {
                w.u8(0);
            }
            Metric::Mahalanobis(stats) => {
                w.u8(1).f64s(stats.mu()).f64s(stats.sigma());
            }
        }
        w.u64(self.templates.len() as u64);
        for t in &self.templates {
            w.str(&t.subject).f64s(t.vector.values());
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], name: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, MAGIC, name)?;
        let code = r.u8()?;
        let modality = Modality::from_code(code).ok_or_else(|| r.err(format!("bad modality code {code}")))?;
        let dim = r.len(8)?;
        let metric = match r.u8()? {
            0 => Metric::Euclidean,
            1 => {
                let mu = r.f64s(dim)?;
                let sigma = r.f64s(dim)?;
                Metric::Mahalanobis(WhiteningStats::new(modality, mu, sigma, f64::MIN_POSITIVE)?)
            }
            other => return Err(r.err(format!("bad metric code {other}"))),
        };
        let count = r.len(8)?;
        let mut store = TemplateStore::new(modality, dim, metric)?;
        for _ in 0..count {
            let subject = r.str()?;
            let values = r.f64s(dim)?;
            store.enroll(subject, FeatureVector::new(modality, values)?)?;
        }
        r.finish()?;
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&read_file(path)?, &path.display().to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Sweeps every distinct score as an acceptance threshold (accept when
/// `score <= threshold`), preceded by one point just below the smallest
/// score where nothing is accepted.
pub fn roc_curve(genuine: &[f64], impostor: &[f64]) -> Vec<RocPoint> {
    let mut g = genuine.to_vec();
    let mut i = impostor.to_vec();
    g.sort_by(f64::total_cmp);
    i.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = g.iter().chain(&i).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let Some(&lowest) = thresholds.first() else {
        return Vec::new();
    };
    let rate = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut roc = Vec::with_capacity(thresholds.len() + 1);
    roc.push(RocPoint {
        threshold: lowest.next_down(),
        far: 0.0,
        frr: rate(g.len(), g.len()),
    });
    for t in thresholds {
        let accepted_impostors = i.partition_point(|&s| s <= t);
        let accepted_genuine = g.partition_point(|&s| s <= t);
        roc.push(RocPoint {
            threshold: t,
            far: rate(accepted_impostors, i.len()),
            frr: rate(g.len() - accepted_genuine, g.len()),
        });
    }
    roc
}

/// Rate where FAR and FRR cross, linearly interpolated between the two
/// bracketing sweep points. `None` for an empty curve.
pub fn equal_error_rate(roc: &[RocPoint]) -> Option<f64> {
    let gap = |p: &RocPoint| p.far - p.frr;
    let idx = roc.iter().position(|p| gap(p) >= 0.0)?;
    let hi = roc[idx];
    if gap(&hi) == 0.0 || idx == 0 {
        return Some(if idx == 0 { 0.5 * (hi.far + hi.frr) } else { hi.far });
    }
    let lo = roc[idx - 1];
    let alpha = -gap(&lo) / (gap(&hi) - gap(&lo));
    Some(lo.far + alpha * (hi.far - lo.far))
}
