//! Survival dataset container and the Poisson data augmentation that turns
//! Cox-type (and time-dependent joint) models into latent Gaussian models:
//! follow-up is decomposed over cutpoint intervals so that per-interval event
//! counts are Poisson with mean h(t_mid) * dt.

use crate::error::{Error, Result};
use crate::likelihoods::{EventKind, SurvPayload};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurvRecord {
    pub subject: String,
    pub payload: SurvPayload,
    /// Covariate values in schema order.
    pub covariates: Vec<f64>,
    pub strata: Option<String>,
    pub cure_covariates: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurvDataset {
    /// Ordered covariate names shared by every record.
    pub schema: Vec<String>,
    pub records: Vec<SurvRecord>,
}

impl SurvDataset {
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if r.subject.is_empty() {
                return Err(Error::InvalidPayload(format!("record {i}: empty subject id")));
            }
            if r.covariates.len() != self.schema.len() {
                return Err(Error::DimensionMismatch(format!(
                    "record {i}: {} covariates, schema has {}",
                    r.covariates.len(),
                    self.schema.len()
                )));
            }
            r.payload.validate()?;
        }
        Ok(())
    }

    /// Largest observed time over all payloads (including interval upper
    /// bounds).
    pub fn max_time(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.payload.time2.unwrap_or(r.payload.time).max(r.payload.time))
            .fold(0.0, f64::max)
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.schema
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::Assembly(format!("covariate column '{name}' not found")))
    }
}

/// One Poisson-augmented row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AugRow {
    pub record_index: usize,
    /// Index of the cutpoint interval this row covers.
    pub interval: usize,
    /// Midpoint of the overlap between the interval and the at-risk span.
    pub t_mid: f64,
    /// Log of the overlap width (the exposure offset).
    pub log_dt: f64,
    /// 1 on the final row of an uncensored subject, else 0.
    pub event: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AugmentedDataset {
    pub rows: Vec<AugRow>,
    pub cutpoints: Vec<f64>,
}

/// Cutpoints for the piecewise baseline: `n` equidistant intervals from 0 to
/// the maximum observed time, unless a manual vector is supplied.
pub fn make_cutpoints(dataset: &SurvDataset, n: usize, manual: Option<&[f64]>) -> Result<Vec<f64>> {
    let max_time = dataset.max_time();
    if let Some(manual) = manual {
        if manual.len() < 2 || manual[0] != 0.0 {
            return Err(Error::InvalidPayload(
                "manual cutpoints must start at 0 and contain at least two values".into(),
            ));
        }
        if manual.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidPayload("manual cutpoints must be strictly increasing".into()));
        }
        if *manual.last().unwrap() < max_time {
            return Err(Error::InvalidPayload(format!(
                "manual cutpoints end at {} but the maximum observed time is {max_time}",
                manual.last().unwrap()
            )));
        }
        return Ok(manual.to_vec());
    }
    if n == 0 {
        return Err(Error::InvalidPayload("cutpoint count must be at least 1".into()));
    }
    if max_time <= 0.0 {
        return Err(Error::InvalidPayload("dataset has no positive observation times".into()));
    }
    Ok((0..=n).map(|i| max_time * i as f64 / n as f64).collect())
}

/// Decompose each subject's follow-up over the cutpoint intervals.
pub fn augment(dataset: &SurvDataset, cutpoints: &[f64]) -> Result<AugmentedDataset> {
    let mut rows = Vec::new();
    for (ri, r) in dataset.records.iter().enumerate() {
        let exact = match r.payload.event {
            EventKind::Exact => true,
            EventKind::RightCensored => false,
            other => {
                return Err(Error::Unsupported(format!(
                    "record {ri}: {other:?} censoring is not supported in augmented (Cox) mode"
                )))
            }
        };
        if r.payload.trunc_right.is_some() {
            return Err(Error::Unsupported(format!(
                "record {ri}: right truncation is not supported in augmented (Cox) mode"
            )));
        }
        let entry = r.payload.trunc_left.unwrap_or(0.0);
        let time = r.payload.time;
        if time > *cutpoints.last().unwrap() + 1e-12 {
            return Err(Error::InvalidPayload(format!(
                "record {ri}: time {time} exceeds the last cutpoint"
            )));
        }
        let mut subject_rows = Vec::new();
        for j in 1..cutpoints.len() {
            let a = cutpoints[j - 1].max(entry);
            let b = cutpoints[j].min(time);
            if b > a {
                subject_rows.push(AugRow {
                    record_index: ri,
                    interval: j - 1,
                    t_mid: 0.5 * (a + b),
                    log_dt: (b - a).ln(),
                    event: 0.0,
                });
            }
        }
        if subject_rows.is_empty() {
            return Err(Error::InvalidPayload(format!(
                "record {ri}: no at-risk exposure between entry {entry} and time {time}"
            )));
        }
        if exact {
            subject_rows.last_mut().unwrap().event = 1.0;
        }
        rows.extend(subject_rows);
    }
    Ok(AugmentedDataset { rows, cutpoints: cutpoints.to_vec() })
}
