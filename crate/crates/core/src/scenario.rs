//! Duration scenario sampling: in-sample lognormal sets and the four
//! out-of-sample families.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::instance::DurationModel;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("surgery {surgery}: {reason}")]
    Parameterization { surgery: usize, reason: String },
    #[error("scenario count must be at least 1")]
    EmptyRequest,
    #[error("unknown out-of-sample setting '{0}'")]
    UnknownSetting(String),
    #[error("scenario table: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    I,
    II,
    III,
    IV,
}

/// Out-of-sample setting; `delta` only for families II and III.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OosSetting {
    pub family: Family,
    pub delta: Option<f64>,
}

impl OosSetting {
    pub fn new(family: Family, delta: Option<f64>) -> Result<Self, ScenarioError> {
        let needs = matches!(family, Family::II | Family::III);
        if needs != delta.is_some() {
            return Err(ScenarioError::UnknownSetting(format!("{family:?} with delta {delta:?}")));
        }
        Ok(OosSetting { family, delta })
    }
}

impl FromStr for OosSetting {
    type Err = ScenarioError;

    /// Accepts I, IIa, IIb, IIc, IIIa, IIIb, IIIc, IV.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ScenarioError::UnknownSetting(s.to_string());
        let t = s.trim();
        let (fam, suffix) = if let Some(rest) = t.strip_prefix("III") {
            (Family::III, rest)
        } else if let Some(rest) = t.strip_prefix("IV") {
            (Family::IV, rest)
        } else if let Some(rest) = t.strip_prefix("II") {
            (Family::II, rest)
        } else if let Some(rest) = t.strip_prefix('I') {
            (Family::I, rest)
        } else {
            return Err(bad());
        };
        let delta = match (fam, suffix) {
            (Family::I | Family::IV, "") => None,
            (Family::II | Family::III, "a") => Some(0.0),
            (Family::II | Family::III, "b") => Some(0.25),
            (Family::II | Family::III, "c") => Some(0.5),
            _ => return Err(bad()),
        };
        OosSetting::new(fam, delta)
    }
}

impl fmt::Display for OosSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let suffix = match self.delta {
            None => "",
            Some(d) if d == 0.0 => "a",
            Some(d) if d == 0.25 => "b",
            Some(d) if d == 0.5 => "c",
            Some(_) => "?",
        };
        write!(f, "{:?}{suffix}", self.family)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub family: String,
    pub params: String,
    pub seed: u64,
}

/// N scenarios by |I| surgeries, minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub durations: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

impl ScenarioSet {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        ScenarioSet {
            durations: rows,
            provenance: Provenance { family: "given".into(), params: String::new(), seed: 0 },
        }
    }

    pub fn len(&self) -> usize {
        self.durations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.durations.is_empty()
    }

    pub fn n_surgeries(&self) -> usize {
        self.durations.first().map_or(0, |r| r.len())
    }

    /// Keep only the listed surgery columns, in that order.
    pub fn select_columns(&self, cols: &[usize]) -> ScenarioSet {
        ScenarioSet {
            durations: self.durations.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Column means.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        let mut m = vec![0.0; self.n_surgeries()];
        for row in &self.durations {
            for (acc, v) in m.iter_mut().zip(row) {
                *acc += v;
            }
        }
        m.iter().map(|v| v / n).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(vec![]);
        let header: Vec<String> = (0..self.n_surgeries()).map(|i| i.to_string()).collect();
        w.write_record(&header).expect("in-memory write");
        for row in &self.durations {
            w.write_record(row.iter().map(|v| format!("{v}"))).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn from_csv(text: &str) -> Result<Self, ScenarioError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let width = r.headers().map_err(|e| ScenarioError::Format(e.to_string()))?.len();
        let mut rows = vec![];
        for rec in r.records() {
            let rec = rec.map_err(|e| ScenarioError::Format(e.to_string()))?;
            if rec.len() != width {
                return Err(ScenarioError::Format(format!("row has {} fields, header {}", rec.len(), width)));
            }
            let row = rec
                .iter()
                .map(|f| f.trim().parse::<f64>().map_err(|e| ScenarioError::Format(format!("'{f}': {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            if row.iter().any(|&v| !(v > 0.0)) {
                return Err(ScenarioError::Format("durations must be strictly positive".into()));
            }
            rows.push(row);
        }
        Ok(ScenarioSet::from_rows(rows))
    }
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check_request(dm: &DurationModel, n: usize) -> Result<(), ScenarioError> {
    if n == 0 {
        return Err(ScenarioError::EmptyRequest);
    }
    for i in 0..dm.len() {
        if dm.std[i] < 0.0 || !dm.std[i].is_finite() {
            return Err(ScenarioError::Parameterization { surgery: i, reason: format!("std {} is negative", dm.std[i]) });
        }
        if !(dm.mean[i] > 0.0) {
            return Err(ScenarioError::Parameterization { surgery: i, reason: format!("mean {} not positive", dm.mean[i]) });
        }
    }
    Ok(())
}

/// Fills an n x |I| matrix column by column so that each surgery draws
/// from its own stream position deterministically.
fn fill(dm: &DurationModel, n: usize, seed: u64, mut draw: impl FnMut(usize, &mut ChaCha8Rng) -> f64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed);
    let mut rows = vec![vec![0.0; dm.len()]; n];
    for row in rows.iter_mut() {
        for (i, cell) in row.iter_mut().enumerate() {
            *cell = draw(i, &mut rng);
        }
    }
    rows
}

/// Moment-matched lognormal clamped to the support.
pub fn sample_in_sample(dm: &DurationModel, n: usize, seed: u64) -> Result<ScenarioSet, ScenarioError> {
    check_request(dm, n)?;
    let laws: Vec<Option<LogNormal<f64>>> = (0..dm.len())
        .map(|i| {
            let (m, sd) = (dm.mean[i], dm.std[i]);
            if sd == 0.0 {
                return Ok(None);
            }
            let s2 = (1.0 + (sd * sd) / (m * m)).ln();
            LogNormal::new(m.ln() - s2 / 2.0, s2.sqrt())
                .map(Some)
                .map_err(|e| ScenarioError::Parameterization { surgery: i, reason: e.to_string() })
        })
        .collect::<Result<_, _>>()?;
    let rows = fill(dm, n, seed, |i, rng| {
        let raw = match &laws[i] {
            Some(l) => l.sample(rng),
            None => dm.mean[i],
        };
        raw.clamp(dm.lo[i], dm.hi[i])
    });
    Ok(ScenarioSet {
        durations: rows,
        provenance: Provenance { family: "I".into(), params: "lognormal clipped".into(), seed },
    })
}

pub fn sample_out_of_sample(
    dm: &DurationModel,
    setting: OosSetting,
    n: usize,
    seed: u64,
) -> Result<ScenarioSet, ScenarioError> {
    check_request(dm, n)?;
    let delta = setting.delta.unwrap_or(0.0);
    let support = |i: usize| ((1.0 - delta) * dm.lo[i], (1.0 + delta) * dm.hi[i]);
    let rows = match setting.family {
        Family::I => return sample_in_sample(dm, n, seed).map(|mut s| {
            s.provenance.family = setting.to_string();
            s
        }),
        Family::II => {
            let mut laws = vec![];
            for i in 0..dm.len() {
                let (a, b) = support(i);
                if dm.std[i] == 0.0 {
                    laws.push(None);
                    continue;
                }
                let nrm = Normal::new(dm.mean[i], dm.std[i])
                    .map_err(|e| ScenarioError::Parameterization { surgery: i, reason: e.to_string() })?;
                let (fa, fb) = (nrm.cdf(a), nrm.cdf(b));
                if !(fb > fa) {
                    return Err(ScenarioError::Parameterization {
                        surgery: i,
                        reason: "truncation interval carries no normal mass".into(),
                    });
                }
                laws.push(Some((nrm, fa, fb)));
            }
            fill(dm, n, seed, |i, rng| {
                let (a, b) = support(i);
                match &laws[i] {
                    None => dm.mean[i].clamp(a, b),
                    Some((nrm, fa, fb)) => {
                        let p: f64 = rng.random();
                        nrm.inverse_cdf(fa + p * (fb - fa)).clamp(a, b)
                    }
                }
            })
        }
        Family::III => fill(dm, n, seed, |i, rng| {
            let (a, b) = support(i);
            a + (b - a) * rng.random::<f64>()
        }),
        Family::IV => {
            let mut laws = vec![];
            for i in 0..dm.len() {
                laws.push(beta_shape(dm, i)?);
            }
            fill(dm, n, seed, |i, rng| {
                let (a, b) = (0.5 * dm.lo[i], 1.5 * dm.hi[i]);
                match &laws[i] {
                    None => dm.mean[i],
                    Some(beta) => a + (b - a) * beta.sample(rng),
                }
            })
        }
    };
    Ok(ScenarioSet {
        durations: rows,
        provenance: Provenance { family: setting.to_string(), params: format!("delta={delta}"), seed },
    })
}

/// Method-of-moments beta on [0.5 lo, 1.5 hi]; `None` for zero variance.
pub fn beta_shape(dm: &DurationModel, i: usize) -> Result<Option<Beta<f64>>, ScenarioError> {
    let (a, b) = (0.5 * dm.lo[i], 1.5 * dm.hi[i]);
    let width = b - a;
    let mu = (dm.mean[i] - a) / width;
    let var = (dm.std[i] / width).powi(2);
    if var == 0.0 {
        return Ok(None);
    }
    let cap = mu * (1.0 - mu);
    if !(mu > 0.0 && mu < 1.0) || var >= cap {
        return Err(ScenarioError::Parameterization {
            surgery: i,
            reason: format!("variance {} exceeds the beta maximum {} on [{a}, {b}]", dm.std[i].powi(2), cap * width * width),
        });
    }
    let k = cap / var - 1.0;
    Beta::new(mu * k, (1.0 - mu) * k)
        .map(Some)
        .map_err(|e| ScenarioError::Parameterization { surgery: i, reason: e.to_string() })
}
