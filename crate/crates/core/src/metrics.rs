//! Objective reconstruction metrics: MSE, log-spectral distance and SI-SNR.

use std::io::Write;

use serde::{Deserialize, Serialize, Serializer};

use crate::audio::{resampled_len, sinc_resample, AudioBuffer, StftPlan};
use crate::error::check_same_len;
use crate::hypernet::HyperNetModel;
use crate::inr::make_grid;
use crate::{Error, Result};

pub const LSD_FFT_SIZE: usize = 2048;
pub const LSD_HOP: usize = 512;
pub const LSD_EPSILON: f64 = 1e-8;

pub fn mse(x: &AudioBuffer, xhat: &AudioBuffer) -> Result<f64> {
    check_same_len(x.len(), xhat.len())?;
    if x.is_empty() {
        return Err(Error::EmptySignal);
    }
    let sum: f64 = x
        .samples()
        .iter()
        .zip(xhat.samples())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / x.len() as f64)
}

/// Mean over frames of the RMS (over bins) log10 power-spectrum difference.
pub fn lsd(x: &AudioBuffer, xhat: &AudioBuffer) -> Result<f64> {
    check_same_len(x.len(), xhat.len())?;
    let plan = StftPlan::new(LSD_FFT_SIZE, LSD_HOP)?;
    let px = plan.spectrum(x.samples())?;
    let py = plan.spectrum(xhat.samples())?;
    let bins = plan.bins();
    let frames = px.len() / bins;
    let mut total = 0.0;
    for f in 0..frames {
        let range = f * bins..(f + 1) * bins;
        let ms: f64 = px[range.clone()]
            .iter()
            .zip(&py[range])
            .map(|(a, b)| {
                let d = (a.norm_sqr() + LSD_EPSILON).log10() - (b.norm_sqr() + LSD_EPSILON).log10();
                d * d
            })
            .sum::<f64>()
            / bins as f64;
        total += ms.sqrt();
    }
    Ok(total / frames as f64)
}

/// Scale-invariant SNR in dB. A perfect estimate gives `f64::INFINITY`.
pub fn si_snr(x: &AudioBuffer, xhat: &AudioBuffer) -> Result<f64> {
    check_same_len(x.len(), xhat.len())?;
    if x.is_empty() {
        return Err(Error::EmptySignal);
    }
    let centred = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|s| s - m).collect::<Vec<f64>>()
    };
    let r = centred(x.samples());
    let e = centred(xhat.samples());
    let rr: f64 = r.iter().map(|v| v * v).sum();
    let ee: f64 = e.iter().map(|v| v * v).sum();
    if rr == 0.0 || ee == 0.0 {
        return Err(Error::DegenerateSignal);
    }
    let scale = e.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / rr;
    let (mut target, mut noise) = (0.0, 0.0);
    for (a, b) in e.iter().zip(&r) {
        let s = scale * b;
        target += s * s;
        noise += (a - s) * (a - s);
    }
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (target / noise).log10())
}

/// SI-SNR outcome for one item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SiSnr {
    Db(f64),
    /// Zero residual: the estimate is an exact scaled copy.
    Infinite,
    /// Reference or estimate has zero variance.
    Degenerate,
}

impl SiSnr {
    fn from_result(r: Result<f64>) -> Result<Self> {
        match r {
            Ok(v) if v.is_infinite() => Ok(SiSnr::Infinite),
            Ok(v) => Ok(SiSnr::Db(v)),
            Err(Error::DegenerateSignal) => Ok(SiSnr::Degenerate),
            Err(e) => Err(e),
        }
    }

    pub fn db(&self) -> Option<f64> {
        match self {
            SiSnr::Db(v) => Some(*v),
            _ => None,
        }
    }
}

impl std::fmt::Display for SiSnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SiSnr::Db(v) => write!(f, "{v}"),
            SiSnr::Infinite => f.write_str("inf"),
            SiSnr::Degenerate => f.write_str("degenerate"),
        }
    }
}

impl Serialize for SiSnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SiSnr::Db(v) => s.serialize_f64(*v),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for SiSnr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Tag(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(SiSnr::Db(v)),
            Raw::Tag(t) if t == "inf" => Ok(SiSnr::Infinite),
            Raw::Tag(t) if t == "degenerate" => Ok(SiSnr::Degenerate),
            Raw::Tag(t) => Err(serde::de::Error::custom(format!("bad SI-SNR value {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub id: String,
    pub mse: f64,
    pub lsd: f64,
    pub si_snr_db: SiSnr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mse: f64,
    pub lsd: f64,
    /// Mean over items with a finite SI-SNR; `None` if there are none.
    pub si_snr_db: Option<f64>,
    pub count: usize,
    pub si_snr_count: usize,
    pub si_snr_infinite: usize,
    pub si_snr_degenerate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rate: u32,
    pub per_sample: Vec<MetricRow>,
    pub failures: Vec<MetricFailure>,
    pub aggregate: Aggregate,
}

/// Order-independent mean: values are summed in sorted order.
fn stable_mean(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

impl MetricReport {
    pub fn from_rows(rate: u32, per_sample: Vec<MetricRow>, failures: Vec<MetricFailure>) -> Self {
        let finite: Vec<f64> = per_sample.iter().filter_map(|r| r.si_snr_db.db()).collect();
        let aggregate = Aggregate {
            mse: stable_mean(per_sample.iter().map(|r| r.mse).collect()),
            lsd: stable_mean(per_sample.iter().map(|r| r.lsd).collect()),
            si_snr_count: finite.len(),
            si_snr_db: (!finite.is_empty()).then(|| stable_mean(finite)),
            count: per_sample.len(),
            si_snr_infinite: per_sample
                .iter()
                .filter(|r| r.si_snr_db == SiSnr::Infinite)
                .count(),
            si_snr_degenerate: per_sample
                .iter()
                .filter(|r| r.si_snr_db == SiSnr::Degenerate)
                .count(),
        };
        Self {
            rate,
            per_sample,
            failures,
            aggregate,
        }
    }

    /// CSV with header `id,mse,lsd,si_snr_db`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "id,mse,lsd,si_snr_db")?;
        for r in &self.per_sample {
            writeln!(out, "{},{},{},{}", r.id, r.mse, r.lsd, r.si_snr_db)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone)]
pub struct EvalItem {
    pub id: String,
    pub audio: AudioBuffer,
}

fn evaluate_item(model: &HyperNetModel, item: &EvalItem, target_rate: u32) -> Result<MetricRow> {
    let native = model.config().sample_rate;
    let source = if item.audio.sample_rate() == native {
        item.audio.clone()
    } else {
        sinc_resample(&item.audio, native)
    };
    let inr = model.predict_inr(&source)?;
    let n = resampled_len(source.len(), native, target_rate);
    let rendered = inr.render(&make_grid(n, target_rate)?)?;
    let truth = sinc_resample(&source, target_rate);
    Ok(MetricRow {
        id: item.id.clone(),
        mse: mse(&truth, &rendered)?,
        lsd: lsd(&truth, &rendered)?,
        si_snr_db: SiSnr::from_result(si_snr(&truth, &rendered))?,
    })
}

/// Reconstructs each item through the model, renders it at `target_rate`
/// and scores it against the band-limited resampling of the input. Items
/// that fail are listed in `failures` and excluded from the aggregates.
pub fn evaluate_set(model: &HyperNetModel, items: &[EvalItem], target_rate: u32) -> Result<MetricReport> {
    if items.is_empty() {
        return Err(Error::EmptyDataset("no evaluation items".into()));
    }
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for item in items {
        match evaluate_item(model, item, target_rate) {
            Ok(row) => rows.push(row),
            Err(e) => failures.push(MetricFailure {
                id: item.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    Ok(MetricReport::from_rows(target_rate, rows, failures))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buf(v: Vec<f64>) -> AudioBuffer {
        AudioBuffer::new(v, 16000).unwrap()
    }

    #[test]
    fn mse_cases() {
        let x = buf(vec![0.0; 4]);
        assert_eq!(mse(&x, &x).unwrap(), 0.0);
        assert!((mse(&x, &buf(vec![0.1; 4])).unwrap() - 0.01).abs() < 1e-15);
        assert!(mse(&x, &buf(vec![0.1; 3])).is_err());
    }

    #[test]
    fn si_snr_constructed_example() {
        let x = buf(vec![1.0, -1.0, 1.0, -1.0]);
        let y = buf(vec![1.1, -0.9, 0.9, -1.1]);
        assert!((si_snr(&x, &y).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(si_snr(&x, &x).unwrap(), f64::INFINITY);
        assert!(matches!(si_snr(&x, &buf(vec![0.3; 4])), Err(Error::DegenerateSignal)));
    }

    #[test]
    fn si_snr_grows_as_orthogonal_error_shrinks() {
        let n = 256;
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.2).sin()).collect();
        let e: Vec<f64> = (0..n).map(|i| (i as f64 * 1.7).cos()).collect();
        // remove the component of e along x so the error is orthogonal
        let xx: f64 = x.iter().map(|v| v * v).sum();
        let ex: f64 = x.iter().zip(&e).map(|(a, b)| a * b).sum();
        let e: Vec<f64> = e.iter().zip(&x).map(|(a, b)| a - ex / xx * b).collect();
        let mut prev = f64::NEG_INFINITY;
        for k in [1.0, 0.3, 0.1, 0.01, 1e-4] {
            let y: Vec<f64> = x.iter().zip(&e).map(|(a, b)| a + k * b).collect();
            let v = si_snr(&buf(x.clone()), &buf(y)).unwrap();
            assert!(v > prev);
            prev = v;
        }
        assert!(prev > 60.0);
    }

    #[test]
    fn report_aggregates_and_csv() {
        let rows = vec![
            MetricRow { id: "a".into(), mse: 0.1, lsd: 1.0, si_snr_db: SiSnr::Db(-3.0) },
            MetricRow { id: "b".into(), mse: 0.3, lsd: 2.0, si_snr_db: SiSnr::Infinite },
            MetricRow { id: "c".into(), mse: 0.2, lsd: 0.5, si_snr_db: SiSnr::Db(5.0) },
        ];
        let r = MetricReport::from_rows(22050, rows.clone(), vec![]);
        assert!((r.aggregate.mse - 0.2).abs() < 1e-12);
        assert!((r.aggregate.lsd - 3.5 / 3.0).abs() < 1e-12);
        assert_eq!(r.aggregate.si_snr_db, Some(1.0));
        assert_eq!(r.aggregate.si_snr_infinite, 1);
        let mut rev = rows;
        rev.reverse();
        assert_eq!(MetricReport::from_rows(22050, rev, vec![]).aggregate, r.aggregate);

        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("id,mse,lsd,si_snr_db\n"));
        assert!(text.contains("b,0.3,2,inf"));
        let back: MetricReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
