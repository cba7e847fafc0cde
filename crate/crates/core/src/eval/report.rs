use super::calibration::CalibrationMap;
use super::metrics::{kl_g, mpl, nip_g, piw, rl2e, rmsce, DEFAULT_LEVELS};
use super::PredictiveSummary;
use crate::error::Result;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub struct MetricsReport {
    #[serde(rename = "method")]
    pub method: String,
    #[serde(rename = "seed")]
    pub seed: u64,
    pub rl2e: f64,
    pub mpl: f64,
    pub rmsce: f64,
    /// Mean 95% interval width.
    pub piw: f64,
    /// Absent when the predictive spread is zero everywhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sdcv: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nip_g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl_g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "calibration")]
    pub calibration: Option<CalibrationReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub kind: String,
    pub rmsce_before: f64,
    pub rmsce_after: f64,
    pub mpl_before: f64,
    pub mpl_after: f64,
}

impl MetricsReport {
    pub fn compute(method: &str, seed: u64, s: &PredictiveSummary, u: &[f64], gold: Option<&PredictiveSummary>) -> Result<Self> {
        let (nip, kl) = match gold {
            Some(g) => (Some(nip_g(&s.total, &g.total)?), Some(kl_g(s, g)?)),
            None => (None, None),
        };
        Ok(Self {
            method: method.to_string(),
            seed,
            rl2e: rl2e(s, u)?,
            mpl: mpl(s, u)?,
            rmsce: rmsce(s, u, DEFAULT_LEVELS)?,
            piw: piw(s, 0.95)?,
            sdcv: super::metrics::sdcv(s).ok(),
            nip_g: nip,
            kl_g: kl,
            calibration: None,
        })
    }

    /// Column names and values in a fixed order for tabulation.
    pub fn columns(&self) -> Vec<(&'static str, Option<f64>)> {
        let c = self.calibration.as_ref();
        vec![
            ("RL2E", Some(self.rl2e)),
            ("MPL", Some(self.mpl)),
            ("RMSCE", Some(self.rmsce)),
            ("PIW", Some(self.piw)),
            ("SDCV", self.sdcv),
            ("NIP_G", self.nip_g),
            ("KL_G", self.kl_g),
            ("RMSCE_calibrated", c.map(|c| c.rmsce_after)),
            ("MPL_calibrated", c.map(|c| c.mpl_after)),
        ]
    }
}

impl CalibrationReport {
    pub fn compute(map: &CalibrationMap, s: &PredictiveSummary, u: &[f64]) -> Result<Self> {
        let after = map.apply(s)?;
        Ok(Self {
            kind: map.kind().to_string(),
            rmsce_before: rmsce(s, u, DEFAULT_LEVELS)?,
            rmsce_after: map.rmsce(s, u, DEFAULT_LEVELS)?,
            mpl_before: mpl(s, u)?,
            mpl_after: mpl(&after, u)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_schema_and_gold_fields() {
        let s = PredictiveSummary::from_moments(vec![0.0, 1.0], vec![1.0, 2.0], vec![0.5, 0.5]).unwrap();
        let u = [0.1, 0.8];
        let r = MetricsReport::compute("hmc", 3, &s, &u, None).unwrap();
        let j = serde_json::to_value(&r).unwrap();
        assert!(j.get("RL2E").is_some() && j.get("NIP_G").is_none() && j["method"] == "hmc");
        let g = MetricsReport::compute("hmc", 3, &s, &u, Some(&s)).unwrap();
        assert_eq!(g.nip_g, Some(1.0));
        assert_eq!(g.kl_g, Some(0.0));
        let back: MetricsReport = serde_json::from_value(serde_json::to_value(&g).unwrap()).unwrap();
        assert_eq!(back, g);
    }
}
