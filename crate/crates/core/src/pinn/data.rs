//! Four-channel PINN datasets: source (f), boundary/initial (b), solution (u)
//! and reaction rate (λ) measurements.
//!
//! CSV layout: header `x,t,value,channel`, one row per measurement. Channel
//! likelihood scales and the f time levels live in a JSON sidecar
//! (`<name>.pinn.json`).

use super::problem::{ChannelNoise, PdeProblem};
use super::solver::ReferenceSolution;
use crate::data::{fmt_f64, parse_field};
use crate::error::{Result, UqError};
use crate::rng::{stream, Purpose};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    F,
    B,
    U,
    Lambda,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::F, Channel::B, Channel::U, Channel::Lambda];

    pub fn name(self) -> &'static str {
        match self {
            Channel::F => "f",
            Channel::B => "b",
            Channel::U => "u",
            Channel::Lambda => "lambda",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// Measurements of one channel. `t` is ignored for the f and λ channels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChannelData {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub value: Vec<f64>,
}

impl ChannelData {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn push(&mut self, t: f64, x: f64, v: f64) {
        self.t.push(t);
        self.x.push(x);
        self.value.push(v);
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut out = Self::default();
        for &i in idx {
            out.push(self.t[i], self.x[i], self.value[i]);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinnMeta {
    /// Likelihood standard deviation per channel.
    pub sigma: ChannelNoise,
    /// Time levels at which each f measurement is compared with the residual.
    pub f_times: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<ChannelNoise>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PinnDataset {
    pub f: ChannelData,
    pub b: ChannelData,
    pub u: ChannelData,
    pub lambda: ChannelData,
    pub meta: PinnMeta,
}

impl PinnDataset {
    pub fn empty(sigma: ChannelNoise, f_times: Vec<f64>) -> Self {
        Self {
            f: ChannelData::default(),
            b: ChannelData::default(),
            u: ChannelData::default(),
            lambda: ChannelData::default(),
            meta: PinnMeta {
                sigma,
                f_times,
                noise: None,
                seed: None,
            },
        }
    }

    pub fn channel(&self, c: Channel) -> &ChannelData {
        match c {
            Channel::F => &self.f,
            Channel::B => &self.b,
            Channel::U => &self.u,
            Channel::Lambda => &self.lambda,
        }
    }

    pub fn channel_mut(&mut self, c: Channel) -> &mut ChannelData {
        match c {
            Channel::F => &mut self.f,
            Channel::B => &mut self.b,
            Channel::U => &mut self.u,
            Channel::Lambda => &mut self.lambda,
        }
    }

    pub fn sigma(&self, c: Channel) -> f64 {
        let s = &self.meta.sigma;
        match c {
            Channel::F => s.f,
            Channel::B => s.b,
            Channel::U => s.u,
            Channel::Lambda => s.lambda,
        }
    }

    pub fn len(&self) -> usize {
        Channel::ALL.iter().map(|&c| self.channel(c).len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Maps a flat index (channels concatenated in f, b, u, λ order) to its channel and row.
    pub fn locate(&self, i: usize) -> Option<(Channel, usize)> {
        let mut off = 0;
        for c in Channel::ALL {
            let n = self.channel(c).len();
            if i < off + n {
                return Some((c, i - off));
            }
            off += n;
        }
        None
    }

    /// Per-channel row subsets selected by flat indices.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let mut rows: [Vec<usize>; 4] = Default::default();
        for &i in idx {
            let (c, r) = self
                .locate(i)
                .ok_or_else(|| UqError::Config(format!("batch index {i} out of range for {} points", self.len())))?;
            rows[c as usize].push(r);
        }
        let mut out = Self::empty(self.meta.sigma, self.meta.f_times.clone());
        out.meta = self.meta.clone();
        for c in Channel::ALL {
            *out.channel_mut(c) = self.channel(c).subset(&rows[c as usize]);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        for c in Channel::ALL {
            let d = self.channel(c);
            if d.t.len() != d.len() || d.x.len() != d.len() {
                return Err(UqError::Config(format!("channel {} has ragged columns", c.name())));
            }
            for i in 0..d.len() {
                let (t, x, v) = (d.t[i], d.x[i], d.value[i]);
                if !(t.is_finite() && x.is_finite() && v.is_finite()) {
                    return Err(UqError::NonFinite { context: "pinn dataset", value: v });
                }
                if !(-1.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&t) {
                    return Err(UqError::Config(format!("channel {} point ({t}, {x}) outside the domain", c.name())));
                }
                if c == Channel::B && !(t == 0.0 || x.abs() == 1.0) {
                    return Err(UqError::Config(format!("boundary point ({t}, {x}) is not on the boundary")));
                }
            }
            if !d.is_empty() && !(self.sigma(c) > 0.0) {
                return Err(UqError::Config(format!("channel {} needs a positive likelihood scale", c.name())));
            }
        }
        if !self.f.is_empty() && self.meta.f_times.is_empty() {
            return Err(UqError::Config("f measurements need at least one time level".into()));
        }
        Ok(())
    }

    /// Samples every channel of `problem`, using `reference` for u values.
    pub fn generate(problem: &PdeProblem, reference: &ReferenceSolution) -> Result<Self> {
        problem.validate()?;
        let mut rng = stream(problem.seed, Purpose::Noise);
        let mut noisy = |v: f64, s: f64| {
            if s > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                v + s * z
            } else {
                v
            }
        };
        let mut ds = Self::empty(problem.likelihood_sigma, problem.f_times.clone());
        ds.meta.noise = Some(problem.noise);
        ds.meta.seed = Some(problem.seed);
        let n = problem.noise;
        for x in problem.f_locations() {
            ds.f.push(0.0, x, noisy(problem.source_at(x), n.f));
        }
        for (t, x) in problem.b_locations() {
            ds.b.push(t, x, noisy(problem.boundary_value(t, x), n.b));
        }
        for (t, x) in problem.u_locations() {
            ds.u.push(t, x, noisy(reference.interpolate(t, x), n.u));
        }
        for x in problem.lambda_locations() {
            ds.lambda.push(0.0, x, noisy(problem.lambda_at(x), n.lambda));
        }
        Ok(ds)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "t", "value", "channel"])?;
        for c in Channel::ALL {
            let d = self.channel(c);
            for i in 0..d.len() {
                w.write_record([fmt_f64(d.x[i]), fmt_f64(d.t[i]), fmt_f64(d.value[i]), c.name().to_string()])?;
            }
        }
        w.flush()?;
        std::fs::write(pinn_sidecar(path), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let meta: PinnMeta = serde_json::from_str(&std::fs::read_to_string(pinn_sidecar(path))?)?;
        let mut ds = Self::empty(meta.sigma, meta.f_times.clone());
        ds.meta = meta;
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != ["x", "t", "value", "channel"] {
            return Err(UqError::Config(format!(
                "{}: expected header `x,t,value,channel`, got `{}`",
                path.display(),
                header.join(",")
            )));
        }
        for rec in r.records() {
            let rec = rec?;
            let c = Channel::parse(rec[3].trim())
                .ok_or_else(|| UqError::Config(format!("{}: unknown channel `{}`", path.display(), &rec[3])))?;
            ds.channel_mut(c)
                .push(parse_field(&rec[1], path)?, parse_field(&rec[0], path)?, parse_field(&rec[2], path)?);
        }
        ds.validate()?;
        Ok(ds)
    }
}

pub fn pinn_sidecar(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    path.with_file_name(format!("{stem}.pinn.json"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pinn::problem::PdeProblem;
    use crate::pinn::solver::MolConfig;

    fn small_problem() -> PdeProblem {
        let mut p = PdeProblem::steep();
        p.solver = MolConfig { nx: 64, nt: 20, tol: 1e-5, ..Default::default() };
        p
    }

    #[test]
    fn noise_free_generation_matches_fields() {
        let mut p = small_problem();
        p.noise = ChannelNoise { f: 0.0, b: 0.0, u: 0.0, lambda: 0.0 };
        let r = p.solve_reference().unwrap();
        let ds = PinnDataset::generate(&p, &r).unwrap();
        ds.validate().unwrap();
        assert_eq!(ds.f.len(), 13);
        for i in 0..ds.f.len() {
            assert_eq!(ds.f.value[i], p.source_at(ds.f.x[i]));
        }
        for i in 0..ds.lambda.len() {
            assert_eq!(ds.lambda.value[i], p.lambda_at(ds.lambda.x[i]));
        }
        for i in 0..ds.u.len() {
            assert_eq!(ds.u.value[i], r.interpolate(ds.u.t[i], ds.u.x[i]));
        }
        for i in 0..ds.b.len() {
            assert_eq!(ds.b.value[i], p.boundary_value(ds.b.t[i], ds.b.x[i]));
        }
    }

    #[test]
    fn csv_round_trip_and_determinism() {
        let p = small_problem();
        let r = p.solve_reference().unwrap();
        let ds = PinnDataset::generate(&p, &r).unwrap();
        let again = PinnDataset::generate(&p, &r).unwrap();
        assert_eq!(ds, again);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pinn.csv");
        ds.write_csv(&path).unwrap();
        assert_eq!(PinnDataset::read_csv(&path).unwrap(), ds);
    }

    #[test]
    fn flat_indices_span_channels_in_order() {
        let p = small_problem();
        let r = p.solve_reference().unwrap();
        let ds = PinnDataset::generate(&p, &r).unwrap();
        assert_eq!(ds.locate(0), Some((Channel::F, 0)));
        assert_eq!(ds.locate(13), Some((Channel::B, 0)));
        assert_eq!(ds.locate(ds.len() - 1), Some((Channel::Lambda, 10)));
        assert_eq!(ds.locate(ds.len()), None);
        let sub = ds.subset(&[0, 13, ds.len() - 1]).unwrap();
        assert_eq!((sub.f.len(), sub.b.len(), sub.u.len(), sub.lambda.len()), (1, 1, 0, 1));
    }
}
