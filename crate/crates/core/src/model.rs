//! Physical parameters and the ensemble template they are applied to.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bloch::{
    make_lorentzian_ensemble, simulate_fingerprint, LorentzianSpec, PulseSequence,
    RelaxationParams, SpinEnsemble, Trajectory,
};
use crate::error::{Error, Result};

/// A named physical parameter of the spin model. Serialized names carry units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Parameter {
    #[serde(rename = "t1_s")]
    T1,
    #[serde(rename = "t2_s")]
    T2,
    #[serde(rename = "fwhm_rad_per_s")]
    Fwhm,
    #[serde(rename = "center_rad_per_s")]
    Center,
    #[serde(rename = "rf_scale")]
    RfScale,
}

impl Parameter {
    pub const ALL: [Parameter; 5] = [
        Parameter::T1,
        Parameter::T2,
        Parameter::Fwhm,
        Parameter::Center,
        Parameter::RfScale,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Parameter::T1 => "t1_s",
            Parameter::T2 => "t2_s",
            Parameter::Fwhm => "fwhm_rad_per_s",
            Parameter::Center => "center_rad_per_s",
            Parameter::RfScale => "rf_scale",
        }
    }

    pub fn from_name(name: &str) -> Option<Parameter> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Admissible closed interval used for validation and projection.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Parameter::T1 | Parameter::T2 => (1e-6, f64::INFINITY),
            Parameter::Fwhm => (1e-9, f64::INFINITY),
            Parameter::Center => (f64::NEG_INFINITY, f64::INFINITY),
            Parameter::RfScale => (1e-6, f64::INFINITY),
        }
    }

    /// Natural scale used when the current value is zero.
    pub fn default_scale(&self) -> f64 {
        match self {
            Parameter::T1 | Parameter::T2 => 0.1,
            Parameter::Fwhm | Parameter::Center => 1.0,
            Parameter::RfScale => 1.0,
        }
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered tuple of named parameter values. Names are unique by construction.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterPoint(BTreeMap<Parameter, f64>);

impl ParameterPoint {
    pub fn new(values: impl IntoIterator<Item = (Parameter, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (p, v) in values {
            if map.insert(p, v).is_some() {
                return Err(Error::invalid(format!("parameter {p} given twice")));
            }
        }
        let point = ParameterPoint(map);
        point.validate()?;
        Ok(point)
    }

    pub fn single(p: Parameter, v: f64) -> Result<Self> {
        Self::new([(p, v)])
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::invalid("parameter point must name at least one parameter"));
        }
        for (p, &v) in &self.0 {
            let (lo, hi) = p.bounds();
            if !v.is_finite() || v < lo || v > hi {
                return Err(Error::invalid(format!("{p} = {v} outside admissible range")));
            }
        }
        Ok(())
    }

    pub fn get(&self, p: Parameter) -> Option<f64> {
        self.0.get(&p).copied()
    }

    pub fn set(&mut self, p: Parameter, v: f64) {
        self.0.insert(p, v);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Parameter, f64)> + '_ {
        self.0.iter().map(|(p, v)| (*p, *v))
    }

    /// Bitwise equality, used to reject duplicate dictionary entries.
    pub fn same_as(&self, other: &ParameterPoint) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|((pa, va), (pb, vb))| pa == pb && va.to_bits() == vb.to_bits())
    }
}

impl fmt::Display for ParameterPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.iter().map(|(p, v)| format!("{p}={v}")).collect();
        f.write_str(&parts.join(", "))
    }
}

/// How resonance offsets are distributed over the sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OffsetModel {
    Homogeneous {
        offset_rad_per_s: f64,
    },
    Lorentzian {
        center_rad_per_s: f64,
        fwhm_rad_per_s: f64,
        n_points: usize,
        support_halfwidth: f64,
    },
}

/// Everything needed to build a [`SpinEnsemble`] apart from the parameters
/// being estimated; a [`ParameterPoint`] overrides individual fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub t1_s: f64,
    pub t2_s: f64,
    pub rf_scale: f64,
    pub offsets: OffsetModel,
}

impl EnsembleSpec {
    pub fn homogeneous(t1: f64, t2: f64) -> Self {
        Self {
            t1_s: t1,
            t2_s: t2,
            rf_scale: 1.0,
            offsets: OffsetModel::Homogeneous {
                offset_rad_per_s: 0.0,
            },
        }
    }

    pub fn lorentzian(t1: f64, t2: f64, spec: LorentzianSpec) -> Self {
        Self {
            t1_s: t1,
            t2_s: t2,
            rf_scale: 1.0,
            offsets: OffsetModel::Lorentzian {
                center_rad_per_s: spec.center,
                fwhm_rad_per_s: spec.fwhm,
                n_points: spec.n_points,
                support_halfwidth: spec.support_halfwidth,
            },
        }
    }

    pub fn get(&self, p: Parameter) -> Option<f64> {
        match (p, &self.offsets) {
            (Parameter::T1, _) => Some(self.t1_s),
            (Parameter::T2, _) => Some(self.t2_s),
            (Parameter::RfScale, _) => Some(self.rf_scale),
            (Parameter::Center, OffsetModel::Homogeneous { offset_rad_per_s }) => {
                Some(*offset_rad_per_s)
            }
            (Parameter::Center, OffsetModel::Lorentzian { center_rad_per_s, .. }) => {
                Some(*center_rad_per_s)
            }
            (Parameter::Fwhm, OffsetModel::Lorentzian { fwhm_rad_per_s, .. }) => {
                Some(*fwhm_rad_per_s)
            }
            (Parameter::Fwhm, OffsetModel::Homogeneous { .. }) => None,
        }
    }

    pub fn set(&mut self, p: Parameter, v: f64) -> Result<()> {
        match (p, &mut self.offsets) {
            (Parameter::T1, _) => self.t1_s = v,
            (Parameter::T2, _) => self.t2_s = v,
            (Parameter::RfScale, _) => self.rf_scale = v,
            (Parameter::Center, OffsetModel::Homogeneous { offset_rad_per_s }) => {
                *offset_rad_per_s = v
            }
            (Parameter::Center, OffsetModel::Lorentzian { center_rad_per_s, .. }) => {
                *center_rad_per_s = v
            }
            (Parameter::Fwhm, OffsetModel::Lorentzian { fwhm_rad_per_s, .. }) => {
                *fwhm_rad_per_s = v
            }
            (Parameter::Fwhm, OffsetModel::Homogeneous { .. }) => {
                return Err(Error::invalid(
                    "fwhm is only defined for a Lorentzian offset distribution",
                ))
            }
        }
        Ok(())
    }

    pub fn with_point(&self, point: &ParameterPoint) -> Result<EnsembleSpec> {
        let mut spec = *self;
        for (p, v) in point.iter() {
            spec.set(p, v)?;
        }
        Ok(spec)
    }

    /// Full parameter point with every parameter this template defines.
    pub fn to_point(&self) -> ParameterPoint {
        ParameterPoint(
            Parameter::ALL
                .iter()
                .filter_map(|&p| self.get(p).map(|v| (p, v)))
                .collect(),
        )
    }

    pub fn relaxation(&self) -> Result<RelaxationParams> {
        RelaxationParams::new(self.t1_s, self.t2_s)
    }

    pub fn build(&self) -> Result<SpinEnsemble> {
        let relaxation = self.relaxation()?;
        match self.offsets {
            OffsetModel::Homogeneous { offset_rad_per_s } => {
                SpinEnsemble::single(offset_rad_per_s, self.rf_scale, relaxation)
            }
            OffsetModel::Lorentzian {
                center_rad_per_s,
                fwhm_rad_per_s,
                n_points,
                support_halfwidth,
            } => make_lorentzian_ensemble(
                &LorentzianSpec {
                    center: center_rad_per_s,
                    fwhm: fwhm_rad_per_s,
                    n_points,
                    support_halfwidth,
                },
                self.rf_scale,
                relaxation,
            ),
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("ensemble spec serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// SHA-256 over the bit patterns of the delay and every rotation area.
pub fn sequence_hash(seq: &PulseSequence) -> String {
    let mut h = Sha256::new();
    h.update(b"spinfp-sequence-v1");
    h.update(seq.delay_t().to_bits().to_le_bytes());
    h.update((seq.len() as u64).to_le_bytes());
    for p in seq.pulses() {
        h.update(p.theta_x.to_bits().to_le_bytes());
        h.update(p.theta_y.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// A template paired with the control field it is driven by.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModel {
    pub template: EnsembleSpec,
    pub sequence: PulseSequence,
}

impl ForwardModel {
    pub fn new(template: EnsembleSpec, sequence: PulseSequence) -> Self {
        Self { template, sequence }
    }

    pub fn simulate(&self, point: &ParameterPoint) -> Result<Trajectory> {
        let ensemble = self.template.with_point(point)?.build()?;
        Ok(simulate_fingerprint(&ensemble, &self.sequence))
    }
}
