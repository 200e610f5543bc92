//! Dictionaries of simulated fingerprints, the normalized distance between
//! signals, the dictionary figure of merit, and nearest-entry recognition.
//!
//! Signals are compared through the component-summed discrete scalar product
//! over all samples. The uniform quadrature weight cancels in every
//! normalized quantity and is omitted.

use rayon::prelude::*;

use crate::bloch::{PulseSequence, Trajectory};
use crate::error::{Error, Result};
use crate::model::{sequence_hash, EnsembleSpec, ForwardModel, ParameterPoint};

fn check_shape(f: &Trajectory, g: &Trajectory) -> Result<()> {
    if f.len() != g.len() {
        return Err(Error::Dimension {
            expected: f.len(),
            actual: g.len(),
        });
    }
    Ok(())
}

pub fn inner_product(f: &Trajectory, g: &Trajectory) -> Result<f64> {
    check_shape(f, g)?;
    Ok(f.samples()
        .iter()
        .zip(g.samples())
        .map(|(a, b)| a[0] * b[0] + a[1] * b[1])
        .sum())
}

pub fn norm(f: &Trajectory) -> f64 {
    f.samples()
        .iter()
        .map(|a| a[0] * a[0] + a[1] * a[1])
        .sum::<f64>()
        .sqrt()
}

fn checked_norm(f: &Trajectory, what: &str) -> Result<f64> {
    let n = norm(f);
    if n > 0.0 && n.is_finite() {
        Ok(n)
    } else {
        Err(Error::DegenerateSignal(format!("{what} has zero norm")))
    }
}

/// Squared distance between the normalized signals, `‖f/‖f‖ − g/‖g‖‖²`.
///
/// Equals `2(1 − cos α)` where α is the angle between `f` and `g`, so it lies
/// in `[0, 4]`. Computed in difference form so identical inputs give exactly 0.
pub fn distance(f: &Trajectory, g: &Trajectory) -> Result<f64> {
    check_shape(f, g)?;
    let nf = checked_norm(f, "first signal")?;
    let ng = checked_norm(g, "second signal")?;
    Ok(normalized_distance(f, nf, g, ng))
}

fn normalized_distance(f: &Trajectory, nf: f64, g: &Trajectory, ng: f64) -> f64 {
    f.samples()
        .iter()
        .zip(g.samples())
        .map(|(a, b)| {
            let dx = a[0] / nf - b[0] / ng;
            let dy = a[1] / nf - b[1] / ng;
            dx * dx + dy * dy
        })
        .sum()
}

/// Symmetric non-negative pair weights μ_mn. The diagonal is never used.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    mu: Vec<f64>,
}

impl WeightMatrix {
    pub fn ones(n: usize) -> Self {
        Self {
            n,
            mu: vec![1.0; n * n],
        }
    }

    /// Row-major `n × n` weights.
    pub fn new(n: usize, mu: Vec<f64>) -> Result<Self> {
        if mu.len() != n * n {
            return Err(Error::Dimension {
                expected: n * n,
                actual: mu.len(),
            });
        }
        for m in 0..n {
            for k in 0..n {
                let v = mu[m * n + k];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::invalid(format!("weight ({m},{k}) = {v} must be non-negative")));
                }
                if m != k && v != mu[k * n + m] {
                    return Err(Error::invalid(format!("weight matrix not symmetric at ({m},{k})")));
                }
            }
        }
        Ok(Self { n, mu })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, m: usize, k: usize) -> f64 {
        self.mu[m * self.n + k]
    }
}

/// One dictionary element.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryEntry {
    pub point: ParameterPoint,
    pub trajectory: Trajectory,
}

/// Parameter points paired with the fingerprints simulated for them under a
/// fixed control field.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    template: EnsembleSpec,
    sequence: PulseSequence,
    entries: Vec<DictionaryEntry>,
}

impl Dictionary {
    /// Simulates every grid point. Entries are computed in parallel and kept
    /// in grid order.
    pub fn build(
        template: EnsembleSpec,
        sequence: PulseSequence,
        points: Vec<ParameterPoint>,
    ) -> Result<Self> {
        let model = ForwardModel::new(template, sequence);
        let trajectories: Vec<Trajectory> = points
            .par_iter()
            .map(|p| model.simulate(p))
            .collect::<Result<_>>()?;
        let entries = points
            .into_iter()
            .zip(trajectories)
            .map(|(point, trajectory)| DictionaryEntry { point, trajectory })
            .collect();
        Self::from_entries(model.template, model.sequence, entries)
    }

    pub fn from_entries(
        template: EnsembleSpec,
        sequence: PulseSequence,
        entries: Vec<DictionaryEntry>,
    ) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("dictionary needs at least one entry"));
        }
        for (i, e) in entries.iter().enumerate() {
            e.point.validate()?;
            if e.trajectory.len() != sequence.len() {
                return Err(Error::Dimension {
                    expected: sequence.len(),
                    actual: e.trajectory.len(),
                });
            }
            if let Some(j) = entries[..i].iter().position(|o| o.point.same_as(&e.point)) {
                return Err(Error::invalid(format!(
                    "dictionary entries {j} and {i} share the parameter point {}",
                    e.point
                )));
            }
        }
        Ok(Self {
            template,
            sequence,
            entries,
        })
    }

    pub fn entries(&self) -> &[DictionaryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn template(&self) -> &EnsembleSpec {
        &self.template
    }

    pub fn sequence(&self) -> &PulseSequence {
        &self.sequence
    }

    pub fn forward_model(&self) -> ForwardModel {
        ForwardModel::new(self.template, self.sequence.clone())
    }

    pub fn field_hash(&self) -> String {
        sequence_hash(&self.sequence)
    }

    pub fn ensemble_hash(&self) -> String {
        self.template.hash()
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.entries.iter().map(|e| &e.trajectory)
    }
}

/// `C_N = (1/2N²) Σ_{m,n} μ_mn D[f_m, f_n]` over a set of fingerprints.
pub fn figure_of_merit_of(trajectories: &[Trajectory], weights: &WeightMatrix) -> Result<f64> {
    let n = trajectories.len();
    if weights.size() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: weights.size(),
        });
    }
    let map = pairwise(trajectories)?;
    let mut total = 0.0;
    for m in 0..n {
        for k in 0..n {
            if m != k {
                total += weights.get(m, k) * map[m * n + k];
            }
        }
    }
    Ok(total / (2.0 * (n * n) as f64))
}

pub fn figure_of_merit(dict: &Dictionary, weights: &WeightMatrix) -> Result<f64> {
    let trajectories: Vec<Trajectory> = dict.trajectories().cloned().collect();
    figure_of_merit_of(&trajectories, weights)
}

fn pairwise(trajectories: &[Trajectory]) -> Result<Vec<f64>> {
    let n = trajectories.len();
    for t in &trajectories[1..] {
        check_shape(&trajectories[0], t)?;
    }
    let norms: Vec<f64> = trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| checked_norm(t, &format!("entry {i}")))
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; n * n];
    for m in 0..n {
        for k in (m + 1)..n {
            let d = normalized_distance(&trajectories[m], norms[m], &trajectories[k], norms[k]);
            out[m * n + k] = d;
            out[k * n + m] = d;
        }
    }
    Ok(out)
}

/// Pairwise distance matrix of a dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct RecognitionMap {
    n: usize,
    matrix: Vec<f64>,
}

impl RecognitionMap {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, m: usize, k: usize) -> f64 {
        self.matrix[m * self.n + k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.matrix.chunks(self.n.max(1))
    }

    /// Smallest off-diagonal distance; `None` for a single entry.
    pub fn min_off_diagonal(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for m in 0..self.n {
            for k in (m + 1)..self.n {
                let d = self.get(m, k);
                best = Some(best.map_or(d, |b: f64| b.min(d)));
            }
        }
        best
    }
}

pub fn recognition_map(dict: &Dictionary) -> Result<RecognitionMap> {
    let trajectories: Vec<Trajectory> = dict.trajectories().cloned().collect();
    recognition_map_of(&trajectories)
}

pub fn recognition_map_of(trajectories: &[Trajectory]) -> Result<RecognitionMap> {
    Ok(RecognitionMap {
        n: trajectories.len(),
        matrix: pairwise(trajectories)?,
    })
}

/// Outcome of matching a signal against a dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct Recognition {
    pub index: usize,
    pub point: ParameterPoint,
    pub residual: f64,
    /// Another entry is at the same distance; the signal sits on a partition
    /// boundary and the lowest index was returned.
    pub tie: bool,
    /// `D[f_n, g]` for every entry, in dictionary order.
    pub distances: Vec<f64>,
}

/// Distances closer than this are treated as exact ties.
pub const TIE_TOLERANCE: f64 = 1e-14;

pub fn recognize(dict: &Dictionary, g: &Trajectory) -> Result<Recognition> {
    let ng = checked_norm(g, "measured signal")?;
    let distances: Vec<f64> = dict
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| {
            check_shape(&e.trajectory, g)?;
            let nf = checked_norm(&e.trajectory, &format!("entry {i}"))?;
            Ok(normalized_distance(&e.trajectory, nf, g, ng))
        })
        .collect::<Result<_>>()?;
    let mut index = 0;
    for (i, &d) in distances.iter().enumerate() {
        if d < distances[index] {
            index = i;
        }
    }
    let residual = distances[index];
    let tie = distances
        .iter()
        .enumerate()
        .any(|(i, &d)| i != index && (d - residual).abs() <= TIE_TOLERANCE);
    Ok(Recognition {
        index,
        point: dict.entries()[index].point.clone(),
        residual,
        tie,
        distances,
    })
}
