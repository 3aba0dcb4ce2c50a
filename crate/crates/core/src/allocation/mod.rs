//! Balancing allocations assembled from optimal semicouplings.
//!
//! Three constructions are provided: one for mutually singular inputs, one
//! for inputs that charge no small sets (threshold splitting of the moved
//! mass), and a general one that first peels off the part of `η` that is
//! singular with respect to `ξ`.

pub mod bijection;
mod pipeline;
mod rounding;
mod threshold;

use std::collections::HashSet;

use crate::cost::ConcaveCost;
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;

pub use bijection::{BitInterleave, DisplacementBijection, DisplacementCode};
pub use pipeline::{
    allocate, allocate_general, allocate_mutually_singular, allocate_no_small_sets, AllocationOptions, Branch,
    Partition, PipelineOutput, PipelineReport,
};
pub use threshold::{combined_f, find_threshold, profile_i, profile_j, CombinedF, ThresholdSplit};

/// Image point and used fraction of one source atom.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub source: usize,
    pub target: Vec<f64>,
    /// Fraction `f ∈ (0, 1]` of the atom's mass that is moved.
    pub fraction: f64,
}

/// An allocation `T` on the atoms of a source measure, with used fractions `f`.
#[derive(Clone, Debug, PartialEq)]
pub struct AllocationMap {
    source: DiscreteMeasure,
    assignments: Vec<Assignment>,
}

impl AllocationMap {
    /// Validates indices, fractions and target dimensions; targets are wrapped.
    pub fn new(source: DiscreteMeasure, assignments: Vec<Assignment>) -> Result<Self> {
        let dom = *source.domain();
        let mut seen = HashSet::new();
        let mut checked = Vec::with_capacity(assignments.len());
        for a in assignments {
            if a.source >= source.len() {
                return Err(Error::InvalidMeasure(format!("source index {} out of range", a.source)));
            }
            if !seen.insert(a.source) {
                return Err(Error::InvalidMeasure(format!(
                    "source index {} assigned twice",
                    a.source
                )));
            }
            if !(a.fraction > 0.0 && a.fraction <= 1.0) {
                return Err(Error::InvalidMeasure(format!(
                    "fraction {} of source {} outside (0, 1]",
                    a.fraction, a.source
                )));
            }
            if a.target.len() != dom.dim() || a.target.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidMeasure(format!("bad target for source {}", a.source)));
            }
            let target = a.target.iter().map(|&c| dom.wrap(c)).collect();
            checked.push(Assignment { target, ..a });
        }
        Ok(Self::new_unchecked(source, checked))
    }

    pub(crate) fn new_unchecked(source: DiscreteMeasure, mut assignments: Vec<Assignment>) -> Self {
        assignments.sort_by_key(|a| a.source);
        Self { source, assignments }
    }

    /// Every atom mapped to itself with `f = 1`.
    pub fn identity(source: DiscreteMeasure) -> Self {
        let assignments = (0..source.len())
            .map(|i| Assignment {
                source: i,
                target: source.location(i).to_vec(),
                fraction: 1.0,
            })
            .collect();
        Self { source, assignments }
    }

    pub fn source(&self) -> &DiscreteMeasure {
        &self.source
    }

    /// Assignments sorted by source index.
    pub fn assignments(&self) -> &[Assignment] {
        &self.assignments
    }

    pub fn get(&self, source: usize) -> Option<&Assignment> {
        self.assignments
            .binary_search_by_key(&source, |a| a.source)
            .ok()
            .map(|k| &self.assignments[k])
    }

    /// Image of the point `x`, if `x` is an atom of the source.
    pub fn apply(&self, x: &[f64]) -> Option<&[f64]> {
        self.source
            .find(x)
            .and_then(|i| self.get(i))
            .map(|a| a.target.as_slice())
    }

    /// True when every atom is assigned with `f = 1`.
    pub fn is_total(&self) -> bool {
        self.assignments.len() == self.source.len() && self.assignments.iter().all(|a| a.fraction == 1.0)
    }

    /// `Σ f_i·μ_i·δ_{T(x_i)}`.
    pub fn pushforward(&self) -> Result<DiscreteMeasure> {
        DiscreteMeasure::new(
            *self.source.domain(),
            self.assignments
                .iter()
                .map(|a| (a.target.clone(), a.fraction * self.source.mass(a.source))),
        )
    }

    /// Total moved mass `Σ f_i·μ_i`.
    pub fn used_mass(&self) -> f64 {
        self.assignments
            .iter()
            .map(|a| a.fraction * self.source.mass(a.source))
            .sum()
    }

    /// `Σ f_i·μ_i·ϑ(|T(x_i) − x_i|)`, not normalized by volume.
    pub fn cost(&self, theta: &ConcaveCost) -> f64 {
        let dom = self.source.domain();
        self.assignments
            .iter()
            .map(|a| {
                let r = dom.distance(self.source.location(a.source), &a.target);
                a.fraction * self.source.mass(a.source) * theta.eval_unchecked(r)
            })
            .sum()
    }

    /// `(T(x) − x, f·mass)` pairs, sorted lexicographically.
    pub fn displacement_masses(&self) -> Vec<(Vec<f64>, f64)> {
        let dom = self.source.domain();
        let mut out: Vec<(Vec<f64>, f64)> = self
            .assignments
            .iter()
            .map(|a| {
                (
                    dom.displacement(self.source.location(a.source), &a.target),
                    a.fraction * self.source.mass(a.source),
                )
            })
            .collect();
        out.sort_by(|a, b| {
            a.0.iter()
                .zip(&b.0)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.total_cmp(&b.1))
        });
        out
    }
}

/// Inverse of a total allocation that is injective on atoms.
///
/// The result is defined on the pushforward measure and sends each image atom
/// back to its unique preimage.
pub fn invert_allocation(map: &AllocationMap) -> Result<AllocationMap> {
    let src = map.source();
    let unassigned: Vec<usize> = (0..src.len()).filter(|&i| map.get(i).is_none()).collect();
    if !unassigned.is_empty() {
        return Err(Error::NotInvertible(format!("unassigned source atoms {unassigned:?}")));
    }
    let partial: Vec<usize> = map
        .assignments()
        .iter()
        .filter(|a| a.fraction != 1.0)
        .map(|a| a.source)
        .collect();
    if !partial.is_empty() {
        return Err(Error::NotInvertible(format!("partially used source atoms {partial:?}")));
    }
    let image = map.pushforward()?;
    let mut preimage: Vec<Option<usize>> = vec![None; image.len()];
    let mut shared = Vec::new();
    for a in map.assignments() {
        let j = image.find(&a.target).expect("targets are atoms of the pushforward");
        match preimage[j] {
            Some(prev) => shared.push((prev, a.source)),
            None => preimage[j] = Some(a.source),
        }
    }
    if !shared.is_empty() {
        return Err(Error::NotInvertible(format!(
            "source atoms sharing a target {shared:?}"
        )));
    }
    let assignments = preimage
        .into_iter()
        .enumerate()
        .map(|(j, i)| Assignment {
            source: j,
            target: src.location(i.expect("every image atom has a preimage")).to_vec(),
            fraction: 1.0,
        })
        .collect();
    Ok(AllocationMap::new_unchecked(image, assignments))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::PeriodicDomain;

    fn line() -> PeriodicDomain {
        PeriodicDomain::new(1, 4.0, 4).unwrap()
    }

    fn measure(atoms: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::new(line(), atoms.iter().map(|&(x, w)| (vec![x], w))).unwrap()
    }

    fn map(src: &DiscreteMeasure, pairs: &[(f64, f64, f64)]) -> AllocationMap {
        let assignments = pairs
            .iter()
            .map(|&(x, y, f)| Assignment {
                source: src.find(&[x]).unwrap(),
                target: vec![y],
                fraction: f,
            })
            .collect();
        AllocationMap::new(src.clone(), assignments).unwrap()
    }

    #[test]
    fn validation_rejects_bad_assignments() {
        let src = measure(&[(0.0, 1.0)]);
        let bad = |source, fraction| {
            AllocationMap::new(
                src.clone(),
                vec![Assignment {
                    source,
                    target: vec![1.0],
                    fraction,
                }],
            )
        };
        assert!(bad(1, 1.0).is_err());
        assert!(bad(0, 0.0).is_err());
        assert!(bad(0, 1.5).is_err());
        assert!(bad(0, 1.0).is_ok());
    }

    #[test]
    fn pushforward_examples() {
        let src = measure(&[(0.0, 2.0)]);
        let t = map(&src, &[(0.0, 1.0, 0.5)]);
        assert_eq!(t.pushforward().unwrap(), measure(&[(1.0, 1.0)]));
        let two = measure(&[(0.0, 1.0), (2.0, 3.0)]);
        let merged = map(&two, &[(0.0, 1.0, 1.0), (2.0, 1.0, 1.0)]);
        assert_eq!(merged.pushforward().unwrap(), measure(&[(1.0, 4.0)]));
        assert_eq!(AllocationMap::identity(two.clone()).pushforward().unwrap(), two);
    }

    #[test]
    fn inverse_examples() {
        let id = AllocationMap::identity(measure(&[(0.0, 1.0), (1.0, 2.0)]));
        assert_eq!(invert_allocation(&id).unwrap(), id);

        let single = map(&measure(&[(0.0, 1.0)]), &[(0.0, 1.0, 1.0)]);
        let inv = invert_allocation(&single).unwrap();
        assert_eq!(inv.source(), &measure(&[(1.0, 1.0)]));
        assert_eq!(inv.assignments()[0].target, vec![0.0]);

        let pair = measure(&[(0.0, 1.0), (1.0, 1.0)]);
        let swap = map(&pair, &[(0.0, 1.0, 1.0), (1.0, 0.0, 1.0)]);
        assert_eq!(invert_allocation(&swap).unwrap(), swap);
    }

    #[test]
    fn inverse_reports_offending_atoms() {
        let pair = measure(&[(0.0, 1.0), (1.0, 1.0)]);
        let merge = map(&pair, &[(0.0, 2.0, 1.0), (1.0, 2.0, 1.0)]);
        assert!(matches!(invert_allocation(&merge), Err(Error::NotInvertible(_))));
        let partial = map(&pair, &[(0.0, 2.0, 0.5), (1.0, 3.0, 1.0)]);
        assert!(matches!(invert_allocation(&partial), Err(Error::NotInvertible(_))));
        let missing = map(&pair, &[(0.0, 2.0, 1.0)]);
        assert!(matches!(invert_allocation(&missing), Err(Error::NotInvertible(_))));
    }
}
