//! The displacement field `F`, the profiles `I`, `J` and the threshold `t₀`.

use std::collections::{HashMap, HashSet};

use crate::domain::PeriodicDomain;
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;
use crate::solver::TransportPlan;

use super::bijection::{DisplacementBijection, DisplacementCode};
use super::{invert_allocation, AllocationMap};

/// `F` restricted to the points it moves, with the codes `G(F(x) − x)`.
#[derive(Clone, Debug)]
pub struct CombinedF {
    domain: PeriodicDomain,
    moved: HashMap<Vec<i64>, (Vec<f64>, DisplacementCode)>,
}

impl CombinedF {
    pub(crate) fn identity(domain: PeriodicDomain) -> Self {
        Self {
            domain,
            moved: HashMap::new(),
        }
    }

    fn insert(&mut self, g: &dyn DisplacementBijection, x: &[f64], y: &[f64]) -> Result<()> {
        let code = g.code(&self.domain, &self.domain.displacement(x, y))?;
        self.moved.insert(self.domain.location_key(x), (y.to_vec(), code));
        Ok(())
    }

    /// `F(x)`; points outside both Jordan supports are fixed.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.moved
            .get(&self.domain.location_key(x))
            .map_or_else(|| x.to_vec(), |(y, _)| y.clone())
    }

    /// `G(F(x) − x)` when `F(x) ≠ x`.
    pub fn code(&self, x: &[f64]) -> Option<DisplacementCode> {
        self.code_by_key(&self.domain.location_key(x))
    }

    pub(crate) fn code_by_key(&self, key: &[i64]) -> Option<DisplacementCode> {
        self.moved.get(key).map(|&(_, c)| c)
    }

    pub fn num_moved(&self) -> usize {
        self.moved.len()
    }

    /// Sorted distinct codes of moved points.
    pub fn realized_codes(&self) -> Vec<DisplacementCode> {
        let mut codes: Vec<DisplacementCode> = self.moved.values().map(|&(_, c)| c).collect();
        codes.sort_unstable();
        codes.dedup();
        codes
    }
}

/// `F` from an injective total allocation `T: (ξ−η)₊ → (η−ξ)₊` and its inverse.
pub fn combined_f(
    xi: &DiscreteMeasure,
    eta: &DiscreteMeasure,
    t: &AllocationMap,
    g: &dyn DisplacementBijection,
) -> Result<CombinedF> {
    let dec = xi.jordan_decompose(eta)?;
    let (pos, neg) = (&dec.positive_part, &dec.negative_part);
    let mut f = CombinedF::identity(*xi.domain());
    for i in 0..pos.len() {
        let x = pos.location(i);
        let y = t
            .apply(x)
            .ok_or_else(|| Error::NotInvertible(format!("atom {x:?} of (ξ−η)₊ is not mapped")))?;
        f.insert(g, x, y)?;
    }
    let inv = invert_allocation(t)?;
    for j in 0..neg.len() {
        let y = neg.location(j);
        let x = inv
            .apply(y)
            .ok_or_else(|| Error::NotInvertible(format!("atom {y:?} of (η−ξ)₊ has no preimage")))?;
        f.insert(g, y, x)?;
    }
    Ok(f)
}

/// `F` read off an optimal plan between the Jordan parts.
///
/// Atoms of `(ξ−η)₊` go to the target receiving most of their mass and atoms
/// of `(η−ξ)₊` go back to their main supplier, so the rule coincides with
/// `T` and `T⁻¹` whenever the plan is induced by an invertible map.
pub(crate) fn combined_f_from_plan(plan: &TransportPlan, g: &dyn DisplacementBijection) -> Result<CombinedF> {
    let pos = plan.source();
    let neg = plan.target();
    let dom = *pos.domain();
    let mut f = CombinedF::identity(dom);
    let mut best_out: Vec<Option<(f64, DisplacementCode, usize)>> = vec![None; pos.len()];
    let mut best_in: Vec<Option<(f64, DisplacementCode, usize)>> = vec![None; neg.len()];
    for e in plan.entries() {
        let v = plan.displacement(e);
        let out = g.code(&dom, &v)?;
        let back = g.code(&dom, &v.iter().map(|c| dom.wrap_delta(-c)).collect::<Vec<_>>())?;
        if prefer(&best_out[e.source], e.mass, out) {
            best_out[e.source] = Some((e.mass, out, e.target));
        }
        if prefer(&best_in[e.target], e.mass, back) {
            best_in[e.target] = Some((e.mass, back, e.source));
        }
    }
    for (i, b) in best_out.iter().enumerate() {
        let j = match b {
            Some((_, _, j)) => *j,
            None => nearest(neg, pos.location(i), g)?,
        };
        f.insert(g, pos.location(i), neg.location(j))?;
    }
    for (j, b) in best_in.iter().enumerate() {
        let i = match b {
            Some((_, _, i)) => *i,
            None => nearest(pos, neg.location(j), g)?,
        };
        f.insert(g, neg.location(j), pos.location(i))?;
    }
    Ok(f)
}

/// Larger mass wins; equal masses go to the smaller code.
pub(crate) fn prefer(current: &Option<(f64, DisplacementCode, usize)>, mass: f64, code: DisplacementCode) -> bool {
    match current {
        None => true,
        Some((m, c, _)) => mass > *m || (mass == *m && code < *c),
    }
}

/// Closest atom of `measure` to `x`; ties go to the smaller code.
pub(crate) fn nearest(measure: &DiscreteMeasure, x: &[f64], g: &dyn DisplacementBijection) -> Result<usize> {
    let dom = measure.domain();
    let mut best: Option<(f64, DisplacementCode, usize)> = None;
    for j in 0..measure.len() {
        let v = dom.displacement(x, measure.location(j));
        let r = v.iter().map(|c| c * c).sum::<f64>();
        let code = g.code(dom, &v)?;
        let better = match best {
            None => true,
            Some((br, bc, _)) => r < br || (r == br && code < bc),
        };
        if better {
            best = Some((r, code, j));
        }
    }
    best.map(|b| b.2)
        .ok_or_else(|| Error::InvalidMeasure("no atom to fall back on".into()))
}

/// `I(t) = L^{-d}·ξ{x : F(x) ≠ x, G(F(x) − x) ≤ t}`.
pub fn profile_i(xi: &DiscreteMeasure, f: &CombinedF, t: DisplacementCode) -> f64 {
    let mass: f64 = (0..xi.len())
        .filter(|&i| f.code_by_key(xi.key(i)).is_some_and(|c| c <= t))
        .map(|i| xi.mass(i))
        .sum();
    mass / xi.domain().volume()
}

/// `J(t) = L^{-d}·η{x : F(x) ≠ x, G(F(x) − x) > t}`.
pub fn profile_j(eta: &DiscreteMeasure, f: &CombinedF, t: DisplacementCode) -> f64 {
    let mass: f64 = (0..eta.len())
        .filter(|&i| f.code_by_key(eta.key(i)).is_some_and(|c| c > t))
        .map(|i| eta.mass(i))
        .sum();
    mass / eta.domain().volume()
}

/// Threshold `t₀` and the side of every moved location.
#[derive(Clone, Debug, Default)]
pub struct ThresholdSplit {
    pub t0: DisplacementCode,
    /// `|I − J|` after the boundary level is split, in intensity units.
    pub residual_imbalance: f64,
    /// Moved locations at level `t₀`.
    pub boundary_size: usize,
    /// Boundary locations placed on the `≤ t₀` side.
    pub boundary_low: usize,
    low: HashSet<Vec<i64>>,
    trivial: bool,
}

impl ThresholdSplit {
    /// True when there was no moved mass to split.
    pub fn is_trivial(&self) -> bool {
        self.trivial
    }

    /// Whether a location key sits on the `G ≤ t₀` side.
    pub(crate) fn is_low_key(&self, key: &[i64]) -> bool {
        self.low.contains(key)
    }

    pub fn is_low(&self, domain: &PeriodicDomain, x: &[f64]) -> bool {
        self.is_low_key(&domain.location_key(x))
    }
}

/// A moved location as seen by the threshold search.
pub(crate) struct LevelItem {
    pub code: DisplacementCode,
    pub key: Vec<i64>,
    /// Change of `I − J` (in mass) when the location joins the low side.
    pub weight: f64,
    /// Secondary ordering data, independent of absolute position.
    pub tie: u64,
}

/// Smallest level where `start + Σ weights ≥ 0`, with that level split so the
/// sum is as close to zero as possible.
///
/// Within the boundary level, locations join the low side in order of
/// increasing weight, then by `tie`, then by location key.
pub(crate) fn split_levels(mut items: Vec<LevelItem>, start: f64, volume: f64) -> ThresholdSplit {
    if items.is_empty() {
        return ThresholdSplit {
            residual_imbalance: start.abs() / volume,
            trivial: true,
            ..ThresholdSplit::default()
        };
    }
    items.sort_by(|a, b| {
        a.code
            .cmp(&b.code)
            .then(a.weight.total_cmp(&b.weight))
            .then(a.tie.cmp(&b.tie))
            .then_with(|| a.key.cmp(&b.key))
    });
    let mut level_starts = vec![0];
    for k in 1..items.len() {
        if items[k].code != items[k - 1].code {
            level_starts.push(k);
        }
    }
    level_starts.push(items.len());
    let mut before = start;
    let mut chosen = level_starts.len() - 2;
    for l in 0..level_starts.len() - 1 {
        let level_sum: f64 = items[level_starts[l]..level_starts[l + 1]]
            .iter()
            .map(|it| it.weight)
            .sum();
        if before + level_sum >= 0.0 {
            chosen = l;
            break;
        }
        before += level_sum;
    }
    let (lo, hi) = (level_starts[chosen], level_starts[chosen + 1]);
    // best prefix of the boundary level
    let mut acc = before;
    let mut best = (acc.abs(), 0);
    for (k, it) in items[lo..hi].iter().enumerate() {
        acc += it.weight;
        if acc.abs() < best.0 {
            best = (acc.abs(), k + 1);
        }
        if acc >= 0.0 {
            break;
        }
    }
    let low = items[..lo + best.1].iter().map(|it| it.key.clone()).collect();
    ThresholdSplit {
        t0: items[lo].code,
        residual_imbalance: best.0 / volume,
        boundary_size: hi - lo,
        boundary_low: best.1,
        low,
        trivial: false,
    }
}

pub(crate) fn mass_tie(a: f64, b: f64) -> u64 {
    crate::solver::mix64(a.to_bits() ^ crate::solver::mix64(b.to_bits()))
}

/// Threshold for the no-small-sets construction: `I(t₀) ≈ J(t₀)`.
pub fn find_threshold(xi: &DiscreteMeasure, eta: &DiscreteMeasure, f: &CombinedF) -> ThresholdSplit {
    let dom = xi.domain();
    let mut by_key: HashMap<Vec<i64>, (f64, f64)> = HashMap::new();
    for i in 0..xi.len() {
        if f.code_by_key(xi.key(i)).is_some() {
            by_key.entry(xi.key(i).to_vec()).or_default().0 += xi.mass(i);
        }
    }
    let mut moved_eta = 0.0;
    for j in 0..eta.len() {
        if f.code_by_key(eta.key(j)).is_some() {
            by_key.entry(eta.key(j).to_vec()).or_default().1 += eta.mass(j);
            moved_eta += eta.mass(j);
        }
    }
    let items = by_key
        .into_iter()
        .map(|(key, (a, b))| LevelItem {
            code: f.code_by_key(&key).expect("moved"),
            weight: a + b,
            tie: mass_tie(a, b),
            key,
        })
        .collect();
    split_levels(items, -moved_eta, dom.volume())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::{Assignment, BitInterleave};

    fn line() -> PeriodicDomain {
        PeriodicDomain::new(1, 8.0, 8).unwrap()
    }

    fn measure(atoms: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::new(line(), atoms.iter().map(|&(x, w)| (vec![x], w))).unwrap()
    }

    fn map(src: &DiscreteMeasure, pairs: &[(f64, f64)]) -> AllocationMap {
        let assignments = pairs
            .iter()
            .map(|&(x, y)| Assignment {
                source: src.find(&[x]).unwrap(),
                target: vec![y],
                fraction: 1.0,
            })
            .collect();
        AllocationMap::new(src.clone(), assignments).unwrap()
    }

    #[test]
    fn equal_measures_give_identity_and_zero_profiles() {
        let xi = measure(&[(0.5, 1.0), (2.5, 2.0)]);
        let pos = xi.jordan_decompose(&xi).unwrap().positive_part;
        let f = combined_f(&xi, &xi, &AllocationMap::identity(pos), &BitInterleave).unwrap();
        assert_eq!(f.num_moved(), 0);
        assert_eq!(f.apply(&[0.5]), vec![0.5]);
        for t in [-5i128, 0, 5] {
            assert_eq!(profile_i(&xi, &f, DisplacementCode(t)), 0.0);
            assert_eq!(profile_j(&xi, &f, DisplacementCode(t)), 0.0);
        }
        assert!(find_threshold(&xi, &xi, &f).is_trivial());
    }

    #[test]
    fn single_pair_swaps_and_jumps() {
        let xi = measure(&[(0.5, 1.0), (4.5, 3.0)]);
        let eta = measure(&[(1.5, 1.0), (4.5, 3.0)]);
        let pos = xi.jordan_decompose(&eta).unwrap().positive_part;
        let t = map(&pos, &[(0.5, 1.5)]);
        let f = combined_f(&xi, &eta, &t, &BitInterleave).unwrap();
        assert_eq!(f.apply(&[0.5]), vec![1.5]);
        assert_eq!(f.apply(&[1.5]), vec![0.5]);
        assert_eq!(f.apply(&[4.5]), vec![4.5]);
        let c = f.code(&[0.5]).unwrap();
        let below = DisplacementCode(c.0 - 1);
        assert_eq!(profile_i(&xi, &f, below), 0.0);
        assert_eq!(profile_i(&xi, &f, c), 1.0 / 8.0);
        let split = find_threshold(&xi, &eta, &f);
        assert!(split.residual_imbalance <= 1.0 / 8.0);
    }

    #[test]
    fn symmetric_instance_balances_exactly() {
        // two pairs moving in opposite directions by the same distance
        let xi = measure(&[(0.5, 1.0), (5.5, 1.0)]);
        let eta = measure(&[(1.5, 1.0), (4.5, 1.0)]);
        let pos = xi.jordan_decompose(&eta).unwrap().positive_part;
        let t = map(&pos, &[(0.5, 1.5), (5.5, 4.5)]);
        let f = combined_f(&xi, &eta, &t, &BitInterleave).unwrap();
        let split = find_threshold(&xi, &eta, &f);
        assert_eq!(split.residual_imbalance, 0.0);
        let t0 = split.t0;
        assert!(profile_i(&xi, &f, t0) >= profile_j(&eta, &f, t0));
    }

    #[test]
    fn strict_version_rejects_shared_targets() {
        let xi = measure(&[(0.5, 1.0), (2.5, 1.0)]);
        let eta = measure(&[(1.5, 2.0)]);
        let t = map(&xi, &[(0.5, 1.5), (2.5, 1.5)]);
        assert!(matches!(
            combined_f(&xi, &eta, &t, &BitInterleave),
            Err(Error::NotInvertible(_))
        ));
    }
}
