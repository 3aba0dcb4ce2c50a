//! Exact semicoupling (partial optimal transport) between atomic measures.
//!
//! A semicoupling of `μ` and `ν` has first marginal `≤ μ` and second marginal
//! exactly `ν`. Surplus source mass is routed to a zero-cost overflow sink,
//! turning the problem into a balanced transportation problem solved by the
//! network simplex in [`network_simplex`].
//!
//! Ties between optimal plans are broken by perturbing every arc cost by a
//! tiny amount that depends only on the quantized periodic displacement of the
//! arc. The perturbation commutes with translations, so the selected plan is
//! a function of the relative configuration only.

mod network_simplex;
pub mod oracle;

use crate::allocation::bijection::DisplacementCode;
use crate::allocation::{AllocationMap, Assignment};
use crate::cost::ConcaveCost;
use crate::domain::PeriodicDomain;
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;

use network_simplex::{NetworkSimplex, SimplexStatus};

pub use oracle::{brute_force_oracle, OracleResult};

/// One `(source atom, target atom, mass)` triple of a plan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanEntry {
    pub source: usize,
    pub target: usize,
    pub mass: f64,
}

/// Sparse transport plan between the atoms of two measures.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    entries: Vec<PlanEntry>,
}

impl TransportPlan {
    /// Entries are sorted by `(source, target)`.
    pub fn new(source: DiscreteMeasure, target: DiscreteMeasure, mut entries: Vec<PlanEntry>) -> Self {
        entries.sort_by_key(|a| (a.source, a.target));
        Self {
            source,
            target,
            entries,
        }
    }

    pub fn source(&self) -> &DiscreteMeasure {
        &self.source
    }

    pub fn target(&self) -> &DiscreteMeasure {
        &self.target
    }

    pub fn domain(&self) -> &PeriodicDomain {
        self.source.domain()
    }

    pub fn entries(&self) -> &[PlanEntry] {
        &self.entries
    }

    /// First marginal, per source atom.
    pub fn used_mass(&self) -> Vec<f64> {
        let mut used = vec![0.0; self.source.len()];
        for e in &self.entries {
            used[e.source] += e.mass;
        }
        used
    }

    /// Second marginal, per target atom.
    pub fn received_mass(&self) -> Vec<f64> {
        let mut got = vec![0.0; self.target.len()];
        for e in &self.entries {
            got[e.target] += e.mass;
        }
        got
    }

    /// `Σ mass · ϑ(distance)`, not normalized by volume.
    pub fn total_cost(&self, theta: &ConcaveCost) -> f64 {
        let dom = self.domain();
        self.entries
            .iter()
            .map(|e| {
                e.mass
                    * theta.eval_unchecked(dom.distance(self.source.location(e.source), self.target.location(e.target)))
            })
            .sum()
    }

    /// Periodic displacement of an entry.
    pub fn displacement(&self, e: &PlanEntry) -> Vec<f64> {
        self.domain()
            .displacement(self.source.location(e.source), self.target.location(e.target))
    }

    /// Largest violation of the semicoupling marginal constraints.
    pub fn marginal_error(&self) -> f64 {
        let col = self
            .received_mass()
            .iter()
            .zip(self.target.masses())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let row = self
            .used_mass()
            .iter()
            .zip(self.source.masses())
            .map(|(a, b)| (a - b).max(0.0))
            .fold(0.0, f64::max);
        col.max(row)
    }

    /// The transposed plan, from target atoms back to source atoms.
    pub fn transposed(&self) -> TransportPlan {
        let entries = self
            .entries
            .iter()
            .map(|e| PlanEntry {
                source: e.target,
                target: e.source,
                mass: e.mass,
            })
            .collect();
        TransportPlan::new(self.target.clone(), self.source.clone(), entries)
    }
}

/// How ties between optimal plans are resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// Perturb each arc cost by a hash of its quantized displacement and the
    /// masses at both ends.
    #[default]
    Displacement,
    /// No perturbation; the basis reached by the pivoting order wins.
    None,
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub tie_break: TieBreak,
    /// Largest instance (total atoms) accepted by the brute-force oracle.
    pub oracle_limit: usize,
    /// Above this many source-target pairs the candidate arc set is pruned.
    pub dense_limit: usize,
    /// Nearest neighbours per atom in the pruned candidate set.
    pub candidate_neighbors: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            tie_break: TieBreak::Displacement,
            oracle_limit: 8,
            dense_limit: 4_000_000,
            candidate_neighbors: 24,
        }
    }
}

/// Relative size of the tie-breaking perturbation.
const PERTURBATION: f64 = 1e-10;
/// Relative reduced-cost threshold for entering arcs.
const PIVOT_TOLERANCE: f64 = 1e-13;

pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform value in `[0, 1)` determined by the quantized displacement and the
/// masses at both ends, all of which are unchanged by translations.
pub(crate) fn arc_hash(domain: &PeriodicDomain, v: &[f64], source_mass: f64, target_mass: f64) -> f64 {
    let mut h = 0x6a09_e667_f3bc_c908u64;
    for k in domain.displacement_key(v) {
        h = mix64(h ^ k as u64);
    }
    h = mix64(h ^ source_mass.to_bits());
    h = mix64(h ^ target_mass.to_bits().rotate_left(32));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

struct CostModel<'a> {
    mu: &'a DiscreteMeasure,
    nu: &'a DiscreteMeasure,
    theta: &'a ConcaveCost,
    epsilon: f64,
}

impl CostModel<'_> {
    fn cost(&self, i: usize, j: usize) -> f64 {
        let dom = self.mu.domain();
        let (x, y) = (self.mu.location(i), self.nu.location(j));
        let v = dom.displacement(x, y);
        let r = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        let base = self.theta.eval_unchecked(r);
        if self.epsilon > 0.0 {
            base + self.epsilon * arc_hash(dom, &v, self.mu.mass(i), self.nu.mass(j))
        } else {
            base
        }
    }
}

/// Minimizes `Σ mass · ϑ(dist)` over semicouplings of `mu` and `nu`.
pub fn solve_semicoupling(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    theta: &ConcaveCost,
    opts: &SolverOptions,
) -> Result<TransportPlan> {
    if mu.domain() != nu.domain() {
        return Err(Error::DomainMismatch);
    }
    let total_mu = mu.total_mass();
    let total_nu = nu.total_mass();
    if total_mu < total_nu - opts.tolerance * total_nu.max(1.0) {
        return Err(Error::Infeasible {
            source_mass: total_mu,
            target_mass: total_nu,
        });
    }
    if nu.is_empty() {
        return Ok(TransportPlan::new(mu.clone(), nu.clone(), Vec::new()));
    }
    let (m, n) = (mu.len(), nu.len());
    let scale = theta.eval_unchecked(mu.domain().max_distance()).max(f64::MIN_POSITIVE);
    let epsilon = match opts.tie_break {
        TieBreak::Displacement => PERTURBATION * scale,
        TieBreak::None => 0.0,
    };
    let model = CostModel { mu, nu, theta, epsilon };
    let tolerance = PIVOT_TOLERANCE * scale;
    let dense = m.saturating_mul(n) <= opts.dense_limit;

    let arcs: Vec<(u32, u32, f64)> = if dense {
        (0..m)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (i as u32, j as u32, model.cost(i, j)))
            .collect()
    } else {
        candidate_arcs(mu, nu, opts.candidate_neighbors.max(1))
            .into_iter()
            .map(|(i, j)| (i as u32, j as u32, model.cost(i, j)))
            .collect()
    };
    let num_arcs_hint = arcs.len();
    let mut simplex = NetworkSimplex::new(mu.masses(), nu.masses(), &arcs, tolerance);
    drop(arcs);
    let max_pivots = 200 * (num_arcs_hint + m + n) + 1_000_000;
    loop {
        if let SimplexStatus::PivotLimit = simplex.run(max_pivots) {
            return Err(Error::SolverStalled(simplex.pivots()));
        }
        if dense {
            break;
        }
        // audit every pair against the current potentials
        let mut violations: Vec<(f64, usize, usize, f64)> = Vec::new();
        for i in 0..m {
            for j in 0..n {
                let c = model.cost(i, j);
                let rc = simplex.reduced_cost_of(i, j, c);
                if rc < -tolerance {
                    violations.push((rc, i, j, c));
                }
            }
        }
        if violations.is_empty() {
            break;
        }
        let cap = 8 * (m + n);
        if violations.len() > cap {
            violations.select_nth_unstable_by(cap, |a, b| a.0.total_cmp(&b.0));
            violations.truncate(cap);
        }
        for (_, i, j, c) in violations {
            simplex.add_arc(i as u32, j as u32, c);
        }
    }

    let art = simplex.artificial_flow();
    if art > opts.tolerance * total_nu.max(1.0) {
        return Err(Error::Infeasible {
            source_mass: total_mu,
            target_mass: total_nu,
        });
    }
    let cutoff = 1e-14 * total_nu.max(f64::MIN_POSITIVE);
    let entries = simplex
        .real_flows()
        .filter(|&(_, _, f)| f > cutoff)
        .map(|(source, target, mass)| PlanEntry { source, target, mass })
        .collect();
    Ok(TransportPlan::new(mu.clone(), nu.clone(), entries))
}

/// Optimal plan from `a` to `b`, solved from `b` when `a` is lighter.
///
/// Near-equal totals keep the `a → b` direction, so the choice does not hinge
/// on summation roundoff.
pub fn solve_oriented(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    theta: &ConcaveCost,
    opts: &SolverOptions,
) -> Result<TransportPlan> {
    let (ta, tb) = (a.total_mass(), b.total_mass());
    if ta >= tb - opts.tolerance * tb.max(1.0) {
        solve_semicoupling(a, b, theta, opts)
    } else {
        Ok(solve_semicoupling(b, a, theta, opts)?.transposed())
    }
}

/// `k` nearest targets of every source and `k` nearest sources of every target.
fn candidate_arcs(mu: &DiscreteMeasure, nu: &DiscreteMeasure, k: usize) -> Vec<(usize, usize)> {
    let dom = mu.domain();
    let mut pairs = Vec::new();
    let mut scratch: Vec<(f64, usize)> = Vec::new();
    for i in 0..mu.len() {
        scratch.clear();
        scratch.extend((0..nu.len()).map(|j| (dom.distance(mu.location(i), nu.location(j)), j)));
        let kk = k.min(scratch.len());
        if kk < scratch.len() {
            scratch.select_nth_unstable_by(kk, |a, b| a.0.total_cmp(&b.0));
        }
        pairs.extend(scratch[..kk].iter().map(|&(_, j)| (i, j)));
    }
    for j in 0..nu.len() {
        scratch.clear();
        scratch.extend((0..mu.len()).map(|i| (dom.distance(mu.location(i), nu.location(j)), i)));
        let kk = k.min(scratch.len());
        if kk < scratch.len() {
            scratch.select_nth_unstable_by(kk, |a, b| a.0.total_cmp(&b.0));
        }
        pairs.extend(scratch[..kk].iter().map(|&(_, i)| (i, j)));
    }
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

/// Fraction of source mass sitting at partially used atoms.
pub fn indicator_fraction(plan: &TransportPlan) -> f64 {
    let mu = plan.source();
    let total = mu.total_mass();
    if total <= 0.0 {
        return 0.0;
    }
    let partial: f64 = plan
        .used_mass()
        .iter()
        .zip(mu.masses())
        .filter(|(u, m)| {
            let f = *u / *m;
            f > 1e-9 && f < 1.0 - 1e-9
        })
        .map(|(_, m)| *m)
        .sum();
    partial / total
}

/// Sources whose mass is spread over more than one target.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitReport {
    pub split_sources: Vec<usize>,
    /// Mass sent by split sources to targets other than their main one.
    pub split_mass: f64,
}

impl SplitReport {
    pub fn count(&self) -> usize {
        self.split_sources.len()
    }
}

#[derive(Clone, Debug)]
pub enum MapExtraction {
    Map(AllocationMap),
    Split(SplitReport),
}

/// Reads `q = (Id, T)#(f·μ)` off a plan when every source has one target.
pub fn extract_map(plan: &TransportPlan) -> MapExtraction {
    let (map, report) = round_to_map(plan);
    if report.count() == 0 {
        MapExtraction::Map(map)
    } else {
        MapExtraction::Split(report)
    }
}

/// Assigns every used source to its main target, with `f = used / mass`.
///
/// The main target is the one receiving the most mass; equal shares are
/// ordered by the displacement code so the choice commutes with translations.
pub fn round_to_map(plan: &TransportPlan) -> (AllocationMap, SplitReport) {
    let mu = plan.source();
    let nu = plan.target();
    let dom = plan.domain();
    let mut report = SplitReport::default();
    let mut assignments = Vec::new();
    let entries = plan.entries();
    let mut start = 0;
    while start < entries.len() {
        let src = entries[start].source;
        let mut end = start;
        while end < entries.len() && entries[end].source == src {
            end += 1;
        }
        let group = &entries[start..end];
        let main = group
            .iter()
            .max_by(|a, b| {
                a.mass.total_cmp(&b.mass).then_with(|| {
                    let ca = DisplacementCode::encode_wrapped(dom, &plan.displacement(a));
                    let cb = DisplacementCode::encode_wrapped(dom, &plan.displacement(b));
                    cb.cmp(&ca)
                })
            })
            .expect("nonempty group");
        let used: f64 = group.iter().map(|e| e.mass).sum();
        if group.len() > 1 {
            report.split_sources.push(src);
            report.split_mass += used - main.mass;
        }
        assignments.push(Assignment {
            source: src,
            target: nu.location(main.target).to_vec(),
            fraction: (used / mu.mass(src)).min(1.0),
        });
        start = end;
    }
    (AllocationMap::new_unchecked(mu.clone(), assignments), report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(side: f64) -> PeriodicDomain {
        PeriodicDomain::new(1, side, 8).unwrap()
    }

    fn m(dom: PeriodicDomain, atoms: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::new(dom, atoms.iter().map(|&(x, w)| (vec![x], w))).unwrap()
    }

    #[test]
    fn single_option_half_used() {
        let dom = line(10.0);
        let mu = m(dom, &[(0.0, 2.0)]);
        let nu = m(dom, &[(1.0, 1.0)]);
        let theta = ConcaveCost::power(0.5, 5.0, 32).unwrap();
        let plan = solve_semicoupling(&mu, &nu, &theta, &SolverOptions::default()).unwrap();
        assert_eq!(
            plan.entries(),
            &[PlanEntry {
                source: 0,
                target: 0,
                mass: 1.0
            }]
        );
        assert!((plan.total_cost(&theta) - theta.eval(1.0).unwrap()).abs() < 1e-12);
        assert_eq!(indicator_fraction(&plan), 1.0);
        match extract_map(&plan) {
            MapExtraction::Map(map) => {
                assert_eq!(map.assignments()[0].fraction, 0.5);
                assert_eq!(map.assignments()[0].target, vec![1.0]);
            }
            MapExtraction::Split(_) => panic!("unexpected split"),
        }
    }

    #[test]
    fn identical_measures_give_the_diagonal() {
        let dom = line(4.0);
        let mu = m(dom, &[(0.0, 1.0), (1.0, 2.0), (2.5, 0.5)]);
        let plan = solve_semicoupling(&mu, &mu, &ConcaveCost::linear(), &SolverOptions::default()).unwrap();
        assert!(plan.entries().iter().all(|e| e.source == e.target));
        assert_eq!(plan.total_cost(&ConcaveCost::linear()), 0.0);
        assert_eq!(indicator_fraction(&plan), 0.0);
    }

    #[test]
    fn infeasible_and_mismatched_inputs() {
        let dom = line(4.0);
        let small = m(dom, &[(0.0, 1.0)]);
        let big = m(dom, &[(1.0, 2.0)]);
        let theta = ConcaveCost::linear();
        let opts = SolverOptions::default();
        assert!(matches!(
            solve_semicoupling(&small, &big, &theta, &opts),
            Err(Error::Infeasible { .. })
        ));
        let other = m(line(5.0), &[(0.0, 1.0)]);
        assert!(matches!(
            solve_semicoupling(&small, &other, &theta, &opts),
            Err(Error::DomainMismatch)
        ));
    }

    #[test]
    fn split_source_is_reported() {
        let dom = line(4.0);
        let mu = m(dom, &[(0.0, 2.0)]);
        let nu = m(dom, &[(1.0, 1.0), (3.5, 1.0)]);
        let plan = TransportPlan::new(
            mu,
            nu,
            vec![
                PlanEntry {
                    source: 0,
                    target: 0,
                    mass: 1.0,
                },
                PlanEntry {
                    source: 0,
                    target: 1,
                    mass: 1.0,
                },
            ],
        );
        match extract_map(&plan) {
            MapExtraction::Split(r) => {
                assert_eq!(r.count(), 1);
                assert_eq!(r.split_mass, 1.0);
            }
            MapExtraction::Map(_) => panic!("expected a split"),
        }
    }

    #[test]
    fn pruned_candidates_reach_the_dense_optimum() {
        let dom = PeriodicDomain::new(2, 1.0, 8).unwrap();
        let mu = DiscreteMeasure::new(
            dom,
            (0..40).map(|k| {
                let t = k as f64;
                (
                    vec![(t * 0.618).fract(), (t * 0.377).fract()],
                    1.0 + (t * 0.7).sin().abs(),
                )
            }),
        )
        .unwrap();
        let nu = DiscreteMeasure::new(
            dom,
            (0..30).map(|k| {
                let t = k as f64 + 0.5;
                (vec![(t * 0.271).fract(), (t * 0.829).fract()], 1.0)
            }),
        )
        .unwrap();
        let theta = ConcaveCost::power(0.5, 1.0, 32).unwrap();
        let dense = solve_semicoupling(&mu, &nu, &theta, &SolverOptions::default()).unwrap();
        let pruned_opts = SolverOptions {
            dense_limit: 0,
            candidate_neighbors: 2,
            ..SolverOptions::default()
        };
        let pruned = solve_semicoupling(&mu, &nu, &theta, &pruned_opts).unwrap();
        assert!((dense.total_cost(&theta) - pruned.total_cost(&theta)).abs() < 1e-9);
        assert!(pruned.marginal_error() < 1e-9);
    }
}
