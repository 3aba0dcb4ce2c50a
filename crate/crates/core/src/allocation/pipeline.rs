//! Assembly of the three allocation constructions.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cost::ConcaveCost;
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;
use crate::solver::{solve_oriented, solve_semicoupling, SolverOptions};
use crate::verification::{transport_distance, Ground};

use super::bijection::{BitInterleave, DisplacementBijection, DisplacementCode};
use super::rounding::{round_plan, SplitStats};
use super::threshold::{
    combined_f_from_plan, find_threshold, mass_tie, prefer, split_levels, CombinedF, LevelItem, ThresholdSplit,
};
use super::{AllocationMap, Assignment};

/// Which construction produced an allocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Pick from the inputs: singular, then no-small-sets, else general.
    #[default]
    Auto,
    #[serde(alias = "singular")]
    MutuallySingular,
    NoSmallSets,
    General,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Auto => "auto",
            Branch::MutuallySingular => "mutually_singular",
            Branch::NoSmallSets => "no_small_sets",
            Branch::General => "general",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Branch::Auto),
            "mutually_singular" | "singular" => Ok(Branch::MutuallySingular),
            "no_small_sets" => Ok(Branch::NoSmallSets),
            "general" => Ok(Branch::General),
            other => Err(Error::Config(format!("unknown branch '{other}'"))),
        }
    }
}

#[derive(Clone)]
pub struct AllocationOptions {
    pub solver: SolverOptions,
    /// Rule `G` ordering displacements.
    pub bijection: Arc<dyn DisplacementBijection + Send + Sync>,
    /// Allowed intensity gap for the mutually singular branch. `None` means
    /// `1e-9` relative to the larger intensity.
    pub intensity_tolerance: Option<f64>,
    /// Compute the balance error of the result (one extra transport solve).
    pub measure_balance: bool,
}

impl Default for AllocationOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            bijection: Arc::new(BitInterleave),
            intensity_tolerance: None,
            measure_balance: true,
        }
    }
}

impl fmt::Debug for AllocationOptions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AllocationOptions")
            .field("solver", &self.solver)
            .field("intensity_tolerance", &self.intensity_tolerance)
            .field("measure_balance", &self.measure_balance)
            .finish_non_exhaustive()
    }
}

/// Source atoms handled by each piece `S₁`, `S₂`, `S₃` of the allocation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Partition {
    pub s1: Vec<usize>,
    pub s2: Vec<usize>,
    pub s3: Vec<usize>,
}

impl Partition {
    /// True when the pieces are disjoint and cover `0..n`.
    pub fn is_exact(&self, n: usize) -> bool {
        let mut hit = vec![0u8; n];
        for &i in self.s1.iter().chain(&self.s2).chain(&self.s3) {
            if i >= n {
                return false;
            }
            hit[i] += 1;
        }
        hit.iter().all(|&h| h == 1)
    }
}

/// Summary of one pipeline run. All fields are finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub branch: Branch,
    /// `Σ mass·ϑ(|T(x) − x|)` over the torus.
    pub cost: f64,
    /// Cost per unit volume.
    pub mean_cost: f64,
    pub intensity_xi: f64,
    pub intensity_eta: f64,
    /// Linear transport distance between `T#ξ` and `η`; zero when not measured.
    pub balance_error: f64,
    /// Largest atom mass of either input.
    pub max_atom_mass: f64,
    pub residual_imbalance: f64,
    /// Sources whose optimal plan spread them over several targets.
    pub split_sources: usize,
    pub split_mass: f64,
    /// Real value of `G` at the threshold, zero when no threshold was needed.
    pub t0: f64,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub map: AllocationMap,
    pub report: PipelineReport,
    /// Threshold of the no-small-sets step, if one ran.
    pub threshold: Option<ThresholdSplit>,
    /// Threshold on `f·ξ` of the general construction, if one ran.
    pub general_threshold: Option<ThresholdSplit>,
    /// `F` of the no-small-sets step, if one ran.
    pub field: Option<CombinedF>,
    pub partition: Partition,
}

/// Target index for every source atom, sending all of the source's mass.
///
/// When the source is lighter than the target the plan is solved in the other
/// direction so that every source is covered; the plan is then rounded to
/// whole atoms.
fn transport_all(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    theta: &ConcaveCost,
    opts: &AllocationOptions,
) -> Result<(Vec<usize>, SplitStats)> {
    if src.is_empty() {
        return Ok((Vec::new(), SplitStats::default()));
    }
    if tgt.is_empty() {
        return Err(Error::InsufficientData("no target atoms to allocate to".into()));
    }
    let plan = solve_oriented(src, tgt, theta, &opts.solver)?;
    round_plan(&plan, opts.bijection.as_ref())
}

fn intensity_tolerance(xi: &DiscreteMeasure, eta: &DiscreteMeasure, opts: &AllocationOptions) -> f64 {
    opts.intensity_tolerance
        .unwrap_or_else(|| 1e-9 * xi.intensity().max(eta.intensity()))
}

/// Sub-measure of `m` on the selected atoms, with the selected indices.
fn select(m: &DiscreteMeasure, keep: impl Fn(usize) -> bool) -> (DiscreteMeasure, Vec<usize>) {
    let idx: Vec<usize> = (0..m.len()).filter(|&i| keep(i)).collect();
    let mut flags = vec![false; m.len()];
    for &i in &idx {
        flags[i] = true;
    }
    (m.restrict(|i| flags[i]), idx)
}

/// Appends whole-atom assignments from `sub` (indexed by `idx` in the parent).
fn push_routed(out: &mut Vec<Assignment>, idx: &[usize], tgt: &DiscreteMeasure, targets: &[usize]) {
    for (k, &j) in targets.iter().enumerate() {
        out.push(Assignment {
            source: idx[k],
            target: tgt.location(j).to_vec(),
            fraction: 1.0,
        });
    }
}

struct Built {
    assignments: Vec<Assignment>,
    partition: Partition,
    threshold: Option<ThresholdSplit>,
    general_threshold: Option<ThresholdSplit>,
    field: Option<CombinedF>,
    splits: SplitStats,
    branch: Branch,
}

fn build_mutually_singular(
    xi: &DiscreteMeasure,
    eta: &DiscreteMeasure,
    theta: &ConcaveCost,
    opts: &AllocationOptions,
) -> Result<Built> {
    if xi.domain() != eta.domain() {
        return Err(Error::DomainMismatch);
    }
    let shared = xi.shared_locations(eta);
    if shared > 0 {
        return Err(Error::NotMutuallySingular(shared));
    }
    let (a, b) = (xi.intensity(), eta.intensity());
    if (a - b).abs() > intensity_tolerance(xi, eta, opts) {
        return Err(Error::IntensityMismatch(a, b));
    }
    let (targets, splits) = transport_all(xi, eta, theta, opts)?;
    let idx: Vec<usize> = (0..xi.len()).collect();
    let mut assignments = Vec::with_capacity(xi.len());
    push_routed(&mut assignments, &idx, eta, &targets);
    Ok(Built {
        assignments,
        partition: Partition {
            s1: idx,
            ..Partition::default()
        },
        threshold: None,
        general_threshold: None,
        field: None,
        splits,
        branch: Branch::MutuallySingular,
    })
}

fn build_no_small_sets(
    xi: &DiscreteMeasure,
    eta: &DiscreteMeasure,
    theta: &ConcaveCost,
    opts: &AllocationOptions,
) -> Result<Built> {
    let g = opts.bijection.as_ref();
    let dec = xi.jordan_decompose(eta)?;
    let (pos, neg) = (&dec.positive_part, &dec.negative_part);
    let mut splits = SplitStats::default();
    let field = if pos.is_empty() || neg.is_empty() {
        CombinedF::identity(*xi.domain())
    } else {
        let plan = solve_oriented(pos, neg, theta, &opts.solver)?;
        combined_f_from_plan(&plan, g)?
    };
    let split = find_threshold(xi, eta, &field);

    let moved = |m: &DiscreteMeasure, i: usize| field.code_by_key(m.key(i)).is_some();
    let low = |m: &DiscreteMeasure, i: usize| split.is_low_key(m.key(i));
    let (s1_src, s1_idx) = select(xi, |i| moved(xi, i) && low(xi, i));
    let (s1_tgt, _) = select(eta, |j| moved(eta, j) && !low(eta, j));
    let (s2_src, s2_idx) = select(xi, |i| moved(xi, i) && !low(xi, i));
    let (s2_tgt, _) = select(eta, |j| moved(eta, j) && low(eta, j));
    let s3_idx: Vec<usize> = (0..xi.len()).filter(|&i| !moved(xi, i)).collect();

    let mut assignments = Vec::with_capacity(xi.len());
    for (src, idx, tgt) in [(&s1_src, &s1_idx, &s1_tgt), (&s2_src, &s2_idx, &s2_tgt)] {
        if tgt.is_empty() {
            // only reachable through a residual imbalance; keep the mass in place
            for &i in idx.iter() {
                assignments.push(Assignment {
                    source: i,
                    target: xi.location(i).to_vec(),
                    fraction: 1.0,
                });
            }
            continue;
        }
        let (targets, s) = transport_all(src, tgt, theta, opts).map_err(|e| e.at_stage("threshold transport"))?;
        splits.absorb(s);
        push_routed(&mut assignments, idx, tgt, &targets);
    }
    for &i in &s3_idx {
        assignments.push(Assignment {
            source: i,
            target: xi.location(i).to_vec(),
            fraction: 1.0,
        });
    }
    Ok(Built {
        assignments,
        partition: Partition {
            s1: s1_idx,
            s2: s2_idx,
            s3: s3_idx,
        },
        threshold: Some(split),
        general_threshold: None,
        field: Some(field),
        splits,
        branch: Branch::NoSmallSets,
    })
}

fn build_general(
    xi: &DiscreteMeasure,
    eta: &DiscreteMeasure,
    theta: &ConcaveCost,
    opts: &AllocationOptions,
) -> Result<Built> {
    let g = opts.bijection.as_ref();
    let (eta_a, eta_s) = eta.lebesgue_decompose(xi)?;
    if eta_s.is_empty() {
        return build_no_small_sets(xi, eta, theta, opts);
    }
    if eta_a.is_empty() {
        return build_mutually_singular(xi, eta, theta, opts);
    }
    let plan = solve_semicoupling(xi, &eta_s, theta, &opts.solver).map_err(|e| e.at_stage("singular semicoupling"))?;
    let dom = xi.domain();
    let mut best: Vec<Option<(f64, DisplacementCode, usize)>> = vec![None; xi.len()];
    let mut used = vec![0.0; xi.len()];
    for e in plan.entries() {
        let code = g.code(dom, &plan.displacement(e))?;
        used[e.source] += e.mass;
        if prefer(&best[e.source], e.mass, code) {
            best[e.source] = Some((e.mass, code, e.target));
        }
    }
    // locations with f > 0, ordered by G(T(x) − x)
    let items = (0..xi.len())
        .filter_map(|i| {
            best[i].map(|(_, code, _)| LevelItem {
                code,
                key: xi.key(i).to_vec(),
                weight: xi.mass(i),
                tie: mass_tie(xi.mass(i), used[i]),
            })
        })
        .collect();
    let split = split_levels(items, -eta_s.total_mass(), dom.volume());
    let in_a = |i: usize| best[i].is_some() && split.is_low_key(xi.key(i));
    let (a_part, a_idx) = select(xi, in_a);
    let (rest, rest_idx) = select(xi, |i| !in_a(i));

    let mut assignments = Vec::with_capacity(xi.len());
    let (targets, mut splits) =
        transport_all(&a_part, &eta_s, theta, opts).map_err(|e| e.at_stage("singular allocation"))?;
    push_routed(&mut assignments, &a_idx, &eta_s, &targets);

    let inner =
        build_no_small_sets(&rest, &eta_a, theta, opts).map_err(|e| e.at_stage("absolutely continuous part"))?;
    splits.absorb(inner.splits);
    for a in inner.assignments {
        assignments.push(Assignment {
            source: rest_idx[a.source],
            ..a
        });
    }
    Ok(Built {
        assignments,
        partition: Partition {
            s1: a_idx,
            s2: rest_idx,
            s3: Vec::new(),
        },
        threshold: inner.threshold,
        general_threshold: Some(split),
        field: inner.field,
        splits,
        branch: Branch::General,
    })
}

fn resolve_branch(xi: &DiscreteMeasure, eta: &DiscreteMeasure) -> Result<Branch> {
    if xi.domain() != eta.domain() {
        return Err(Error::DomainMismatch);
    }
    if xi.mutually_singular(eta) {
        return Ok(Branch::MutuallySingular);
    }
    let (_, eta_s) = eta.lebesgue_decompose(xi)?;
    Ok(if eta_s.is_empty() {
        Branch::NoSmallSets
    } else {
        Branch::General
    })
}

/// Runs one construction and reports cost, balance and threshold data.
pub fn allocate(
    xi: &DiscreteMeasure,
    eta: &DiscreteMeasure,
    theta: &ConcaveCost,
    branch: Branch,
    opts: &AllocationOptions,
) -> Result<PipelineOutput> {
    if xi.domain() != eta.domain() {
        return Err(Error::DomainMismatch);
    }
    let branch = match branch {
        Branch::Auto => resolve_branch(xi, eta)?,
        b => b,
    };
    let built = match branch {
        Branch::MutuallySingular => build_mutually_singular(xi, eta, theta, opts),
        Branch::NoSmallSets => build_no_small_sets(xi, eta, theta, opts),
        Branch::General => build_general(xi, eta, theta, opts),
        Branch::Auto => unreachable!(),
    }
    .map_err(|e| e.at_stage(branch.name()))?;
    let map = AllocationMap::new_unchecked(xi.clone(), built.assignments);
    let vol = xi.domain().volume();
    let cost = map.cost(theta);
    let balance_error = if opts.measure_balance {
        transport_distance(&map.pushforward()?, eta, Ground::Linear)?.value
    } else {
        0.0
    };
    let residual = [&built.threshold, &built.general_threshold]
        .iter()
        .filter_map(|t| t.as_ref().map(|s| s.residual_imbalance))
        .fold(0.0, f64::max);
    let t0 = built
        .threshold
        .as_ref()
        .or(built.general_threshold.as_ref())
        .filter(|s| !s.is_trivial())
        .map_or(0.0, |s| s.t0.to_real());
    let report = PipelineReport {
        branch: built.branch,
        cost,
        mean_cost: cost / vol,
        intensity_xi: xi.intensity(),
        intensity_eta: eta.intensity(),
        balance_error,
        max_atom_mass: xi.max_mass().max(eta.max_mass()),
        residual_imbalance: residual,
        split_sources: built.splits.sources,
        split_mass: built.splits.mass,
        t0,
    };
    Ok(PipelineOutput {
        map,
        report,
        threshold: built.threshold,
        general_threshold: built.general_threshold,
        field: built.field,
        partition: built.partition,
    })
}

/// Allocation for mutually singular inputs of equal intensity.
pub fn allocate_mutually_singular(
    xi: &DiscreteMeasure,
    eta: &DiscreteMeasure,
    theta: &ConcaveCost,
) -> Result<AllocationMap> {
    let opts = AllocationOptions {
        measure_balance: false,
        ..AllocationOptions::default()
    };
    Ok(allocate(xi, eta, theta, Branch::MutuallySingular, &opts)?.map)
}

/// Allocation for inputs that charge no small sets.
pub fn allocate_no_small_sets(
    xi: &DiscreteMeasure,
    eta: &DiscreteMeasure,
    theta: &ConcaveCost,
) -> Result<AllocationMap> {
    let opts = AllocationOptions {
        measure_balance: false,
        ..AllocationOptions::default()
    };
    Ok(allocate(xi, eta, theta, Branch::NoSmallSets, &opts)?.map)
}

/// Allocation for a `ξ` charging no small sets and an arbitrary `η`.
pub fn allocate_general(xi: &DiscreteMeasure, eta: &DiscreteMeasure, theta: &ConcaveCost) -> Result<AllocationMap> {
    let opts = AllocationOptions {
        measure_balance: false,
        ..AllocationOptions::default()
    };
    Ok(allocate(xi, eta, theta, Branch::General, &opts)?.map)
}
