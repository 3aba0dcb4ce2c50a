//! Checks of computed allocations: balance, shift covariance, Palm coupling,
//! cyclical monotonicity and a box-counting small-set diagnostic.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::allocation::{AllocationMap, AllocationOptions, Branch};
use crate::cost::ConcaveCost;
use crate::domain::PeriodicDomain;
use crate::error::{Error, Result};
use crate::generators::{generate, lebesgue_grid, GeneratorSpec};
use crate::measure::DiscreteMeasure;
use crate::solver::{solve_semicoupling, SolverOptions, TieBreak, TransportPlan};

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub details: String,
}

impl CheckReport {
    fn new(name: &str, passed: bool, measured: f64, tolerance: f64, details: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            measured,
            tolerance,
            details: details.into(),
        }
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} measured={:.6e} tolerance={:.6e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance
        )?;
        if !self.details.is_empty() {
            write!(f, " ({})", self.details)?;
        }
        Ok(())
    }
}

/// `Σ f_i·ξ_i·δ_{T(x_i)}` for a map defined on the atoms of `xi`.
pub fn pushforward(xi: &DiscreteMeasure, map: &AllocationMap) -> Result<DiscreteMeasure> {
    if map.source() != xi {
        return Err(Error::InvalidMeasure(
            "allocation is defined on a different source measure".into(),
        ));
    }
    map.pushforward()
}

/// Ground cost of a transport distance.
#[derive(Clone, Copy, Debug)]
pub enum Ground<'a> {
    Linear,
    Theta(&'a ConcaveCost),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransportDistance {
    pub value: f64,
    /// Masses differed by more than `1e-9` relative and `nu` was rescaled.
    pub rescaled: bool,
}

/// Optimal transport cost between measures of (nearly) equal mass.
pub fn transport_distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure, ground: Ground<'_>) -> Result<TransportDistance> {
    if mu.domain() != nu.domain() {
        return Err(Error::DomainMismatch);
    }
    let (a, b) = (mu.total_mass(), nu.total_mass());
    if a == 0.0 && b == 0.0 {
        return Ok(TransportDistance {
            value: 0.0,
            rescaled: false,
        });
    }
    let gap = (a - b).abs() / a.max(b);
    if gap > 0.01 || a == 0.0 || b == 0.0 {
        return Err(Error::MassMismatch(a, b));
    }
    let nu_scaled;
    let target = if a == b {
        nu
    } else {
        nu_scaled = nu.scaled(a / b);
        &nu_scaled
    };
    let linear = ConcaveCost::linear();
    let theta = match ground {
        Ground::Linear => &linear,
        Ground::Theta(t) => t,
    };
    let opts = SolverOptions {
        tie_break: TieBreak::None,
        ..SolverOptions::default()
    };
    let plan = solve_semicoupling(mu, target, theta, &opts)?;
    Ok(TransportDistance {
        value: plan.total_cost(theta),
        rescaled: gap > 1e-9,
    })
}

/// Passes iff the linear transport distance between `T#ξ` and `η` is within `budget`.
pub fn check_balance(xi: &DiscreteMeasure, eta: &DiscreteMeasure, map: &AllocationMap, budget: f64) -> CheckReport {
    let result = pushforward(xi, map).and_then(|p| transport_distance(&p, eta, Ground::Linear));
    match result {
        Ok(d) => CheckReport::new(
            "balance",
            d.value <= budget,
            d.value,
            budget,
            if d.rescaled { "masses rescaled" } else { "" },
        ),
        Err(e) => CheckReport::new("balance", false, f64::INFINITY, budget, e.to_string()),
    }
}

/// `(T(x) − x, mass)` pairs sorted by quantized displacement.
fn displacement_multiset(map: &AllocationMap) -> Vec<(Vec<i64>, Vec<f64>, f64)> {
    let dom = map.source().domain();
    let mut out: Vec<(Vec<i64>, Vec<f64>, f64)> = map
        .displacement_masses()
        .into_iter()
        .map(|(v, m)| (dom.displacement_key(&v), v, m))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0).then(a.2.total_cmp(&b.2)));
    out
}

/// Compares a pipeline on shifted inputs with the shifted pipeline output.
///
/// `pipeline` returns the allocation and its cost. Allocations are compared as
/// multisets of `(displacement, mass)`.
pub fn check_shift_covariance_with<P>(
    pipeline: P,
    xi: &DiscreteMeasure,
    eta: &DiscreteMeasure,
    shifts: &[Vec<f64>],
) -> Result<CheckReport>
where
    P: Fn(&DiscreteMeasure, &DiscreteMeasure) -> Result<(AllocationMap, f64)>,
{
    const TOL: f64 = 1e-9;
    let dom = xi.domain();
    let (base, base_cost) = pipeline(xi, eta)?;
    let reference = displacement_multiset(&base);
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for (k, s) in shifts.iter().enumerate() {
        let (map, cost) = pipeline(&xi.shift(s)?, &eta.shift(s)?)?;
        let got = displacement_multiset(&map);
        let mut dev = (cost - base_cost).abs();
        if got.len() != reference.len() {
            failures.push(format!("shift {k}: {} vs {} entries", got.len(), reference.len()));
            worst = f64::INFINITY;
            continue;
        }
        for (a, b) in got.iter().zip(&reference) {
            let dv =
                a.1.iter()
                    .zip(&b.1)
                    .map(|(x, y)| dom.wrap_delta(x - y).abs())
                    .fold(0.0, f64::max);
            dev = dev.max(dv).max((a.2 - b.2).abs());
        }
        if dev > TOL {
            failures.push(format!("shift {k}: deviation {dev:.3e}"));
        }
        worst = worst.max(dev);
    }
    Ok(CheckReport::new(
        "shift_covariance",
        failures.is_empty(),
        worst,
        TOL,
        failures.join("; "),
    ))
}

/// [`check_shift_covariance_with`] over `num_shifts` uniform random shifts.
pub fn check_shift_covariance<P>(
    pipeline: P,
    xi: &DiscreteMeasure,
    eta: &DiscreteMeasure,
    num_shifts: usize,
    seed: u64,
) -> Result<CheckReport>
where
    P: Fn(&DiscreteMeasure, &DiscreteMeasure) -> Result<(AllocationMap, f64)>,
{
    let dom = xi.domain();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shifts: Vec<Vec<f64>> = (0..num_shifts)
        .map(|_| (0..dom.dim()).map(|_| rng.random::<f64>() * dom.side()).collect())
        .collect();
    check_shift_covariance_with(pipeline, xi, eta, &shifts)
}

/// Bounded statistics of a measure seen from a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PalmStatistic {
    Constant(f64),
    /// Mass within periodic distance `radius` of the point.
    BallMass {
        radius: f64,
    },
    /// Indicator that the mass within `radius` is at least `level`.
    BallMassAtLeast {
        radius: f64,
        level: f64,
    },
}

impl PalmStatistic {
    /// Value on `θ_center η`, the measure re-centred at `center`.
    pub fn eval(&self, eta: &DiscreteMeasure, center: &[f64]) -> f64 {
        let dom = eta.domain();
        let ball = |r: f64| -> f64 {
            eta.atoms()
                .filter(|(x, _)| dom.distance(x, center) <= r)
                .map(|(_, m)| m)
                .sum()
        };
        match *self {
            PalmStatistic::Constant(c) => c,
            PalmStatistic::BallMass { radius } => ball(radius),
            PalmStatistic::BallMassAtLeast { radius, level } => {
                if ball(radius) >= level - 1e-12 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Palm estimates from the two routes, with their standard errors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PalmEstimates {
    pub allocation: f64,
    pub allocation_se: f64,
    pub mass_biased: f64,
    pub mass_biased_se: f64,
}

/// Compares the law of `η − T(0)` with the mass-biased Palm estimator.
///
/// For each realization, `ξ` is the uniform grid measure with the mass of
/// `η`, `T` balances `ξ` and `η`, and `T(0)` is read at the cell containing
/// the origin. The reference estimator averages the statistic over all atoms
/// of `η` weighted by mass (a ratio estimator over realizations).
pub fn palm_shift_coupling_test_with<S>(
    sample: S,
    domain: &PeriodicDomain,
    num_realizations: usize,
    statistic: PalmStatistic,
    theta: &ConcaveCost,
) -> Result<(CheckReport, PalmEstimates)>
where
    S: Fn(usize) -> Result<DiscreteMeasure>,
{
    if num_realizations < 2 {
        return Err(Error::InsufficientData(format!(
            "Palm test needs at least 2 realizations, got {num_realizations}"
        )));
    }
    let opts = AllocationOptions {
        measure_balance: false,
        ..AllocationOptions::default()
    };
    let origin_cell = domain.cell_center(domain.cell_index(&vec![0.0; domain.dim()]));
    let mut alloc_vals = Vec::with_capacity(num_realizations);
    let mut numer = Vec::with_capacity(num_realizations);
    let mut denom = Vec::with_capacity(num_realizations);
    for r in 0..num_realizations {
        let eta = sample(r)?;
        if eta.is_empty() {
            // no mass: the realization carries no Palm weight and T(0) is undefined
            numer.push(0.0);
            denom.push(0.0);
            continue;
        }
        let xi = lebesgue_grid(domain, eta.total_mass())?;
        let out = crate::allocation::allocate(&xi, &eta, theta, Branch::Auto, &opts)?;
        let t0 = out
            .map
            .apply(&origin_cell)
            .ok_or_else(|| Error::InsufficientData("origin cell is not allocated".into()))?
            .to_vec();
        alloc_vals.push(statistic.eval(&eta, &t0));
        numer.push(eta.atoms().map(|(y, m)| m * statistic.eval(&eta, y)).sum::<f64>());
        denom.push(eta.total_mass());
    }
    let k = alloc_vals.len() as f64;
    if k < 2.0 {
        return Err(Error::InsufficientData("fewer than 2 realizations with mass".into()));
    }
    let a_mean = alloc_vals.iter().sum::<f64>() / k;
    let a_var = alloc_vals.iter().map(|v| (v - a_mean).powi(2)).sum::<f64>() / (k - 1.0);
    let a_se = (a_var / k).sqrt();

    let n = numer.len() as f64;
    let total_m: f64 = denom.iter().sum();
    let ratio = numer.iter().sum::<f64>() / total_m;
    let mean_m = total_m / n;
    let resid_var = numer
        .iter()
        .zip(&denom)
        .map(|(a, b)| (a - ratio * b).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    let r_se = (resid_var / n).sqrt() / mean_m;

    let combined = (a_se * a_se + r_se * r_se).sqrt();
    let diff = (a_mean - ratio).abs();
    let bound = 4.0 * combined;
    let passed = diff <= bound.max(1e-12);
    let est = PalmEstimates {
        allocation: a_mean,
        allocation_se: a_se,
        mass_biased: ratio,
        mass_biased_se: r_se,
    };
    let report = CheckReport::new(
        "palm_shift_coupling",
        passed,
        diff,
        bound,
        format!("allocation {a_mean:.6} ± {a_se:.2e}, mass-biased {ratio:.6} ± {r_se:.2e}"),
    );
    Ok((report, est))
}

/// [`palm_shift_coupling_test_with`] drawing `η` from a generator spec.
pub fn palm_shift_coupling_test(
    eta_spec: &GeneratorSpec,
    domain: &PeriodicDomain,
    num_realizations: usize,
    statistic: PalmStatistic,
    seed: u64,
) -> Result<CheckReport> {
    let theta = ConcaveCost::linear();
    let sample = |r: usize| {
        let spec = eta_spec.with_seed(crate::generators::derive_seed(seed, r as u64));
        generate(&spec, domain)
    };
    Ok(palm_shift_coupling_test_with(sample, domain, num_realizations, statistic, &theta)?.0)
}

/// Pairwise swap test `c(x₁,y₁) + c(x₂,y₂) ≤ c(x₁,y₂) + c(x₂,y₁) + tol`.
///
/// All pairs are checked up to `exhaustive_limit` entries; above it,
/// `samples` random pairs are drawn.
pub fn check_cyclical_monotonicity(
    plan: &TransportPlan,
    theta: &ConcaveCost,
    tolerance: f64,
    exhaustive_limit: usize,
    samples: usize,
    seed: u64,
) -> CheckReport {
    let dom = plan.domain();
    let entries = plan.entries();
    let c =
        |a: usize, b: usize| theta.eval_unchecked(dom.distance(plan.source().location(a), plan.target().location(b)));
    let mut worst = f64::NEG_INFINITY;
    let mut test = |p: usize, q: usize| {
        let (e, f) = (&entries[p], &entries[q]);
        let gain = c(e.source, e.target) + c(f.source, f.target) - c(e.source, f.target) - c(f.source, e.target);
        worst = worst.max(gain);
    };
    let n = entries.len();
    let exhaustive = n <= exhaustive_limit;
    if exhaustive {
        for p in 0..n {
            for q in p + 1..n {
                test(p, q);
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            let p = rng.random_range(0..n);
            let q = rng.random_range(0..n);
            test(p, q);
        }
    }
    let measured = worst.max(0.0);
    CheckReport::new(
        "cyclical_monotonicity",
        measured <= tolerance,
        measured,
        tolerance,
        format!(
            "{} entries, {}",
            n,
            if exhaustive { "all pairs" } else { "sampled pairs" }
        ),
    )
}

/// Box-counting exponent of the support of `mu`.
///
/// The count of occupied boxes of side `s` is fitted against `1/s` on a log
/// scale; a slope at most `d − 0.8` raises the flag (the report then fails).
pub fn small_sets_diagnostic(mu: &DiscreteMeasure, scales: &[f64]) -> Result<CheckReport> {
    let dom = mu.domain();
    let d = dom.dim();
    if d < 2 {
        return Err(Error::InsufficientData("box counting needs d ≥ 2".into()));
    }
    if scales.len() < 2 {
        return Err(Error::InsufficientData("need at least two scales".into()));
    }
    if mu.len() < 2 {
        return Err(Error::InsufficientData(format!("{} atoms", mu.len())));
    }
    let mut xs = Vec::with_capacity(scales.len());
    let mut ys = Vec::with_capacity(scales.len());
    for &s in scales {
        if !(s > 0.0 && s <= dom.side()) {
            return Err(Error::InsufficientData(format!("scale {s} outside (0, L]")));
        }
        let boxes = (dom.side() / s).round().max(1.0) as i64;
        let mut occupied: Vec<Vec<i64>> = mu
            .atoms()
            .filter(|(_, m)| *m > 0.0)
            .map(|(x, _)| {
                x.iter()
                    .map(|&c| ((c / dom.side() * boxes as f64).floor() as i64).rem_euclid(boxes))
                    .collect()
            })
            .collect();
        occupied.sort_unstable();
        occupied.dedup();
        xs.push((boxes as f64 / dom.side()).ln());
        ys.push((occupied.len() as f64).ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("scales give identical box counts".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let threshold = d as f64 - 1.0 + 0.2;
    let flagged = slope <= threshold;
    Ok(CheckReport::new(
        "small_sets",
        !flagged,
        slope,
        threshold,
        if flagged {
            "support looks at most (d-1)-dimensional"
        } else {
            ""
        },
    ))
}

/// Dyadic box sides from `L/2` down to twice the grid pitch.
pub fn default_scales(domain: &PeriodicDomain) -> Vec<f64> {
    let mut out = Vec::new();
    let mut s = domain.side() / 2.0;
    while s >= 2.0 * domain.pitch() - 1e-12 {
        out.push(s);
        s /= 2.0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(side: f64) -> PeriodicDomain {
        PeriodicDomain::new(1, side, 8).unwrap()
    }

    fn measure(dom: PeriodicDomain, atoms: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::new(dom, atoms.iter().map(|&(x, w)| (vec![x], w))).unwrap()
    }

    #[test]
    fn distance_examples() {
        let dom = line(10.0);
        let mu = measure(dom, &[(0.0, 1.0), (3.0, 2.0)]);
        assert_eq!(transport_distance(&mu, &mu, Ground::Linear).unwrap().value, 0.0);
        let a = measure(dom, &[(1.0, 1.0)]);
        let b = measure(dom, &[(3.5, 1.0)]);
        assert!((transport_distance(&a, &b, Ground::Linear).unwrap().value - 2.5).abs() < 1e-12);
        let heavy = measure(dom, &[(3.5, 1.5)]);
        assert!(matches!(
            transport_distance(&a, &heavy, Ground::Linear),
            Err(Error::MassMismatch(..))
        ));
        let close = measure(dom, &[(3.5, 1.0 + 1e-6)]);
        assert!(transport_distance(&a, &close, Ground::Linear).unwrap().rescaled);
    }

    #[test]
    fn balance_detects_corruption() {
        let dom = line(10.0);
        let xi = measure(dom, &[(0.0, 1.0), (5.0, 1.0)]);
        let id = AllocationMap::identity(xi.clone());
        assert!(check_balance(&xi, &xi, &id, 0.0).passed);
        let mut a = id.assignments().to_vec();
        a[1].target = vec![6.0];
        let bad = AllocationMap::new(xi.clone(), a).unwrap();
        let r = check_balance(&xi, &xi, &bad, 0.5);
        assert!(!r.passed);
        assert!((r.measured - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_shift_is_trivially_covariant() {
        let dom = line(10.0);
        let xi = measure(dom, &[(0.0, 1.0), (5.0, 1.0)]);
        let eta = measure(dom, &[(1.0, 1.0), (7.0, 1.0)]);
        let theta = ConcaveCost::linear();
        let pipe = |a: &DiscreteMeasure, b: &DiscreteMeasure| {
            let m = crate::allocation::allocate_mutually_singular(a, b, &theta)?;
            let c = m.cost(&theta);
            Ok((m, c))
        };
        let r = check_shift_covariance_with(pipe, &xi, &eta, &[vec![0.0]]).unwrap();
        assert!(r.passed);
        assert_eq!(r.measured, 0.0);
    }

    #[test]
    fn antipodal_displacements_compare_equal() {
        let dom = line(10.0);
        let xi = measure(dom, &[(0.0, 1.0)]);
        // the same half-period jump, landing on either side of the wrap
        let pipe = |a: &DiscreteMeasure, _: &DiscreteMeasure| {
            let x = a.location(0)[0];
            let jump = if x == 0.0 { 5.0 } else { 5.0 - 1e-13 };
            let m = AllocationMap::new(
                a.clone(),
                vec![crate::allocation::Assignment {
                    source: 0,
                    target: vec![dom.wrap(x + jump)],
                    fraction: 1.0,
                }],
            )?;
            Ok((m, 1.0))
        };
        let r = check_shift_covariance_with(pipe, &xi, &xi, &[vec![2.5]]).unwrap();
        assert!(r.passed, "{}", r.details);
    }

    #[test]
    fn cyclical_monotonicity_flags_crossing_plans() {
        let dom = line(10.0);
        let mu = measure(dom, &[(0.0, 1.0), (1.0, 1.0)]);
        let nu = measure(dom, &[(0.5, 1.0), (1.5, 1.0)]);
        let theta = ConcaveCost::linear();
        let good = solve_semicoupling(&mu, &nu, &theta, &SolverOptions::default()).unwrap();
        assert!(check_cyclical_monotonicity(&good, &theta, 1e-9, 1000, 0, 0).passed);
        let crossed = TransportPlan::new(
            mu,
            nu,
            vec![
                crate::solver::PlanEntry {
                    source: 0,
                    target: 1,
                    mass: 1.0,
                },
                crate::solver::PlanEntry {
                    source: 1,
                    target: 0,
                    mass: 1.0,
                },
            ],
        );
        assert!(!check_cyclical_monotonicity(&crossed, &theta, 1e-9, 1000, 0, 0).passed);
    }

    #[test]
    fn constant_statistic_gives_one() {
        let dom = PeriodicDomain::new(1, 4.0, 16).unwrap();
        let sample = |r: usize| {
            DiscreteMeasure::new(
                dom,
                [(vec![0.37 + 0.71 * r as f64], 1.0), (vec![2.1 + 0.3 * r as f64], 2.0)],
            )
        };
        let (rep, est) =
            palm_shift_coupling_test_with(sample, &dom, 5, PalmStatistic::Constant(1.0), &ConcaveCost::linear())
                .unwrap();
        assert!(rep.passed);
        assert_eq!(est.allocation, 1.0);
        assert!((est.mass_biased - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_atom_palm_version_has_an_atom_at_the_origin() {
        let dom = PeriodicDomain::new(1, 4.0, 16).unwrap();
        let sample = |r: usize| DiscreteMeasure::new(dom, [(vec![(r as f64 * 0.618_034).fract() * 4.0], 1.0)]);
        let stat = PalmStatistic::BallMassAtLeast {
            radius: 0.01,
            level: 1.0,
        };
        let (rep, est) = palm_shift_coupling_test_with(sample, &dom, 20, stat, &ConcaveCost::linear()).unwrap();
        assert!(rep.passed);
        assert_eq!(est.allocation, 1.0);
        assert_eq!(est.mass_biased, 1.0);
    }

    #[test]
    fn diagnostic_rejects_degenerate_input() {
        let dom = PeriodicDomain::new(2, 1.0, 8).unwrap();
        let one = DiscreteMeasure::new(dom, [(vec![0.5, 0.5], 1.0)]).unwrap();
        assert!(matches!(
            small_sets_diagnostic(&one, &[0.5, 0.25]),
            Err(Error::InsufficientData(_))
        ));
        let grid = lebesgue_grid(&dom, 1.0).unwrap();
        assert!(small_sets_diagnostic(&grid, &[0.5]).is_err());
        let rep = small_sets_diagnostic(&grid, &default_scales(&dom)).unwrap();
        assert!((rep.measured - 2.0).abs() < 1e-9);
        assert!(rep.passed);
        let flat = measure(line(1.0), &[(0.1, 1.0), (0.2, 1.0)]);
        assert!(small_sets_diagnostic(&flat, &[0.5, 0.25]).is_err());
    }
}
