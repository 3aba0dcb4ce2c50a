//! Concave transport costs `c(x, y) = ϑ(|x - y|)`.
//!
//! [`build_dlvp_cost`] turns a summable sequence of distance-bin masses into
//! a piecewise-linear, concave, strictly increasing and unbounded `ϑ` with
//! `Σ a_n ϑ(n+1) < ∞`. Thresholds `N_0 = 0 < N_1 < ...` are placed where
//! the remaining tail drops below `S·2^{-k}` (`S` the total mass), with
//! nondecreasing gaps, and `ϑ(N_k) = k` in between linearly.

use crate::domain::PeriodicDomain;
use crate::error::{Error, Result};
use crate::solver::TransportPlan;

const SLOPE_TOLERANCE: f64 = 1e-12;

/// Piecewise-linear concave cost profile with `ϑ(0) = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcaveCost {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    final_slope: f64,
}

impl ConcaveCost {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>, final_slope: f64) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidCost(msg));
        if breakpoints.is_empty() || breakpoints.len() != values.len() {
            return bad("breakpoints and values must be nonempty and of equal length".into());
        }
        if breakpoints[0] != 0.0 || values[0] != 0.0 {
            return bad("profile must start at (0, 0)".into());
        }
        if breakpoints.iter().chain(&values).any(|v| !v.is_finite()) {
            return bad("non-finite breakpoint or value".into());
        }
        if !(final_slope.is_finite() && final_slope > 0.0) {
            return bad(format!("final slope {final_slope} must be positive"));
        }
        let mut prev_slope = f64::INFINITY;
        for k in 1..breakpoints.len() {
            let dx = breakpoints[k] - breakpoints[k - 1];
            let dy = values[k] - values[k - 1];
            if dx <= 0.0 {
                return bad("breakpoints must be strictly increasing".into());
            }
            if dy <= 0.0 {
                return bad("values must be strictly increasing".into());
            }
            let slope = dy / dx;
            if slope > prev_slope * (1.0 + SLOPE_TOLERANCE) {
                return bad(format!("slopes increase at breakpoint {k}: not concave"));
            }
            prev_slope = slope;
        }
        if final_slope > prev_slope * (1.0 + SLOPE_TOLERANCE) {
            return bad("final slope exceeds the last segment slope".into());
        }
        Ok(Self {
            breakpoints,
            values,
            final_slope,
        })
    }

    /// `ϑ(r) = r`.
    pub fn linear() -> Self {
        Self {
            breakpoints: vec![0.0],
            values: vec![0.0],
            final_slope: 1.0,
        }
    }

    /// Piecewise-linear interpolation of `r^p` on `[0, r_max]`, extended
    /// with the tangent slope at `r_max`.
    pub fn power(exponent: f64, r_max: f64, segments: usize) -> Result<Self> {
        if !(exponent > 0.0 && exponent <= 1.0) {
            return Err(Error::InvalidCost(format!("exponent {exponent} not in (0, 1]")));
        }
        if !(r_max > 0.0 && r_max.is_finite()) || segments == 0 {
            return Err(Error::InvalidCost(
                "power profile needs r_max > 0 and segments > 0".into(),
            ));
        }
        // quadratic spacing puts more knots near the origin where r^p bends most
        let breakpoints: Vec<f64> = (0..=segments)
            .map(|k| {
                let t = k as f64 / segments as f64;
                r_max * t * t
            })
            .collect();
        let values = breakpoints.iter().map(|r| r.powf(exponent)).collect();
        let final_slope = exponent * r_max.powf(exponent - 1.0);
        Self::new(breakpoints, values, final_slope)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn final_slope(&self) -> f64 {
        self.final_slope
    }

    /// Segment slopes followed by the final slope.
    pub fn slopes(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self
            .breakpoints
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
            .collect();
        s.push(self.final_slope);
        s
    }

    pub fn eval(&self, r: f64) -> Result<f64> {
        if r < 0.0 || r.is_nan() {
            return Err(Error::NegativeDistance(r));
        }
        Ok(self.eval_unchecked(r))
    }

    pub(crate) fn eval_unchecked(&self, r: f64) -> f64 {
        let bp = &self.breakpoints;
        let last = bp.len() - 1;
        if r >= bp[last] {
            return self.values[last] + self.final_slope * (r - bp[last]);
        }
        // largest k with bp[k] <= r
        let k = bp.partition_point(|&b| b <= r) - 1;
        if r == bp[k] {
            return self.values[k];
        }
        let t = (r - bp[k]) / (bp[k + 1] - bp[k]);
        self.values[k] + t * (self.values[k + 1] - self.values[k])
    }
}

/// Per-unit-volume transported mass by distance bin.
#[derive(Clone, Debug, PartialEq)]
pub struct TailMassSequence {
    a: Vec<f64>,
    bin_width: f64,
    tail_mass: f64,
    tail_moment: f64,
}

impl TailMassSequence {
    /// A sequence that vanishes beyond the given entries.
    pub fn new(a: Vec<f64>, bin_width: f64) -> Result<Self> {
        Self::with_tail(a, bin_width, 0.0, 0.0)
    }

    /// A truncated sequence whose remainder `n ≥ N_max` is summarized by its
    /// mass `Σ a_n` and first moment `Σ (n+1) a_n`.
    pub fn with_tail(a: Vec<f64>, bin_width: f64, tail_mass: f64, tail_moment: f64) -> Result<Self> {
        if a.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidCost("tail masses must be finite and nonnegative".into()));
        }
        if !(bin_width.is_finite() && bin_width > 0.0) {
            return Err(Error::InvalidCost(format!("bin width {bin_width} must be positive")));
        }
        if !(tail_mass >= 0.0 && tail_mass.is_finite() && tail_moment >= 0.0 && tail_moment.is_finite()) {
            return Err(Error::InvalidCost("tail summary must be finite and nonnegative".into()));
        }
        Ok(Self {
            a,
            bin_width,
            tail_mass,
            tail_moment,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.a
    }

    /// Truncation index `N_max`.
    pub fn truncation(&self) -> usize {
        self.a.len()
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn tail_moment(&self) -> f64 {
        self.tail_moment
    }

    pub fn total(&self) -> f64 {
        self.a.iter().sum::<f64>() + self.tail_mass
    }
}

/// Averages the distance-binned transported mass of `plans`, per unit volume.
pub fn estimate_tail_masses(
    plans: &[TransportPlan],
    domain: &PeriodicDomain,
    bin_width: f64,
) -> Result<TailMassSequence> {
    if plans.is_empty() {
        return Err(Error::EmptyPlanList);
    }
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::InvalidCost(format!("bin width {bin_width} must be positive")));
    }
    let mut a: Vec<f64> = Vec::new();
    for plan in plans {
        for e in plan.entries() {
            let r = domain.distance(plan.source().location(e.source), plan.target().location(e.target));
            let bin = (r / bin_width).floor() as usize;
            if a.len() <= bin {
                a.resize(bin + 1, 0.0);
            }
            a[bin] += e.mass;
        }
    }
    if a.is_empty() {
        a.push(0.0);
    }
    let norm = plans.len() as f64 * domain.volume();
    for v in &mut a {
        *v /= norm;
    }
    TailMassSequence::new(a, bin_width)
}

/// Output of [`build_dlvp_cost`].
#[derive(Clone, Debug)]
pub struct DlvpCost {
    pub cost: ConcaveCost,
    /// Bin indices `N_k` with `ϑ(N_k · w) = k`.
    pub thresholds: Vec<usize>,
    /// Set when the input had no mass and `ϑ(r) = r` was returned.
    pub degenerate: bool,
}

pub fn build_dlvp_cost(tails: &TailMassSequence) -> DlvpCost {
    let total = tails.total();
    if total <= 0.0 {
        return DlvpCost {
            cost: ConcaveCost::linear(),
            thresholds: vec![0],
            degenerate: true,
        };
    }
    let a = tails.values();
    let n_max = a.len();
    // suffix[N] = Σ_{n ≥ N} a_n including the summarized remainder
    let mut suffix = vec![tails.tail_mass(); n_max + 1];
    for n in (0..n_max).rev() {
        suffix[n] = suffix[n + 1] + a[n];
    }

    let mut thresholds = vec![0usize];
    let mut gap = 1usize;
    let mut level = 1.0;
    loop {
        let current = *thresholds.last().unwrap();
        if suffix[current] <= 0.0 {
            break;
        }
        level *= 0.5;
        let target = total * level;
        let start = current + gap;
        if start > n_max {
            break;
        }
        let Some(next) = (start..=n_max).find(|&n| suffix[n] <= target) else {
            break;
        };
        gap = next - current;
        thresholds.push(next);
    }

    let w = tails.bin_width();
    let breakpoints: Vec<f64> = thresholds.iter().map(|&n| n as f64 * w).collect();
    let values: Vec<f64> = (0..thresholds.len()).map(|k| k as f64).collect();
    let final_slope = 1.0 / (gap as f64 * w);
    let cost = ConcaveCost::new(breakpoints, values, final_slope)
        .expect("threshold construction yields a valid concave profile");
    DlvpCost {
        cost,
        thresholds,
        degenerate: false,
    }
}

/// Evaluation of `Σ_n a_n ϑ((n+1)·w)` split at the truncation index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FinitenessCertificate {
    /// `Σ_{n < N_max} a_n ϑ((n+1)w)`.
    pub partial_sum: f64,
    /// Contribution of the summarized remainder `n ≥ N_max`.
    pub tail_bound: f64,
}

impl FinitenessCertificate {
    pub fn total(&self) -> f64 {
        self.partial_sum + self.tail_bound
    }

    pub fn is_finite(&self) -> bool {
        self.total().is_finite()
    }
}

/// Sums `a_n ϑ(n+1)` over the known entries and bounds the remainder.
///
/// Beyond the last breakpoint `ϑ` is affine, so when `N_max·w` lies past it
/// the remainder is exactly `(ϑ(b) - s·b)·Σa_n + s·w·Σ(n+1)a_n`; otherwise
/// the affine extension is still an upper bound by concavity.
pub fn certify_finiteness(tails: &TailMassSequence, theta: &ConcaveCost) -> FinitenessCertificate {
    let w = tails.bin_width();
    let partial_sum = tails
        .values()
        .iter()
        .enumerate()
        .map(|(n, &a)| a * theta.eval_unchecked((n + 1) as f64 * w))
        .sum();
    let b = *theta.breakpoints().last().unwrap();
    let v = *theta.values().last().unwrap();
    let s = theta.final_slope();
    let tail_bound = (v - s * b) * tails.tail_mass() + s * w * tails.tail_moment();
    FinitenessCertificate {
        partial_sum,
        tail_bound: tail_bound.max(0.0),
    }
}

/// `Σ mass · ϑ(periodic distance) / L^d` over the plan entries.
pub fn mean_cost(plan: &TransportPlan, theta: &ConcaveCost, domain: &PeriodicDomain) -> f64 {
    plan.entries()
        .iter()
        .map(|e| {
            let r = domain.distance(plan.source().location(e.source), plan.target().location(e.target));
            e.mass * theta.eval_unchecked(r)
        })
        .sum::<f64>()
        / domain.volume()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_examples() {
        let c = ConcaveCost::new(vec![0.0, 1.0, 3.0], vec![0.0, 1.0, 2.0], 0.25).unwrap();
        assert_eq!(c.eval(0.0).unwrap(), 0.0);
        assert_eq!(c.eval(1.0).unwrap(), 1.0);
        assert_eq!(c.eval(3.0).unwrap(), 2.0);
        assert_eq!(c.eval(2.0).unwrap(), 1.5);
        assert_eq!(c.eval(0.5).unwrap(), 0.5);
        assert_eq!(c.eval(7.0).unwrap(), 3.0);
        assert!(matches!(c.eval(-0.1), Err(Error::NegativeDistance(_))));
    }

    #[test]
    fn rejects_non_concave_profiles() {
        assert!(ConcaveCost::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 3.0], 0.5).is_err());
        assert!(ConcaveCost::new(vec![0.0, 1.0], vec![0.0, 1.0], 2.0).is_err());
        assert!(ConcaveCost::new(vec![0.0, 1.0], vec![0.0, 0.0], 0.5).is_err());
        assert!(ConcaveCost::new(vec![1.0], vec![0.0], 0.5).is_err());
        assert!(ConcaveCost::new(vec![0.0], vec![0.0], 0.0).is_err());
    }

    #[test]
    fn power_profile_is_concave_and_accurate() {
        let c = ConcaveCost::power(0.5, 4.0, 64).unwrap();
        let s = c.slopes();
        assert!(s.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        for k in 0..=64 {
            let r = 4.0 * (k as f64 / 64.0).powi(2);
            assert!((c.eval(r).unwrap() - r.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_bin_sequence() {
        let t = TailMassSequence::new(vec![1.0, 0.0, 0.0], 1.0).unwrap();
        let d = build_dlvp_cost(&t);
        assert!(!d.degenerate);
        assert_eq!(d.thresholds, vec![0, 1]);
        assert_eq!(d.cost.eval(1.0).unwrap(), 1.0);
        let cert = certify_finiteness(&t, &d.cost);
        assert_eq!(cert.partial_sum, 1.0);
        assert_eq!(cert.tail_bound, 0.0);
    }

    #[test]
    fn all_zero_sequence_falls_back_to_linear() {
        let t = TailMassSequence::new(vec![0.0; 5], 1.0).unwrap();
        let d = build_dlvp_cost(&t);
        assert!(d.degenerate);
        assert_eq!(d.cost, ConcaveCost::linear());
    }

    #[test]
    fn thresholds_have_nondecreasing_gaps() {
        let a: Vec<f64> = (0..200).map(|n| 1.0 / ((n + 1) as f64).powi(2)).collect();
        let t = TailMassSequence::new(a, 0.5).unwrap();
        let d = build_dlvp_cost(&t);
        let gaps: Vec<usize> = d.thresholds.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.windows(2).all(|g| g[1] >= g[0]), "{gaps:?}");
        for (k, &n) in d.thresholds.iter().enumerate() {
            assert_eq!(d.cost.eval(n as f64 * 0.5).unwrap(), k as f64);
        }
    }

    #[test]
    fn tail_sequence_validation() {
        assert!(TailMassSequence::new(vec![-1.0], 1.0).is_err());
        assert!(TailMassSequence::new(vec![1.0], 0.0).is_err());
        assert!(TailMassSequence::with_tail(vec![1.0], 1.0, f64::INFINITY, 0.0).is_err());
    }
}
