//! Finite atomic measures on the torus and their atomwise algebra.

use std::cmp::Ordering;

use crate::domain::PeriodicDomain;
use crate::error::{Error, Result};

/// Finite weighted point set on a [`PeriodicDomain`].
///
/// Atoms are stored in canonical order (lexicographic by quantized location)
/// and atoms sharing a location are merged, so two measures built from the
/// same atoms in any order are identical.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    domain: PeriodicDomain,
    coords: Vec<f64>,
    masses: Vec<f64>,
    keys: Vec<i64>,
    cell_aligned: bool,
}

/// Jordan decomposition of `ξ - η` together with the common part `ξ ∧ η`.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedDecomposition {
    pub positive_part: DiscreteMeasure,
    pub negative_part: DiscreteMeasure,
    pub common_part: DiscreteMeasure,
}

fn cmp_keys(a: &[i64], b: &[i64]) -> Ordering {
    a.cmp(b)
}

impl DiscreteMeasure {
    pub fn new<I>(domain: PeriodicDomain, atoms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<f64>, f64)>,
    {
        let d = domain.dim();
        let mut raw: Vec<(Vec<i64>, Vec<f64>, f64)> = Vec::new();
        for (loc, mass) in atoms {
            if loc.len() != d {
                return Err(Error::InvalidMeasure(format!(
                    "atom has {} coordinates, domain dimension is {d}",
                    loc.len()
                )));
            }
            if loc.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidMeasure("non-finite coordinate".into()));
            }
            if !mass.is_finite() || mass < 0.0 {
                return Err(Error::InvalidMeasure(format!("invalid mass {mass}")));
            }
            if mass == 0.0 {
                continue;
            }
            let loc: Vec<f64> = loc.iter().map(|&c| domain.wrap(c)).collect();
            let key = domain.location_key(&loc);
            raw.push((key, loc, mass));
        }
        raw.sort_by(|a, b| {
            cmp_keys(&a.0, &b.0).then_with(|| {
                a.1.iter()
                    .zip(&b.1)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(Ordering::Equal)
            })
        });

        let mut coords = Vec::with_capacity(raw.len() * d);
        let mut masses: Vec<f64> = Vec::with_capacity(raw.len());
        let mut keys = Vec::with_capacity(raw.len() * d);
        for (key, loc, mass) in raw {
            let n = masses.len();
            if n > 0 && keys[(n - 1) * d..n * d] == key[..] {
                masses[n - 1] += mass;
            } else {
                coords.extend_from_slice(&loc);
                keys.extend_from_slice(&key);
                masses.push(mass);
            }
        }
        let cell_aligned = coords.chunks(d).all(|x| domain.is_cell_center(x));
        Ok(Self {
            domain,
            coords,
            masses,
            keys,
            cell_aligned,
        })
    }

    pub fn empty(domain: PeriodicDomain) -> Self {
        Self {
            domain,
            coords: Vec::new(),
            masses: Vec::new(),
            keys: Vec::new(),
            cell_aligned: true,
        }
    }

    pub fn domain(&self) -> &PeriodicDomain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// True when every atom sits at a grid cell center.
    pub fn is_cell_aligned(&self) -> bool {
        self.cell_aligned
    }

    pub fn location(&self, i: usize) -> &[f64] {
        let d = self.domain.dim();
        &self.coords[i * d..(i + 1) * d]
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.masses[i]
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub(crate) fn key(&self, i: usize) -> &[i64] {
        let d = self.domain.dim();
        &self.keys[i * d..(i + 1) * d]
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        (0..self.len()).map(move |i| (self.location(i), self.masses[i]))
    }

    /// Sum of the masses in increasing order, so translations that reorder
    /// the atoms give the same bits.
    pub fn total_mass(&self) -> f64 {
        let mut m = self.masses.clone();
        m.sort_unstable_by(f64::total_cmp);
        m.iter().sum()
    }

    pub fn max_mass(&self) -> f64 {
        self.masses.iter().copied().fold(0.0, f64::max)
    }

    /// Mass per unit volume.
    pub fn intensity(&self) -> f64 {
        self.total_mass() / self.domain.volume()
    }

    /// Index of the atom located at `x`, if any.
    pub fn find(&self, x: &[f64]) -> Option<usize> {
        let key = self.domain.location_key(x);
        self.find_key(&key)
    }

    pub(crate) fn find_key(&self, key: &[i64]) -> Option<usize> {
        let (mut lo, mut hi) = (0, self.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            match cmp_keys(self.key(mid), key) {
                Ordering::Less => lo = mid + 1,
                Ordering::Greater => hi = mid,
                Ordering::Equal => return Some(mid),
            }
        }
        None
    }

    fn same_domain(&self, other: &Self) -> Result<()> {
        if self.domain == other.domain {
            Ok(())
        } else {
            Err(Error::DomainMismatch)
        }
    }

    fn tolerance_with(&self, other: &Self) -> f64 {
        1e-12 * self.total_mass().max(other.total_mass()).max(f64::MIN_POSITIVE)
    }

    fn atoms_owned(&self) -> impl Iterator<Item = (Vec<f64>, f64)> + '_ {
        self.atoms().map(|(x, m)| (x.to_vec(), m))
    }

    /// Keeps the atoms whose index satisfies `keep`.
    pub fn restrict(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        let d = self.domain.dim();
        let mut out = Self::empty(self.domain);
        for i in 0..self.len() {
            if keep(i) {
                out.coords.extend_from_slice(self.location(i));
                out.keys.extend_from_slice(self.key(i));
                out.masses.push(self.masses[i]);
            }
        }
        out.cell_aligned = out.coords.chunks(d).all(|x| self.domain.is_cell_center(x));
        out
    }

    /// Multiplies every mass by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for m in &mut out.masses {
            *m *= factor;
        }
        out
    }

    /// Atomwise sum.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_domain(other)?;
        Self::new(self.domain, self.atoms_owned().chain(other.atoms_owned()))
    }

    /// Translates every atom by `x` modulo the side length.
    pub fn shift(&self, x: &[f64]) -> Result<Self> {
        if x.len() != self.domain.dim() || x.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidMeasure("shift vector has wrong dimension".into()));
        }
        Self::new(
            self.domain,
            self.atoms().map(|(loc, m)| (self.domain.translate(loc, x), m)),
        )
    }

    /// True iff the atom location sets are disjoint.
    pub fn mutually_singular(&self, other: &Self) -> bool {
        self.shared_locations(other) == 0
    }

    pub(crate) fn shared_locations(&self, other: &Self) -> usize {
        let mut count = 0;
        merge_join(self, other, |i, j| {
            if i.is_some() && j.is_some() {
                count += 1;
            }
        });
        count
    }

    /// Atomwise `(ξ-η)₊`, `(η-ξ)₊` and `ξ∧η`, with `self` playing ξ.
    pub fn jordan_decompose(&self, eta: &Self) -> Result<SignedDecomposition> {
        self.same_domain(eta)?;
        let tol = self.tolerance_with(eta);
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        let mut common = Vec::new();
        merge_join(self, eta, |i, j| match (i, j) {
            (Some(i), None) => pos.push((self.location(i).to_vec(), self.masses[i])),
            (None, Some(j)) => neg.push((eta.location(j).to_vec(), eta.masses[j])),
            (Some(i), Some(j)) => {
                let (a, b) = (self.masses[i], eta.masses[j]);
                let loc = self.location(i);
                if (a - b).abs() <= tol {
                    common.push((loc.to_vec(), a));
                } else if a > b {
                    pos.push((loc.to_vec(), a - b));
                    common.push((loc.to_vec(), b));
                } else {
                    neg.push((loc.to_vec(), b - a));
                    common.push((loc.to_vec(), a));
                }
            }
            (None, None) => unreachable!(),
        });
        Ok(SignedDecomposition {
            positive_part: Self::new(self.domain, pos)?,
            negative_part: Self::new(self.domain, neg)?,
            common_part: Self::new(self.domain, common)?,
        })
    }

    /// Splits `self` (η) into the part charging atoms of `xi` and the rest.
    pub fn lebesgue_decompose(&self, xi: &Self) -> Result<(Self, Self)> {
        self.same_domain(xi)?;
        let mut charged = vec![false; self.len()];
        merge_join(self, xi, |i, j| {
            if let (Some(i), Some(_)) = (i, j) {
                charged[i] = true;
            }
        });
        let ac = self.restrict(|i| charged[i]);
        let sing = self.restrict(|i| !charged[i]);
        Ok((ac, sing))
    }

    /// Largest atomwise mass difference, treating missing atoms as zero.
    pub fn max_atomwise_difference(&self, other: &Self) -> f64 {
        let mut worst: f64 = 0.0;
        merge_join(self, other, |i, j| {
            let a = i.map_or(0.0, |i| self.masses[i]);
            let b = j.map_or(0.0, |j| other.masses[j]);
            worst = worst.max((a - b).abs());
        });
        worst
    }
}

/// Walks both canonical atom lists in key order, reporting matched indices.
fn merge_join(a: &DiscreteMeasure, b: &DiscreteMeasure, mut visit: impl FnMut(Option<usize>, Option<usize>)) {
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let ord = if i == a.len() {
            Ordering::Greater
        } else if j == b.len() {
            Ordering::Less
        } else {
            cmp_keys(a.key(i), b.key(j))
        };
        match ord {
            Ordering::Less => {
                visit(Some(i), None);
                i += 1;
            }
            Ordering::Greater => {
                visit(None, Some(j));
                j += 1;
            }
            Ordering::Equal => {
                visit(Some(i), Some(j));
                i += 1;
                j += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(side: f64) -> PeriodicDomain {
        PeriodicDomain::new(1, side, 4).unwrap()
    }

    fn m(dom: PeriodicDomain, atoms: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::new(dom, atoms.iter().map(|&(x, w)| (vec![x], w))).unwrap()
    }

    #[test]
    fn intensity_examples() {
        let d3 = PeriodicDomain::new(3, 2.0, 2).unwrap();
        assert_eq!(DiscreteMeasure::empty(d3).intensity(), 0.0);
        let one = DiscreteMeasure::new(d3, [(vec![0.0, 0.0, 0.0], 8.0)]).unwrap();
        assert_eq!(one.intensity(), 1.0);
        assert_eq!(m(line(2.0), &[(0.0, 1.5), (1.0, 2.5)]).intensity(), 2.0);
    }

    #[test]
    fn construction_merges_and_orders() {
        let dom = line(1.0);
        let a = m(dom, &[(0.5, 1.0), (0.25, 2.0), (0.5 + 1e-13, 3.0), (1.25, 1.0)]);
        assert_eq!(a.len(), 2);
        assert_eq!(a.location(0), &[0.25]);
        assert_eq!(a.mass(0), 3.0);
        assert_eq!(a.mass(1), 4.0);
        let b = m(dom, &[(1.25, 1.0), (0.5 + 1e-13, 3.0), (0.25, 2.0), (0.5, 1.0)]);
        assert_eq!(a, b);
    }

    #[test]
    fn construction_rejects_bad_atoms() {
        let dom = line(1.0);
        assert!(DiscreteMeasure::new(dom, [(vec![0.1], -1.0)]).is_err());
        assert!(DiscreteMeasure::new(dom, [(vec![0.1, 0.2], 1.0)]).is_err());
        assert!(DiscreteMeasure::new(dom, [(vec![f64::NAN], 1.0)]).is_err());
        assert!(DiscreteMeasure::new(dom, [(vec![0.1], 0.0)]).unwrap().is_empty());
    }

    #[test]
    fn jordan_examples() {
        let dom = line(4.0);
        let xi = m(dom, &[(0.0, 1.0), (1.0, 2.0)]);
        let same = xi.jordan_decompose(&xi).unwrap();
        assert!(same.positive_part.is_empty() && same.negative_part.is_empty());
        assert_eq!(same.common_part, xi);

        let d = m(dom, &[(0.0, 2.0)]).jordan_decompose(&m(dom, &[(0.0, 1.0)])).unwrap();
        assert_eq!(d.positive_part, m(dom, &[(0.0, 1.0)]));
        assert!(d.negative_part.is_empty());
        assert_eq!(d.common_part, m(dom, &[(0.0, 1.0)]));

        let a = m(dom, &[(0.0, 1.0)]);
        let b = m(dom, &[(1.0, 1.0)]);
        let d = a.jordan_decompose(&b).unwrap();
        assert_eq!(d.positive_part, a);
        assert_eq!(d.negative_part, b);
        assert!(d.common_part.is_empty());
    }

    #[test]
    fn lebesgue_examples() {
        let dom = line(4.0);
        let xi = m(dom, &[(0.0, 1.0)]);
        let far = m(dom, &[(2.0, 1.0)]);
        let (ac, s) = far.lebesgue_decompose(&xi).unwrap();
        assert!(ac.is_empty());
        assert_eq!(s, far);
        let (ac, s) = xi.scaled(0.3).lebesgue_decompose(&xi).unwrap();
        assert_eq!(ac, xi.scaled(0.3));
        assert!(s.is_empty());
        let eta = m(dom, &[(0.0, 0.5), (1.0, 0.5)]);
        let (ac, s) = eta.lebesgue_decompose(&xi).unwrap();
        assert_eq!(ac, m(dom, &[(0.0, 0.5)]));
        assert_eq!(s, m(dom, &[(1.0, 0.5)]));
    }

    #[test]
    fn shift_examples() {
        let dom = line(1.0);
        let a = m(dom, &[(0.75, 1.0), (0.1, 2.0)]);
        assert_eq!(a.shift(&[0.0]).unwrap(), a);
        let back = a.shift(&[0.3]).unwrap().shift(&[-0.3]).unwrap();
        assert!(a.max_atomwise_difference(&back) == 0.0);
        assert_eq!(back.len(), 2);
        let s = m(dom, &[(0.75, 1.0)]).shift(&[0.5]).unwrap();
        assert_eq!(s.location(0), &[0.25]);
    }

    #[test]
    fn singularity_examples() {
        let dom = line(1.0);
        let a = m(dom, &[(0.1, 1.0), (0.2, 1.0)]);
        let b = m(dom, &[(0.3, 1.0)]);
        let c = m(dom, &[(0.2, 1.0)]);
        assert!(a.mutually_singular(&b));
        assert!(!a.mutually_singular(&c));
        assert!(a.mutually_singular(&DiscreteMeasure::empty(dom)));
        assert!(DiscreteMeasure::empty(dom).mutually_singular(&a));
    }

    #[test]
    fn domain_mismatch_is_reported() {
        let a = m(line(1.0), &[(0.1, 1.0)]);
        let b = m(line(2.0), &[(0.1, 1.0)]);
        assert!(matches!(a.jordan_decompose(&b), Err(Error::DomainMismatch)));
        assert!(matches!(a.lebesgue_decompose(&b), Err(Error::DomainMismatch)));
    }
}
