//! Seeded generators of random-measure realizations on the torus.
//!
//! Each generator draws from its own ChaCha stream derived from the seed and
//! a component index, so outputs never depend on generation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::PeriodicDomain;
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;
use crate::solver::mix64;

/// Input classes: point processes, diffuse densities, measures on segments,
/// the uniform grid measure and weighted sums of these.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Unit atoms at the points of a Poisson process of intensity `intensity`.
    Poisson { intensity: f64 },
    /// Gaussian-smoothed Poisson centres of intensity `center_intensity`,
    /// sampled on cells and normalized to total mass `intensity·L^d`.
    SmoothedDensity {
        intensity: f64,
        center_intensity: f64,
        bandwidth: f64,
    },
    /// Length measure on `segments` random segments of length `length`,
    /// deposited on the cells they cross, total mass `intensity·L^d`.
    SegmentSingular {
        intensity: f64,
        segments: usize,
        length: f64,
    },
    /// Equal mass `intensity·pitch^d` on every cell.
    LebesgueGrid { intensity: f64 },
    /// `Σ weight·component`.
    Mixture { components: Vec<MixtureComponent> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub generator: GeneratorKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub kind: GeneratorKind,
    #[serde(default)]
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            kind: self.kind.clone(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidGenerator(format!("{name} must be positive, got {v}")))
    }
}

impl GeneratorKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            GeneratorKind::Poisson { intensity } | GeneratorKind::LebesgueGrid { intensity } => {
                positive("intensity", *intensity)
            }
            GeneratorKind::SmoothedDensity {
                intensity,
                center_intensity,
                bandwidth,
            } => {
                positive("intensity", *intensity)?;
                positive("center_intensity", *center_intensity)?;
                positive("bandwidth", *bandwidth)
            }
            GeneratorKind::SegmentSingular {
                intensity,
                segments,
                length,
            } => {
                positive("intensity", *intensity)?;
                positive("length", *length)?;
                if *segments == 0 {
                    return Err(Error::InvalidGenerator("segments must be positive".into()));
                }
                Ok(())
            }
            GeneratorKind::Mixture { components } => {
                if components.is_empty() {
                    return Err(Error::InvalidGenerator("mixture has no components".into()));
                }
                for c in components {
                    positive("mixture weight", c.weight)?;
                    c.generator.validate()?;
                }
                Ok(())
            }
        }
    }
}

/// Seed of stream `stream` derived from `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

/// Draws one realization.
pub fn generate(spec: &GeneratorSpec, domain: &PeriodicDomain) -> Result<DiscreteMeasure> {
    spec.validate()?;
    generate_kind(&spec.kind, domain, spec.seed, 0)
}

fn generate_kind(kind: &GeneratorKind, domain: &PeriodicDomain, seed: u64, stream: u64) -> Result<DiscreteMeasure> {
    match kind {
        GeneratorKind::Poisson { intensity } => poisson(domain, *intensity, &mut rng_for(seed, stream)),
        GeneratorKind::SmoothedDensity {
            intensity,
            center_intensity,
            bandwidth,
        } => smoothed_density(
            domain,
            *intensity,
            *center_intensity,
            *bandwidth,
            &mut rng_for(seed, stream),
        ),
        GeneratorKind::SegmentSingular {
            intensity,
            segments,
            length,
        } => segment_singular(domain, *intensity, *segments, *length, &mut rng_for(seed, stream)),
        GeneratorKind::LebesgueGrid { intensity } => lebesgue_grid(domain, intensity * domain.volume()),
        GeneratorKind::Mixture { components } => {
            let mut atoms: Vec<(Vec<f64>, f64)> = Vec::new();
            for (k, c) in components.iter().enumerate() {
                let part = generate_kind(&c.generator, domain, seed, stream * 64 + k as u64 + 1)?;
                atoms.extend(part.atoms().map(|(x, m)| (x.to_vec(), c.weight * m)));
            }
            DiscreteMeasure::new(*domain, atoms)
        }
    }
}

/// Uniform measure of the given total mass on the cell centres.
pub fn lebesgue_grid(domain: &PeriodicDomain, total_mass: f64) -> Result<DiscreteMeasure> {
    positive("total mass", total_mass)?;
    let cells = domain.num_cells();
    let m = total_mass / cells as f64;
    DiscreteMeasure::new(*domain, (0..cells).map(|c| (domain.cell_center(c), m)))
}

fn uniform_point(domain: &PeriodicDomain, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..domain.dim()).map(|_| rng.random::<f64>() * domain.side()).collect()
}

fn poisson_count(mean: f64, rng: &mut ChaCha8Rng) -> Result<usize> {
    let dist = Poisson::new(mean).map_err(|e| Error::InvalidGenerator(e.to_string()))?;
    Ok(dist.sample(rng) as usize)
}

fn poisson(domain: &PeriodicDomain, intensity: f64, rng: &mut ChaCha8Rng) -> Result<DiscreteMeasure> {
    let n = poisson_count(intensity * domain.volume(), rng)?;
    let points: Vec<(Vec<f64>, f64)> = (0..n).map(|_| (uniform_point(domain, rng), 1.0)).collect();
    DiscreteMeasure::new(*domain, points)
}

/// Periodic Gaussian weights of every cell along one axis, truncated at `6σ`.
fn axis_kernel(domain: &PeriodicDomain, center: f64, sigma: f64) -> Vec<f64> {
    let n = domain.resolution();
    let (side, pitch) = (domain.side(), domain.pitch());
    let reach = 6.0 * sigma;
    let images = (reach / side).ceil() as i64 + 1;
    (0..n)
        .map(|k| {
            let x = (k as f64 + 0.5) * pitch;
            (-images..=images)
                .map(|m| x - center + m as f64 * side)
                .filter(|t| t.abs() <= reach)
                .map(|t| (-0.5 * (t / sigma).powi(2)).exp())
                .sum()
        })
        .collect()
}

fn smoothed_density(
    domain: &PeriodicDomain,
    intensity: f64,
    center_intensity: f64,
    bandwidth: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DiscreteMeasure> {
    let total = intensity * domain.volume();
    let centers = poisson_count(center_intensity * domain.volume(), rng)?;
    if centers == 0 {
        return lebesgue_grid(domain, total);
    }
    let (d, n) = (domain.dim(), domain.resolution());
    let cells = domain.num_cells();
    let mut density = vec![0.0; cells];
    for _ in 0..centers {
        let c = uniform_point(domain, rng);
        let axes: Vec<Vec<f64>> = c.iter().map(|&ci| axis_kernel(domain, ci, bandwidth)).collect();
        for (idx, slot) in density.iter_mut().enumerate() {
            let mut w = 1.0;
            let mut rest = idx;
            for axis in axes.iter().take(d) {
                w *= axis[rest % n];
                rest /= n;
                if w == 0.0 {
                    break;
                }
            }
            *slot += w;
        }
    }
    let sum: f64 = density.iter().sum();
    if sum <= 0.0 {
        return lebesgue_grid(domain, total);
    }
    DiscreteMeasure::new(
        *domain,
        density
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(c, &w)| (domain.cell_center(c), total * w / sum)),
    )
}

fn unit_direction(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|c| c / norm).collect();
        }
    }
}

fn segment_singular(
    domain: &PeriodicDomain,
    intensity: f64,
    segments: usize,
    length: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DiscreteMeasure> {
    let total = intensity * domain.volume();
    let steps = (length / (domain.pitch() / 8.0)).ceil().max(1.0) as usize;
    let h = length / steps as f64;
    let per_step = total / (segments * steps) as f64;
    let mut atoms = Vec::with_capacity(segments * steps);
    for _ in 0..segments {
        let start = uniform_point(domain, rng);
        let dir = unit_direction(domain.dim(), rng);
        for k in 0..steps {
            let t = (k as f64 + 0.5) * h;
            let p: Vec<f64> = start.iter().zip(&dir).map(|(s, u)| domain.wrap(s + t * u)).collect();
            atoms.push((domain.cell_center(domain.cell_index(&p)), per_step));
        }
    }
    DiscreteMeasure::new(*domain, atoms)
}

/// Pair `(ξ, η) = (c + ξ', c + η')` with mutually singular `ξ'`, `η'`.
///
/// Draws `x` from `spec_xi` and `y` from `spec_eta`, takes `ξ' ∝ (x − y)₊`
/// and `η' ∝ (y − x)₊` with mass `(1 − w)·M` each, and the common part
/// `c ∝ x` with mass `w·M`, where `M` is the mass of `x`. Identical draws
/// give `ξ = η = x`.
pub fn coupled_pair(
    spec_xi: &GeneratorSpec,
    spec_eta: &GeneratorSpec,
    common_weight: f64,
    domain: &PeriodicDomain,
    seed: u64,
) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    if !(0.0..=1.0).contains(&common_weight) {
        return Err(Error::InvalidGenerator(format!(
            "common weight {common_weight} outside [0, 1]"
        )));
    }
    let x = generate(&spec_xi.with_seed(derive_seed(seed, 1)), domain)?;
    let y = generate(&spec_eta.with_seed(derive_seed(seed, 2)), domain)?;
    let total = x.total_mass();
    if total <= 0.0 {
        return Err(Error::InvalidGenerator("first generator produced no mass".into()));
    }
    let dec = x.jordan_decompose(&y)?;
    let (p, q) = (dec.positive_part, dec.negative_part);
    if p.is_empty() || q.is_empty() {
        return Ok((x.clone(), x));
    }
    let moved = (1.0 - common_weight) * total;
    let common = x.scaled(common_weight);
    let xi_prime = p.scaled(moved / p.total_mass());
    let eta_prime = q.scaled(moved / q.total_mass());
    if common_weight == 0.0 {
        return Ok((xi_prime, eta_prime));
    }
    if common_weight == 1.0 {
        return Ok((common.clone(), common));
    }
    Ok((common.add(&xi_prime)?, common.add(&eta_prime)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dom(d: usize, n: usize) -> PeriodicDomain {
        PeriodicDomain::new(d, 1.0, n).unwrap()
    }

    #[test]
    fn lebesgue_grid_example() {
        let m = generate(
            &GeneratorSpec::new(GeneratorKind::LebesgueGrid { intensity: 1.0 }, 0),
            &dom(1, 4),
        )
        .unwrap();
        assert_eq!(m.len(), 4);
        assert!(m.masses().iter().all(|&w| w == 0.25));
    }

    #[test]
    fn poisson_is_reproducible() {
        let spec = GeneratorSpec::new(GeneratorKind::Poisson { intensity: 10.0 }, 42);
        let a = generate(&spec, &dom(2, 8)).unwrap();
        let b = generate(&spec, &dom(2, 8)).unwrap();
        assert_eq!(a, b);
        let c = generate(&spec.with_seed(43), &dom(2, 8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn smoothed_density_conserves_mass() {
        let spec = GeneratorSpec::new(
            GeneratorKind::SmoothedDensity {
                intensity: 3.0,
                center_intensity: 20.0,
                bandwidth: 0.05,
            },
            7,
        );
        let m = generate(&spec, &dom(2, 32)).unwrap();
        assert!((m.total_mass() - 3.0).abs() < 1e-9);
        assert!(m.is_cell_aligned());
    }

    #[test]
    fn segments_concentrate_on_few_cells() {
        for n in [32, 64] {
            let spec = GeneratorSpec::new(
                GeneratorKind::SegmentSingular {
                    intensity: 1.0,
                    segments: 3,
                    length: 0.5,
                },
                1,
            );
            let m = generate(&spec, &dom(2, n)).unwrap();
            assert!(m.len() <= 3 * 2 * n, "{} cells", m.len());
            assert!((m.total_mass() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn coupled_pair_contract() {
        let d = dom(2, 16);
        let s = GeneratorSpec::new(
            GeneratorKind::SmoothedDensity {
                intensity: 1.0,
                center_intensity: 10.0,
                bandwidth: 0.08,
            },
            0,
        );
        for w in [0.0, 0.3, 1.0] {
            let (xi, eta) = coupled_pair(&s, &s, w, &d, 9).unwrap();
            assert!((xi.intensity() - eta.intensity()).abs() < 1e-12);
            if w == 0.0 {
                assert!(xi.mutually_singular(&eta));
            }
            if w == 1.0 {
                assert_eq!(xi, eta);
            }
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let bad = GeneratorSpec::new(GeneratorKind::Poisson { intensity: -1.0 }, 0);
        assert!(generate(&bad, &dom(1, 4)).is_err());
        let empty = GeneratorSpec::new(GeneratorKind::Mixture { components: vec![] }, 0);
        assert!(generate(&empty, &dom(1, 4)).is_err());
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = GeneratorSpec::new(
            GeneratorKind::Mixture {
                components: vec![
                    MixtureComponent {
                        weight: 0.5,
                        generator: GeneratorKind::LebesgueGrid { intensity: 1.0 },
                    },
                    MixtureComponent {
                        weight: 0.5,
                        generator: GeneratorKind::Poisson { intensity: 2.0 },
                    },
                ],
            },
            5,
        );
        let text = toml::to_string(&spec).unwrap();
        let back: GeneratorSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
