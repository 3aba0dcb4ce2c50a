//! Fixed benchmark instances shared by the criterion benches.

use factor_alloc::{generate, DiscreteMeasure, GeneratorKind, GeneratorSpec, PeriodicDomain};

/// Smoothed density against Poisson points on the unit square.
pub fn density_vs_points(resolution: usize, intensity: f64, seed: u64) -> (DiscreteMeasure, DiscreteMeasure) {
    let domain = PeriodicDomain::new(2, 1.0, resolution).expect("valid domain");
    let xi = generate(
        &GeneratorSpec::new(
            GeneratorKind::SmoothedDensity {
                intensity,
                center_intensity: 20.0,
                bandwidth: 0.08,
            },
            seed,
        ),
        &domain,
    )
    .expect("valid generator");
    let eta = generate(
        &GeneratorSpec::new(GeneratorKind::Poisson { intensity }, seed + 1),
        &domain,
    )
    .expect("valid generator");
    let xi = xi.scaled(eta.total_mass().max(1.0) / xi.total_mass());
    (xi, eta)
}
