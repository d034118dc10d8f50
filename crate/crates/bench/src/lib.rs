//! Fixtures shared by the benchmarks in `benches/`.

use rock_core::{generate, Dataset, Generator, SystemSpec, SystemName, TrajectorySet};

/// Noiseless Lorenz63 trajectories with `samples` points each, spaced 0.01 apart.
pub fn lorenz_data(n_traj: usize, samples: usize) -> TrajectorySet {
    let gen = Generator {
        system: SystemSpec::new(SystemName::Lorenz63),
        n_traj,
        samples,
        dt: 0.01,
        transient: 2.0,
        seed: 9,
    };
    match generate(&gen).expect("lorenz data") {
        Dataset::Ode(set) => set,
        Dataset::Pde(_) => unreachable!("lorenz63 is an ODE"),
    }
}
