//! Small model Hamiltonians used by tests, examples and the CLI fixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::integrals::IntegralStore;

/// Two-site Hubbard model at half filling: hopping −t, on-site repulsion U.
pub fn hubbard_dimer(t: f64, u: f64) -> IntegralStore {
    let mut s = IntegralStore::new(2, 2, 0).unwrap();
    s.set_h(0, 1, -t);
    s.set_g(0, 0, 0, 0, u);
    s.set_g(1, 1, 1, 1, u);
    s
}

/// Diagonal one-electron model with no two-electron interaction.
pub fn non_interacting(levels: &[f64], n_elec: usize) -> IntegralStore {
    let mut s = IntegralStore::new(levels.len(), n_elec, (n_elec % 2) as i64).unwrap();
    for (k, &e) in levels.iter().enumerate() {
        s.set_h(k, k, e);
    }
    s
}

/// Seeded molecule-like integrals: ascending diagonal levels with weak
/// off-diagonal mixing, positive Coulomb and exchange integrals and small
/// random remaining two-electron terms. All 8 index symmetries hold.
pub fn random_molecule(n_orb: usize, n_elec: usize, seed: u64) -> IntegralStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = IntegralStore::new(n_orb, n_elec, (n_elec % 2) as i64).unwrap();
    s.e_nuc = rng.gen_range(0.5..2.0);
    for i in 0..n_orb {
        s.set_h(i, i, -2.0 + 0.9 * i as f64 + rng.gen_range(-0.1..0.1));
        for j in 0..i {
            s.set_h(i, j, rng.gen_range(-0.1..0.1));
        }
    }
    for i in 0..n_orb {
        for j in 0..=i {
            for k in 0..n_orb {
                for l in 0..=k {
                    if i * (i + 1) / 2 + j < k * (k + 1) / 2 + l {
                        continue;
                    }
                    let mut value = rng.gen_range(-0.03..0.03);
                    if i == j && k == l {
                        value += rng.gen_range(0.3..0.6);
                    } else if (i, j) == (k, l) {
                        value += rng.gen_range(0.05..0.15);
                    }
                    s.set_g(i, j, k, l, value);
                }
            }
        }
    }
    s
}

/// Two spatial orbitals, two electrons, with a closed-form two-level
/// structure: the (1α1β) and (2α2β) configurations couple only through K.
pub fn two_orbital_analytic() -> IntegralStore {
    let mut s = IntegralStore::new(2, 2, 0).unwrap();
    s.set_h(0, 0, -1.0);
    s.set_h(1, 1, -0.25);
    s.set_g(0, 0, 0, 0, 0.6);
    s.set_g(1, 1, 1, 1, 0.5);
    s.set_g(0, 0, 1, 1, 0.45);
    s.set_g(0, 1, 0, 1, 0.1);
    s
}
