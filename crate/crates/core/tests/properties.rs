use corehole::ci_solver::{build_hamiltonian, ground_state, solve_dense};
use corehole::fixtures::{random_molecule, two_orbital_analytic};
use corehole::fock_space::{enumerate_space, Determinant, Truncation};
use corehole::greens::{
    lehmann_poles, make_trial, spectral_function, GridSpec, Lineshape, PoleSet, TrialSource,
};
use corehole::integrals::{parse_fcidump, to_spin_integrals, write_fcidump, SpinIntegrals};
use corehole::qpe_sim::{cluster_shots, fejer, run_shots, PhaseDistribution, PhaseWindow};
use corehole::rt_eom_cc::{gf_and_spectrum, init_reference, propagate, PropagationConfig, Tail};
use proptest::prelude::*;

fn removal_poles(ints: &SpinIntegrals, p: usize) -> (PoleSet, f64) {
    let r = ints.reference;
    let space = enumerate_space(ints.m, r.n_alpha(), r.n_beta(), None).unwrap();
    let (e0, _) = ground_state(&build_hamiltonian(ints, &space).unwrap(), 3000).unwrap();
    let (na, nb) = if p % 2 == 0 {
        (r.n_alpha() - 1, r.n_beta())
    } else {
        (r.n_alpha(), r.n_beta() - 1)
    };
    let target = enumerate_space(ints.m, na, nb, None).unwrap();
    let trial = make_trial(TrialSource::Determinant(r), p, None, &target).unwrap();
    let eig = solve_dense(&build_hamiltonian(ints, &target).unwrap()).unwrap();
    (lehmann_poles(&eig, &trial, e0, 0.0).unwrap(), e0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ladder_operators_anticommute_on_basis_states(bits in 0u64..(1 << 12), i in 0usize..12, j in 0usize..12) {
        let d = Determinant::new(bits, 12).unwrap();
        // {a_i, a_j†}|d⟩ = δ_ij |d⟩, tracked as signed basis states
        let mut acc: Vec<(Determinant, i32)> = Vec::new();
        let mut add = |det: Determinant, s: i32| match acc.iter_mut().find(|(x, _)| *x == det) {
            Some(e) => e.1 += s,
            None => acc.push((det, s)),
        };
        if let Some(c) = d.create(j).unwrap() {
            if let Some(a) = c.det.annihilate(i).unwrap() {
                add(a.det, (c.sign * a.sign) as i32);
            }
        }
        if let Some(a) = d.annihilate(i).unwrap() {
            if let Some(c) = a.det.create(j).unwrap() {
                add(c.det, (a.sign * c.sign) as i32);
            }
        }
        acc.retain(|(_, s)| *s != 0);
        if i == j {
            prop_assert_eq!(acc, vec![(d, 1)]);
        } else {
            prop_assert!(acc.is_empty());
        }
    }

    #[test]
    fn fcidump_round_trip(n_orb in 2usize..5, seed in 0u64..1000) {
        let store = random_molecule(n_orb, 2, seed);
        let back = parse_fcidump(write_fcidump(&store).as_bytes()).unwrap();
        prop_assert_eq!(back.n_orb, store.n_orb);
        prop_assert_eq!(back.n_elec, store.n_elec);
        prop_assert!((back.e_nuc - store.e_nuc).abs() < 1e-12);
        prop_assert!((&back.h - &store.h).abs().max() < 1e-12);
        for i in 0..n_orb {
            for j in 0..n_orb {
                for k in 0..n_orb {
                    for l in 0..n_orb {
                        prop_assert!((back.g(i, j, k, l) - store.g(i, j, k, l)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn fejer_kernel_is_normalized(phi in 0.0f64..1.0, bits in 1u32..10) {
        let n = 1u64 << bits;
        let total: f64 = (0..n).map(|k| fejer(phi - k as f64 / n as f64, bits)).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn truncated_spaces_are_variational(seed in 0u64..10_000) {
        let ints = to_spin_integrals(&random_molecule(4, 4, seed)).unwrap();
        let r = ints.reference;
        let energy = |rank: Option<usize>| {
            let t = rank.map(|rank| Truncation { reference: r, rank });
            let space = enumerate_space(ints.m, r.n_alpha(), r.n_beta(), t).unwrap();
            ground_state(&build_hamiltonian(&ints, &space).unwrap(), 3000).unwrap().0
        };
        let ladder = [energy(Some(2)), energy(Some(3)), energy(Some(4)), energy(None)];
        for w in ladder.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10, "{:?}", ladder);
        }
    }

    #[test]
    fn removal_weights_are_complete(seed in 0u64..10_000, p in 0usize..4) {
        // a determinant trial with p occupied has unit norm
        let ints = to_spin_integrals(&random_molecule(4, 4, seed)).unwrap();
        let (poles, _) = removal_poles(&ints, p);
        prop_assert!((poles.total_weight() - 1.0).abs() < 1e-10);
        prop_assert!(poles.poles.iter().all(|q| q.weight >= 0.0));
    }

    #[test]
    fn spectra_are_nonnegative_and_bounded(seed in 0u64..10_000, theta in 0.05f64..1.0) {
        let ints = to_spin_integrals(&random_molecule(3, 2, seed)).unwrap();
        let (poles, _) = removal_poles(&ints, 0);
        let grid = GridSpec::around(&poles, 0.0, 10.0, 0.02).unwrap();
        for shape in [Lineshape::Lorentzian, Lineshape::Gaussian] {
            let sf = spectral_function(&poles, &grid, theta, shape).unwrap();
            prop_assert!(sf.values.iter().all(|&v| v >= 0.0));
            prop_assert!(sf.integral() <= poles.total_weight() + 1e-9);
        }
    }
}

#[test]
fn qpe_shots_are_reproducible_and_splittable() {
    let ints = to_spin_integrals(&random_molecule(4, 4, 2)).unwrap();
    let (poles, _) = removal_poles(&ints, 0);
    let window = PhaseWindow::for_poles(&poles, 1e-3, 10, 0.05).unwrap();
    let dist = PhaseDistribution::from_poles(&poles, &window).unwrap();
    let all = run_shots(&dist, &window, 2000, 42, 0);
    assert_eq!(all, run_shots(&dist, &window, 2000, 42, 0));
    let mut split = run_shots(&dist, &window, 700, 42, 0);
    split.extend(run_shots(&dist, &window, 1300, 42, 700));
    assert_eq!(all, split);
    assert_ne!(all, run_shots(&dist, &window, 2000, 43, 0));
    let total: f64 = cluster_shots(&all, 2).iter().map(|c| c.probability).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn two_electron_cumulant_reproduces_exact_poles() {
    let ints = to_spin_integrals(&two_orbital_analytic()).unwrap();
    let (poles, e0) = removal_poles(&ints, 0);
    let r = init_reference(&ints, 0, e0 - ints.reference_energy()).unwrap();
    let traj = propagate(
        &r,
        &PropagationConfig {
            t_max: 300.0,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(traj.steps(), 6000);
    let grid = GridSpec::around(&poles, 1e-2, 5.0, 0.005).unwrap();
    let sf = gf_and_spectrum(&traj, &r, 0.1, &grid, Tail::Exponential).unwrap();
    let found = sf.peak_areas();
    for q in poles.poles.iter().filter(|q| q.weight >= 1e-2) {
        let (peak, area) = found
            .iter()
            .min_by(|a, b| {
                (a.0.position - q.binding_ev)
                    .abs()
                    .total_cmp(&(b.0.position - q.binding_ev).abs())
            })
            .unwrap();
        assert!(
            (peak.position - q.binding_ev).abs() < 0.01,
            "{} vs {}",
            peak.position,
            q.binding_ev
        );
        assert!((area - q.weight).abs() < 0.05, "{area} vs {}", q.weight);
    }
}

#[test]
fn determinant_sign_counts_occupied_orbitals_below() {
    let d = Determinant::from_occupied([0, 2, 5], 8).unwrap();
    assert_eq!(d.annihilate(0).unwrap().unwrap().sign, 1);
    assert_eq!(d.annihilate(2).unwrap().unwrap().sign, -1);
    assert_eq!(d.annihilate(5).unwrap().unwrap().sign, 1);
    assert_eq!(d.create(7).unwrap().unwrap().sign, -1);
    assert!(d.create(2).unwrap().is_none());
    assert!(d.annihilate(1).unwrap().is_none());
}
