//! CCSD residuals and energy against ⟨μ|e^{−T}He^{T}|φ⟩ assembled by dense
//! matrix exponentiation in the full (N−1)-electron sector.

use corehole::ci_solver::build_hamiltonian;
use corehole::fixtures::random_molecule;
use corehole::fock_space::{
    enumerate_space, operator_matrix, Determinant, FermionOperator, Ladder,
};
use corehole::integrals::to_spin_integrals;
use corehole::rt_eom_cc::init_reference;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn expm(a: &DMatrix<C64>) -> DMatrix<C64> {
    // excitation operators are nilpotent, so the series terminates
    let n = a.nrows();
    let mut out = DMatrix::<C64>::identity(n, n);
    let mut term = out.clone();
    for k in 1..30 {
        term = &term * a / C64::from(k as f64);
        if term.iter().all(|x| x.norm() == 0.0) {
            break;
        }
        out += &term;
    }
    out
}

/// Sign and target of a product applied to φ; the rightmost factor acts first.
fn excite(phi: &Determinant, factors: &[Ladder]) -> Option<(Determinant, f64)> {
    let mut d = *phi;
    let mut sign = 1.0;
    for f in factors.iter().rev() {
        let next = match *f {
            Ladder::Create(i) => d.create(i).unwrap(),
            Ladder::Annihilate(i) => d.annihilate(i).unwrap(),
        }?;
        d = next.det;
        sign *= next.sign as f64;
    }
    Some((d, sign))
}

fn check(seed: u64, core: usize) {
    let ints = to_spin_integrals(&random_molecule(4, 5, seed)).unwrap();
    let reference = init_reference(&ints, core, 0.0).unwrap();
    let sys = &reference.system;
    let (occ, virt) = (sys.occ.clone(), sys.virt.clone());
    let (o, v) = (occ.len(), virt.len());
    assert_eq!((o, v), (4, 4));
    let phi = ints.reference.annihilate(core).unwrap().unwrap().det;
    let space = enumerate_space(8, phi.n_alpha(), phi.n_beta(), None).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let mut draw = || C64::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
    let spin = |p: usize| p % 2;
    let mut t1 = vec![C64::default(); o * v];
    let mut t2 = vec![C64::default(); o * o * v * v];
    let idx2 = |i: usize, j: usize, a: usize, b: usize| ((i * o + j) * v + a) * v + b;
    for i in 0..o {
        for a in 0..v {
            if spin(occ[i]) == spin(virt[a]) {
                t1[i * v + a] = draw();
            }
        }
    }
    for i in 0..o {
        for j in i + 1..o {
            for a in 0..v {
                for b in a + 1..v {
                    if spin(occ[i]) + spin(occ[j]) == spin(virt[a]) + spin(virt[b]) {
                        let x = draw();
                        t2[idx2(i, j, a, b)] = x;
                        t2[idx2(j, i, a, b)] = -x;
                        t2[idx2(i, j, b, a)] = -x;
                        t2[idx2(j, i, b, a)] = x;
                    }
                }
            }
        }
    }

    // T = Σ t_i^a a†_a a_i + ¼ Σ t_ij^ab a†_a a†_b a_j a_i, split into real and imaginary parts
    let mut parts = [FermionOperator::new(), FermionOperator::new()];
    for i in 0..o {
        for a in 0..v {
            let t = t1[i * v + a];
            let f = vec![Ladder::Create(virt[a]), Ladder::Annihilate(occ[i])];
            parts[0].push(t.re, f.clone());
            parts[1].push(t.im, f);
            for j in 0..o {
                for b in 0..v {
                    let t = t2[idx2(i, j, a, b)] * 0.25;
                    let f = vec![
                        Ladder::Create(virt[a]),
                        Ladder::Create(virt[b]),
                        Ladder::Annihilate(occ[j]),
                        Ladder::Annihilate(occ[i]),
                    ];
                    parts[0].push(t.re, f.clone());
                    parts[1].push(t.im, f);
                }
            }
        }
    }
    let re = operator_matrix(&parts[0], &space, &space)
        .unwrap()
        .matrix
        .to_dense();
    let im = operator_matrix(&parts[1], &space, &space)
        .unwrap()
        .matrix
        .to_dense();
    let t = DMatrix::from_fn(space.len(), space.len(), |r, c| {
        C64::new(re[(r, c)], im[(r, c)])
    });
    let h = build_hamiltonian(&ints, &space)
        .unwrap()
        .matrix
        .to_dense()
        .map(C64::from);
    let mut e_phi = DVector::<C64>::zeros(space.len());
    let k_phi = space.position(&phi).unwrap();
    e_phi[k_phi] = C64::from(1.0);
    let hbar_phi = expm(&(-&t)) * &h * expm(&t) * &e_phi;

    let (r1, r2) = sys.residuals(&t1, &t2).unwrap();
    let project = |factors: &[Ladder]| -> C64 {
        match excite(&phi, factors) {
            Some((d, s)) => space
                .position(&d)
                .map_or(C64::default(), |k| hbar_phi[k] * s),
            None => C64::default(),
        }
    };
    let mut worst: f64 = 0.0;
    for i in 0..o {
        for a in 0..v {
            let want = project(&[Ladder::Create(virt[a]), Ladder::Annihilate(occ[i])]);
            worst = worst.max((r1[i * v + a] - want).norm());
        }
    }
    for i in 0..o {
        for j in i + 1..o {
            for a in 0..v {
                for b in a + 1..v {
                    let want = project(&[
                        Ladder::Create(virt[a]),
                        Ladder::Create(virt[b]),
                        Ladder::Annihilate(occ[j]),
                        Ladder::Annihilate(occ[i]),
                    ]);
                    worst = worst.max((r2[idx2(i, j, a, b)] - want).norm());
                }
            }
        }
    }
    let scale = r1.iter().chain(&r2).map(|x| x.norm()).fold(0.0, f64::max);
    assert!(scale > 1e-2, "degenerate test: residuals vanish");
    assert!(
        worst < 1e-10,
        "seed {seed} core {core}: max residual deviation {worst:e}"
    );

    let e_ref = h[(k_phi, k_phi)];
    let e_cc = sys.energy(&t1, &t2).unwrap();
    assert!(
        (e_cc - (hbar_phi[k_phi] - e_ref)).norm() < 1e-10,
        "energy mismatch"
    );
}

#[test]
fn residuals_match_brute_force_similarity_transform() {
    for (seed, core) in [(1, 0), (2, 1), (3, 2), (4, 4)] {
        check(seed, core);
    }
}
