//! Real-time coupled-cluster propagation of a core-ionized reference and the
//! cumulant Green's function built from it.
//!
//! With |φ⟩ = a_c|Φ₀⟩ and e^{iHτ}|φ⟩ ∝ e^{C(τ)} e^{T(τ)}|φ⟩, the amplitudes obey
//! dt_μ/dτ = i·⟨μ|e^{−T}He^{T}|φ⟩ and the cumulant dC/dτ = i·E_cc(T), where
//! E_cc is the usual CCSD energy expression on the current amplitudes. The
//! retarded Green's function is G(τ) = −i e^{−i(ε_c + E_corr)τ} e^{C(τ)}.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greens::{GridSpec, Lineshape, SpectralFunction};
use crate::integrals::{fock_n_minus_1, SpinIntegrals};
use crate::units::{ev_to_hartree, hartree_to_ev};

type C64 = Complex64;

const I: C64 = C64 { re: 0.0, im: 1.0 };

pub const DEFAULT_DT: f64 = 0.05;
pub const DEFAULT_T_MAX: f64 = 900.0;
pub const DEFAULT_DAMPING_EV: f64 = 0.1;
pub const FIXED_POINT_TOL: f64 = 1e-10;
pub const FIXED_POINT_MAX_ITER: usize = 50;
pub const MAX_HALVINGS: u32 = 4;
pub const DIVERGENCE_NORM: f64 = 1e3;
/// Share of the trajectory the tail rate is fitted over.
const TAIL_FIT_FRACTION: f64 = 0.1;

/// Dense 4-index block of antisymmetrized integrals in local (occ/virt) labels.
#[derive(Clone, Debug)]
struct Block4 {
    d: [usize; 4],
    data: Vec<f64>,
}

impl Block4 {
    fn build(lists: [&[usize]; 4], v: impl Fn(usize, usize, usize, usize) -> f64) -> Self {
        let d = [
            lists[0].len(),
            lists[1].len(),
            lists[2].len(),
            lists[3].len(),
        ];
        let mut data = Vec::with_capacity(d.iter().product());
        for &p in lists[0] {
            for &q in lists[1] {
                for &r in lists[2] {
                    for &s in lists[3] {
                        data.push(v(p, q, r, s));
                    }
                }
            }
        }
        Self { d, data }
    }

    #[inline(always)]
    fn at(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[((i * self.d[1] + j) * self.d[2] + k) * self.d[3] + l]
    }
}

/// Fock and integral blocks of a single-determinant reference partitioned
/// into occupied and virtual spin-orbitals.
#[derive(Clone, Debug)]
pub struct CCSystem {
    pub occ: Vec<usize>,
    pub virt: Vec<usize>,
    foo: Vec<f64>,
    fov: Vec<f64>,
    fvv: Vec<f64>,
    oooo: Block4,
    ooov: Block4,
    oovo: Block4,
    oovv: Block4,
    ovvo: Block4,
    ovvv: Block4,
    vvvo: Block4,
    ovoo: Block4,
    vvvv: Block4,
}

impl CCSystem {
    /// `f` is the Fock matrix of the reference in the full spin-orbital basis.
    pub fn new(ints: &SpinIntegrals, occ: Vec<usize>, f: &nalgebra::DMatrix<f64>) -> Result<Self> {
        let m = ints.m;
        if f.nrows() != m || f.ncols() != m {
            return Err(Error::Shape(format!(
                "Fock matrix {}×{} for {m} spin-orbitals",
                f.nrows(),
                f.ncols()
            )));
        }
        if occ.iter().any(|&i| i >= m) {
            return Err(Error::Shape("occupied index out of range".into()));
        }
        let virt: Vec<usize> = (0..m).filter(|p| !occ.contains(p)).collect();
        let fblock = |a: &[usize], b: &[usize]| -> Vec<f64> {
            a.iter()
                .flat_map(|&p| b.iter().map(move |&q| f[(p, q)]))
                .collect()
        };
        let v = |p, q, r, s| ints.v(p, q, r, s);
        let (o, x) = (occ.as_slice(), virt.as_slice());
        Ok(Self {
            foo: fblock(o, o),
            fov: fblock(o, x),
            fvv: fblock(x, x),
            oooo: Block4::build([o, o, o, o], v),
            ooov: Block4::build([o, o, o, x], v),
            oovo: Block4::build([o, o, x, o], v),
            oovv: Block4::build([o, o, x, x], v),
            ovvo: Block4::build([o, x, x, o], v),
            ovvv: Block4::build([o, x, x, x], v),
            vvvo: Block4::build([x, x, x, o], v),
            ovoo: Block4::build([o, x, o, o], v),
            vvvv: Block4::build([x, x, x, x], v),
            occ,
            virt,
        })
    }

    pub fn n_occ(&self) -> usize {
        self.occ.len()
    }

    pub fn n_virt(&self) -> usize {
        self.virt.len()
    }

    fn t1_len(&self) -> usize {
        self.n_occ() * self.n_virt()
    }

    fn t2_len(&self) -> usize {
        self.t1_len() * self.t1_len()
    }

    #[inline(always)]
    fn i2(&self, i: usize, j: usize, a: usize, b: usize) -> usize {
        let (o, v) = (self.n_occ(), self.n_virt());
        ((i * o + j) * v + a) * v + b
    }

    /// f_aa − f_ii and f_aa + f_bb − f_ii − f_jj.
    fn diagonal_gaps(&self) -> (Vec<f64>, Vec<f64>) {
        let (o, v) = (self.n_occ(), self.n_virt());
        let fi = |i: usize| self.foo[i * o + i];
        let fa = |a: usize| self.fvv[a * v + a];
        let d1 = (0..o)
            .flat_map(|i| (0..v).map(move |a| fa(a) - fi(i)))
            .collect();
        let mut d2 = vec![0.0; self.t2_len()];
        for i in 0..o {
            for j in 0..o {
                for a in 0..v {
                    for b in 0..v {
                        d2[self.i2(i, j, a, b)] = fa(a) + fa(b) - fi(i) - fi(j);
                    }
                }
            }
        }
        (d1, d2)
    }

    fn check_shapes(&self, t1: &[C64], t2: &[C64]) -> Result<()> {
        if t1.len() != self.t1_len() || t2.len() != self.t2_len() {
            return Err(Error::Shape(format!(
                "amplitudes of length {}/{} for {} occupied and {} virtual spin-orbitals",
                t1.len(),
                t2.len(),
                self.n_occ(),
                self.n_virt()
            )));
        }
        Ok(())
    }

    /// E_cc = Σ f_ia t_i^a + ¼ Σ ⟨ij||ab⟩ t_ij^ab + ½ Σ ⟨ij||ab⟩ t_i^a t_j^b.
    pub fn energy(&self, t1: &[C64], t2: &[C64]) -> Result<C64> {
        self.check_shapes(t1, t2)?;
        let (o, v) = (self.n_occ(), self.n_virt());
        let mut e = C64::default();
        for i in 0..o {
            for a in 0..v {
                e += t1[i * v + a] * self.fov[i * v + a];
            }
        }
        for i in 0..o {
            for j in 0..o {
                for a in 0..v {
                    for b in 0..v {
                        let w = self.oovv.at(i, j, a, b);
                        if w != 0.0 {
                            e += (t2[self.i2(i, j, a, b)] * 0.25
                                + t1[i * v + a] * t1[j * v + b] * 0.5)
                                * w;
                        }
                    }
                }
            }
        }
        Ok(e)
    }

    /// Singles and doubles residuals ⟨μ|e^{−T}He^{T}|φ⟩ with the full Fock
    /// matrix (diagonal included). The doubles residual is antisymmetric.
    pub fn residuals(&self, t1: &[C64], t2: &[C64]) -> Result<(Vec<C64>, Vec<C64>)> {
        self.check_shapes(t1, t2)?;
        let (o, v) = (self.n_occ(), self.n_virt());
        let z = C64::default();
        let t1a = |i: usize, a: usize| t1[i * v + a];
        let t2a = |i: usize, j: usize, a: usize, b: usize| t2[self.i2(i, j, a, b)];

        let mut tau = vec![z; t2.len()];
        let mut taut = vec![z; t2.len()];
        for i in 0..o {
            for j in 0..o {
                for a in 0..v {
                    for b in 0..v {
                        let k = self.i2(i, j, a, b);
                        let x = t1a(i, a) * t1a(j, b) - t1a(i, b) * t1a(j, a);
                        tau[k] = t2[k] + x;
                        taut[k] = t2[k] + x * 0.5;
                    }
                }
            }
        }
        let tau_a = |i: usize, j: usize, a: usize, b: usize| tau[self.i2(i, j, a, b)];

        // one-body intermediates
        let mut fme = vec![z; o * v];
        for m in 0..o {
            for e in 0..v {
                let mut s = C64::from(self.fov[m * v + e]);
                for n in 0..o {
                    for f in 0..v {
                        s += t1a(n, f) * self.oovv.at(m, n, e, f);
                    }
                }
                fme[m * v + e] = s;
            }
        }
        let mut fae = vec![z; v * v];
        for a in 0..v {
            for e in 0..v {
                let mut s = C64::from(self.fvv[a * v + e]);
                for m in 0..o {
                    s -= t1a(m, a) * (0.5 * self.fov[m * v + e]);
                    for f in 0..v {
                        s += t1a(m, f) * self.ovvv.at(m, a, f, e);
                    }
                    for n in 0..o {
                        for f in 0..v {
                            s -= taut[self.i2(m, n, a, f)] * (0.5 * self.oovv.at(m, n, e, f));
                        }
                    }
                }
                fae[a * v + e] = s;
            }
        }
        let mut fmi = vec![z; o * o];
        for m in 0..o {
            for i in 0..o {
                let mut s = C64::from(self.foo[m * o + i]);
                for e in 0..v {
                    s += t1a(i, e) * (0.5 * self.fov[m * v + e]);
                    for n in 0..o {
                        s += t1a(n, e) * self.ooov.at(m, n, i, e);
                        for f in 0..v {
                            s += taut[self.i2(i, n, e, f)] * (0.5 * self.oovv.at(m, n, e, f));
                        }
                    }
                }
                fmi[m * o + i] = s;
            }
        }

        // pair-packed two-body intermediates
        let opairs: Vec<(usize, usize)> = (0..o)
            .flat_map(|i| (i + 1..o).map(move |j| (i, j)))
            .collect();
        let vpairs: Vec<(usize, usize)> = (0..v)
            .flat_map(|a| (a + 1..v).map(move |b| (a, b)))
            .collect();
        let (no, nv) = (opairs.len(), vpairs.len());
        let mut wmnij = vec![z; no * no];
        for (p, &(m, n)) in opairs.iter().enumerate() {
            for (q, &(i, j)) in opairs.iter().enumerate() {
                let mut s = C64::from(self.oooo.at(m, n, i, j));
                for e in 0..v {
                    s +=
                        t1a(j, e) * self.ooov.at(m, n, i, e) - t1a(i, e) * self.ooov.at(m, n, j, e);
                }
                for &(e, f) in &vpairs {
                    s += tau_a(i, j, e, f) * (0.5 * self.oovv.at(m, n, e, f));
                }
                wmnij[p * no + q] = s;
            }
        }
        let mut wabef = vec![z; nv * nv];
        for (p, &(a, b)) in vpairs.iter().enumerate() {
            for (q, &(e, f)) in vpairs.iter().enumerate() {
                let mut s = C64::from(self.vvvv.at(a, b, e, f));
                for m in 0..o {
                    s +=
                        t1a(m, b) * self.ovvv.at(m, a, e, f) - t1a(m, a) * self.ovvv.at(m, b, e, f);
                }
                for &(m, n) in &opairs {
                    s += tau_a(m, n, a, b) * (0.5 * self.oovv.at(m, n, e, f));
                }
                wabef[p * nv + q] = s;
            }
        }
        // W_mbej stored as [m][b][e][j]
        let mut wmbej = vec![z; o * v * v * o];
        for m in 0..o {
            for b in 0..v {
                for e in 0..v {
                    for j in 0..o {
                        let mut s = C64::from(self.ovvo.at(m, b, e, j));
                        for f in 0..v {
                            s += t1a(j, f) * self.ovvv.at(m, b, e, f);
                        }
                        for n in 0..o {
                            s -= t1a(n, b) * self.oovo.at(m, n, e, j);
                            for f in 0..v {
                                let w = self.oovv.at(m, n, e, f);
                                if w != 0.0 {
                                    s -= (t2a(j, n, f, b) * 0.5 + t1a(j, f) * t1a(n, b)) * w;
                                }
                            }
                        }
                        wmbej[((m * v + b) * v + e) * o + j] = s;
                    }
                }
            }
        }

        // singles
        let mut r1 = vec![z; o * v];
        for i in 0..o {
            for a in 0..v {
                let mut s = C64::from(self.fov[i * v + a]);
                for e in 0..v {
                    s += t1a(i, e) * fae[a * v + e];
                }
                for m in 0..o {
                    s -= t1a(m, a) * fmi[m * o + i];
                    for e in 0..v {
                        s += t2a(i, m, a, e) * fme[m * v + e];
                        s += t1a(m, e) * self.ovvo.at(m, a, e, i);
                        for f in 0..v {
                            s -= t2a(i, m, e, f) * (0.5 * self.ovvv.at(m, a, e, f));
                        }
                        for n in 0..o {
                            s -= t2a(m, n, a, e) * (0.5 * self.oovo.at(n, m, e, i));
                        }
                    }
                }
                r1[i * v + a] = s;
            }
        }

        // doubles helpers
        let mut xbe = vec![z; v * v];
        for b in 0..v {
            for e in 0..v {
                let mut s = fae[b * v + e];
                for m in 0..o {
                    s -= t1a(m, b) * fme[m * v + e] * 0.5;
                }
                xbe[b * v + e] = s;
            }
        }
        let mut ymj = vec![z; o * o];
        for m in 0..o {
            for j in 0..o {
                let mut s = fmi[m * o + j];
                for e in 0..v {
                    s += t1a(j, e) * fme[m * v + e] * 0.5;
                }
                ymj[m * o + j] = s;
            }
        }
        // Z_ijab = Σ_me t_im^ae W_mbej − t_i^e t_m^a ⟨mb||ej⟩
        let mut zt = vec![z; t2.len()];
        for i in 0..o {
            for j in 0..o {
                for a in 0..v {
                    for b in 0..v {
                        let mut s = z;
                        for m in 0..o {
                            for e in 0..v {
                                let w = wmbej[((m * v + b) * v + e) * o + j];
                                s += t2a(i, m, a, e) * w
                                    - t1a(i, e) * t1a(m, a) * self.ovvo.at(m, b, e, j);
                            }
                        }
                        zt[self.i2(i, j, a, b)] = s;
                    }
                }
            }
        }
        let ax = |i: usize, j: usize, a: usize, b: usize| -> C64 {
            (0..v).map(|e| t2a(i, j, a, e) * xbe[b * v + e]).sum()
        };
        let by = |i: usize, j: usize, a: usize, b: usize| -> C64 {
            (0..o).map(|m| t2a(i, m, a, b) * ymj[m * o + j]).sum()
        };
        let zt_a = |i: usize, j: usize, a: usize, b: usize| zt[self.i2(i, j, a, b)];

        let mut r2 = vec![z; t2.len()];
        for (p, &(i, j)) in opairs.iter().enumerate() {
            for (q, &(a, b)) in vpairs.iter().enumerate() {
                let mut s = C64::from(self.oovv.at(i, j, a, b));
                s += ax(i, j, a, b) - ax(i, j, b, a);
                s -= by(i, j, a, b) - by(j, i, a, b);
                for (pm, &(m, n)) in opairs.iter().enumerate() {
                    s += tau_a(m, n, a, b) * wmnij[pm * no + p];
                }
                for (pe, &(e, f)) in vpairs.iter().enumerate() {
                    s += tau_a(i, j, e, f) * wabef[q * nv + pe];
                }
                s += zt_a(i, j, a, b) - zt_a(j, i, a, b) - zt_a(i, j, b, a) + zt_a(j, i, b, a);
                for e in 0..v {
                    s +=
                        t1a(i, e) * self.vvvo.at(a, b, e, j) - t1a(j, e) * self.vvvo.at(a, b, e, i);
                }
                for m in 0..o {
                    s -=
                        t1a(m, a) * self.ovoo.at(m, b, i, j) - t1a(m, b) * self.ovoo.at(m, a, i, j);
                }
                r2[self.i2(i, j, a, b)] = s;
                r2[self.i2(j, i, a, b)] = -s;
                r2[self.i2(i, j, b, a)] = -s;
                r2[self.i2(j, i, b, a)] = s;
            }
        }
        Ok((r1, r2))
    }
}

/// Where the N-electron correlation energy in the Green's function comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationSource {
    /// Exact (FCI) correlation energy.
    Fci,
    /// Ground-state CCSD correlation energy.
    Ccsd,
}

/// Core-ionized reference a_c|Φ₀⟩ with its Fock and integral blocks.
#[derive(Clone, Debug)]
pub struct CCReference {
    pub core: usize,
    pub system: CCSystem,
    /// Bare orbital energy of the core spin-orbital (Hartree).
    pub eps_c: f64,
    /// N-electron correlation energy (Hartree).
    pub e_corr: f64,
}

pub fn init_reference(ints: &SpinIntegrals, core: usize, e_corr: f64) -> Result<CCReference> {
    let fock = fock_n_minus_1(ints, core)?;
    let occ: Vec<usize> = ints.occupied().into_iter().filter(|&p| p != core).collect();
    Ok(CCReference {
        core,
        system: CCSystem::new(ints, occ, &fock.f)?,
        eps_c: ints.eps[core],
        e_corr,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CCState {
    pub time: f64,
    pub t1: Vec<C64>,
    pub t2: Vec<C64>,
    pub cumulant: C64,
}

impl CCState {
    pub fn zero(system: &CCSystem) -> Self {
        Self {
            time: 0.0,
            t1: vec![C64::default(); system.t1_len()],
            t2: vec![C64::default(); system.t2_len()],
            cumulant: C64::default(),
        }
    }

    pub fn amplitude_norm(&self) -> f64 {
        self.t1
            .iter()
            .chain(&self.t2)
            .map(|x| x.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

pub fn ccsd_residuals(state: &CCState, reference: &CCReference) -> Result<(Vec<C64>, Vec<C64>)> {
    reference.system.residuals(&state.t1, &state.t2)
}

/// dC/dτ = i·E_cc(T).
pub fn cumulant_rhs(state: &CCState, reference: &CCReference) -> Result<C64> {
    Ok(I * reference.system.energy(&state.t1, &state.t2)?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Implicit one-step Adams–Moulton (backward Euler).
    #[default]
    BackwardEuler,
    /// Two-step-weight Adams–Moulton (trapezoidal rule).
    Trapezoidal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub dt: f64,
    pub t_max: f64,
    pub integrator: Integrator,
    pub tol: f64,
    pub max_iter: usize,
    pub record_norms: bool,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            t_max: DEFAULT_T_MAX,
            integrator: Integrator::BackwardEuler,
            tol: FIXED_POINT_TOL,
            max_iter: FIXED_POINT_MAX_ITER,
            record_norms: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CCTrajectory {
    pub dt: f64,
    pub t_max: f64,
    pub integrator: Integrator,
    /// C(n·dt), n = 0..=steps.
    pub cumulant: Vec<C64>,
    pub amplitude_norms: Option<Vec<f64>>,
    /// Number of steps that needed step halving.
    pub halved_steps: usize,
    pub max_fixed_point_iterations: usize,
}

impl CCTrajectory {
    pub fn times(&self) -> Vec<f64> {
        (0..self.cumulant.len())
            .map(|n| n as f64 * self.dt)
            .collect()
    }

    pub fn steps(&self) -> usize {
        self.cumulant.len() - 1
    }
}

struct Stepper<'a> {
    sys: &'a CCSystem,
    d1: Vec<f64>,
    d2: Vec<f64>,
    cfg: PropagationConfig,
    max_iter_seen: usize,
}

impl Stepper<'_> {
    /// i·r(T) and the energy slope i·E_cc(T).
    fn rhs(&self, t1: &[C64], t2: &[C64]) -> Result<(Vec<C64>, Vec<C64>, C64)> {
        let (r1, r2) = self.sys.residuals(t1, t2)?;
        let e = self.sys.energy(t1, t2)?;
        Ok((
            r1.into_iter().map(|x| I * x).collect(),
            r2.into_iter().map(|x| I * x).collect(),
            I * e,
        ))
    }

    /// Solves one implicit step with the stiff diagonal treated exactly:
    /// y (1 − iκh D) = y_n + (1−κ)h·g(y_n) + iκh (r(y) − D y), κ = 1 or ½.
    /// Returns None when the fixed point does not converge.
    fn step(
        &mut self,
        s: &CCState,
        h: f64,
        guess: Option<(&[C64], &[C64])>,
    ) -> Result<Option<CCState>> {
        let kappa = match self.cfg.integrator {
            Integrator::BackwardEuler => 1.0,
            Integrator::Trapezoidal => 0.5,
        };
        let (base1, base2, base_c) = if kappa < 1.0 {
            let (g1, g2, gc) = self.rhs(&s.t1, &s.t2)?;
            let w = (1.0 - kappa) * h;
            (
                s.t1.iter()
                    .zip(&g1)
                    .map(|(y, g)| y + g * w)
                    .collect::<Vec<_>>(),
                s.t2.iter()
                    .zip(&g2)
                    .map(|(y, g)| y + g * w)
                    .collect::<Vec<_>>(),
                s.cumulant + gc * w,
            )
        } else {
            (s.t1.clone(), s.t2.clone(), s.cumulant)
        };
        let (mut y1, mut y2) = match guess {
            Some((g1, g2)) => (g1.to_vec(), g2.to_vec()),
            None => (s.t1.clone(), s.t2.clone()),
        };
        let kh = kappa * h;
        let solve = |base: &[C64], y: &[C64], r: &[C64], d: &[f64], out: &mut Vec<C64>| -> f64 {
            let mut change: f64 = 0.0;
            for k in 0..y.len() {
                let rest = r[k] - y[k] * d[k];
                let new = (base[k] + I * kh * rest) / (C64::new(1.0, 0.0) - I * (kh * d[k]));
                change = change.max((new - y[k]).norm());
                out[k] = new;
            }
            change
        };
        for it in 1..=self.cfg.max_iter {
            let (r1, r2) = self.sys.residuals(&y1, &y2)?;
            let mut n1 = vec![C64::default(); y1.len()];
            let mut n2 = vec![C64::default(); y2.len()];
            let c1 = solve(&base1, &y1, &r1, &self.d1, &mut n1);
            let c2 = solve(&base2, &y2, &r2, &self.d2, &mut n2);
            y1 = n1;
            y2 = n2;
            if !(c1.is_finite() && c2.is_finite()) {
                return Ok(None);
            }
            if c1.max(c2) < self.cfg.tol {
                self.max_iter_seen = self.max_iter_seen.max(it);
                let e = self.sys.energy(&y1, &y2)?;
                return Ok(Some(CCState {
                    time: s.time + h,
                    cumulant: base_c + I * e * kh,
                    t1: y1,
                    t2: y2,
                }));
            }
        }
        Ok(None)
    }

    /// Advances by h, splitting into halves when the inner solve fails.
    fn advance(
        &mut self,
        s: &CCState,
        h: f64,
        guess: Option<(&[C64], &[C64])>,
        depth: u32,
        halved: &mut bool,
    ) -> Result<CCState> {
        if let Some(next) = self.step(s, h, guess)? {
            return Ok(next);
        }
        if depth == MAX_HALVINGS {
            return Err(Error::Convergence {
                iterations: self.cfg.max_iter,
                best: s.time,
                residual: h,
            });
        }
        *halved = true;
        let mid = self.advance(s, h / 2.0, None, depth + 1, halved)?;
        self.advance(&mid, h / 2.0, None, depth + 1, halved)
    }
}

/// Propagates from τ = 0 with zero amplitudes.
pub fn propagate(reference: &CCReference, cfg: &PropagationConfig) -> Result<CCTrajectory> {
    propagate_with_state(reference, cfg, None).map(|(traj, _)| traj)
}

/// Propagates to `cfg.t_max`, optionally continuing a checkpointed run.
/// Returns the trajectory and the final state.
pub fn propagate_with_state(
    reference: &CCReference,
    cfg: &PropagationConfig,
    resume: Option<Checkpoint>,
) -> Result<(CCTrajectory, CCState)> {
    if !(cfg.dt > 0.0) || !(cfg.t_max >= cfg.dt) {
        return Err(Error::Domain(format!(
            "need dt > 0 and t_max ≥ dt, got dt={} t_max={}",
            cfg.dt, cfg.t_max
        )));
    }
    let sys = &reference.system;
    let (d1, d2) = sys.diagonal_gaps();
    let mut stepper = Stepper {
        sys,
        d1,
        d2,
        cfg: *cfg,
        max_iter_seen: 0,
    };
    let n_steps = (cfg.t_max / cfg.dt).round() as usize;
    let (mut traj, mut state) = match resume {
        Some(cp) => {
            if cp.trajectory.dt != cfg.dt || cp.trajectory.integrator != cfg.integrator {
                return Err(Error::Shape(
                    "checkpoint was written with a different step or integrator".into(),
                ));
            }
            sys.check_shapes(&cp.state.t1, &cp.state.t2)?;
            let mut t = cp.trajectory;
            t.t_max = cfg.t_max;
            (t, cp.state)
        }
        None => {
            let s = CCState::zero(sys);
            let t = CCTrajectory {
                dt: cfg.dt,
                t_max: cfg.t_max,
                integrator: cfg.integrator,
                cumulant: vec![s.cumulant],
                amplitude_norms: cfg.record_norms.then(|| vec![0.0]),
                halved_steps: 0,
                max_fixed_point_iterations: 0,
            };
            (t, s)
        }
    };
    let mut prev: Option<CCState> = None;
    while traj.steps() < n_steps {
        let guess: Option<(Vec<C64>, Vec<C64>)> = prev.as_ref().map(|p| {
            (
                state
                    .t1
                    .iter()
                    .zip(&p.t1)
                    .map(|(a, b)| a * 2.0 - b)
                    .collect(),
                state
                    .t2
                    .iter()
                    .zip(&p.t2)
                    .map(|(a, b)| a * 2.0 - b)
                    .collect(),
            )
        });
        let mut halved = false;
        let next = stepper.advance(
            &state,
            cfg.dt,
            guess.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice())),
            0,
            &mut halved,
        )?;
        let norm = next.amplitude_norm();
        if !(norm <= DIVERGENCE_NORM) {
            return Err(Error::Divergence {
                time: next.time,
                norm,
            });
        }
        traj.halved_steps += halved as usize;
        traj.cumulant.push(next.cumulant);
        if let Some(n) = traj.amplitude_norms.as_mut() {
            n.push(norm);
        }
        prev = Some(std::mem::replace(&mut state, next));
    }
    traj.max_fixed_point_iterations = traj.max_fixed_point_iterations.max(stepper.max_iter_seen);
    Ok((traj, state))
}

/// Ground-state CCSD on the N-electron reference by Jacobi iteration.
/// Returns the correlation energy.
pub fn static_ccsd(ints: &SpinIntegrals, tol: f64, max_iter: usize) -> Result<f64> {
    let sys = CCSystem::new(ints, ints.occupied(), &ints.fock_matrix())?;
    let (d1, d2) = sys.diagonal_gaps();
    let mut t1 = vec![C64::default(); sys.t1_len()];
    let mut t2 = vec![C64::default(); sys.t2_len()];
    let mut e_old = 0.0;
    let mut worst = f64::INFINITY;
    for _ in 0..max_iter {
        let (r1, r2) = sys.residuals(&t1, &t2)?;
        worst = r1.iter().chain(&r2).map(|x| x.norm()).fold(0.0, f64::max);
        for (t, (r, d)) in t1.iter_mut().zip(r1.iter().zip(&d1)) {
            *t -= r / *d;
        }
        for (t, (r, d)) in t2.iter_mut().zip(r2.iter().zip(&d2)) {
            if *d != 0.0 {
                *t -= r / *d;
            }
        }
        let e = sys.energy(&t1, &t2)?.re;
        if worst < tol && (e - e_old).abs() < tol {
            return Ok(e);
        }
        e_old = e;
    }
    Err(Error::Convergence {
        iterations: max_iter,
        best: e_old,
        residual: worst,
    })
}

/// G(τ) = −i e^{−i(ε_c + E_corr)τ} e^{C(τ)} on the trajectory grid.
pub fn greens_function(traj: &CCTrajectory, reference: &CCReference) -> Vec<C64> {
    let shift = reference.eps_c + reference.e_corr;
    traj.cumulant
        .iter()
        .enumerate()
        .map(|(n, c)| {
            let tau = n as f64 * traj.dt;
            -I * (C64::new(0.0, -shift * tau) + c).exp()
        })
        .collect()
}

/// Least-squares slope of C(τ) over the trailing tenth of the trajectory;
/// averages out what is left of the satellite beating.
fn cumulant_slope(traj: &CCTrajectory) -> C64 {
    let last = traj.cumulant.len() - 1;
    let k = ((last as f64 * TAIL_FIT_FRACTION) as usize).clamp(1, last);
    let window = &traj.cumulant[last - k..];
    let n = window.len() as f64;
    let x_mean = (n - 1.0) / 2.0;
    let c_mean = window.iter().sum::<C64>() / n;
    let (mut num, mut den) = (C64::default(), 0.0);
    for (j, c) in window.iter().enumerate() {
        let x = j as f64 - x_mean;
        num += (c - c_mean) * x;
        den += x * x;
    }
    num / den / traj.dt
}

/// How the transform treats τ > t_max.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    /// Hard cut at t_max; side lobes of relative size e^{−θ t_max} appear
    /// every 2π/t_max around strong peaks.
    Truncate,
    /// Continue G beyond t_max as a single exponential whose rate is the
    /// trailing slope of the cumulant, and add that part of the transform in
    /// closed form. Exact once the amplitudes have settled and only the
    /// leading phase remains.
    #[default]
    Exponential,
}

/// A(ω) = −(1/π) Im ∫₀^∞ e^{iωτ − θτ} G(τ) dτ: trapezoid rule up to t_max and
/// the chosen tail beyond, ω on a binding-energy grid in eV, θ in eV.
pub fn gf_and_spectrum(
    traj: &CCTrajectory,
    reference: &CCReference,
    damping_ev: f64,
    grid: &GridSpec,
    tail: Tail,
) -> Result<SpectralFunction> {
    if !(damping_ev > 0.0) {
        return Err(Error::Domain(format!(
            "damping must be positive, got {damping_ev}"
        )));
    }
    let g = greens_function(traj, reference);
    let theta = ev_to_hartree(damping_ev);
    let dt = traj.dt;
    let last = g.len() - 1;
    // G(τ) ≈ G(t_max) e^{λ(τ − t_max)} beyond the window, if that decays under the damping
    let lambda = match tail {
        Tail::Exponential if last > 0 => {
            let shift = reference.eps_c + reference.e_corr;
            let l = C64::new(0.0, -shift) + cumulant_slope(traj);
            (l.re < theta).then_some(l)
        }
        _ => None,
    };
    let t_end = last as f64 * dt;
    let points = grid.points();
    let values = points
        .iter()
        .map(|&w_ev| {
            let w = ev_to_hartree(w_ev);
            let step = C64::new(-theta * dt, w * dt).exp();
            let mut phasor = C64::new(1.0, 0.0);
            let mut acc = C64::default();
            for (n, gn) in g.iter().enumerate() {
                let wt = if n == 0 || n == last { 0.5 } else { 1.0 };
                acc += phasor * gn * wt;
                phasor *= step;
            }
            acc *= dt;
            if let Some(l) = lambda {
                let z = C64::new(-theta, w) + l;
                acc -= g[last] * C64::new(-theta * t_end, w * t_end).exp() / z;
            }
            // per-eV density
            -acc.im / std::f64::consts::PI / hartree_to_ev(1.0)
        })
        .collect();
    Ok(SpectralFunction {
        grid: points,
        values,
        broadening: damping_ev,
        shift: 0.0,
        lineshape: Lineshape::Lorentzian,
        poles: None,
    })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"CHRTCC01";
const CHECKPOINT_VERSION: u32 = 1;

/// Restartable propagation state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub trajectory: CCTrajectory,
    pub state: CCState,
}

fn put_f64(w: &mut impl Write, x: f64) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn put_c64s(w: &mut impl Write, xs: &[C64]) -> std::io::Result<()> {
    w.write_all(&(xs.len() as u64).to_le_bytes())?;
    for x in xs {
        put_f64(w, x.re)?;
        put_f64(w, x.im)?;
    }
    Ok(())
}

fn get_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> std::io::Result<f64> {
    Ok(f64::from_bits(get_u64(r)?))
}

fn get_c64s(r: &mut impl Read) -> std::io::Result<Vec<C64>> {
    let n = get_u64(r)? as usize;
    (0..n)
        .map(|_| Ok(C64::new(get_f64(r)?, get_f64(r)?)))
        .collect()
}

impl Checkpoint {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let t = &self.trajectory;
        put_f64(&mut w, t.dt)?;
        put_f64(&mut w, t.t_max)?;
        w.write_all(&[matches!(t.integrator, Integrator::Trapezoidal) as u8])?;
        w.write_all(&(t.halved_steps as u64).to_le_bytes())?;
        w.write_all(&(t.max_fixed_point_iterations as u64).to_le_bytes())?;
        put_c64s(&mut w, &t.cumulant)?;
        put_f64(&mut w, self.state.time)?;
        put_c64s(&mut w, &[self.state.cumulant])?;
        put_c64s(&mut w, &self.state.t1)?;
        put_c64s(&mut w, &self.state.t2)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        let mut ver = [0u8; 4];
        r.read_exact(&mut ver)?;
        if &magic != CHECKPOINT_MAGIC || u32::from_le_bytes(ver) != CHECKPOINT_VERSION {
            return Err(Error::Parse {
                line: 0,
                msg: "not a trajectory checkpoint of a supported version".into(),
            });
        }
        let dt = get_f64(&mut r)?;
        let t_max = get_f64(&mut r)?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let halved_steps = get_u64(&mut r)? as usize;
        let max_fixed_point_iterations = get_u64(&mut r)? as usize;
        let cumulant = get_c64s(&mut r)?;
        let time = get_f64(&mut r)?;
        let c = get_c64s(&mut r)?;
        let t1 = get_c64s(&mut r)?;
        let t2 = get_c64s(&mut r)?;
        if cumulant.is_empty() || c.len() != 1 {
            return Err(Error::Parse {
                line: 0,
                msg: "truncated checkpoint".into(),
            });
        }
        Ok(Self {
            trajectory: CCTrajectory {
                dt,
                t_max,
                integrator: if flag[0] == 1 {
                    Integrator::Trapezoidal
                } else {
                    Integrator::BackwardEuler
                },
                cumulant,
                amplitude_norms: None,
                halved_steps,
                max_fixed_point_iterations,
            },
            state: CCState {
                time,
                t1,
                t2,
                cumulant: c[0],
            },
        })
    }
}
