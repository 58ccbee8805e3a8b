//! Sector Hamiltonians and eigensolvers.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fock_space::{CISpace, Determinant};
use crate::integrals::{spin, SpinIntegrals};
use crate::sparse::CsrMatrix;

pub const DEFAULT_MAX_DIM: usize = 2_000_000;
/// Largest sector handed to the dense eigensolver by default.
pub const DEFAULT_DENSE_CAP: usize = 3000;

#[derive(Clone, Debug)]
pub struct SectorHamiltonian {
    pub space: CISpace,
    pub matrix: CsrMatrix,
    pub e_nuc_included: bool,
}

impl SectorHamiltonian {
    pub fn dim(&self) -> usize {
        self.space.len()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        self.matrix.matvec(x, y)
    }

    pub fn expectation(&self, d: &Determinant) -> Option<f64> {
        self.space.position(d).map(|k| self.matrix.get(k, k))
    }

    /// Writes the assembled matrix under a cache key (e.g. integral hash,
    /// sector and truncation rank).
    pub fn write_cache(&self, path: &Path, key: &str) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(CACHE_MAGIC)?;
        write_u64(&mut out, key.len() as u64)?;
        out.write_all(key.as_bytes())?;
        let m = &self.matrix;
        for n in [m.nrows, m.ncols, m.nnz()] {
            write_u64(&mut out, n as u64)?;
        }
        for &p in &m.row_ptr {
            write_u64(&mut out, p as u64)?;
        }
        for &c in &m.col_idx {
            write_u64(&mut out, c as u64)?;
        }
        for &v in &m.values {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    /// Loads a cached matrix; `Ok(None)` when the key or dimension differ.
    pub fn read_cache(path: &Path, key: &str, space: CISpace) -> Result<Option<Self>> {
        let mut inp = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        inp.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Ok(None);
        }
        let klen = read_u64(&mut inp)? as usize;
        let mut kbuf = vec![0u8; klen];
        inp.read_exact(&mut kbuf)?;
        if kbuf != key.as_bytes() {
            return Ok(None);
        }
        let nrows = read_u64(&mut inp)? as usize;
        let ncols = read_u64(&mut inp)? as usize;
        let nnz = read_u64(&mut inp)? as usize;
        if nrows != space.len() || ncols != space.len() {
            return Ok(None);
        }
        let row_ptr = (0..=nrows)
            .map(|_| read_u64(&mut inp).map(|x| x as usize))
            .collect::<std::io::Result<_>>()?;
        let col_idx = (0..nnz)
            .map(|_| read_u64(&mut inp).map(|x| x as usize))
            .collect::<std::io::Result<_>>()?;
        let values = (0..nnz)
            .map(|_| read_u64(&mut inp).map(f64::from_bits))
            .collect::<std::io::Result<_>>()?;
        Ok(Some(Self {
            space,
            matrix: CsrMatrix {
                nrows,
                ncols,
                row_ptr,
                col_idx,
                values,
            },
            e_nuc_included: true,
        }))
    }
}

const CACHE_MAGIC: &[u8; 8] = b"CHHAM001";

fn write_u64(w: &mut impl Write, x: u64) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Diagonal element ⟨D|H|D⟩.
pub fn diagonal_element(ints: &SpinIntegrals, d: &Determinant) -> f64 {
    let occ: Vec<usize> = d.occupied().collect();
    let mut e = ints.e_nuc;
    for (n, &i) in occ.iter().enumerate() {
        e += ints.h[(i, i)];
        for &j in &occ[..n] {
            e += ints.v(i, j, i, j);
        }
    }
    e
}

/// Upper-triangle entries (j > i) of row i by Slater–Condon rules.
fn upper_row(ints: &SpinIntegrals, space: &CISpace, i: usize) -> Vec<(usize, f64)> {
    let d = space.dets()[i];
    let occ: Vec<usize> = d.occupied().collect();
    let virt: Vec<usize> = d.unoccupied().collect();
    let mut row = Vec::new();

    for &p in &occ {
        let Some(ap) = d.annihilate(p).unwrap() else {
            continue;
        };
        for &a in virt.iter().filter(|&&a| spin(a) == spin(p)) {
            let Some(t) = ap.det.create(a).unwrap() else {
                continue;
            };
            let Some(j) = space.position(&t.det) else {
                continue;
            };
            if j <= i {
                continue;
            }
            let mut e = ints.h[(a, p)];
            for &k in &occ {
                e += ints.v(a, k, p, k);
            }
            let e = e * (ap.sign * t.sign) as f64;
            if e != 0.0 {
                row.push((j, e));
            }
        }
    }

    for (n, &p) in occ.iter().enumerate() {
        for &q in &occ[n + 1..] {
            let Some(x) = d.annihilate(p).unwrap() else {
                continue;
            };
            let Some(y) = x.det.annihilate(q).unwrap() else {
                continue;
            };
            let spins = spin(p) + spin(q);
            for (k, &a) in virt.iter().enumerate() {
                for &b in &virt[k + 1..] {
                    if spin(a) + spin(b) != spins {
                        continue;
                    }
                    let Some(z) = y.det.create(b).unwrap() else {
                        continue;
                    };
                    let Some(w) = z.det.create(a).unwrap() else {
                        continue;
                    };
                    let Some(j) = space.position(&w.det) else {
                        continue;
                    };
                    if j <= i {
                        continue;
                    }
                    let sign = (x.sign * y.sign * z.sign * w.sign) as f64;
                    let e = sign * ints.v(a, b, p, q);
                    if e != 0.0 {
                        row.push((j, e));
                    }
                }
            }
        }
    }
    row
}

pub fn build_hamiltonian(ints: &SpinIntegrals, space: &CISpace) -> Result<SectorHamiltonian> {
    build_hamiltonian_capped(ints, space, DEFAULT_MAX_DIM)
}

pub fn build_hamiltonian_capped(
    ints: &SpinIntegrals,
    space: &CISpace,
    max_dim: usize,
) -> Result<SectorHamiltonian> {
    if space.is_empty() {
        return Err(Error::Shape("empty CI space".into()));
    }
    if space.m != ints.m {
        return Err(Error::Shape(format!(
            "space has {} spin-orbitals, integrals {}",
            space.m, ints.m
        )));
    }
    if space.len() > max_dim {
        return Err(Error::Capacity(format!(
            "sector dimension {} exceeds cap {max_dim}",
            space.len()
        )));
    }
    let n = space.len();
    let upper: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| upper_row(ints, space, i))
        .collect();
    let mut rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| vec![(i, diagonal_element(ints, &space.dets()[i]))])
        .collect();
    for (i, row) in upper.into_iter().enumerate() {
        for (j, e) in row {
            rows[i].push((j, e));
            rows[j].push((i, e));
        }
    }
    Ok(SectorHamiltonian {
        space: space.clone(),
        matrix: CsrMatrix::from_rows(n, rows),
        e_nuc_included: true,
    })
}

/// Eigenvalues (ascending), optional eigenvectors as columns and optional
/// overlap weights against a trial vector.
#[derive(Clone, Debug)]
pub struct EigenSolution {
    pub energies: Vec<f64>,
    pub vectors: Option<DMatrix<f64>>,
    pub weights: Option<Vec<f64>>,
    /// Fingerprint of the CI space the vectors are expressed in.
    pub space: u64,
}

impl EigenSolution {
    pub fn ground_energy(&self) -> f64 {
        self.energies[0]
    }

    pub fn ground_vector(&self) -> Option<DVector<f64>> {
        self.vectors.as_ref().map(|v| v.column(0).into_owned())
    }
}

pub fn solve_dense(h: &SectorHamiltonian) -> Result<EigenSolution> {
    solve_dense_capped(h, DEFAULT_DENSE_CAP)
}

pub fn solve_dense_capped(h: &SectorHamiltonian, cap: usize) -> Result<EigenSolution> {
    let n = h.dim();
    if n > cap {
        return Err(Error::Capacity(format!(
            "dimension {n} exceeds the dense cap {cap}; use the Lanczos route"
        )));
    }
    let eig = SymmetricEigen::new(h.matrix.to_dense());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let energies = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(EigenSolution {
        energies,
        vectors: Some(vectors),
        weights: None,
        space: h.space.fingerprint(),
    })
}

#[derive(Clone, Debug)]
pub enum LanczosStart {
    Random(u64),
    Vector(Vec<f64>),
}

/// Lanczos recurrence coefficients for one start vector.
#[derive(Clone, Debug, serde::Serialize)]
pub struct LanczosTridiagonal {
    pub alphas: Vec<f64>,
    /// Off-diagonal β_1..β_{k−1}.
    pub betas: Vec<f64>,
    pub start_norm: f64,
    pub iterations: usize,
}

impl LanczosTridiagonal {
    fn eigen(&self) -> SymmetricEigen<f64, nalgebra::Dyn> {
        let k = self.alphas.len();
        let t = DMatrix::from_fn(k, k, |r, c| {
            if r == c {
                self.alphas[r]
            } else if r.abs_diff(c) == 1 {
                self.betas[r.min(c)]
            } else {
                0.0
            }
        });
        SymmetricEigen::new(t)
    }

    /// Ritz values (ascending) and weights |⟨ritz|start⟩|², scaled by the
    /// squared start norm.
    pub fn ritz(&self) -> (Vec<f64>, Vec<f64>) {
        let eig = self.eigen();
        let mut pairs: Vec<(f64, f64)> = (0..self.alphas.len())
            .map(|k| {
                let c = eig.eigenvectors[(0, k)];
                (
                    eig.eigenvalues[k],
                    c * c * self.start_norm * self.start_norm,
                )
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.into_iter().unzip()
    }
}

struct Krylov {
    tri: LanczosTridiagonal,
    basis: Vec<Vec<f64>>,
    last_beta: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// Breakdown threshold on β, relative to the running matrix scale.
const BREAKDOWN: f64 = 1e-14;

/// Lanczos with full reorthogonalization. `on_step` may stop the recurrence
/// early by returning `true`.
fn lanczos_core(
    h: &SectorHamiltonian,
    start: &[f64],
    max_steps: usize,
    mut on_step: impl FnMut(&LanczosTridiagonal, f64) -> bool,
) -> Result<Krylov> {
    let n = h.dim();
    if start.len() != n {
        return Err(Error::Shape(format!(
            "start vector length {} vs dimension {n}",
            start.len()
        )));
    }
    let norm = dot(start, start).sqrt();
    if !(norm > 0.0) {
        return Err(Error::Domain("Lanczos start vector has zero norm".into()));
    }
    let mut basis: Vec<Vec<f64>> = vec![start.iter().map(|x| x / norm).collect()];
    let mut tri = LanczosTridiagonal {
        alphas: Vec::new(),
        betas: Vec::new(),
        start_norm: norm,
        iterations: 0,
    };
    let mut w = vec![0.0; n];
    let mut scale: f64 = 1.0;
    let mut last_beta = 0.0;
    for _ in 0..max_steps.min(n) {
        let q = basis.last().unwrap();
        h.matvec(q, &mut w);
        let alpha = dot(q, &w);
        tri.alphas.push(alpha);
        tri.iterations += 1;
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                axpy(-c, b, &mut w);
            }
        }
        let beta = dot(&w, &w).sqrt();
        scale = scale.max(alpha.abs() + beta);
        let breakdown = beta <= BREAKDOWN * scale;
        last_beta = if breakdown { 0.0 } else { beta };
        if on_step(&tri, last_beta) || tri.iterations == n || breakdown {
            break;
        }
        tri.betas.push(beta);
        basis.push(w.iter().map(|x| x / beta).collect());
    }
    basis.truncate(tri.alphas.len());
    Ok(Krylov {
        tri,
        basis,
        last_beta,
    })
}

pub fn lanczos_from_vector(
    h: &SectorHamiltonian,
    start: &[f64],
    iterations: usize,
) -> Result<LanczosTridiagonal> {
    Ok(lanczos_core(h, start, iterations, |_, _| false)?.tri)
}

fn start_vector(n: usize, start: &LanczosStart) -> Vec<f64> {
    match start {
        LanczosStart::Vector(v) => v.clone(),
        LanczosStart::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
        }
    }
}

/// Lowest eigenpair by Lanczos; converged when the Ritz residual drops below `tol`.
pub fn solve_ground_lanczos(
    h: &SectorHamiltonian,
    tol: f64,
    max_iter: usize,
    start: LanczosStart,
) -> Result<EigenSolution> {
    let n = h.dim();
    let v0 = start_vector(n, &start);
    let mut best = (f64::NAN, f64::INFINITY);
    let mut converged = false;
    let krylov = lanczos_core(h, &v0, max_iter, |tri, beta| {
        let k = tri.alphas.len();
        if k > 50 && k % 10 != 0 && beta > 0.0 {
            return false;
        }
        let (theta, resid) = lowest_ritz_residual(tri, beta, n);
        best = (theta, resid);
        converged = resid <= tol;
        converged
    })?;
    let k = krylov.tri.alphas.len();
    let (theta, resid) = lowest_ritz_residual(&krylov.tri, krylov.last_beta, n);
    best = (theta, resid);
    let exhausted = k == n || k < max_iter.min(n);
    if !(converged || resid <= tol || exhausted) {
        return Err(Error::Convergence {
            iterations: k,
            best: best.0,
            residual: best.1,
        });
    }
    let eig = krylov.tri.eigen();
    let lowest = (0..k)
        .min_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))
        .unwrap();
    let mut x = vec![0.0; n];
    for (j, b) in krylov.basis.iter().enumerate() {
        axpy(eig.eigenvectors[(j, lowest)], b, &mut x);
    }
    let norm = dot(&x, &x).sqrt();
    x.iter_mut().for_each(|v| *v /= norm);
    Ok(EigenSolution {
        energies: vec![eig.eigenvalues[lowest]],
        vectors: Some(DMatrix::from_column_slice(n, 1, &x)),
        weights: None,
        space: h.space.fingerprint(),
    })
}

/// (lowest Ritz value, residual estimate β_k·|y_k|); residual 0 once the
/// Krylov space is exhausted.
fn lowest_ritz_residual(tri: &LanczosTridiagonal, next_beta: f64, n: usize) -> (f64, f64) {
    let k = tri.alphas.len();
    let eig = tri.eigen();
    let lowest = (0..k)
        .min_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))
        .unwrap();
    let resid = if k == n {
        0.0
    } else {
        next_beta * eig.eigenvectors[(k - 1, lowest)].abs()
    };
    (eig.eigenvalues[lowest], resid)
}

/// Ground state, dense when the sector fits under `dense_cap`, Lanczos otherwise.
pub fn ground_state(h: &SectorHamiltonian, dense_cap: usize) -> Result<(f64, DVector<f64>)> {
    let sol = if h.dim() <= dense_cap {
        solve_dense_capped(h, dense_cap)?
    } else {
        let d = h.matrix.diagonal();
        let k = (0..d.len()).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
        let mut start = vec![1e-3; d.len()];
        start[k] = 1.0;
        solve_ground_lanczos(h, 1e-8, 1000, LanczosStart::Vector(start))?
    };
    Ok((sol.energies[0], sol.ground_vector().unwrap()))
}

/// E₀ − ⟨Φ₀|H|Φ₀⟩ for the N-electron sector.
pub fn correlation_energy(
    h: &SectorHamiltonian,
    reference: &Determinant,
    dense_cap: usize,
) -> Result<f64> {
    let e_ref = h
        .expectation(reference)
        .ok_or_else(|| Error::Domain(format!("reference {reference} not in the CI space")))?;
    let (e0, _) = ground_state(h, dense_cap)?;
    Ok(e0 - e_ref)
}
