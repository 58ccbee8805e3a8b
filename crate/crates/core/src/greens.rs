//! Ionization-potential Green's functions and spectral functions.
//!
//! Binding energies follow the table convention ω_i = E₀⁽ᴺ⁾ − E_i⁽ᴺ⁻¹⁾ in eV,
//! so core-level poles come out negative.

use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ci_solver::{EigenSolution, LanczosTridiagonal};
use crate::error::{Error, Result};
use crate::fock_space::{CISpace, Determinant};
use crate::units::{hartree_to_ev, HARTREE_TO_EV};

pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-8;
pub const SCHEMA_VERSION: u32 = 1;

/// Single excitation applied after the core annihilation: a†_to a_from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excitation {
    pub from: usize,
    pub to: usize,
}

#[derive(Clone, Copy, Debug)]
pub enum TrialSource<'a> {
    Determinant(Determinant),
    State {
        space: &'a CISpace,
        vector: &'a [f64],
    },
}

#[derive(Clone, Debug)]
pub struct TrialState {
    pub vector: Vec<f64>,
    pub space: u64,
    pub label: String,
    pub source_spin_orbital: usize,
}

impl TrialState {
    pub fn norm_sqr(&self) -> f64 {
        self.vector.iter().map(|x| x * x).sum()
    }
}

fn apply_trial_ops(
    d: &Determinant,
    p: usize,
    extra: Option<Excitation>,
) -> Result<Option<(Determinant, f64)>> {
    let Some(a) = d.annihilate(p)? else {
        return Ok(None);
    };
    let mut det = a.det;
    let mut sign = a.sign as f64;
    if let Some(x) = extra {
        let Some(b) = det.annihilate(x.from)? else {
            return Ok(None);
        };
        let Some(c) = b.det.create(x.to)? else {
            return Ok(None);
        };
        det = c.det;
        sign *= (b.sign * c.sign) as f64;
    }
    Ok(Some((det, sign)))
}

/// a_p (optionally followed by a†_to a_from) applied to a determinant or a
/// state vector, expressed in `target`. The result is not renormalized.
pub fn make_trial(
    source: TrialSource<'_>,
    p: usize,
    extra: Option<Excitation>,
    target: &CISpace,
) -> Result<TrialState> {
    let mut vector = vec![0.0; target.len()];
    let mut accumulate = |d: &Determinant, c: f64| -> Result<()> {
        if c == 0.0 {
            return Ok(());
        }
        if let Some((det, sign)) = apply_trial_ops(d, p, extra)? {
            if let Some(k) = target.position(&det) {
                vector[k] += sign * c;
            }
        }
        Ok(())
    };
    let label = match source {
        TrialSource::Determinant(d) => {
            accumulate(&d, 1.0)?;
            format!("a_{p} on {d}")
        }
        TrialSource::State { space, vector: v } => {
            if v.len() != space.len() {
                return Err(Error::Shape(format!(
                    "state has {} coefficients for a space of {}",
                    v.len(),
                    space.len()
                )));
            }
            for (d, &c) in space.dets().iter().zip(v) {
                accumulate(d, c)?;
            }
            format!("a_{p} on correlated state")
        }
    };
    let label = match extra {
        Some(x) => format!("{label}, then {}->{}", x.from, x.to),
        None => label,
    };
    if vector.iter().all(|&x| x == 0.0) {
        return Err(Error::Domain(format!("trial annihilates state ({label})")));
    }
    Ok(TrialState {
        vector,
        space: target.fingerprint(),
        label,
        source_spin_orbital: p,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pole {
    /// E₀⁽ᴺ⁾ − E_i⁽ᴺ⁻¹⁾ in eV.
    pub binding_ev: f64,
    pub weight: f64,
    /// E_i⁽ᴺ⁻¹⁾ in Hartree.
    pub energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoleSet {
    pub poles: Vec<Pole>,
    /// E₀⁽ᴺ⁾ in Hartree.
    pub reference_energy: f64,
}

impl PoleSet {
    pub fn from_energies(energies: &[f64], weights: &[f64], e0: f64, weight_floor: f64) -> Self {
        let poles = energies
            .iter()
            .zip(weights)
            .filter(|(_, &w)| w >= weight_floor)
            .map(|(&e, &w)| Pole {
                binding_ev: hartree_to_ev(e0 - e),
                weight: w,
                energy: e,
            })
            .collect();
        Self {
            poles,
            reference_energy: e0,
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.poles.iter().map(|p| p.weight).sum()
    }

    /// Rigid shift of every binding energy.
    pub fn shifted(&self, shift_ev: f64) -> Self {
        Self {
            poles: self
                .poles
                .iter()
                .map(|p| Pole {
                    binding_ev: p.binding_ev + shift_ev,
                    ..*p
                })
                .collect(),
            reference_energy: self.reference_energy,
        }
    }

    /// Poles at or above `min_weight`, ordered by binding energy.
    pub fn table(&self, min_weight: f64) -> Vec<Pole> {
        let mut rows: Vec<Pole> = self
            .poles
            .iter()
            .copied()
            .filter(|p| p.weight >= min_weight)
            .collect();
        rows.sort_by(|a, b| a.binding_ev.total_cmp(&b.binding_ev));
        rows
    }
}

/// Lehmann weights w_i = |⟨ψ_i|θ⟩|² of a trial against an (N−1) eigen-solution.
pub fn lehmann_poles(
    eig: &EigenSolution,
    trial: &TrialState,
    e0: f64,
    weight_floor: f64,
) -> Result<PoleSet> {
    if eig.space != trial.space {
        return Err(Error::Shape(
            "trial and eigenvectors live in different CI spaces".into(),
        ));
    }
    let vectors = eig
        .vectors
        .as_ref()
        .ok_or_else(|| Error::Shape("eigen-solution carries no eigenvectors".into()))?;
    if vectors.nrows() != trial.vector.len() {
        return Err(Error::Shape(format!(
            "eigenvectors of length {} vs trial of length {}",
            vectors.nrows(),
            trial.vector.len()
        )));
    }
    let weights: Vec<f64> = (0..vectors.ncols())
        .into_par_iter()
        .map(|k| {
            let c: f64 = vectors
                .column(k)
                .iter()
                .zip(&trial.vector)
                .map(|(a, b)| a * b)
                .sum();
            c * c
        })
        .collect();
    Ok(PoleSet::from_energies(
        &eig.energies,
        &weights,
        e0,
        weight_floor,
    ))
}

/// Ritz poles of a Lanczos run started from the trial vector.
pub fn poles_from_lanczos(tri: &LanczosTridiagonal, e0: f64, weight_floor: f64) -> PoleSet {
    let (values, weights) = tri.ritz();
    PoleSet::from_energies(&values, &weights, e0, weight_floor)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn new(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(stop > start) {
            return Err(Error::Domain(format!(
                "invalid grid [{start}, {stop}] step {step}"
            )));
        }
        Ok(Self { start, stop, step })
    }

    /// Window spanning the poles (weight ≥ `min_weight`) padded by `pad` on both sides.
    pub fn around(poles: &PoleSet, min_weight: f64, pad: f64, step: f64) -> Result<Self> {
        let sel = poles.poles.iter().filter(|p| p.weight >= min_weight);
        let lo = sel
            .clone()
            .map(|p| p.binding_ev)
            .fold(f64::INFINITY, f64::min);
        let hi = sel.map(|p| p.binding_ev).fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            return Err(Error::Domain("no poles above the weight threshold".into()));
        }
        Self::new(lo - pad, hi + pad, step)
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|k| self.start + k as f64 * self.step).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lineshape {
    #[default]
    Lorentzian,
    /// Normal density with standard deviation θ.
    Gaussian,
}

impl Lineshape {
    #[inline]
    pub fn eval(&self, x: f64, theta: f64) -> f64 {
        match self {
            Lineshape::Lorentzian => theta / (std::f64::consts::PI * (x * x + theta * theta)),
            Lineshape::Gaussian => {
                (-(x * x) / (2.0 * theta * theta)).exp()
                    / (theta * (2.0 * std::f64::consts::PI).sqrt())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub position: f64,
    pub height: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralFunction {
    /// Binding energy (eV), ascending.
    pub grid: Vec<f64>,
    /// A(ω) in 1/eV.
    pub values: Vec<f64>,
    /// θ in eV.
    pub broadening: f64,
    /// Rigid shift already applied (eV).
    pub shift: f64,
    pub lineshape: Lineshape,
    /// Poles behind the curve, when it was built from a pole list.
    pub poles: Option<PoleSet>,
}

impl SpectralFunction {
    /// Trapezoid integral over the grid.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.values)
    }

    /// Local maxima above `min_height`, refined by a parabola through the
    /// three grid points around each maximum.
    pub fn peaks(&self, min_height: f64) -> Vec<Peak> {
        let v = &self.values;
        let mut out = Vec::new();
        for k in 1..v.len().saturating_sub(1) {
            if v[k] > v[k - 1] && v[k] >= v[k + 1] && v[k] >= min_height {
                let (y0, y1, y2) = (v[k - 1], v[k], v[k + 1]);
                let denom = y0 - 2.0 * y1 + y2;
                let h = self.grid[k + 1] - self.grid[k];
                let (dx, height) = if denom < 0.0 {
                    let dx = 0.5 * (y0 - y2) / denom;
                    (dx * h, y1 - 0.25 * (y0 - y2) * dx)
                } else {
                    (0.0, y1)
                };
                out.push(Peak {
                    position: self.grid[k] + dx,
                    height,
                });
            }
        }
        out
    }

    /// Every local maximum with the area of its basin: the curve integrated
    /// between the neighbouring local minima (or the grid ends).
    pub fn peak_areas(&self) -> Vec<(Peak, f64)> {
        let v = &self.values;
        let n = v.len();
        let peaks = self.peaks(f64::NEG_INFINITY);
        let mut out = Vec::with_capacity(peaks.len());
        for pk in peaks {
            let k = self.grid.partition_point(|&x| x < pk.position).min(n - 1);
            let k = if k > 0
                && (self.grid[k] - pk.position).abs() > (self.grid[k - 1] - pk.position).abs()
            {
                k - 1
            } else {
                k
            };
            let mut lo = k;
            while lo > 0 && v[lo - 1] < v[lo] {
                lo -= 1;
            }
            let mut hi = k;
            while hi + 1 < n && v[hi + 1] <= v[hi] {
                hi += 1;
            }
            let area = trapezoid(&self.grid[lo..=hi], &v[lo..=hi]);
            out.push((pk, area));
        }
        out
    }

    /// Two-column TSV with '#'-prefixed header lines.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "# broadening_eV={} shift_eV={} lineshape={}",
            self.broadening,
            self.shift,
            match self.lineshape {
                Lineshape::Lorentzian => "lorentzian",
                Lineshape::Gaussian => "gaussian",
            }
        )
        .unwrap();
        writeln!(s, "# omega_eV\tA_per_eV").unwrap();
        for (w, a) in self.grid.iter().zip(&self.values) {
            writeln!(s, "{w:.6}\t{a:.10e}").unwrap();
        }
        s
    }

    pub fn to_document(&self, provenance: &str) -> SpectrumDocument {
        SpectrumDocument {
            schema_version: SCHEMA_VERSION,
            broadening_ev: self.broadening,
            shift_ev: self.shift,
            lineshape: self.lineshape,
            provenance: provenance.to_string(),
            poles: self.poles.clone(),
            omega_ev: self.grid.clone(),
            a_per_ev: self.values.clone(),
        }
    }
}

/// JSON form of a spectral function.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumDocument {
    pub schema_version: u32,
    pub broadening_ev: f64,
    pub shift_ev: f64,
    pub lineshape: Lineshape,
    pub provenance: String,
    pub poles: Option<PoleSet>,
    pub omega_ev: Vec<f64>,
    pub a_per_ev: Vec<f64>,
}

/// Reads the two numeric columns of a TSV file, skipping '#' lines.
pub fn read_tsv(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(['\t', ' ', ',']).filter(|c| !c.is_empty());
        let mut num = || -> Result<f64> {
            let tok = cols.next().ok_or(Error::Parse {
                line: n + 1,
                msg: "expected two columns".into(),
            })?;
            tok.parse().map_err(|_| Error::Parse {
                line: n + 1,
                msg: format!("invalid number '{tok}'"),
            })
        };
        x.push(num()?);
        y.push(num()?);
    }
    Ok((x, y))
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

fn check_broadening(theta: f64) -> Result<()> {
    if theta > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "broadening must be positive, got {theta}"
        )))
    }
}

/// A(ω) = Σ_i w_i L(ω − ω_i; θ).
pub fn spectral_function(
    poles: &PoleSet,
    grid: &GridSpec,
    theta: f64,
    lineshape: Lineshape,
) -> Result<SpectralFunction> {
    check_broadening(theta)?;
    Ok(evaluate_on(poles, grid.points(), theta, lineshape))
}

fn evaluate_on(
    poles: &PoleSet,
    points: Vec<f64>,
    theta: f64,
    lineshape: Lineshape,
) -> SpectralFunction {
    let values = points
        .par_iter()
        .map(|&w| {
            poles
                .poles
                .iter()
                .map(|p| p.weight * lineshape.eval(w - p.binding_ev, theta))
                .sum()
        })
        .collect();
    SpectralFunction {
        grid: points,
        values,
        broadening: theta,
        shift: 0.0,
        lineshape,
        poles: Some(poles.clone()),
    }
}

/// Resolvent of the Lanczos tridiagonal evaluated as a continued fraction,
/// −(1/π) Im ‖θ‖² / (z − a₀ − b₁²/(z − a₁ − …)) with z = E₀ − ω + iθ.
pub fn continued_fraction(
    tri: &LanczosTridiagonal,
    e0: f64,
    grid: &GridSpec,
    theta: f64,
) -> Result<SpectralFunction> {
    check_broadening(theta)?;
    let points = grid.points();
    let e0_ev = hartree_to_ev(e0);
    let alphas: Vec<f64> = tri.alphas.iter().map(|a| a * HARTREE_TO_EV).collect();
    let betas2: Vec<f64> = tri
        .betas
        .iter()
        .map(|b| (b * HARTREE_TO_EV).powi(2))
        .collect();
    let norm2 = tri.start_norm * tri.start_norm;
    let values = points
        .par_iter()
        .map(|&w| {
            let z = Complex64::new(e0_ev - w, theta);
            let k = alphas.len();
            let mut tail = z - alphas[k - 1];
            for j in (0..k - 1).rev() {
                tail = z - alphas[j] - betas2[j] / tail;
            }
            let g = norm2 / tail;
            -g.im / std::f64::consts::PI
        })
        .collect();
    Ok(SpectralFunction {
        grid: points,
        values,
        broadening: theta,
        shift: 0.0,
        lineshape: Lineshape::Lorentzian,
        poles: None,
    })
}

/// Scissors shift and re-broadening. With stored poles the curve is rebuilt
/// from them; otherwise the grid is shifted and, for θ' > θ, convolved with
/// a Lorentzian of width θ' − θ (Lorentzian widths add).
pub fn postprocess(sf: &SpectralFunction, shift: f64, broaden: f64) -> Result<SpectralFunction> {
    check_broadening(broaden)?;
    if let Some(poles) = &sf.poles {
        let grid = sf.grid.iter().map(|w| w + shift).collect();
        let mut out = evaluate_on(&poles.shifted(shift), grid, broaden, sf.lineshape);
        out.shift = sf.shift + shift;
        return Ok(out);
    }
    if broaden < sf.broadening {
        return Err(Error::Domain(format!(
            "cannot sharpen a pole-less curve from θ={} to θ'={broaden}",
            sf.broadening
        )));
    }
    let grid: Vec<f64> = sf.grid.iter().map(|w| w + shift).collect();
    let extra = broaden - sf.broadening;
    let values = if extra == 0.0 || sf.lineshape != Lineshape::Lorentzian {
        if extra != 0.0 {
            return Err(Error::Domain(
                "re-broadening a pole-less curve needs a Lorentzian lineshape".into(),
            ));
        }
        sf.values.clone()
    } else {
        let n = grid.len();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let y: Vec<f64> = (0..n)
                    .map(|j| {
                        sf.values[j] * Lineshape::Lorentzian.eval(sf.grid[i] - sf.grid[j], extra)
                    })
                    .collect();
                trapezoid(&sf.grid, &y)
            })
            .collect()
    };
    Ok(SpectralFunction {
        grid,
        values,
        broadening: broaden,
        shift: sf.shift + shift,
        lineshape: sf.lineshape,
        poles: None,
    })
}
