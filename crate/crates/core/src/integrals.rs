//! FCIDUMP ingestion and spin-orbital integrals.
//!
//! Spatial orbitals are 1-based in FCIDUMP files and 0-based everywhere in
//! code. Spin-orbital `2k` is the α partner of spatial orbital `k`, `2k + 1`
//! its β partner, so spin-orbital `p` sits at bit `p` of a [`Determinant`].

use std::fmt::Write as _;
use std::io::BufRead;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fock_space::Determinant;

const DUPLICATE_TOL: f64 = 1e-10;

/// Spatial-orbital integrals as stored in an FCIDUMP file.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralStore {
    pub n_orb: usize,
    pub n_elec: usize,
    pub ms2: i64,
    /// Core/nuclear repulsion energy (Hartree).
    pub e_nuc: f64,
    /// One-electron integrals h_ij.
    pub h: DMatrix<f64>,
    /// Two-electron integrals (ij|kl), chemists' notation, dense n⁴ storage.
    g: Vec<f64>,
    /// ORBSYM record, kept for reference only.
    pub orbsym: Vec<i64>,
}

impl IntegralStore {
    pub fn new(n_orb: usize, n_elec: usize, ms2: i64) -> Result<Self> {
        if n_orb == 0 {
            return Err(Error::Domain("NORB must be at least 1".into()));
        }
        if n_elec == 0 {
            return Err(Error::Domain("NELEC must be at least 1".into()));
        }
        Ok(Self {
            n_orb,
            n_elec,
            ms2,
            e_nuc: 0.0,
            h: DMatrix::zeros(n_orb, n_orb),
            g: vec![0.0; n_orb.pow(4)],
            orbsym: Vec::new(),
        })
    }

    #[inline]
    fn gidx(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        let n = self.n_orb;
        ((i * n + j) * n + k) * n + l
    }

    /// (ij|kl), 0-based.
    #[inline]
    pub fn g(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.g[self.gidx(i, j, k, l)]
    }

    pub fn set_h(&mut self, i: usize, j: usize, value: f64) {
        self.h[(i, j)] = value;
        self.h[(j, i)] = value;
    }

    /// Sets (ij|kl) and its seven symmetry images.
    pub fn set_g(&mut self, i: usize, j: usize, k: usize, l: usize, value: f64) {
        for (a, b, c, d) in permutations8(i, j, k, l) {
            let idx = self.gidx(a, b, c, d);
            self.g[idx] = value;
        }
    }

    /// Number of α and β electrons implied by NELEC and MS2.
    pub fn spin_counts(&self) -> Result<(usize, usize)> {
        let n = self.n_elec as i64;
        if (n + self.ms2) % 2 != 0 || self.ms2.abs() > n {
            return Err(Error::Domain(format!(
                "NELEC={} incompatible with MS2={}",
                self.n_elec, self.ms2
            )));
        }
        Ok((((n + self.ms2) / 2) as usize, ((n - self.ms2) / 2) as usize))
    }
}

fn permutations8(i: usize, j: usize, k: usize, l: usize) -> [(usize, usize, usize, usize); 8] {
    [
        (i, j, k, l),
        (j, i, k, l),
        (i, j, l, k),
        (j, i, l, k),
        (k, l, i, j),
        (l, k, i, j),
        (k, l, j, i),
        (l, k, j, i),
    ]
}

fn parse_float(token: &str, line: usize) -> Result<f64> {
    token
        .replace(['D', 'd'], "e")
        .parse::<f64>()
        .map_err(|_| Error::Parse {
            line,
            msg: format!("invalid number '{token}'"),
        })
}

fn parse_int(token: &str, line: usize) -> Result<i64> {
    token.trim().parse::<i64>().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid integer '{token}'"),
    })
}

/// Parses the `&FCI ... &END` namelist header. Returns key/value lists and
/// the number of lines consumed.
fn parse_header(lines: &[String]) -> Result<(Vec<(String, Vec<String>)>, usize)> {
    let first = lines
        .iter()
        .position(|l| !l.trim().is_empty())
        .ok_or(Error::Parse {
            line: 1,
            msg: "empty input".into(),
        })?;
    if !lines[first]
        .trim_start()
        .to_ascii_uppercase()
        .starts_with("&FCI")
    {
        return Err(Error::Parse {
            line: first + 1,
            msg: "expected '&FCI' namelist header".into(),
        });
    }
    let mut body = String::new();
    let mut end = None;
    for (n, raw) in lines.iter().enumerate().skip(first) {
        let mut text = raw.trim().to_string();
        if n == first {
            text = text[4..].to_string();
        }
        let upper = text.to_ascii_uppercase();
        let stop = upper.find("&END").or_else(|| {
            let t = upper.trim_end();
            (t == "/" || t.ends_with(" /") || t.ends_with(",/")).then(|| upper.rfind('/').unwrap())
        });
        if let Some(pos) = stop {
            body.push_str(&text[..pos]);
            end = Some(n);
            break;
        }
        body.push_str(&text);
        body.push(' ');
    }
    let end = end.ok_or(Error::Parse {
        line: lines.len(),
        msg: "unterminated namelist header (missing &END or /)".into(),
    })?;

    // assignments may be separated by commas or blanks: a token followed by
    // '=' opens a key, everything else is a value of the latest key
    let spaced = body.replace(',', " ").replace('=', " = ");
    let tokens: Vec<&str> = spaced.split_whitespace().collect();
    let mut pairs: Vec<(String, Vec<String>)> = Vec::new();
    let mut k = 0;
    while k < tokens.len() {
        if tokens.get(k + 1) == Some(&"=") {
            pairs.push((tokens[k].to_ascii_uppercase(), Vec::new()));
            k += 2;
        } else if tokens[k] == "=" {
            return Err(Error::Parse {
                line: first + 1,
                msg: "'=' without a key".into(),
            });
        } else if let Some(last) = pairs.last_mut() {
            last.1.push(tokens[k].to_string());
            k += 1;
        } else {
            return Err(Error::Parse {
                line: first + 1,
                msg: format!("value '{}' before any key", tokens[k]),
            });
        }
    }
    Ok((pairs, end + 1))
}

/// Reads an FCIDUMP stream.
pub fn parse_fcidump<R: BufRead>(reader: R) -> Result<IntegralStore> {
    let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
    let (pairs, consumed) = parse_header(&lines)?;
    let header_line = consumed;
    let scalar = |key: &str| -> Result<i64> {
        let (_, vals) = pairs.iter().find(|(k, _)| k == key).ok_or(Error::Parse {
            line: header_line,
            msg: format!("missing {key} in header"),
        })?;
        let v = vals.first().ok_or(Error::Parse {
            line: header_line,
            msg: format!("{key} has no value"),
        })?;
        parse_int(v, header_line)
    };
    let norb = scalar("NORB")?;
    let nelec = scalar("NELEC")?;
    let ms2 = pairs
        .iter()
        .any(|(k, _)| k == "MS2")
        .then(|| scalar("MS2"))
        .transpose()?
        .unwrap_or(0);
    if norb < 1 || nelec < 1 {
        return Err(Error::Parse {
            line: header_line,
            msg: format!("NORB={norb} and NELEC={nelec} must be positive"),
        });
    }
    let mut store = IntegralStore::new(norb as usize, nelec as usize, ms2)?;
    if let Some((_, vals)) = pairs.iter().find(|(k, _)| k == "ORBSYM") {
        store.orbsym = vals
            .iter()
            .map(|v| parse_int(v, header_line))
            .collect::<Result<_>>()?;
    }

    let n = store.n_orb;
    let mut h_set = vec![false; n * n];
    let mut g_set = vec![false; n.pow(4)];
    let mut enuc_set = false;

    for (offset, raw) in lines[consumed..].iter().enumerate() {
        let line = consumed + offset + 1;
        let text = raw.trim();
        if text.is_empty() {
            continue;
        }
        let cols: Vec<&str> = text.split_whitespace().collect();
        if cols.len() != 5 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 5 columns, found {}", cols.len()),
            });
        }
        let value = parse_float(cols[0], line)?;
        let mut idx = [0usize; 4];
        for (slot, tok) in idx.iter_mut().zip(&cols[1..]) {
            let i = parse_int(tok, line)?;
            if i < 0 || i > norb {
                return Err(Error::Range {
                    line,
                    index: i,
                    norb: n,
                });
            }
            *slot = i as usize;
        }
        let check = |old: f64, what: String| -> Result<()> {
            if (old - value).abs() > DUPLICATE_TOL {
                Err(Error::Consistency {
                    line,
                    what,
                    old,
                    new: value,
                })
            } else {
                Ok(())
            }
        };
        match idx {
            [0, 0, 0, 0] => {
                if enuc_set {
                    check(store.e_nuc, "core energy".into())?;
                }
                store.e_nuc = value;
                enuc_set = true;
            }
            [i, j, 0, 0] if i > 0 && j > 0 => {
                let (i, j) = (i - 1, j - 1);
                if h_set[i * n + j] {
                    check(store.h[(i, j)], format!("h({},{})", i + 1, j + 1))?;
                }
                store.set_h(i, j, value);
                h_set[i * n + j] = true;
                h_set[j * n + i] = true;
            }
            // orbital-energy records; FCIDUMP energies are not used
            [_, 0, 0, 0] => {}
            [i, j, k, l] if i > 0 && j > 0 && k > 0 && l > 0 => {
                let (i, j, k, l) = (i - 1, j - 1, k - 1, l - 1);
                let at = store.gidx(i, j, k, l);
                if g_set[at] {
                    check(
                        store.g[at],
                        format!("({}{}|{}{})", i + 1, j + 1, k + 1, l + 1),
                    )?;
                }
                store.set_g(i, j, k, l, value);
                for (a, b, c, d) in permutations8(i, j, k, l) {
                    let at = store.gidx(a, b, c, d);
                    g_set[at] = true;
                }
            }
            _ => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unrecognised index pattern {:?}", idx),
                })
            }
        }
    }
    Ok(store)
}

/// Serializes the unique integrals (i≥j, k≥l, ij≥kl) in FCIDUMP layout.
pub fn write_fcidump(store: &IntegralStore) -> String {
    let n = store.n_orb;
    let mut out = String::new();
    let orbsym: Vec<String> = if store.orbsym.len() == n {
        store.orbsym.iter().map(|s| s.to_string()).collect()
    } else {
        vec!["1".to_string(); n]
    };
    writeln!(
        out,
        " &FCI NORB={},NELEC={},MS2={},\n  ORBSYM={},\n  ISYM=1,\n &END",
        n,
        store.n_elec,
        store.ms2,
        orbsym.join(",")
    )
    .unwrap();
    let pair = |i: usize, j: usize| i * (i + 1) / 2 + j;
    for i in 0..n {
        for j in 0..=i {
            for k in 0..n {
                for l in 0..=k {
                    if pair(i, j) < pair(k, l) {
                        continue;
                    }
                    let v = store.g(i, j, k, l);
                    if v != 0.0 {
                        writeln!(out, "{:e} {} {} {} {}", v, i + 1, j + 1, k + 1, l + 1).unwrap();
                    }
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..=i {
            let v = store.h[(i, j)];
            if v != 0.0 {
                writeln!(out, "{:e} {} {} 0 0", v, i + 1, j + 1).unwrap();
            }
        }
    }
    writeln!(out, "{:e} 0 0 0 0", store.e_nuc).unwrap();
    out
}

#[inline]
pub fn spatial(p: usize) -> usize {
    p / 2
}

/// 0 for α, 1 for β.
#[inline]
pub fn spin(p: usize) -> usize {
    p % 2
}

/// Spin-orbital integrals over M = 2·n_orb spin-orbitals.
#[derive(Debug, Clone)]
pub struct SpinIntegrals {
    pub m: usize,
    pub n_elec: usize,
    pub e_nuc: f64,
    pub h: DMatrix<f64>,
    /// ⟨pq||rs⟩, dense M⁴ storage.
    v: Vec<f64>,
    /// Reference orbital energies ε_p.
    pub eps: Vec<f64>,
    /// N-electron aufbau determinant.
    pub reference: Determinant,
}

impl SpinIntegrals {
    #[inline]
    pub fn v(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        let m = self.m;
        self.v[((p * m + q) * m + r) * m + s]
    }

    pub fn occupied(&self) -> Vec<usize> {
        self.reference.occupied().collect()
    }

    /// N-electron Fock matrix h_pq + Σ_i ⟨pi||qi⟩ over the reference.
    pub fn fock_matrix(&self) -> DMatrix<f64> {
        let occ = self.occupied();
        DMatrix::from_fn(self.m, self.m, |p, q| {
            self.h[(p, q)] + occ.iter().map(|&i| self.v(p, i, q, i)).sum::<f64>()
        })
    }

    /// Energy of the reference determinant, including the core energy.
    pub fn reference_energy(&self) -> f64 {
        let occ = self.occupied();
        let mut e = self.e_nuc;
        for &i in &occ {
            e += self.h[(i, i)];
            for &j in &occ {
                e += 0.5 * self.v(i, j, i, j);
            }
        }
        e
    }
}

/// ⟨pq|rs⟩ in physicists' notation with spin matching on (p,r) and (q,s).
#[inline]
fn coulomb(store: &IntegralStore, p: usize, q: usize, r: usize, s: usize) -> f64 {
    if spin(p) != spin(r) || spin(q) != spin(s) {
        return 0.0;
    }
    store.g(spatial(p), spatial(r), spatial(q), spatial(s))
}

pub fn to_spin_integrals(store: &IntegralStore) -> Result<SpinIntegrals> {
    let m = 2 * store.n_orb;
    if store.n_elec > m {
        return Err(Error::Capacity(format!(
            "{} electrons do not fit in {} spin-orbitals",
            store.n_elec, m
        )));
    }
    if m > 64 {
        return Err(Error::Capacity(format!(
            "{m} spin-orbitals exceed the 64-bit determinant width"
        )));
    }
    let h = DMatrix::from_fn(m, m, |p, q| {
        if spin(p) == spin(q) {
            store.h[(spatial(p), spatial(q))]
        } else {
            0.0
        }
    });
    let mut v = vec![0.0; m.pow(4)];
    for p in 0..m {
        for q in 0..m {
            for r in 0..m {
                for s in 0..m {
                    v[((p * m + q) * m + r) * m + s] =
                        coulomb(store, p, q, r, s) - coulomb(store, p, q, s, r);
                }
            }
        }
    }
    let reference = Determinant::from_occupied(0..store.n_elec, m)?;
    let mut ints = SpinIntegrals {
        m,
        n_elec: store.n_elec,
        e_nuc: store.e_nuc,
        h,
        v,
        eps: Vec::new(),
        reference,
    };
    let occ = ints.occupied();
    ints.eps = (0..m)
        .map(|p| ints.h[(p, p)] + occ.iter().map(|&i| ints.v(p, i, p, i)).sum::<f64>())
        .collect();
    Ok(ints)
}

/// Fock operator of the core-ionized reference, f_pq = f⁽ᴺ⁾_pq − ⟨pc||qc⟩
/// (ε_p δ_pq − ⟨pc||qc⟩ for canonical orbitals).
#[derive(Debug, Clone)]
pub struct FockNMinus1 {
    pub f: DMatrix<f64>,
    pub core: usize,
}

pub fn fock_n_minus_1(ints: &SpinIntegrals, core: usize) -> Result<FockNMinus1> {
    if core >= ints.m || !ints.reference.is_occupied(core) {
        return Err(Error::Domain(format!(
            "core spin-orbital {core} is not occupied in the reference"
        )));
    }
    let full = ints.fock_matrix();
    let f = DMatrix::from_fn(ints.m, ints.m, |p, q| {
        full[(p, q)] - ints.v(p, core, q, core)
    });
    Ok(FockNMinus1 { f, core })
}
