//! Sparse exact joint distributions over named coordinates.
//!
//! A [`Joint`] holds the positive-probability rows of a pmf over a list of
//! [`Coord`]s (node sources and, once a protocol is composed on top of the
//! sources, node messages). Support decisions are exact; entropies are
//! evaluated in double precision, base 2.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NodeId;

pub type Prob = BigRational;

/// One coordinate of a composite random variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Coord {
    /// The source letter X_u observed at node u.
    Source(NodeId),
    /// The message W_u sent by node u.
    Message(NodeId),
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coord::Source(u) => write!(f, "X{u}"),
            Coord::Message(u) => write!(f, "W{u}"),
        }
    }
}

pub(crate) fn prob_from_f64(p: f64, denom_bits: u32) -> Prob {
    let den = BigInt::one() << denom_bits;
    let scaled = (p * (1u64 << denom_bits) as f64).round();
    BigRational::new(BigInt::from(scaled as u64), den)
}

pub fn parse_prob(s: &str) -> Result<Prob> {
    let s = s.trim();
    let bad = || Error::InvalidModel(format!("probability {s:?} is not of the form num/den"));
    let value = match s.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().map_err(|_| bad())?;
            let d: BigInt = d.trim().parse().map_err(|_| bad())?;
            if d.is_zero() {
                return Err(bad());
            }
            BigRational::new(n, d)
        }
        None => BigRational::from_integer(s.parse().map_err(|_| bad())?),
    };
    if value.is_negative() {
        return Err(Error::InvalidModel(format!("negative probability {s}")));
    }
    Ok(value)
}

pub fn format_prob(p: &Prob) -> String {
    format!("{}/{}", p.numer(), p.denom())
}

pub fn to_f64(p: &Prob) -> f64 {
    p.to_f64().unwrap_or(0.0)
}

/// Shannon entropy in bits of a sparse pmf given by its masses.
pub fn entropy_bits<'a>(masses: impl IntoIterator<Item = &'a Prob>) -> f64 {
    masses
        .into_iter()
        .map(to_f64)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.log2())
        .sum()
}

/// A conditional independence failure: `joint * p(given)^(n-1)` differs from
/// the product of the group marginals at this point.
#[derive(Debug, Clone, PartialEq)]
pub struct CiWitness {
    pub given: Vec<u32>,
    pub parts: Vec<Vec<u32>>,
    pub joint: Prob,
    pub factorized: Prob,
}

impl fmt::Display for CiWitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "given {:?}, parts {:?}: p(joint)={} but product of conditionals gives {}",
            self.given,
            self.parts,
            format_prob(&self.joint),
            format_prob(&self.factorized)
        )
    }
}

/// Exact joint law over `coords`; only positive-probability rows are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    coords: Vec<Coord>,
    sizes: Vec<usize>,
    rows: Vec<(Vec<u32>, Prob)>,
}

impl Joint {
    pub fn new(coords: Vec<Coord>, sizes: Vec<usize>, rows: Vec<(Vec<u32>, Prob)>) -> Self {
        debug_assert_eq!(coords.len(), sizes.len());
        let rows = rows.into_iter().filter(|(_, p)| p.is_positive()).collect();
        Joint {
            coords,
            sizes,
            rows,
        }
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn rows(&self) -> &[(Vec<u32>, Prob)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, c: Coord) -> Result<usize> {
        self.coords
            .iter()
            .position(|&x| x == c)
            .ok_or_else(|| Error::InvalidCoordinates(format!("{c} is not part of this joint")))
    }

    pub fn columns(&self, cs: &[Coord]) -> Result<Vec<usize>> {
        cs.iter().map(|&c| self.column(c)).collect()
    }

    pub fn size_of(&self, c: Coord) -> Result<usize> {
        Ok(self.sizes[self.column(c)?])
    }

    /// Appends a column; `extend` maps each row to its weighted continuations.
    pub fn extend_with<F>(&self, coord: Coord, size: usize, guard: usize, mut extend: F) -> Result<Joint>
    where
        F: FnMut(&[u32]) -> Result<Vec<(u32, Prob)>>,
    {
        let mut rows = Vec::with_capacity(self.rows.len());
        for (x, p) in &self.rows {
            for (letter, q) in extend(x)? {
                if !q.is_positive() {
                    continue;
                }
                let mut row = x.clone();
                row.push(letter);
                rows.push((row, p * q));
                if rows.len() > guard {
                    return Err(Error::GuardExceeded {
                        what: "joint support",
                        limit: guard,
                        actual: rows.len(),
                    });
                }
            }
        }
        let mut coords = self.coords.clone();
        coords.push(coord);
        let mut sizes = self.sizes.clone();
        sizes.push(size);
        Ok(Joint {
            coords,
            sizes,
            rows,
        })
    }

    /// Marginal pmf of the listed coordinates, keyed by their letters in the
    /// listed order.
    pub fn marginal(&self, cs: &[Coord]) -> Result<BTreeMap<Vec<u32>, Prob>> {
        let cols = self.columns(cs)?;
        Ok(marginal_by_cols(&self.rows, &cols))
    }

    pub fn entropy(&self, cs: &[Coord]) -> Result<f64> {
        Ok(entropy_bits(self.marginal(cs)?.values()))
    }

    /// H(a | c) in bits.
    pub fn conditional_entropy(&self, a: &[Coord], c: &[Coord]) -> Result<f64> {
        let ac: Vec<Coord> = c.iter().chain(a).copied().collect();
        Ok(self.entropy(&ac)? - self.entropy(c)?)
    }

    /// I(a; b | c) in bits.
    pub fn mutual_information(&self, a: &[Coord], b: &[Coord], c: &[Coord]) -> Result<f64> {
        let ac: Vec<Coord> = c.iter().chain(a).copied().collect();
        let bc: Vec<Coord> = c.iter().chain(b).copied().collect();
        let abc: Vec<Coord> = c.iter().chain(a).chain(b).copied().collect();
        let v = self.entropy(&ac)? + self.entropy(&bc)? - self.entropy(&abc)? - self.entropy(c)?;
        Ok(v)
    }

    /// Exact test that the `groups` are mutually independent given `given`.
    ///
    /// Empty groups are ignored. Zero-probability conditioning values are
    /// skipped.
    pub fn conditionally_independent(
        &self,
        groups: &[Vec<Coord>],
        given: &[Coord],
    ) -> Result<std::result::Result<(), CiWitness>> {
        let groups: Vec<&Vec<Coord>> = groups.iter().filter(|g| !g.is_empty()).collect();
        if groups.len() < 2 {
            return Ok(Ok(()));
        }
        let given_cols = self.columns(given)?;
        let group_cols: Vec<Vec<usize>> = groups
            .iter()
            .map(|g| self.columns(g))
            .collect::<Result<_>>()?;

        // p(g), p(g, a_i), p(g, a_1, ..., a_n), each grouped by g.
        let p_given = marginal_by_cols(&self.rows, &given_cols);
        let mut per_group: Vec<BTreeMap<Vec<u32>, BTreeMap<Vec<u32>, Prob>>> = Vec::new();
        for cols in &group_cols {
            let mut m: BTreeMap<Vec<u32>, BTreeMap<Vec<u32>, Prob>> = BTreeMap::new();
            for (x, p) in &self.rows {
                let g = pick(x, &given_cols);
                let a = pick(x, cols);
                *m.entry(g).or_default().entry(a).or_insert_with(Prob::zero) += p;
            }
            per_group.push(m);
        }
        let all_cols: Vec<usize> = group_cols.iter().flatten().copied().collect();
        let mut p_all: BTreeMap<Vec<u32>, BTreeMap<Vec<u32>, Prob>> = BTreeMap::new();
        for (x, p) in &self.rows {
            *p_all
                .entry(pick(x, &given_cols))
                .or_default()
                .entry(pick(x, &all_cols))
                .or_insert_with(Prob::zero) += p;
        }

        let n = groups.len();
        let zero = Prob::zero();
        for (g, pg) in &p_given {
            let supports: Vec<Vec<(&Vec<u32>, &Prob)>> =
                per_group.iter().map(|m| m[g].iter().collect()).collect();
            let scale = num_traits::pow(pg.clone(), n - 1);
            let joint_at = &p_all[g];
            // Odometer over the product of the group supports.
            let mut idx = vec![0usize; n];
            loop {
                let mut key = Vec::new();
                let mut prod = Prob::one();
                for (i, s) in supports.iter().enumerate() {
                    key.extend_from_slice(s[idx[i]].0);
                    prod *= s[idx[i]].1;
                }
                let pj = joint_at.get(&key).unwrap_or(&zero);
                if (pj * &scale) != prod {
                    let mut parts = Vec::new();
                    for (i, s) in supports.iter().enumerate() {
                        parts.push(s[idx[i]].0.clone());
                    }
                    return Ok(Err(CiWitness {
                        given: g.clone(),
                        parts,
                        joint: pj.clone(),
                        factorized: prod / &scale,
                    }));
                }
                let mut k = 0;
                loop {
                    if k == n {
                        break;
                    }
                    idx[k] += 1;
                    if idx[k] < supports[k].len() {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k == n {
                    break;
                }
            }
        }
        Ok(Ok(()))
    }
}

pub(crate) fn pick(x: &[u32], cols: &[usize]) -> Vec<u32> {
    cols.iter().map(|&c| x[c]).collect()
}

pub(crate) fn marginal_by_cols(rows: &[(Vec<u32>, Prob)], cols: &[usize]) -> BTreeMap<Vec<u32>, Prob> {
    let mut m: BTreeMap<Vec<u32>, Prob> = BTreeMap::new();
    for (x, p) in rows {
        *m.entry(pick(x, cols)).or_insert_with(Prob::zero) += p;
    }
    m
}
