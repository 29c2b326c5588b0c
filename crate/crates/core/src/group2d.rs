//! Discrete point groups of the plane: cyclic rotation groups `C_n` (the
//! point group of `pn`) and dihedral groups `D_n` (the point group of `pnm`).
//!
//! Elements are identified by `(rotation_index, reflected)`. The element
//! `(k, true)` is realized by `R(2πk/n) · diag(1, -1)`: flip `y` first, then
//! rotate. Group arithmetic is exact integer arithmetic; matrices are derived.

use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An element of a discrete subgroup of O(2).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupElement {
    pub rotation_index: usize,
    pub reflected: bool,
}

impl GroupElement {
    pub const IDENTITY: GroupElement = GroupElement { rotation_index: 0, reflected: false };

    pub fn rotation(k: usize) -> Self {
        GroupElement { rotation_index: k, reflected: false }
    }

    pub fn reflection(k: usize) -> Self {
        GroupElement { rotation_index: k, reflected: true }
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.rotation_index)?;
        if self.reflected {
            write!(f, "m")?;
        }
        Ok(())
    }
}

/// Group name as used on the command line: `p4`, `p8m`, `p6`, ...
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupSpec {
    pub n: usize,
    pub reflections: bool,
}

impl GroupSpec {
    pub fn new(n: usize, reflections: bool) -> Self {
        GroupSpec { n, reflections }
    }
}

impl fmt::Display for GroupSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}{}", self.n, if self.reflections { "m" } else { "" })
    }
}

impl FromStr for GroupSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::BadGroupSpec(s.to_string());
        let rest = s.trim().strip_prefix('p').ok_or_else(bad)?;
        let (digits, reflections) = match rest.strip_suffix('m') {
            Some(d) => (d, true),
            None => (rest, false),
        };
        let n: usize = digits.parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(Error::InvalidOrder(0));
        }
        Ok(GroupSpec { n, reflections })
    }
}

/// A finite subgroup of O(2) with precomputed product and inverse tables.
///
/// Elements are enumerated as `r0..r(n-1)` followed, for dihedral groups, by
/// `r0m..r(n-1)m`. Index 0 is always the identity.
#[derive(Clone, Debug)]
pub struct Group2D {
    n: usize,
    with_reflections: bool,
    elements: Vec<GroupElement>,
    products: Vec<usize>,
    inverses: Vec<usize>,
    matrices: Vec<Matrix2<f64>>,
}

impl Group2D {
    pub fn new(n: usize, with_reflections: bool) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidOrder(n));
        }
        let mut elements: Vec<GroupElement> = (0..n).map(GroupElement::rotation).collect();
        if with_reflections {
            elements.extend((0..n).map(GroupElement::reflection));
        }
        let size = elements.len();
        let index = |g: GroupElement| g.rotation_index + if g.reflected { n } else { 0 };

        let mut products = vec![0; size * size];
        for (i, &a) in elements.iter().enumerate() {
            for (j, &b) in elements.iter().enumerate() {
                products[i * size + j] = index(compose(n, a, b));
            }
        }
        let inverses = elements
            .iter()
            .map(|&g| {
                let inv = if g.reflected { g } else { GroupElement::rotation((n - g.rotation_index) % n) };
                index(inv)
            })
            .collect();
        let matrices = elements.iter().map(|&g| element_matrix(n, g)).collect();

        Ok(Group2D { n, with_reflections, elements, products, inverses, matrices })
    }

    pub fn from_spec(spec: GroupSpec) -> Result<Self> {
        Self::new(spec.n, spec.reflections)
    }

    pub fn spec(&self) -> GroupSpec {
        GroupSpec::new(self.n, self.with_reflections)
    }

    /// Rotation order `n`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn with_reflections(&self) -> bool {
        self.with_reflections
    }

    /// Number of elements, `|S|`.
    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[GroupElement] {
        &self.elements
    }

    pub fn element(&self, index: usize) -> GroupElement {
        self.elements[index]
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement::IDENTITY
    }

    pub fn contains(&self, g: GroupElement) -> bool {
        g.rotation_index < self.n && (!g.reflected || self.with_reflections)
    }

    /// Position of `g` in the element enumeration (its channel index).
    ///
    /// Panics if `g` is not an element of this group.
    pub fn index_of(&self, g: GroupElement) -> usize {
        assert!(self.contains(g), "{g} is not an element of {}", self.spec());
        g.rotation_index + if g.reflected { self.n } else { 0 }
    }

    pub fn product(&self, a: GroupElement, b: GroupElement) -> GroupElement {
        self.elements[self.product_index(self.index_of(a), self.index_of(b))]
    }

    /// Product on element indices.
    #[inline]
    pub fn product_index(&self, i: usize, j: usize) -> usize {
        self.products[i * self.order() + j]
    }

    pub fn inverse(&self, g: GroupElement) -> GroupElement {
        self.elements[self.inverse_index(self.index_of(g))]
    }

    #[inline]
    pub fn inverse_index(&self, i: usize) -> usize {
        self.inverses[i]
    }

    /// Orthogonal 2×2 matrix realizing `g`.
    pub fn matrix(&self, g: GroupElement) -> Matrix2<f64> {
        self.matrices[self.index_of(g)]
    }

    /// Rotation angle of the rotation part of `g`, in radians.
    pub fn angle(&self, g: GroupElement) -> f64 {
        2.0 * std::f64::consts::PI * g.rotation_index as f64 / self.n as f64
    }

    /// True when `g` maps the square pixel lattice onto itself, i.e. its
    /// rotation part is a multiple of 90°.
    pub fn is_grid_symmetry(&self, g: GroupElement) -> bool {
        (4 * g.rotation_index).is_multiple_of(self.n)
    }

    /// Parses `e`, `m`, `r<k>` or `r<k>m`.
    pub fn parse_element(&self, label: &str) -> Result<GroupElement> {
        let bad = || Error::BadElement { label: label.to_string(), group: self.spec().to_string() };
        let s = label.trim();
        let g = match s {
            "e" => GroupElement::IDENTITY,
            "m" => GroupElement::reflection(0),
            _ => {
                let rest = s.strip_prefix('r').ok_or_else(bad)?;
                let (digits, reflected) = match rest.strip_suffix('m') {
                    Some(d) => (d, true),
                    None => (rest, false),
                };
                let k: usize = digits.parse().map_err(|_| bad())?;
                GroupElement { rotation_index: k, reflected }
            }
        };
        if self.contains(g) {
            Ok(g)
        } else {
            Err(bad())
        }
    }
}

fn compose(n: usize, a: GroupElement, b: GroupElement) -> GroupElement {
    let k = if a.reflected {
        (a.rotation_index + n - b.rotation_index) % n
    } else {
        (a.rotation_index + b.rotation_index) % n
    };
    GroupElement { rotation_index: k, reflected: a.reflected ^ b.reflected }
}

fn element_matrix(n: usize, g: GroupElement) -> Matrix2<f64> {
    let theta = 2.0 * std::f64::consts::PI * g.rotation_index as f64 / n as f64;
    let (s, c) = exact_sin_cos(theta, g.rotation_index, n);
    let rot = Matrix2::new(c, -s, s, c);
    if g.reflected {
        rot * Matrix2::new(1.0, 0.0, 0.0, -1.0)
    } else {
        rot
    }
}

/// `sin_cos` with exact values at multiples of 90°, so that grid-symmetric
/// elements produce integer matrices.
fn exact_sin_cos(theta: f64, k: usize, n: usize) -> (f64, f64) {
    if (4 * k).is_multiple_of(n) {
        match (4 * k / n) % 4 {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        theta.sin_cos()
    }
}
