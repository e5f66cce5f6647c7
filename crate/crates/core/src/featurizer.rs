//! Fixed polynomial feature maps built from the outer product of a normalized input.
//!
//! For an input `x` of length `nf` the outer product `X[i][j] = x_i * x_j` is symmetric,
//! so only its strict upper triangle carries distinct cross-products. The maps are:
//!
//! | kind   | values                          | length             |
//! |--------|---------------------------------|--------------------|
//! | Linear | `x`                             | `nf`               |
//! | NL1    | `x_i x_j`, `i < j`, row-major   | `nf(nf-1)/2`       |
//! | NL2    | `x_i^2`                         | `nf`               |
//! | NL3    | NL1 then NL2                    | `nf(nf+1)/2`       |
//! | NL4    | Linear then NL1                 | `nf + nf(nf-1)/2`  |
//! | NL5    | Linear then NL2                 | `2 nf`             |
//! | NL6    | Linear then NL1 then NL2        | `nf + nf(nf+1)/2`  |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("input vector is empty")]
    Empty,
    #[error("input contains a non-finite value at position {0}")]
    NonFinite(usize),
    #[error("feature map undefined for single-feature input ({0} needs cross-products)")]
    SingleFeature(FeatureMapKind),
    #[error("unknown feature map `{0}` (expected linear, nl1..nl6)")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMapKind {
    Linear,
    Nl1,
    Nl2,
    Nl3,
    Nl4,
    Nl5,
    Nl6,
}

impl FeatureMapKind {
    pub const ALL: [FeatureMapKind; 7] = [
        FeatureMapKind::Linear,
        FeatureMapKind::Nl1,
        FeatureMapKind::Nl2,
        FeatureMapKind::Nl3,
        FeatureMapKind::Nl4,
        FeatureMapKind::Nl5,
        FeatureMapKind::Nl6,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureMapKind::Linear => "linear",
            FeatureMapKind::Nl1 => "nl1",
            FeatureMapKind::Nl2 => "nl2",
            FeatureMapKind::Nl3 => "nl3",
            FeatureMapKind::Nl4 => "nl4",
            FeatureMapKind::Nl5 => "nl5",
            FeatureMapKind::Nl6 => "nl6",
        }
    }

    fn blocks(self) -> (bool, bool, bool) {
        // (linear, cross-products, squares)
        match self {
            FeatureMapKind::Linear => (true, false, false),
            FeatureMapKind::Nl1 => (false, true, false),
            FeatureMapKind::Nl2 => (false, false, true),
            FeatureMapKind::Nl3 => (false, true, true),
            FeatureMapKind::Nl4 => (true, true, false),
            FeatureMapKind::Nl5 => (true, false, true),
            FeatureMapKind::Nl6 => (true, true, true),
        }
    }

    /// Whether the map contains off-diagonal products, and so needs `nf >= 2`.
    pub fn needs_pairs(self) -> bool {
        self.blocks().1
    }

    /// Output length for an input of `nf` features.
    pub fn dimensionality(self, nf: usize) -> usize {
        let (linear, pairs, squares) = self.blocks();
        let mut n = 0;
        if linear {
            n += nf;
        }
        if pairs {
            n += nf * nf.saturating_sub(1) / 2;
        }
        if squares {
            n += nf;
        }
        n
    }
}

impl fmt::Display for FeatureMapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureMapKind {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        FeatureMapKind::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| FeatureError::UnknownKind(s.to_string()))
    }
}

/// Free-function form of [`FeatureMapKind::dimensionality`].
pub fn dimensionality(kind: FeatureMapKind, nf: usize) -> usize {
    kind.dimensionality(nf)
}

/// Symmetric `nf x nf` matrix of pairwise products, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterProduct {
    n: usize,
    data: Vec<f64>,
}

impl OuterProduct {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Strict upper triangle in row-major order: (0,1), (0,2), ..., (n-2,n-1).
    pub fn upper_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * self.n.saturating_sub(1) / 2);
        for i in 0..self.n {
            for j in i + 1..self.n {
                out.push(self.get(i, j));
            }
        }
        out
    }
}

fn validate(x: &[f64]) -> Result<(), FeatureError> {
    if x.is_empty() {
        return Err(FeatureError::Empty);
    }
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(FeatureError::NonFinite(i)),
        None => Ok(()),
    }
}

pub fn outer_product(x: &[f64]) -> Result<OuterProduct, FeatureError> {
    validate(x)?;
    let n = x.len();
    let data = x
        .iter()
        .flat_map(|&a| x.iter().map(move |&b| a * b))
        .collect();
    Ok(OuterProduct { n, data })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub kind: FeatureMapKind,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Expands `x` with the given map.
pub fn featurize(x: &[f64], kind: FeatureMapKind) -> Result<FeatureVector, FeatureError> {
    validate(x)?;
    if kind.needs_pairs() && x.len() < 2 {
        return Err(FeatureError::SingleFeature(kind));
    }
    let (linear, pairs, squares) = kind.blocks();
    let op = outer_product(x)?;
    let mut values = Vec::with_capacity(kind.dimensionality(x.len()));
    if linear {
        values.extend_from_slice(x);
    }
    if pairs {
        values.extend(op.upper_triangle());
    }
    if squares {
        values.extend(op.diagonal());
    }
    Ok(FeatureVector { kind, values })
}
