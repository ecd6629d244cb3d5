//! The on-disk problem format.
//!
//! Top-level keys: `blocks` (array of block sizes), `f` and `phi`
//! (`{"P": dense rows | {"triplets": [[i,j,v],..], "dim": n}, "q": [..], "r": s}`),
//! `Q` (dense rows), `constraints` (array of `{"C": [[i,j,v],..], "d": [..], "e": s}`),
//! and `indicators` (array of `{"type": "free"|"box"|"polyhedron", ..}`).
//! Box bounds use `null` for unbounded coordinates. The optional `extras`
//! array carries non-quadratic objective terms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{
    BlockStructure, ConstraintRow, IndicatorSet, MultiAffineOperator, ProblemSpec,
    QuadraticObjective, SmoothExtra, SymmetricSparse,
};

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum MatrixFile {
    Dense(Vec<Vec<f64>>),
    Sparse { triplets: Vec<(usize, usize, f64)>, dim: usize },
}

#[derive(Debug, Serialize, Deserialize)]
struct ObjectiveFile {
    #[serde(rename = "P")]
    p: MatrixFile,
    q: Vec<f64>,
    r: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ConstraintFile {
    #[serde(rename = "C")]
    c: Vec<(usize, usize, f64)>,
    d: Vec<f64>,
    e: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum IndicatorFile {
    Free { dim: usize },
    Box { lower: Vec<Option<f64>>, upper: Vec<Option<f64>> },
    Polyhedron { g: Vec<Vec<f64>>, h: Vec<f64> },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum ExtraFile {
    Sinsq { coeff: f64, coord: usize },
}

#[derive(Debug, Serialize, Deserialize)]
struct ProblemFile {
    blocks: Vec<usize>,
    f: ObjectiveFile,
    phi: ObjectiveFile,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    constraints: Vec<ConstraintFile>,
    indicators: Vec<IndicatorFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    extras: Vec<ExtraFile>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    outside_theory: bool,
}

fn dense_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn rows_to_dense(rows: &[Vec<f64>], cols_hint: Option<usize>) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map(|r| r.len()).or(cols_hint).unwrap_or(0);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(Error::Dimension { context: "ragged matrix rows", expected: ncols, got: rows[i].len() });
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn objective_to_file(obj: &QuadraticObjective) -> ObjectiveFile {
    ObjectiveFile {
        p: MatrixFile::Dense(dense_to_rows(obj.p())),
        q: obj.q().iter().copied().collect(),
        r: obj.r(),
    }
}

fn objective_from_file(file: &ObjectiveFile) -> Result<QuadraticObjective> {
    let p = match &file.p {
        MatrixFile::Dense(rows) => rows_to_dense(rows, Some(file.q.len()))?,
        MatrixFile::Sparse { triplets, dim } => {
            let mut m = DMatrix::zeros(*dim, *dim);
            for &(i, j, v) in triplets {
                if i >= *dim || j >= *dim {
                    return Err(Error::Dimension { context: "objective triplet", expected: *dim, got: i.max(j) });
                }
                m[(i, j)] += v;
                if i != j {
                    m[(j, i)] += v;
                }
            }
            m
        }
    };
    QuadraticObjective::new(p, DVector::from_vec(file.q.clone()), file.r)
}

fn indicator_to_file(set: &IndicatorSet) -> IndicatorFile {
    match set {
        IndicatorSet::Free { dim } => IndicatorFile::Free { dim: *dim },
        IndicatorSet::Box { lower, upper } => IndicatorFile::Box {
            lower: lower.iter().map(|&v| if v.is_finite() { Some(v) } else { None }).collect(),
            upper: upper.iter().map(|&v| if v.is_finite() { Some(v) } else { None }).collect(),
        },
        IndicatorSet::Polyhedron { g, h } => IndicatorFile::Polyhedron {
            g: dense_to_rows(g),
            h: h.iter().copied().collect(),
        },
    }
}

fn indicator_from_file(file: &IndicatorFile) -> Result<IndicatorSet> {
    Ok(match file {
        IndicatorFile::Free { dim } => IndicatorSet::Free { dim: *dim },
        IndicatorFile::Box { lower, upper } => {
            if lower.len() != upper.len() {
                return Err(Error::Dimension { context: "box bounds", expected: lower.len(), got: upper.len() });
            }
            IndicatorSet::Box {
                lower: DVector::from_iterator(
                    lower.len(),
                    lower.iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)),
                ),
                upper: DVector::from_iterator(
                    upper.len(),
                    upper.iter().map(|v| v.unwrap_or(f64::INFINITY)),
                ),
            }
        }
        IndicatorFile::Polyhedron { g, h } => {
            let gm = rows_to_dense(g, None)?;
            if gm.nrows() != h.len() {
                return Err(Error::Dimension { context: "polyhedron rows", expected: gm.nrows(), got: h.len() });
            }
            IndicatorSet::Polyhedron { g: gm, h: DVector::from_vec(h.clone()) }
        }
    })
}

/// Converts a spec into the serializable file form and writes it as JSON.
pub fn to_json_string(spec: &ProblemSpec) -> Result<String> {
    let file = ProblemFile {
        blocks: spec.blocks.sizes().to_vec(),
        f: objective_to_file(&spec.f),
        phi: objective_to_file(&spec.phi),
        q: dense_to_rows(&spec.q),
        constraints: spec
            .a
            .rows()
            .iter()
            .map(|row| ConstraintFile {
                c: row.c.upper_triplets().to_vec(),
                d: row.d.iter().copied().collect(),
                e: row.e,
            })
            .collect(),
        indicators: spec.indicators.iter().map(indicator_to_file).collect(),
        extras: spec
            .extras
            .iter()
            .map(|ex| match ex {
                SmoothExtra::SinSq { coeff, coord } => ExtraFile::Sinsq { coeff: *coeff, coord: *coord },
            })
            .collect(),
        outside_theory: spec.outside_theory,
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::InvalidProblem(format!("serialize: {e}")))
}

/// Parses a problem from its JSON form.
pub fn from_json_str(text: &str) -> Result<ProblemSpec> {
    let file: ProblemFile =
        serde_json::from_str(text).map_err(|e| Error::InvalidProblem(format!("parse: {e}")))?;
    let blocks = BlockStructure::new(file.blocks.clone())?;
    let n_x = blocks.total();
    let mut rows = Vec::with_capacity(file.constraints.len());
    for cf in &file.constraints {
        if cf.d.len() != n_x {
            return Err(Error::Dimension { context: "constraint d length", expected: n_x, got: cf.d.len() });
        }
        rows.push(ConstraintRow {
            c: SymmetricSparse::from_triplets(n_x, cf.c.iter().copied())?,
            d: DVector::from_vec(cf.d.clone()),
            e: cf.e,
        });
    }
    let a = MultiAffineOperator::new(blocks.clone(), rows)?;
    let q = rows_to_dense(&file.q, None)?;
    let indicators = file
        .indicators
        .iter()
        .map(indicator_from_file)
        .collect::<Result<Vec<_>>>()?;
    let extras = file
        .extras
        .iter()
        .map(|ex| match ex {
            ExtraFile::Sinsq { coeff, coord } => SmoothExtra::SinSq { coeff: *coeff, coord: *coord },
        })
        .collect();
    Ok(ProblemSpec {
        f: objective_from_file(&file.f)?,
        phi: objective_from_file(&file.phi)?,
        blocks,
        a,
        q,
        indicators,
        extras,
        outside_theory: file.outside_theory,
    })
}

pub fn write_file(spec: &ProblemSpec, path: &std::path::Path) -> Result<()> {
    let text = to_json_string(spec)?;
    std::fs::write(path, text).map_err(|e| Error::InvalidProblem(format!("write {}: {e}", path.display())))
}

pub fn read_file(path: &std::path::Path) -> Result<ProblemSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidProblem(format!("read {}: {e}", path.display())))?;
    from_json_str(&text)
}
