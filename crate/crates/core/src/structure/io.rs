use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{NormFamily, NormKind, SubFinslerStructure};
use crate::error::{Result, SflabError};
use crate::symvf::{format_rational, parse_rational, PolyScalar, PolyVectorField};

/// One monomial `coeff · x^exponents`; `coeff` is an exact `"p/q"` string.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub coeff: String,
    pub exponents: Vec<u32>,
}

/// On-disk structure definition.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StructureFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dimension: usize,
    pub fiber_dimension: usize,
    /// `fields[i][j]` lists the terms of the `∂_j` component of `X_{i+1}`.
    pub fields: Vec<Vec<Vec<TermSpec>>>,
    pub norm: NormSpec,
    pub chart_box: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormSpec {
    pub kind: String,
    #[serde(default)]
    pub params: Value,
}

pub fn poly_to_terms(p: &PolyScalar) -> Vec<TermSpec> {
    p.terms().map(|(e, c)| TermSpec { coeff: format_rational(c), exponents: e.clone() }).collect()
}

pub fn poly_from_terms(n: usize, terms: &[TermSpec]) -> Result<PolyScalar> {
    let parsed = terms
        .iter()
        .map(|t| {
            if t.exponents.len() != n {
                return Err(SflabError::DimensionMismatch { expected: n, found: t.exponents.len() });
            }
            Ok((t.exponents.clone(), parse_rational(&t.coeff)?))
        })
        .collect::<Result<Vec<_>>>()?;
    PolyScalar::from_terms(n, parsed)
}

impl StructureFile {
    pub fn from_structure(s: &SubFinslerStructure) -> Self {
        let fields = s.fields().iter().map(|f| f.components().iter().map(poly_to_terms).collect()).collect();
        let norm = match s.norm().kind() {
            NormKind::Lp { p } => NormSpec {
                kind: "lp".into(),
                params: if p.is_infinite() { json!({ "p": "inf" }) } else { json!({ "p": p }) },
            },
            NormKind::Quadratic { matrix } => NormSpec {
                kind: "quadratic".into(),
                params: json!({
                    "matrix": matrix.iter().map(|r| r.iter().map(poly_to_terms).collect::<Vec<_>>()).collect::<Vec<_>>()
                }),
            },
            NormKind::Polytope { support_vectors, smoothing } => NormSpec {
                kind: "polytope".into(),
                params: json!({ "support_vectors": support_vectors, "smoothing": smoothing }),
            },
        };
        Self {
            name: None,
            dimension: s.dim(),
            fiber_dimension: s.fiber_dim(),
            fields,
            norm,
            chart_box: s.chart_box().iter().map(|(a, b)| [*a, *b]).collect(),
        }
    }

    pub fn into_structure(self) -> Result<SubFinslerStructure> {
        let n = self.dimension;
        if self.fields.len() != self.fiber_dimension {
            return Err(SflabError::DimensionMismatch { expected: self.fiber_dimension, found: self.fields.len() });
        }
        let fields = self
            .fields
            .iter()
            .map(|comps| {
                if comps.len() != n {
                    return Err(SflabError::DimensionMismatch { expected: n, found: comps.len() });
                }
                PolyVectorField::new(comps.iter().map(|t| poly_from_terms(n, t)).collect::<Result<_>>()?)
            })
            .collect::<Result<Vec<_>>>()?;
        let norm = parse_norm(&self.norm, self.fiber_dimension, n)?;
        SubFinslerStructure::new(fields, norm, self.chart_box.iter().map(|[a, b]| (*a, *b)).collect())
    }
}

fn parse_norm(spec: &NormSpec, k: usize, n: usize) -> Result<NormFamily> {
    let bad = |m: &str| SflabError::Parse(format!("norm {}: {m}", spec.kind));
    let kind = match spec.kind.as_str() {
        "lp" => {
            let p = match &spec.params["p"] {
                Value::Number(x) => x.as_f64().ok_or_else(|| bad("p is not a number"))?,
                Value::String(s) if s == "inf" || s == "infinity" => f64::INFINITY,
                _ => return Err(bad("missing exponent p")),
            };
            NormKind::Lp { p }
        }
        "quadratic" => {
            let rows: Vec<Vec<Vec<TermSpec>>> =
                serde_json::from_value(spec.params["matrix"].clone()).map_err(|e| bad(&e.to_string()))?;
            let matrix = rows
                .iter()
                .map(|r| r.iter().map(|t| poly_from_terms(n, t)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            NormKind::Quadratic { matrix }
        }
        "polytope" => {
            let support_vectors: Vec<Vec<f64>> =
                serde_json::from_value(spec.params["support_vectors"].clone()).map_err(|e| bad(&e.to_string()))?;
            let smoothing = spec.params["smoothing"].as_f64().unwrap_or(0.0);
            NormKind::Polytope { support_vectors, smoothing }
        }
        other => return Err(SflabError::Parse(format!("unknown norm kind {other:?}"))),
    };
    NormFamily::new(k, kind)
}
