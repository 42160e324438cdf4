//! JSON wire formats. Every top-level document carries `"schema": 1`.

use std::str::FromStr;
use std::sync::Arc;

use num_rational::BigRational;
use num_traits::ToPrimitive;
use serde::{Deserialize, Deserializer, Serialize};

use crate::diffusion::PathSample;
use crate::metric::{Bijection, FiniteMetricSpace};
use crate::paths::{GridPath, GridPathMeasure, TimeGrid};
use crate::{Error, Result};

pub const SCHEMA: u32 = 1;

fn schema_v1() -> u32 {
    SCHEMA
}

fn check_schema(found: u32) -> Result<()> {
    if found == SCHEMA {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "unsupported schema {found}, expected {SCHEMA}"
        )))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum Label {
    Text(String),
    Int(i64),
    Float(f64),
}

impl From<Label> for String {
    fn from(l: Label) -> String {
        match l {
            Label::Text(s) => s,
            Label::Int(i) => i.to_string(),
            Label::Float(x) => x.to_string(),
        }
    }
}

/// `{ "schema": 1, "points": [...], "dist": [[...]] }`
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpaceWire {
    #[serde(default = "schema_v1")]
    schema: u32,
    points: Vec<Label>,
    dist: Vec<Vec<f64>>,
}

impl TryFrom<SpaceWire> for FiniteMetricSpace {
    type Error = Error;
    fn try_from(w: SpaceWire) -> Result<Self> {
        check_schema(w.schema)?;
        FiniteMetricSpace::new(w.points.into_iter().map(String::from).collect(), w.dist)
    }
}

impl From<FiniteMetricSpace> for SpaceWire {
    fn from(s: FiniteMetricSpace) -> Self {
        SpaceWire {
            schema: SCHEMA,
            points: s.labels().iter().cloned().map(Label::Text).collect(),
            dist: s.rows(),
        }
    }
}

/// A weight given either as a number or as an exact `"p/q"` string.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightWire {
    Float(f64),
    Exact(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AtomWire {
    pub path: Vec<usize>,
    pub w: WeightWire,
}

/// `{ "schema": 1, "space": {...}, "grid": {"T": , "m": }, "atoms": [{"path": [...], "w": }] }`
///
/// When every weight is a string the measure keeps exact rational weights;
/// otherwise all weights are read as floats.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureWire {
    #[serde(default = "schema_v1")]
    schema: u32,
    space: FiniteMetricSpace,
    grid: TimeGrid,
    atoms: Vec<AtomWire>,
}

pub fn parse_rational(s: &str) -> Result<BigRational> {
    let t = s.trim();
    BigRational::from_str(t)
        .or_else(|_| {
            // plain decimals such as "0.25"
            t.parse::<f64>()
                .ok()
                .and_then(BigRational::from_float)
                .ok_or(())
        })
        .map_err(|_| Error::InvalidMeasure(format!("cannot parse weight {s:?}")))
}

impl TryFrom<MeasureWire> for GridPathMeasure {
    type Error = Error;
    fn try_from(w: MeasureWire) -> Result<Self> {
        check_schema(w.schema)?;
        let grid = TimeGrid::new(w.grid.horizon, w.grid.steps)?;
        let space = Arc::new(w.space);
        let all_exact = w.atoms.iter().all(|a| matches!(a.w, WeightWire::Exact(_)));
        if all_exact {
            let atoms = w
                .atoms
                .into_iter()
                .map(|a| match a.w {
                    WeightWire::Exact(s) => Ok((GridPath(a.path), parse_rational(&s)?)),
                    WeightWire::Float(_) => unreachable!("checked above"),
                })
                .collect::<Result<Vec<_>>>()?;
            GridPathMeasure::new_exact(space, grid, atoms)
        } else {
            let atoms = w
                .atoms
                .into_iter()
                .map(|a| {
                    let x = match a.w {
                        WeightWire::Float(x) => x,
                        WeightWire::Exact(s) => parse_rational(&s)?.to_f64().unwrap_or(f64::NAN),
                    };
                    Ok((GridPath(a.path), x))
                })
                .collect::<Result<Vec<_>>>()?;
            GridPathMeasure::new(space, grid, atoms)
        }
    }
}

impl From<GridPathMeasure> for MeasureWire {
    fn from(m: GridPathMeasure) -> Self {
        let atoms = match m.exact_weights() {
            Some(exact) => m
                .paths()
                .iter()
                .zip(exact)
                .map(|(p, w)| AtomWire {
                    path: p.0.clone(),
                    w: WeightWire::Exact(w.to_string()),
                })
                .collect(),
            None => m
                .paths()
                .iter()
                .zip(m.weights())
                .map(|(p, &w)| AtomWire {
                    path: p.0.clone(),
                    w: WeightWire::Float(w),
                })
                .collect(),
        };
        MeasureWire {
            schema: SCHEMA,
            space: (**m.space()).clone(),
            grid: *m.grid(),
            atoms,
        }
    }
}

/// `{ "schema": 1, "assignment": [...], "source"?: space, "target"?: space }`
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapWire {
    #[serde(default = "schema_v1")]
    pub schema: u32,
    pub assignment: Bijection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<FiniteMetricSpace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<FiniteMetricSpace>,
}

/// Accepts either a bare index array or a map object.
pub(crate) fn deserialize_bijection<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Bijection, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Either {
        Bare(Vec<usize>),
        Wrapped { assignment: Vec<usize> },
    }
    let images = match Either::deserialize(d)? {
        Either::Bare(v) => v,
        Either::Wrapped { assignment } => assignment,
    };
    Bijection::new(images).map_err(serde::de::Error::custom)
}

fn deserialize_bijections<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Bijection>, D::Error> {
    #[derive(Deserialize)]
    struct One(#[serde(deserialize_with = "deserialize_bijection")] Bijection);
    Ok(Vec::<One>::deserialize(d)?.into_iter().map(|o| o.0).collect())
}

/// `{ "schema": 1, "map": [...] | {"assignment": [...]}, "eps": , "delta": }`
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateWire {
    #[serde(default = "schema_v1")]
    pub schema: u32,
    #[serde(deserialize_with = "deserialize_bijection")]
    pub map: Bijection,
    pub eps: f64,
    pub delta: f64,
}

impl TryFrom<CertificateWire> for crate::lp::IsoCertificate {
    type Error = Error;
    fn try_from(w: CertificateWire) -> Result<Self> {
        check_schema(w.schema)?;
        Ok(crate::lp::IsoCertificate {
            map: w.map,
            eps: w.eps,
            delta: w.delta,
        })
    }
}

impl From<crate::lp::IsoCertificate> for CertificateWire {
    fn from(c: crate::lp::IsoCertificate) -> Self {
        CertificateWire {
            schema: SCHEMA,
            map: c.map,
            eps: c.eps,
            delta: c.delta,
        }
    }
}

/// `{ "schema": 1, "maps": [[...], ...] }` or a bare list of assignments.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MapListWire {
    Wrapped {
        #[serde(default = "schema_v1")]
        schema: u32,
        #[serde(deserialize_with = "deserialize_bijections")]
        maps: Vec<Bijection>,
    },
    #[serde(deserialize_with = "deserialize_bijections")]
    Bare(Vec<Bijection>),
}

impl MapListWire {
    pub fn into_maps(self) -> Result<Vec<Bijection>> {
        match self {
            MapListWire::Wrapped { schema, maps } => {
                check_schema(schema)?;
                Ok(maps)
            }
            MapListWire::Bare(maps) => Ok(maps),
        }
    }
}

/// `{ "schema": 1, "spaces": [...], "links": [...], "defects": [...], "tail": }`
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CauchyWire {
    #[serde(default = "schema_v1")]
    pub schema: u32,
    pub spaces: Vec<FiniteMetricSpace>,
    #[serde(deserialize_with = "deserialize_bijections")]
    pub links: Vec<Bijection>,
    pub defects: Vec<f64>,
    #[serde(default)]
    pub tail: f64,
}

impl TryFrom<CauchyWire> for crate::metric::CauchyInput {
    type Error = Error;
    fn try_from(w: CauchyWire) -> Result<Self> {
        check_schema(w.schema)?;
        Ok(crate::metric::CauchyInput {
            spaces: w.spaces,
            links: w.links,
            defects: w.defects,
            tail: w.tail,
        })
    }
}

/// `{ "schema": 1, "space": {...}, "grid": {...}, "paths": [[...], ...] }`
///
/// Raw sampled paths in sampling order, before any merging into a measure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleWire {
    #[serde(default = "schema_v1")]
    schema: u32,
    space: FiniteMetricSpace,
    grid: TimeGrid,
    paths: Vec<GridPath>,
}

impl TryFrom<SampleWire> for PathSample {
    type Error = Error;
    fn try_from(w: SampleWire) -> Result<Self> {
        check_schema(w.schema)?;
        let grid = TimeGrid::new(w.grid.horizon, w.grid.steps)?;
        if w.paths.is_empty() {
            return Err(Error::InvalidMeasure("no sampled paths".into()));
        }
        for p in &w.paths {
            p.check(&w.space, &grid)?;
        }
        Ok(PathSample {
            space: Arc::new(w.space),
            grid,
            paths: w.paths,
        })
    }
}

impl From<PathSample> for SampleWire {
    fn from(s: PathSample) -> Self {
        SampleWire {
            schema: SCHEMA,
            space: (*s.space).clone(),
            grid: s.grid,
            paths: s.paths,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn space_round_trip() {
        let text = r#"{"points": ["a", "b", 3], "dist": [[0,1,2],[1,0,1.5],[2,1.5,0]]}"#;
        let s: FiniteMetricSpace = serde_json::from_str(text).unwrap();
        assert_eq!(s.labels(), &["a", "b", "3"]);
        let back = serde_json::to_value(&s).unwrap();
        assert_eq!(back["schema"], 1);
        let again: FiniteMetricSpace = serde_json::from_value(back).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn rejects_other_schema() {
        let text = r#"{"schema": 2, "points": ["a"], "dist": [[0]]}"#;
        assert!(serde_json::from_str::<FiniteMetricSpace>(text).is_err());
    }

    #[test]
    fn exact_and_float_measures() {
        let space = r#"{"points": ["a", "b"], "dist": [[0,1],[1,0]]}"#;
        let exact = format!(
            r#"{{"space": {space}, "grid": {{"T": 1, "m": 1}}, "atoms": [{{"path": [0,1], "w": "1/3"}}, {{"path": [1,1], "w": "2/3"}}]}}"#
        );
        let m: GridPathMeasure = serde_json::from_str(&exact).unwrap();
        assert!(m.exact_weights().is_some());
        let round: GridPathMeasure = serde_json::from_value(serde_json::to_value(&m).unwrap()).unwrap();
        assert_eq!(round, m);

        let float = format!(
            r#"{{"space": {space}, "grid": {{"T": 1, "m": 1}}, "atoms": [{{"path": [0,1], "w": 0.25}}, {{"path": [1,1], "w": "3/4"}}]}}"#
        );
        let m: GridPathMeasure = serde_json::from_str(&float).unwrap();
        assert!(m.exact_weights().is_none());
        assert_eq!(m.weights(), &[0.25, 0.75]);
    }

    #[test]
    fn certificate_forms() {
        let bare: CertificateWire = serde_json::from_str(r#"{"map": [1,0], "eps": 0, "delta": 0.5}"#).unwrap();
        let wrapped: CertificateWire =
            serde_json::from_str(r#"{"map": {"assignment": [1,0]}, "eps": 0, "delta": 0.5}"#).unwrap();
        assert_eq!(bare.map, wrapped.map);
        assert!(serde_json::from_str::<CertificateWire>(r#"{"map": [0,0], "eps": 0, "delta": 0}"#).is_err());
    }
}
