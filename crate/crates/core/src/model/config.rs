//! Configuration documents (TOML or JSON) to sampled problem specifications.
//!
//! Every coefficient is either `{ family = "...", params = {...} }` or
//! `{ table = [...] }`. Omitted coefficients are zero. Shape literals are a bare
//! number for 1×1, a list for vectors, and a list of rows for matrices.

use serde_json::{Map, Value};
use thiserror::Error;

use super::{
    zero_problem, ChannelCoeffs, Dims, JumpMeasure, MarkCoeffs, ModelError, ProblemSpec, TimeGrid,
};
use crate::dense::symmetrize;
use crate::field::{NodeSeries, TriangularField};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("could not parse configuration: {0}")]
    Parse(String),
    #[error("`{path}` is required")]
    Missing { path: String },
    #[error("`{path}` must be {expected}")]
    Type { path: String, expected: String },
    #[error("`{path}` has shape {got}, expected {expected}")]
    Shape {
        path: String,
        expected: String,
        got: String,
    },
    #[error("`{path}` is {value}, must be non-negative")]
    Negative { path: String, value: f64 },
    #[error("`{path}` contains a non-finite value")]
    NonFinite { path: String },
    #[error("`{path}` names unknown family `{name}`")]
    UnknownFamily { path: String, name: String },
    #[error("`{path}`: {reason}")]
    Invalid { path: String, reason: String },
}

impl ConfigError {
    /// Key path of the offending entry, when there is one.
    pub fn path(&self) -> Option<&str> {
        match self {
            ConfigError::Parse(_) => None,
            ConfigError::Missing { path }
            | ConfigError::Type { path, .. }
            | ConfigError::Shape { path, .. }
            | ConfigError::Negative { path, .. }
            | ConfigError::NonFinite { path }
            | ConfigError::UnknownFamily { path, .. }
            | ConfigError::Invalid { path, .. } => Some(path),
        }
    }
}

type Res<X> = Result<X, ConfigError>;

/// Parses TOML, or JSON when the first non-blank character is `{`.
///
/// Non-finite TOML floats survive as strings so they can be rejected by path.
pub fn parse_document(text: &str) -> Res<Value> {
    if text.trim_start().starts_with('{') {
        return serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()));
    }
    let t: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    Ok(toml_to_json(toml::Value::Table(t)))
}

fn toml_to_json(v: toml::Value) -> Value {
    match v {
        toml::Value::String(s) => Value::String(s),
        toml::Value::Integer(i) => Value::from(i),
        toml::Value::Float(f) => match serde_json::Number::from_f64(f) {
            Some(n) => Value::Number(n),
            None => Value::String(f.to_string()),
        },
        toml::Value::Boolean(b) => Value::Bool(b),
        toml::Value::Datetime(d) => Value::String(d.to_string()),
        toml::Value::Array(a) => Value::Array(a.into_iter().map(toml_to_json).collect()),
        toml::Value::Table(t) => {
            Value::Object(t.into_iter().map(|(k, v)| (k, toml_to_json(v))).collect())
        }
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn idx(path: &str, i: usize) -> String {
    format!("{path}[{i}]")
}

fn object<'a>(v: &'a Value, path: &str) -> Res<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| ConfigError::Type {
        path: path.into(),
        expected: "a table".into(),
    })
}

fn get<'a>(obj: &'a Map<String, Value>, path: &str, key: &str) -> Res<&'a Value> {
    obj.get(key).ok_or_else(|| ConfigError::Missing {
        path: join(path, key),
    })
}

fn reject_unknown(obj: &Map<String, Value>, path: &str, allowed: &[&str]) -> Res<()> {
    for k in obj.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(ConfigError::Invalid {
                path: join(path, k),
                reason: "unknown key".into(),
            });
        }
    }
    Ok(())
}

fn number(v: &Value, path: &str) -> Res<f64> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| ConfigError::Type {
            path: path.into(),
            expected: "a number".into(),
        }),
        Value::String(s) => match s.trim().parse::<f64>() {
            Ok(x) if !x.is_finite() => Err(ConfigError::NonFinite { path: path.into() }),
            _ => Err(ConfigError::Type {
                path: path.into(),
                expected: "a number".into(),
            }),
        },
        _ => Err(ConfigError::Type {
            path: path.into(),
            expected: "a number".into(),
        }),
    }
}

fn finite(v: &Value, path: &str) -> Res<f64> {
    let x = number(v, path)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(ConfigError::NonFinite { path: path.into() })
    }
}

fn count(v: &Value, path: &str) -> Res<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| ConfigError::Type {
            path: path.into(),
            expected: "a non-negative integer".into(),
        })
}

/// Reads a `rows × cols` shape literal into row-major order.
fn literal(v: &Value, path: &str, rows: usize, cols: usize) -> Res<Vec<f64>> {
    let shape = |got: String| ConfigError::Shape {
        path: path.into(),
        expected: format!("{rows}x{cols}"),
        got,
    };
    match v {
        Value::Array(items) => {
            let nested = items.iter().any(Value::is_array);
            if !nested {
                if rows != 1 && cols != 1 {
                    return Err(shape(format!("flat list of {}", items.len())));
                }
                if items.len() != rows * cols {
                    return Err(shape(format!("list of {}", items.len())));
                }
                return items
                    .iter()
                    .enumerate()
                    .map(|(i, x)| finite(x, &idx(path, i)))
                    .collect();
            }
            if items.len() != rows {
                return Err(shape(format!("{} rows", items.len())));
            }
            let mut out = Vec::with_capacity(rows * cols);
            for (i, row) in items.iter().enumerate() {
                let rp = idx(path, i);
                let row = match row {
                    Value::Array(r) => r.as_slice(),
                    other if cols == 1 => std::slice::from_ref(other),
                    _ => return Err(shape(format!("row {i} is not a list"))),
                };
                if row.len() != cols {
                    return Err(shape(format!("row {i} of length {}", row.len())));
                }
                for (j, x) in row.iter().enumerate() {
                    out.push(finite(x, &idx(&rp, j))?);
                }
            }
            Ok(out)
        }
        other => {
            if rows * cols != 1 {
                return Err(shape("a scalar".into()));
            }
            Ok(vec![finite(other, path)?])
        }
    }
}

/// Which time drives a two-argument weight.
#[derive(Clone, Copy)]
enum Arg {
    T,
    S,
    Lag,
}

enum Family {
    Constant,
    Affine(Vec<f64>),
    ExpDiscount(f64),
    Hyperbolic(f64),
    QuasiHyperbolic {
        lambda: f64,
        delta1: f64,
        delta2: f64,
    },
}

struct ParamSpec {
    value: Vec<f64>,
    family: Family,
    arg: Arg,
}

impl ParamSpec {
    fn eval(&self, x: f64, out: &mut [f64]) {
        let w = match self.family {
            Family::Constant | Family::Affine(_) => 1.0,
            Family::ExpDiscount(delta) => (-delta * x).exp(),
            Family::Hyperbolic(kappa) => 1.0 / (1.0 + kappa * x),
            Family::QuasiHyperbolic {
                lambda,
                delta1,
                delta2,
            } => lambda * (-delta1 * x).exp() + (1.0 - lambda) * (-delta2 * x).exp(),
        };
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.value[k] * w;
            if let Family::Affine(slope) = &self.family {
                *o += slope[k] * x;
            }
        }
    }
}

fn parse_family(
    obj: &Map<String, Value>,
    path: &str,
    rows: usize,
    cols: usize,
    two_arg: bool,
) -> Res<ParamSpec> {
    let name_path = join(path, "family");
    let name = get(obj, path, "family")?
        .as_str()
        .ok_or_else(|| ConfigError::Type {
            path: name_path.clone(),
            expected: "a string".into(),
        })?;
    let ppath = join(path, "params");
    let empty = Map::new();
    let params = match obj.get("params") {
        Some(p) => object(p, &ppath)?,
        None => &empty,
    };
    let scalar = |key: &str| finite(get(params, &ppath, key)?, &join(&ppath, key));
    let (family, keys): (Family, &[&str]) = match name {
        "constant" => (Family::Constant, &["value"]),
        "affine" => (
            Family::Affine(literal(
                get(params, &ppath, "slope")?,
                &join(&ppath, "slope"),
                rows,
                cols,
            )?),
            &["value", "slope"],
        ),
        "exp_discount" => (Family::ExpDiscount(scalar("delta")?), &["value", "delta"]),
        "hyperbolic" => (Family::Hyperbolic(scalar("kappa")?), &["value", "kappa"]),
        "quasi_hyperbolic" => (
            Family::QuasiHyperbolic {
                lambda: scalar("lambda")?,
                delta1: scalar("delta1")?,
                delta2: scalar("delta2")?,
            },
            &["value", "lambda", "delta1", "delta2"],
        ),
        other => {
            return Err(ConfigError::UnknownFamily {
                path: name_path,
                name: other.to_string(),
            })
        }
    };
    let mut allowed = keys.to_vec();
    if two_arg {
        allowed.push("arg");
    }
    reject_unknown(params, &ppath, &allowed)?;
    let value = literal(
        get(params, &ppath, "value")?,
        &join(&ppath, "value"),
        rows,
        cols,
    )?;
    let arg = match params.get("arg") {
        None => Arg::Lag,
        Some(a) => match a.as_str() {
            Some("t") => Arg::T,
            Some("s") => Arg::S,
            Some("lag") => Arg::Lag,
            _ => {
                return Err(ConfigError::Invalid {
                    path: join(&ppath, "arg"),
                    reason: "must be one of \"t\", \"s\", \"lag\"".into(),
                })
            }
        },
    };
    Ok(ParamSpec { value, family, arg })
}

fn convert<T: Scalar>(src: &[f64], dst: &mut [T], path: &str) -> Res<()> {
    for (d, &s) in dst.iter_mut().zip(src) {
        if !s.is_finite() {
            return Err(ConfigError::NonFinite { path: path.into() });
        }
        let v = T::from_f64(s).filter(|v| v.is_finite());
        *d = v.ok_or_else(|| ConfigError::NonFinite { path: path.into() })?;
    }
    Ok(())
}

fn node_series<T: Scalar>(
    v: &Value,
    path: &str,
    rows: usize,
    cols: usize,
    grid: &TimeGrid<T>,
) -> Res<NodeSeries<T>> {
    let obj = object(v, path)?;
    let nodes = grid.nodes();
    let mut out = NodeSeries::zeros(rows, cols, nodes);
    if let Some(table) = obj.get("table") {
        reject_unknown(obj, path, &["table"])?;
        let tpath = join(path, "table");
        let items = table.as_array().ok_or_else(|| ConfigError::Type {
            path: tpath.clone(),
            expected: "a list".into(),
        })?;
        if items.len() != nodes {
            return Err(ConfigError::Shape {
                path: tpath,
                expected: format!("{nodes} samples"),
                got: format!("{} samples", items.len()),
            });
        }
        for (i, item) in items.iter().enumerate() {
            let p = idx(&tpath, i);
            convert(&literal(item, &p, rows, cols)?, out.at_mut(i), &p)?;
        }
        return Ok(out);
    }
    reject_unknown(obj, path, &["family", "params"])?;
    let fam = parse_family(obj, path, rows, cols, false)?;
    let mut buf = vec![0.0; rows * cols];
    for i in 0..nodes {
        fam.eval(grid.t(i).as_f64(), &mut buf);
        convert(&buf, out.at_mut(i), path)?;
    }
    Ok(out)
}

fn tri_field<T: Scalar>(
    v: &Value,
    path: &str,
    dim: usize,
    grid: &TimeGrid<T>,
) -> Res<TriangularField<T>> {
    let obj = object(v, path)?;
    let steps = grid.steps();
    let mut out = TriangularField::zeros(dim, dim, steps);
    if let Some(table) = obj.get("table") {
        reject_unknown(obj, path, &["table"])?;
        let tpath = join(path, "table");
        let rows = table.as_array().ok_or_else(|| ConfigError::Type {
            path: tpath.clone(),
            expected: "a list".into(),
        })?;
        if rows.len() != steps + 1 {
            return Err(ConfigError::Shape {
                path: tpath,
                expected: format!("{} rows", steps + 1),
                got: format!("{} rows", rows.len()),
            });
        }
        for (i, row) in rows.iter().enumerate() {
            let rp = idx(&tpath, i);
            let row = row.as_array().ok_or_else(|| ConfigError::Type {
                path: rp.clone(),
                expected: "a list".into(),
            })?;
            if row.len() != steps + 1 - i {
                return Err(ConfigError::Shape {
                    path: rp,
                    expected: format!("{} samples (s_j for j >= {i})", steps + 1 - i),
                    got: format!("{} samples", row.len()),
                });
            }
            for (k, item) in row.iter().enumerate() {
                let p = idx(&rp, k);
                convert(&literal(item, &p, dim, dim)?, out.at_mut(i, i + k), &p)?;
            }
        }
        return Ok(out);
    }
    reject_unknown(obj, path, &["family", "params"])?;
    let fam = parse_family(obj, path, dim, dim, true)?;
    let mut buf = vec![0.0; dim * dim];
    for i in 0..=steps {
        let t = grid.t(i).as_f64();
        for j in i..=steps {
            let s = grid.t(j).as_f64();
            let x = match fam.arg {
                Arg::T => t,
                Arg::S => s,
                Arg::Lag => s - t,
            };
            fam.eval(x, &mut buf);
            convert(&buf, out.at_mut(i, j), path)?;
        }
    }
    Ok(out)
}

/// A key that holds one spec or a list with one spec per channel/mark.
fn per_channel<'a>(v: &'a Value, path: &str, count: usize) -> Res<Vec<(String, &'a Value)>> {
    match v {
        Value::Array(items) => {
            if items.len() != count {
                return Err(ConfigError::Shape {
                    path: path.into(),
                    expected: format!("{count} entries"),
                    got: format!("{} entries", items.len()),
                });
            }
            Ok(items
                .iter()
                .enumerate()
                .map(|(i, x)| (idx(path, i), x))
                .collect())
        }
        other if count == 1 => Ok(vec![(path.to_string(), other)]),
        _ => Err(ConfigError::Type {
            path: path.into(),
            expected: format!("a list of {count} coefficient specs"),
        }),
    }
}

fn model_err(path: &str, e: ModelError) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        reason: e.to_string(),
    }
}

/// Samples every coefficient of a configuration document on its grid.
pub fn build_problem<T: Scalar>(doc: &Value) -> Res<ProblemSpec<T>> {
    let root = object(doc, "")?;
    reject_unknown(
        root,
        "",
        &[
            "name",
            "description",
            "dims",
            "grid",
            "jumps",
            "coeff",
            "cost",
            "x0",
        ],
    )?;

    let dobj = object(get(root, "", "dims")?, "dims")?;
    reject_unknown(dobj, "dims", &["n", "m", "d"])?;
    let n = count(get(dobj, "dims", "n")?, "dims.n")?;
    let m = count(get(dobj, "dims", "m")?, "dims.m")?;
    let d = count(get(dobj, "dims", "d")?, "dims.d")?;
    if n == 0 || m == 0 {
        return Err(ConfigError::Invalid {
            path: "dims".into(),
            reason: "n and m must be positive".into(),
        });
    }

    let gobj = object(get(root, "", "grid")?, "grid")?;
    reject_unknown(gobj, "grid", &["T", "N"])?;
    let horizon = finite(get(gobj, "grid", "T")?, "grid.T")?;
    let steps = count(get(gobj, "grid", "N")?, "grid.N")?;
    let grid = TimeGrid::new(T::lit(horizon), steps).map_err(|e| model_err("grid", e))?;

    let jumps = match root.get("jumps") {
        None => JumpMeasure::none(),
        Some(j) => {
            let jobj = object(j, "jumps")?;
            reject_unknown(jobj, "jumps", &["marks", "intensities"])?;
            let marks_v =
                get(jobj, "jumps", "marks")?
                    .as_array()
                    .ok_or_else(|| ConfigError::Type {
                        path: "jumps.marks".into(),
                        expected: "a list".into(),
                    })?;
            let rates_v = get(jobj, "jumps", "intensities")?
                .as_array()
                .ok_or_else(|| ConfigError::Type {
                    path: "jumps.intensities".into(),
                    expected: "a list".into(),
                })?;
            if marks_v.len() != rates_v.len() {
                return Err(ConfigError::Shape {
                    path: "jumps.intensities".into(),
                    expected: format!("{} entries", marks_v.len()),
                    got: format!("{} entries", rates_v.len()),
                });
            }
            let mut marks = Vec::with_capacity(marks_v.len());
            for (k, z) in marks_v.iter().enumerate() {
                let p = idx("jumps.marks", k);
                let zs: Vec<f64> = match z {
                    Value::Array(items) => items
                        .iter()
                        .enumerate()
                        .map(|(i, x)| finite(x, &idx(&p, i)))
                        .collect::<Res<_>>()?,
                    other => vec![finite(other, &p)?],
                };
                if zs.is_empty() || zs.iter().all(|&x| x == 0.0) {
                    return Err(ConfigError::Invalid {
                        path: p,
                        reason: "mark is the zero vector".into(),
                    });
                }
                if let Some(first) = marks.first().map(|f: &Vec<T>| f.len()) {
                    if first != zs.len() {
                        return Err(ConfigError::Shape {
                            path: p,
                            expected: format!("length {first}"),
                            got: format!("length {}", zs.len()),
                        });
                    }
                }
                marks.push(zs.into_iter().map(T::lit).collect());
            }
            let mut rates = Vec::with_capacity(rates_v.len());
            for (k, r) in rates_v.iter().enumerate() {
                let p = idx("jumps.intensities", k);
                let r = finite(r, &p)?;
                if r < 0.0 {
                    return Err(ConfigError::Negative { path: p, value: r });
                }
                rates.push(T::lit(r));
            }
            JumpMeasure::new(marks, rates).map_err(|e| model_err("jumps", e))?
        }
    };
    let kmarks = jumps.len();
    let mut spec = zero_problem(Dims { n, m, d }, grid, jumps);

    if let Some(c) = root.get("coeff") {
        let cobj = object(c, "coeff")?;
        reject_unknown(
            cobj,
            "coeff",
            &["A", "B", "b", "C", "D", "sigma", "E", "F", "c"],
        )?;
        let cs = &mut spec.coeffs;
        for (key, v) in cobj {
            let p = join("coeff", key);
            match key.as_str() {
                "A" => cs.a = node_series(v, &p, n, n, &grid)?,
                "B" => cs.b = node_series(v, &p, n, m, &grid)?,
                "b" => cs.drift = node_series(v, &p, n, 1, &grid)?,
                "C" | "D" | "sigma" => {
                    let (r, cc) = match key.as_str() {
                        "C" => (n, n),
                        "D" => (n, m),
                        _ => (n, 1),
                    };
                    for (j, (pj, vj)) in per_channel(v, &p, d)?.into_iter().enumerate() {
                        let s = node_series(vj, &pj, r, cc, &grid)?;
                        let ch: &mut ChannelCoeffs<T> = &mut cs.channels[j];
                        match key.as_str() {
                            "C" => ch.c = s,
                            "D" => ch.d = s,
                            _ => ch.sigma = s,
                        }
                    }
                }
                _ => {
                    let (r, cc) = match key.as_str() {
                        "E" => (n, n),
                        "F" => (n, m),
                        _ => (n, 1),
                    };
                    for (k, (pk, vk)) in per_channel(v, &p, kmarks)?.into_iter().enumerate() {
                        let s = node_series(vk, &pk, r, cc, &grid)?;
                        let mk: &mut MarkCoeffs<T> = &mut cs.marks[k];
                        match key.as_str() {
                            "E" => mk.e = s,
                            "F" => mk.f = s,
                            _ => mk.c = s,
                        }
                    }
                }
            }
        }
    }

    if let Some(c) = root.get("cost") {
        let cobj = object(c, "cost")?;
        reject_unknown(cobj, "cost", &["Q", "Qbar", "R", "G", "Gbar", "mu1", "mu2"])?;
        let ks = &mut spec.costs;
        for (key, v) in cobj {
            let p = join("cost", key);
            match key.as_str() {
                "Q" => ks.q = tri_field(v, &p, n, &grid)?,
                "Qbar" => ks.qbar = tri_field(v, &p, n, &grid)?,
                "R" => ks.r = tri_field(v, &p, m, &grid)?,
                "G" => ks.g = node_series(v, &p, n, n, &grid)?,
                "Gbar" => ks.gbar = node_series(v, &p, n, n, &grid)?,
                "mu1" => ks.mu1 = node_series(v, &p, n, n, &grid)?,
                _ => ks.mu2 = node_series(v, &p, n, 1, &grid)?,
            }
        }
        for i in 0..=steps {
            symmetrize(ks.g.at_mut(i), n);
            symmetrize(ks.gbar.at_mut(i), n);
            for j in i..=steps {
                symmetrize(ks.q.at_mut(i, j), n);
                symmetrize(ks.qbar.at_mut(i, j), n);
                symmetrize(ks.r.at_mut(i, j), m);
            }
        }
    }

    if let Some(x) = root.get("x0") {
        let mut x0 = vec![T::zero(); n];
        convert(&literal(x, "x0", n, 1)?, &mut x0, "x0")?;
        spec.x0 = x0;
    }

    spec.validate().map_err(|e| model_err("", e))?;
    Ok(spec)
}
