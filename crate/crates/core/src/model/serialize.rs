//! Spec to configuration document, with every coefficient written as a table.

use serde_json::{json, Map, Number, Value};

use super::ProblemSpec;
use crate::field::{NodeSeries, TriangularField};
use crate::scalar::Scalar;

fn num<T: Scalar>(x: T) -> Value {
    Value::Number(Number::from_f64(x.as_f64()).expect("spec samples are finite"))
}

fn literal<T: Scalar>(block: &[T], rows: usize, cols: usize) -> Value {
    if rows * cols == 1 {
        return num(block[0]);
    }
    if cols == 1 || rows == 1 {
        return Value::Array(block.iter().map(|&x| num(x)).collect());
    }
    Value::Array(
        block
            .chunks(cols)
            .map(|r| Value::Array(r.iter().map(|&x| num(x)).collect()))
            .collect(),
    )
}

fn series<T: Scalar>(s: &NodeSeries<T>) -> Value {
    let rows: Vec<Value> = (0..s.nodes())
        .map(|i| literal(s.at(i), s.rows(), s.cols()))
        .collect();
    json!({ "table": rows })
}

fn field<T: Scalar>(f: &TriangularField<T>) -> Value {
    let n = f.steps();
    let rows: Vec<Value> = (0..=n)
        .map(|i| {
            Value::Array(
                (i..=n)
                    .map(|j| literal(f.at(i, j), f.rows(), f.cols()))
                    .collect(),
            )
        })
        .collect();
    json!({ "table": rows })
}

/// Configuration document that rebuilds `spec` bit for bit.
pub fn spec_to_document<T: Scalar>(spec: &ProblemSpec<T>) -> Value {
    let c = &spec.coeffs;
    let k = &spec.costs;
    let mut coeff = Map::new();
    coeff.insert("A".into(), series(&c.a));
    coeff.insert("B".into(), series(&c.b));
    coeff.insert("b".into(), series(&c.drift));
    if spec.dims.d > 0 {
        coeff.insert(
            "C".into(),
            Value::Array(c.channels.iter().map(|ch| series(&ch.c)).collect()),
        );
        coeff.insert(
            "D".into(),
            Value::Array(c.channels.iter().map(|ch| series(&ch.d)).collect()),
        );
        coeff.insert(
            "sigma".into(),
            Value::Array(c.channels.iter().map(|ch| series(&ch.sigma)).collect()),
        );
    }
    if !c.marks.is_empty() {
        coeff.insert(
            "E".into(),
            Value::Array(c.marks.iter().map(|mk| series(&mk.e)).collect()),
        );
        coeff.insert(
            "F".into(),
            Value::Array(c.marks.iter().map(|mk| series(&mk.f)).collect()),
        );
        coeff.insert(
            "c".into(),
            Value::Array(c.marks.iter().map(|mk| series(&mk.c)).collect()),
        );
    }
    let marks: Vec<Value> = spec
        .jumps
        .marks()
        .iter()
        .map(|z| Value::Array(z.iter().map(|&x| num(x)).collect()))
        .collect();
    let rates: Vec<Value> = spec.jumps.intensities().iter().map(|&x| num(x)).collect();
    json!({
        "dims": { "n": spec.dims.n, "m": spec.dims.m, "d": spec.dims.d },
        "grid": { "T": num(spec.grid.horizon()), "N": spec.grid.steps() },
        "jumps": { "marks": marks, "intensities": rates },
        "coeff": Value::Object(coeff),
        "cost": {
            "Q": field(&k.q),
            "Qbar": field(&k.qbar),
            "R": field(&k.r),
            "G": series(&k.g),
            "Gbar": series(&k.gbar),
            "mu1": series(&k.mu1),
            "mu2": series(&k.mu2),
        },
        "x0": literal(&spec.x0, spec.dims.n, 1),
    })
}

/// JSON text of [`spec_to_document`] with 17 significant digits per float.
pub fn write_spec<T: Scalar>(spec: &ProblemSpec<T>) -> String {
    crate::io::to_json(&spec_to_document(spec))
}
