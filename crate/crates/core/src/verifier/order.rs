//! Order of the first- and second-order variational processes in the window width.

use rayon::prelude::*;
use serde::Serialize;

use super::{ladder_multiples, ols_slope, VerifyError};
use crate::dense::{axpy, gemm_acc};
use crate::simulator::{PathRng, StepNoise};
use crate::Problem;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanCheck {
    pub epsilon: f64,
    pub node: usize,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderReport {
    pub node: usize,
    pub v: Vec<f64>,
    pub epsilon: Vec<f64>,
    /// `E sup|y^ε|²` and its standard error, per ε.
    pub sup_y2: Vec<f64>,
    pub sup_y2_stderr: Vec<f64>,
    pub sup_z2: Vec<f64>,
    pub sup_z2_stderr: Vec<f64>,
    /// Slope of `log E sup|y|²` on `log ε`; absent when `y ≡ 0`.
    pub slope_y: Option<f64>,
    pub slope_z: Option<f64>,
    /// `E y^ε(s) = 0` within 3 standard errors at the window end and at `T`.
    pub mean_checks: Vec<MeanCheck>,
    pub mean_zero_pass: bool,
    pub paths: usize,
    pub seed: u64,
    pub notes: Vec<String>,
}

impl OrderReport {
    pub fn csv(&self) -> String {
        crate::io::csv_table(
            &[
                "epsilon",
                "sup_y2",
                "sup_y2_stderr",
                "sup_z2",
                "sup_z2_stderr",
            ],
            (0..self.epsilon.len()).map(|k| {
                vec![
                    self.epsilon[k],
                    self.sup_y2[k],
                    self.sup_y2_stderr[k],
                    self.sup_z2[k],
                    self.sup_z2_stderr[k],
                ]
            }),
        )
    }
}

const BLOCK: usize = 512;

/// Simulates `y^ε` and `z^ε` from node `t_index` on common random numbers for every ε.
///
/// Both are driven by the open-loop coefficients; a feedback law does not enter.
pub fn variation_order_test(
    spec: &Problem,
    t_index: usize,
    v: &[f64],
    ladder: &[f64],
    paths: usize,
    seed: u64,
) -> Result<OrderReport, VerifyError> {
    let h = spec.grid.h();
    let steps = spec.grid.steps();
    let (n, m, d, kk) = (spec.dims.n, spec.dims.m, spec.dims.d, spec.jumps.len());
    if t_index >= steps {
        return Err(VerifyError::Request(format!(
            "node {t_index} must be below N = {steps}"
        )));
    }
    if v.len() != m {
        return Err(VerifyError::Request(format!(
            "v has {} entries, m = {m}",
            v.len()
        )));
    }
    if paths < 2 {
        return Err(VerifyError::Request("at least two paths are needed".into()));
    }
    let ks = ladder_multiples(h, t_index, steps, ladder)?;
    let ne = ks.len();
    let eps: Vec<f64> = ks.iter().map(|&k| k as f64 * h).collect();
    // per ε: checks at window end and at T
    let checks: Vec<[usize; 2]> = ks.iter().map(|&k| [t_index + k, steps]).collect();
    let rates = spec.jumps.intensities().to_vec();
    let cf = &spec.coeffs;
    let sq = h.sqrt();

    // layout: per ε: sup y², its square, sup z², its square, then 2 checks × n × (sum, sumsq)
    let per_eps = 4 + 4 * n;
    let width = ne * per_eps;
    let blocks: Vec<std::ops::Range<usize>> = (0..paths)
        .step_by(BLOCK)
        .map(|a| a..(a + BLOCK).min(paths))
        .collect();
    let partial: Vec<Result<Vec<f64>, VerifyError>> = blocks
        .par_iter()
        .map(|r| {
            let mut sums = vec![0.0; width];
            let mut noise = StepNoise::new(d, kk);
            let mut ys = vec![vec![0.0; n]; ne];
            let mut zs = vec![vec![0.0; n]; ne];
            let mut inc = vec![0.0; n];
            let mut src = vec![0.0; n];
            for p in r.clone() {
                let mut rng = PathRng::new(seed, p, &rates, h);
                ys.iter_mut()
                    .chain(zs.iter_mut())
                    .for_each(|x| x.iter_mut().for_each(|v| *v = 0.0));
                let mut sup = vec![[0.0f64; 2]; ne];
                for i in t_index..steps {
                    rng.draw(&mut noise);
                    for e in 0..ne {
                        let on = i < t_index + ks[e];
                        // y
                        let y = &mut ys[e];
                        inc.iter_mut().for_each(|v| *v = 0.0);
                        gemm_acc(&mut inc, cf.a.at(i), y, n, n, 1, h);
                        for (ch, &xi) in cf.channels.iter().zip(&noise.normals) {
                            src.iter_mut().for_each(|v| *v = 0.0);
                            gemm_acc(&mut src, ch.c.at(i), y, n, n, 1, 1.0);
                            if on {
                                gemm_acc(&mut src, ch.d.at(i), v, n, m, 1, 1.0);
                            }
                            axpy(&mut inc, sq * xi, &src);
                        }
                        for ((mk, &cnt), &th) in cf.marks.iter().zip(&noise.counts).zip(&rates) {
                            if th == 0.0 {
                                continue;
                            }
                            src.iter_mut().for_each(|v| *v = 0.0);
                            gemm_acc(&mut src, mk.e.at(i), y, n, n, 1, 1.0);
                            if on {
                                gemm_acc(&mut src, mk.f.at(i), v, n, m, 1, 1.0);
                            }
                            axpy(&mut inc, cnt - th * h, &src);
                        }
                        axpy(y, 1.0, &inc);
                        // z
                        let z = &mut zs[e];
                        inc.iter_mut().for_each(|v| *v = 0.0);
                        gemm_acc(&mut inc, cf.a.at(i), z, n, n, 1, h);
                        if on {
                            gemm_acc(&mut inc, cf.b.at(i), v, n, m, 1, h);
                        }
                        for (ch, &xi) in cf.channels.iter().zip(&noise.normals) {
                            gemm_acc(&mut inc, ch.c.at(i), z, n, n, 1, sq * xi);
                        }
                        for ((mk, &cnt), &th) in cf.marks.iter().zip(&noise.counts).zip(&rates) {
                            if th != 0.0 {
                                gemm_acc(&mut inc, mk.e.at(i), z, n, n, 1, cnt - th * h);
                            }
                        }
                        axpy(z, 1.0, &inc);
                        let ny: f64 = ys[e].iter().map(|v| v * v).sum();
                        let nz: f64 = zs[e].iter().map(|v| v * v).sum();
                        if !(ny.is_finite() && nz.is_finite()) {
                            return Err(VerifyError::Sim(crate::simulator::SimError::NonFinite {
                                path: p,
                                step: i,
                            }));
                        }
                        sup[e][0] = sup[e][0].max(ny);
                        sup[e][1] = sup[e][1].max(nz);
                        for (c, &node) in checks[e].iter().enumerate() {
                            if node == i + 1 {
                                let o = e * per_eps + 4 + c * 2 * n;
                                for (q, &yv) in ys[e].iter().enumerate() {
                                    sums[o + 2 * q] += yv;
                                    sums[o + 2 * q + 1] += yv * yv;
                                }
                            }
                        }
                    }
                }
                for e in 0..ne {
                    let o = e * per_eps;
                    sums[o] += sup[e][0];
                    sums[o + 1] += sup[e][0] * sup[e][0];
                    sums[o + 2] += sup[e][1];
                    sums[o + 3] += sup[e][1] * sup[e][1];
                }
            }
            Ok(sums)
        })
        .collect();
    let mut total = vec![0.0; width];
    for b in partial {
        axpy(&mut total, 1.0, &b?);
    }
    let pf = paths as f64;
    let moments = |s: f64, s2: f64| {
        let mean = s / pf;
        let var = ((s2 / pf - mean * mean) * pf / (pf - 1.0)).max(0.0);
        (mean, (var / pf).sqrt())
    };
    let mut rep = OrderReport {
        node: t_index,
        v: v.to_vec(),
        epsilon: eps.clone(),
        sup_y2: Vec::new(),
        sup_y2_stderr: Vec::new(),
        sup_z2: Vec::new(),
        sup_z2_stderr: Vec::new(),
        slope_y: None,
        slope_z: None,
        mean_checks: Vec::new(),
        mean_zero_pass: true,
        paths,
        seed,
        notes: Vec::new(),
    };
    for e in 0..ne {
        let o = e * per_eps;
        let (my, sy) = moments(total[o], total[o + 1]);
        let (mz, sz) = moments(total[o + 2], total[o + 3]);
        rep.sup_y2.push(my);
        rep.sup_y2_stderr.push(sy);
        rep.sup_z2.push(mz);
        rep.sup_z2_stderr.push(sz);
        for (c, &node) in checks[e].iter().enumerate() {
            let oc = o + 4 + c * 2 * n;
            let (mean, stderr): (Vec<f64>, Vec<f64>) = (0..n)
                .map(|q| moments(total[oc + 2 * q], total[oc + 2 * q + 1]))
                .unzip();
            let pass = mean
                .iter()
                .zip(&stderr)
                .all(|(m, s)| m.abs() <= 3.0 * s || *m == 0.0);
            rep.mean_zero_pass &= pass;
            rep.mean_checks.push(MeanCheck {
                epsilon: eps[e],
                node,
                mean,
                stderr,
                pass,
            });
        }
    }
    let log_eps: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let slope = |vals: &[f64], name: &str, notes: &mut Vec<String>| {
        if ne < 2 {
            notes.push(format!("{name}: one ladder entry, no slope"));
            None
        } else if vals.iter().all(|&v| v == 0.0) {
            notes.push(format!(
                "{name} vanishes identically: no source term, slope skipped"
            ));
            None
        } else if vals.iter().any(|&v| !(v > 0.0)) {
            notes.push(format!("{name} is zero for some ε, slope skipped"));
            None
        } else {
            Some(ols_slope(
                &log_eps,
                &vals.iter().map(|v| v.ln()).collect::<Vec<_>>(),
            ))
        }
    };
    rep.slope_y = slope(&rep.sup_y2.clone(), "y", &mut rep.notes);
    rep.slope_z = slope(&rep.sup_z2.clone(), "z", &mut rep.notes);
    Ok(rep)
}
