//! Self-check suites run by `ghyp check` and the acceptance target: geometry
//! identities, finite-difference gradients of every primitive and layer, and
//! metric oracles.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::check::check_gradient;
use crate::diff::hyper::{self, CurvVar, EdgeIndex};
use crate::diff::{Tape, Unary, Var};
use crate::gnn::layers::{self, Activation};
use crate::manifold::{
    self, convert, einstein_midpoint, exp_map, log_map, lorentz, metric_norm, mobius_add, poincare,
    Curvature, ManifoldPoint, Model, TangentVector,
};
use crate::metrics::{auc, confusion, prf1};
use crate::tensor::{norm, Tensor};

/// One named check: how many cases ran, the worst error seen against its
/// tolerance, and how many cases exceeded it.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub cases: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub failures: usize,
    /// Gradient cases re-checked with a finer step.
    pub refined: usize,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub checks: Vec<CheckOutcome>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckOutcome::passed)
    }

    /// One line per check.
    pub fn lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| {
                let refined = if c.refined > 0 {
                    format!(", {} refined", c.refined)
                } else {
                    String::new()
                };
                format!(
                    "{} {}/{}: {} cases, worst {:.3e} (tol {:.0e}), {} failures{refined}",
                    if c.passed() { "PASS" } else { "FAIL" },
                    self.suite,
                    c.name,
                    c.cases,
                    c.worst,
                    c.tolerance,
                    c.failures
                )
            })
            .collect()
    }
}

struct Tally {
    out: CheckOutcome,
}

impl Tally {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            out: CheckOutcome {
                name: name.to_string(),
                cases: 0,
                worst: 0.0,
                tolerance,
                failures: 0,
                refined: 0,
            },
        }
    }

    fn record(&mut self, err: f64) {
        self.out.cases += 1;
        if err.is_nan() || err > self.out.tolerance {
            self.out.failures += 1;
        }
        if !(err <= self.out.worst) {
            self.out.worst = err;
        }
    }

    fn fail(&mut self) {
        self.record(f64::INFINITY);
    }
}

fn ball_coords(rng: &mut impl Rng, dim: usize, max_r: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = norm(&v).max(1e-9);
    let r = rng.random_range(0.0..max_r);
    v.iter().map(|x| x * r / n).collect()
}

fn ball_point(rng: &mut impl Rng, dim: usize, k: Curvature, frac: f64) -> ManifoldPoint {
    let c = ball_coords(rng, dim, frac * k.k().sqrt());
    ManifoldPoint::poincare(c, k).expect("inside the ball")
}

fn random_curvature(rng: &mut impl Rng) -> Curvature {
    Curvature::new(rng.random_range(0.2..4.0)).expect("positive")
}

/// Exp/log inversion, model conversion isometry, Möbius identities,
/// Einstein-midpoint symmetry and the triangle inequality.
pub fn geometry_suite(seed: u64, n: usize) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let mut t = Tally::new("exp_log_inverse_poincare", 1e-7);
    for _ in 0..n {
        let k = random_curvature(&mut rng);
        let x = ball_point(&mut rng, 3, k, 0.9);
        let raw: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let len = metric_norm(&x, &raw).max(1e-12);
        let scale = rng.random_range(0.0..5.0) * k.k().sqrt();
        let v: Vec<f64> = raw.iter().map(|a| a * scale / len).collect();
        match TangentVector::new(x.clone(), v.clone())
            .and_then(|tv| exp_map(&tv))
            .and_then(|y| log_map(&x, &y))
        {
            Ok(back) => {
                let diff: Vec<f64> = back.vector().iter().zip(&v).map(|(a, b)| a - b).collect();
                t.record(metric_norm(&x, &diff) / scale.max(1.0));
            }
            Err(_) => t.fail(),
        }
    }
    checks.push(t.out);

    let mut t = Tally::new("exp_log_inverse_lorentz", 1e-7);
    for _ in 0..n {
        let k = random_curvature(&mut rng);
        let x = convert(&ball_point(&mut rng, 3, k, 0.9), Model::Lorentz).expect("conversion");
        let raw: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tan = lorentz::proj_tangent(x.coords(), &raw, k.k());
        let len = lorentz::tangent_norm(&tan).max(1e-12);
        let scale = rng.random_range(0.0..5.0) * k.k().sqrt();
        let v: Vec<f64> = tan.iter().map(|a| a * scale / len).collect();
        match TangentVector::new(x.clone(), v.clone())
            .and_then(|tv| exp_map(&tv))
            .and_then(|y| log_map(&x, &y))
        {
            Ok(back) => {
                let diff: Vec<f64> = back.vector().iter().zip(&v).map(|(a, b)| a - b).collect();
                t.record(norm(&diff) / (1.0 + norm(x.coords())) / scale.max(1.0));
            }
            Err(_) => t.fail(),
        }
    }
    checks.push(t.out);

    let mut t = Tally::new("conversion_isometry", 1e-9);
    for _ in 0..n {
        let k = random_curvature(&mut rng);
        let x = ball_point(&mut rng, 3, k, 0.95);
        let y = ball_point(&mut rng, 3, k, 0.95);
        let db = poincare::distance(x.coords(), y.coords(), k.k());
        let lx = convert(&x, Model::Lorentz).expect("conversion");
        let ly = convert(&y, Model::Lorentz).expect("conversion");
        let kx = convert(&x, Model::Klein).expect("conversion");
        let ky = convert(&y, Model::Klein).expect("conversion");
        let dl = lorentz::distance(lx.coords(), ly.coords(), k.k());
        let dk = manifold::klein::distance(kx.coords(), ky.coords(), k.k());
        t.record((db - dl).abs().max((db - dk).abs()));
    }
    checks.push(t.out);

    let mut t = Tally::new("mobius_identities", 1e-9);
    for _ in 0..n {
        let k = random_curvature(&mut rng);
        let x = ball_point(&mut rng, 5, k, 0.9);
        let y = ball_point(&mut rng, 5, k, 0.9);
        let o = ManifoldPoint::origin(Model::Poincare, k, 5);
        let neg = ManifoldPoint::poincare(poincare::neg(x.coords()), k).expect("inside");
        let run = || -> manifold::Result<f64> {
            let left = mobius_add(&o, &x)?;
            let right = mobius_add(&x, &o)?;
            let inv = mobius_add(&neg, &x)?;
            let xy = mobius_add(&x, &y)?;
            let cancel = mobius_add(&neg, &xy)?;
            let dist = |a: &[f64], b: &[f64]| {
                a.iter()
                    .zip(b)
                    .map(|(p, q)| (p - q).abs())
                    .fold(0.0, f64::max)
            };
            let s = k.k().sqrt();
            Ok([
                dist(left.coords(), x.coords()),
                dist(right.coords(), x.coords()),
                norm(inv.coords()),
                dist(cancel.coords(), y.coords()),
            ]
            .into_iter()
            .fold(0.0, f64::max)
                / s)
        };
        match run() {
            Ok(e) => t.record(e),
            Err(_) => t.fail(),
        }
    }
    checks.push(t.out);

    let mut t = Tally::new("einstein_midpoint_symmetry", 1e-12);
    for _ in 0..n / 10 {
        let k = random_curvature(&mut rng);
        let m = rng.random_range(1..7);
        let pts: Vec<ManifoldPoint> = (0..m)
            .map(|_| {
                ManifoldPoint::klein(ball_coords(&mut rng, 3, 0.95 * k.k().sqrt()), k)
                    .expect("inside")
            })
            .collect();
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..2.0)).collect();
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut rng);
        let pp: Vec<ManifoldPoint> = order.iter().map(|&i| pts[i].clone()).collect();
        let pw: Vec<f64> = order.iter().map(|&i| w[i]).collect();
        let alpha = rng.random_range(0.01..100.0);
        let sw: Vec<f64> = w.iter().map(|v| v * alpha).collect();
        match (
            einstein_midpoint(&pts, &w),
            einstein_midpoint(&pp, &pw),
            einstein_midpoint(&pts, &sw),
        ) {
            (Ok(a), Ok(b), Ok(c)) => {
                let e = a
                    .coords()
                    .iter()
                    .zip(b.coords())
                    .zip(c.coords())
                    .map(|((x, y), z)| (x - y).abs().max((x - z).abs()))
                    .fold(0.0, f64::max);
                t.record(e / k.k().sqrt());
            }
            _ => t.fail(),
        }
    }
    checks.push(t.out);

    for model in [Model::Poincare, Model::Lorentz, Model::Klein] {
        let mut t = Tally::new(&format!("triangle_inequality_{}", model.tag()), 1e-9);
        for _ in 0..n {
            let k = random_curvature(&mut rng);
            let p: Vec<ManifoldPoint> = (0..3)
                .map(|_| convert(&ball_point(&mut rng, 4, k, 0.95), model).expect("conversion"))
                .collect();
            let d =
                |a: &ManifoldPoint, b: &ManifoldPoint| manifold::distance(a, b).unwrap_or(f64::NAN);
            let (xy, xz, zy, yx) = (
                d(&p[0], &p[1]),
                d(&p[0], &p[2]),
                d(&p[2], &p[1]),
                d(&p[1], &p[0]),
            );
            let violation = (xy - xz - zy).max(0.0).max((xy - yx).abs()).max(-xy);
            t.record(violation);
        }
        checks.push(t.out);
    }

    SuiteReport {
        suite: "geometry",
        checks,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Weighted sum so that every output coordinate contributes differently.
fn reduce(tape: &mut Tape, y: Var) -> crate::diff::Result<Var> {
    let (r, c) = tape.shape(y);
    let w = tape.constant(Tensor::from_vec(
        r,
        c,
        (0..r * c).map(|i| 0.3 + (i as f64 * 0.37).sin()).collect(),
    ));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn sum_all(tape: &mut Tape, ys: &[Var]) -> crate::diff::Result<Var> {
    let mut acc = reduce(tape, ys[0])?;
    for &y in &ys[1..] {
        let r = reduce(tape, y)?;
        acc = tape.add(acc, r)?;
    }
    Ok(acc)
}

fn tangent(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
}

fn ball_rows(rng: &mut impl Rng, rows: usize, dim: usize, k: f64) -> Tensor {
    let mut data = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = norm(&v).max(1e-3);
        let r = rng.random_range(0.05..0.9) * k.sqrt();
        data.extend(v.iter().map(|x| x * r / n));
    }
    Tensor::from_vec(rows, dim, data)
}

fn lorentz_rows(rng: &mut impl Rng, rows: usize, dim: usize, k: f64) -> Tensor {
    let mut data = Vec::with_capacity(rows * (dim + 1));
    for _ in 0..rows {
        let mut x = vec![0.0];
        x.extend((0..dim).map(|_| rng.random_range(-1.5..1.5)));
        lorentz::project(&mut x, k);
        data.extend(x);
    }
    Tensor::from_vec(rows, dim + 1, data)
}

fn column(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::column((0..n).map(|_| rng.random_range(lo..hi)).collect())
}

/// Self-loops plus the path 0-1-2-3, grouped by destination.
fn path_graph() -> EdgeIndex {
    let pairs = [
        (0, 0),
        (1, 0),
        (1, 1),
        (0, 1),
        (2, 1),
        (2, 2),
        (1, 2),
        (3, 2),
        (3, 3),
        (2, 3),
    ];
    EdgeIndex {
        src: pairs.iter().map(|p| p.0).collect::<Vec<_>>().into(),
        dst: pairs.iter().map(|p| p.1).collect::<Vec<_>>().into(),
        nodes: 4,
    }
}

type Build = fn(&mut Tape, &[Var]) -> crate::diff::Result<Var>;
type Point = fn(&mut ChaCha8Rng) -> Vec<(&'static str, Tensor)>;

struct GradCase {
    name: &'static str,
    h: f64,
    point: Point,
    build: Build,
}

fn ok<T>(r: crate::gnn::Result<T>) -> crate::diff::Result<T> {
    r.map_err(|e| crate::diff::DiffError::Shape {
        node: 0,
        op: "layer",
        detail: e.to_string(),
    })
}

fn grad_cases() -> Vec<GradCase> {
    vec![
        GradCase {
            name: "add_matmul_tanh",
            h: 1e-5,
            point: |r| {
                vec![
                    ("a", tangent(r, 3, 4)),
                    ("b", tangent(r, 4, 2)),
                    ("c", tangent(r, 1, 2)),
                ]
            },
            build: |t, v| {
                let m = t.matmul(v[0], v[1])?;
                let s = t.add(m, v[2])?;
                let y = t.tanh(s);
                reduce(t, y)
            },
        },
        GradCase {
            name: "elementwise",
            h: 1e-5,
            point: |r| vec![("a", tangent(r, 3, 3)), ("b", tangent(r, 3, 3))],
            build: |t, v| {
                let sq = t.square(v[1]);
                let pos = t.offset(sq, 0.5);
                let q = t.div(v[0], pos)?;
                let l = t.ln(pos);
                let s = t.sqrt(pos);
                let sg = t.sigmoid(q);
                let ls = t.log_sigmoid(v[0]);
                let se = t.unary(v[1], Unary::Selu);
                let ex = t.exp(v[0]);
                let ch = t.unary(v[0], Unary::Cosh);
                let sh = t.unary(v[1], Unary::Sinh);
                let ng = t.neg(sh);
                let sc = t.scale(ch, 0.7);
                let x = t.add(l, s)?;
                let x = t.sub(x, sg)?;
                let x = t.add(x, ls)?;
                let x = t.mul(x, se)?;
                let x = t.add(x, ex)?;
                let x = t.add(x, ng)?;
                let x = t.add(x, sc)?;
                let mt = t.matmul_t(x, v[0])?;
                let tr = t.transpose(mt);
                let m = t.mean(tr);
                let r = reduce(t, x)?;
                t.add(r, m)
            },
        },
        GradCase {
            name: "inverse_hyperbolic",
            h: 1e-5,
            point: |r| {
                vec![
                    ("x", column(r, 4, 1.05, 5.0)),
                    ("y", column(r, 4, -0.9, 0.9)),
                ]
            },
            build: |t, v| {
                let a = t.arcosh(v[0]);
                let b = t.artanh(v[1]);
                sum_all(t, &[a, b])
            },
        },
        GradCase {
            name: "activations_and_clamps",
            h: 1e-6,
            point: |r| vec![("x", tangent(r, 3, 4))],
            build: |t, v| {
                let a = t.unary(v[0], Unary::Relu);
                let b = t.unary(v[0], Unary::LeakyRelu(0.2));
                let c = t.clamp_min(v[0], -2.0);
                let d = t.clamp_max(v[0], 2.0);
                sum_all(t, &[a, b, c, d])
            },
        },
        GradCase {
            name: "structural",
            h: 1e-5,
            point: |r| vec![("x", tangent(r, 4, 3)), ("y", tangent(r, 4, 2))],
            build: |t, v| {
                let idx: Arc<[usize]> = vec![2, 0, 3, 3, 1].into();
                let g = t.gather(v[0], idx.clone())?;
                let s = t.scatter_add(g, Arc::from(vec![1, 1, 0, 2, 3]), 4)?;
                let c = t.concat_cols(s, v[1])?;
                let sl = t.slice_cols(c, 1, 4)?;
                let rs = t.row_sum(sl);
                let rn = t.row_norm(v[0], 1e-12);
                let sm = t.segment_softmax(rs, Arc::from(vec![0, 0, 1, 1]), 2)?;
                let total = t.sum(v[1]);
                let parts = sum_all(t, &[sl, rn, sm])?;
                t.add(parts, total)
            },
        },
        GradCase {
            name: "mobius_add",
            h: 1e-5,
            point: |r| {
                let k: f64 = r.random_range(0.5..2.0);
                vec![
                    ("x", ball_rows(r, 2, 3, k)),
                    ("y", ball_rows(r, 2, 3, k)),
                    ("k", Tensor::scalar(k.ln())),
                ]
            },
            build: |t, v| {
                let cv = CurvVar::from_log_k(t, v[2]);
                let y = hyper::mobius_add(t, v[0], v[1], cv)?;
                reduce(t, y)
            },
        },
        GradCase {
            name: "ball_exp_log_project",
            h: 1e-5,
            point: |r| {
                let k: f64 = r.random_range(0.5..2.0);
                vec![
                    ("v", tangent(r, 3, 3)),
                    ("x", ball_rows(r, 3, 3, k)),
                    ("k", Tensor::scalar(k.ln())),
                ]
            },
            build: |t, v| {
                let cv = CurvVar::from_log_k(t, v[2]);
                let a = hyper::ball_expmap0(t, v[0], cv)?;
                let b = hyper::ball_logmap0(t, v[1], cv)?;
                let p = hyper::ball_project(t, v[1], cv)?;
                sum_all(t, &[a, b, p])
            },
        },
        GradCase {
            name: "mobius_matvec",
            h: 1e-5,
            point: |r| vec![("w", tangent(r, 2, 3)), ("x", ball_rows(r, 4, 3, 1.0))],
            build: |t, v| {
                let cv = CurvVar::constant(t, 1.0);
                let y = hyper::mobius_matvec(t, v[0], v[1], cv)?;
                reduce(t, y)
            },
        },
        GradCase {
            name: "poincare_distance",
            h: 1e-5,
            point: |r| {
                let k: f64 = r.random_range(0.5..2.0);
                vec![
                    ("x", ball_rows(r, 3, 2, k)),
                    ("y", ball_rows(r, 3, 2, k)),
                    ("k", Tensor::scalar(k.ln())),
                ]
            },
            build: |t, v| {
                let cv = CurvVar::from_log_k(t, v[2]);
                let d = hyper::poincare_dist(t, v[0], v[1], cv)?;
                reduce(t, d)
            },
        },
        GradCase {
            name: "lorentz_maps_distance",
            h: 1e-5,
            point: |r| {
                vec![
                    ("x", lorentz_rows(r, 3, 2, 1.0)),
                    ("y", lorentz_rows(r, 3, 2, 1.0)),
                    ("v", tangent(r, 3, 2)),
                ]
            },
            build: |t, v| {
                let cv = CurvVar::constant(t, 1.0);
                let d = hyper::lorentz_dist(t, v[0], v[1], cv)?;
                let l = hyper::lorentz_logmap0(t, v[0], cv)?;
                let e = hyper::lorentz_expmap0(t, v[2], cv)?;
                let m = hyper::minkowski_rows(t, v[0], v[1])?;
                sum_all(t, &[d, l, e, m])
            },
        },
        GradCase {
            name: "model_conversions",
            h: 1e-5,
            point: |r| {
                vec![
                    ("x", lorentz_rows(r, 3, 3, 1.0)),
                    ("p", ball_rows(r, 3, 3, 1.0)),
                ]
            },
            build: |t, v| {
                let cv = CurvVar::constant(t, 1.0);
                let a = hyper::lorentz_to_poincare(t, v[0], cv)?;
                let q = hyper::lorentz_to_klein(t, v[0], cv)?;
                let b = hyper::klein_to_poincare(t, q, cv)?;
                let c = hyper::poincare_to_lorentz(t, v[1], cv)?;
                let f = hyper::lorentz_factor(t, q, cv)?;
                sum_all(t, &[a, b, c, f])
            },
        },
        GradCase {
            name: "fermi_dirac",
            h: 1e-5,
            point: |r| vec![("d", column(r, 5, 0.0, 6.0))],
            build: |t, v| {
                let p = hyper::fermi_dirac(t, v[0], 2.0, 1.0);
                let z = hyper::fermi_dirac_logit(t, v[0], 2.0, 1.0);
                let l = t.log_sigmoid(z);
                sum_all(t, &[p, l])
            },
        },
        GradCase {
            name: "attention_aggregate",
            h: 1e-5,
            point: |r| {
                vec![
                    ("m", tangent(r, 4, 3)),
                    ("a1", tangent(r, 3, 1)),
                    ("a2", tangent(r, 3, 1)),
                ]
            },
            build: |t, v| {
                let g = path_graph();
                let alpha = hyper::attention(t, v[0], v[1], v[2], &g, 0.2)?;
                let agg = hyper::weighted_aggregate(t, v[0], alpha, &g)?;
                sum_all(t, &[alpha, agg])
            },
        },
        GradCase {
            name: "einstein_aggregate",
            h: 1e-5,
            point: |r| {
                vec![
                    ("q", ball_rows(r, 4, 2, 1.0)),
                    ("w", column(r, 10, 0.1, 1.0)),
                ]
            },
            build: |t, v| {
                let g = path_graph();
                let cv = CurvVar::constant(t, 1.0);
                let y = hyper::einstein_aggregate(t, v[0], v[1], &g, cv)?;
                reduce(t, y)
            },
        },
        GradCase {
            name: "hgnn_layer",
            h: 1e-6,
            point: layer_point,
            build: |t, v| {
                let g = path_graph();
                let cv = CurvVar::from_log_k(t, v[5]);
                let y = ok(layers::hgnn_layer(
                    t,
                    v[0],
                    &g,
                    v[6],
                    v[1],
                    Activation::LeakyRelu,
                    cv,
                ))?;
                reduce(t, y)
            },
        },
        GradCase {
            name: "hgcn_linear_attention",
            h: 1e-6,
            point: layer_point,
            build: |t, v| {
                let g = path_graph();
                let cv = CurvVar::from_log_k(t, v[5]);
                let lin = ok(layers::hgcn_linear(t, v[0], v[1], v[2], cv))?;
                let (y, _) = ok(layers::hgcn_attention_aggregate(
                    t,
                    lin,
                    &g,
                    v[3],
                    v[4],
                    Activation::LeakyRelu,
                    cv,
                ))?;
                reduce(t, y)
            },
        },
        GradCase {
            name: "hgcae_layer_curvature_change",
            h: 1e-6,
            point: layer_point,
            build: |t, v| {
                let g = path_graph();
                let cv = CurvVar::from_log_k(t, v[5]);
                let (y, _) = ok(layers::hgcae_layer(
                    t,
                    v[0],
                    &g,
                    [v[1], v[2], v[3], v[4]],
                    Activation::LeakyRelu,
                    cv,
                ))?;
                let other = CurvVar::constant(t, 0.7);
                let y = ok(layers::curvature_change(t, y, cv, other, None))?;
                reduce(t, y)
            },
        },
        GradCase {
            name: "h2h_linear_aggregate",
            h: 1e-6,
            point: |r| {
                let mut w = tangent(r, 3, 3);
                crate::optim::orthonormalize(&mut w, 1e-13, 200).expect("full rank");
                vec![
                    ("x", lorentz_rows(r, 4, 3, 1.0)),
                    ("w", w),
                    ("aw", column(r, 10, 0.1, 1.0)),
                ]
            },
            build: |t, v| {
                let g = path_graph();
                let cv = CurvVar::constant(t, 1.0);
                let lin = ok(layers::h2h_lorentz_linear(t, v[0], v[1]))?;
                let y = ok(layers::h2h_aggregate(
                    t,
                    lin,
                    &g,
                    v[2],
                    Activation::Selu,
                    cv,
                ))?;
                reduce(t, y)
            },
        },
    ]
}

/// Node features inside the ball of radius `√K` for a random log-curvature,
/// with weights, bias, attention vectors and edge weights for [`path_graph`].
fn layer_point(r: &mut ChaCha8Rng) -> Vec<(&'static str, Tensor)> {
    let kappa: f64 = r.random_range(-0.5..0.5);
    let h = ball_rows(r, 4, 3, 1.0).map(|v| v * (0.5 * kappa).exp());
    vec![
        ("h", h),
        ("w", tangent(r, 3, 3)),
        (
            "b",
            Tensor::row_vector((0..3).map(|_| r.random_range(-0.3..0.3)).collect()),
        ),
        ("a1", tangent(r, 3, 1)),
        ("a2", tangent(r, 3, 1)),
        ("kappa", Tensor::scalar(kappa)),
        ("aw", column(r, 10, 0.1, 1.0)),
    ]
}

/// Names of the gradient cases, in run order.
pub fn gradient_case_names() -> Vec<&'static str> {
    grad_cases().iter().map(|c| c.name).collect()
}

/// Step divisor for the second attempt at a point that fails the first.
const REFINE: f64 = 100.0;

/// Central-difference checks of every primitive and layer op at `points`
/// random points each. A point within one step of a kink (LeakyReLU, clamp)
/// fails the nominal stencil however correct the gradient is, so a failing
/// point is re-checked once with the step divided by [`REFINE`]; an incorrect
/// gradient fails both.
pub fn gradient_suite(seed: u64, points: usize) -> SuiteReport {
    let start = Instant::now();
    let mut checks = Vec::new();
    for (i, case) in grad_cases().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let mut t = Tally::new(case.name, 1e-4);
        for _ in 0..points {
            let p = (case.point)(&mut rng);
            let mut r = check_gradient(case.build, &p, case.h).map(|r| r.max_rel_err);
            if !r.as_ref().is_ok_and(|&e| e <= t.out.tolerance) {
                t.out.refined += 1;
                r = check_gradient(case.build, &p, case.h / REFINE).map(|r| r.max_rel_err);
            }
            match r {
                Ok(e) => t.record(e),
                Err(_) => t.fail(),
            }
        }
        checks.push(t.out);
    }
    SuiteReport {
        suite: "gradient",
        checks,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Exhaustive pair count: wins plus half of the ties over all
/// positive-negative pairs.
fn brute_auc(scores: &[f64], y: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for i in 0..y.len() {
        for j in 0..y.len() {
            if y[i] == 1 && y[j] == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

fn brute_prf1(y: &[u8], p: &[u8]) -> (f64, f64, f64, f64) {
    let count = |a: u8, b: u8| y.iter().zip(p).filter(|&(&t, &q)| t == a && q == b).count() as f64;
    let (tp, tn, fp, fn_) = (count(1, 1), count(0, 0), count(0, 1), count(1, 0));
    let acc = (tp + tn) / (tp + tn + fp + fn_);
    let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let rec = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f1 = if prec + rec > 0.0 {
        2.0 * prec * rec / (prec + rec)
    } else {
        0.0
    };
    (acc, prec, rec, f1)
}

/// prf1 and AUC against brute-force oracles on `n` random instances of
/// length ≤ 50, plus the worked AUC example.
pub fn metrics_suite(seed: u64, n: usize) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exact = Tally::new("prf1_exact", 0.0);
    let mut area = Tally::new("auc_pairwise", 1e-12);
    for _ in 0..n {
        let len = rng.random_range(2..=50);
        let mut y: Vec<u8> = (0..len).map(|_| rng.random_range(0..2)).collect();
        y[0] = 1;
        y[1] = 0;
        y.shuffle(&mut rng);
        let p: Vec<u8> = (0..len).map(|_| rng.random_range(0..2)).collect();
        // Coarse scores so that ties occur.
        let s: Vec<f64> = (0..len)
            .map(|_| f64::from(rng.random_range(0..8u8)) / 8.0)
            .collect();
        match confusion(&y, &p) {
            Ok(c) => {
                let (a, b, cc, d) = prf1(&c);
                let (oa, ob, oc, od) = brute_prf1(&y, &p);
                let same = a == oa && b == ob && cc == oc && d == od;
                exact.record(if same { 0.0 } else { 1.0 });
            }
            Err(_) => exact.fail(),
        }
        match auc(&s, &y) {
            Ok(v) => area.record((v - brute_auc(&s, &y)).abs()),
            Err(_) => area.fail(),
        }
    }
    let mut worked = Tally::new("auc_worked_example", 1e-12);
    match auc(&[0.9, 0.8, 0.4, 0.3], &[1, 0, 1, 0]) {
        Ok(v) => worked.record((v - 0.75).abs()),
        Err(_) => worked.fail(),
    }
    SuiteReport {
        suite: "metrics",
        checks: vec![exact.out, area.out, worked.out],
        seconds: start.elapsed().as_secs_f64(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        for report in [
            geometry_suite(1, 500),
            gradient_suite(1, 5),
            metrics_suite(1, 200),
        ] {
            assert!(report.passed(), "{:#?}", report.lines());
        }
    }

    #[test]
    fn a_failing_case_is_reported() {
        let mut t = Tally::new("x", 1e-3);
        t.record(1e-4);
        t.record(f64::NAN);
        t.record(2e-3);
        assert_eq!((t.out.cases, t.out.failures), (3, 2));
        assert!(t.out.worst.is_nan() || t.out.worst >= 2e-3);
    }

    #[test]
    fn refinement_resolves_a_kink_inside_the_stencil() {
        let kinked = [("x", Tensor::column(vec![2e-7, -0.4]))];
        let relu = |t: &mut Tape, v: &[Var]| -> crate::diff::Result<Var> {
            let y = t.unary(v[0], Unary::Relu);
            reduce(t, y)
        };
        assert!(check_gradient(relu, &kinked, 1e-5).unwrap().max_rel_err > 1e-4);
        assert!(
            check_gradient(relu, &kinked, 1e-5 / REFINE)
                .unwrap()
                .max_rel_err
                < 1e-4
        );
    }
}
