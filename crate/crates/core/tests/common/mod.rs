#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sharppath::rng::{rng_from_seed, SeededRng};
use sharppath::{Batch, Graph, GraphBuilder, ParamVector, Tensor};

pub fn normal_vec(rng: &mut SeededRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

pub fn labeled_batch(seed: u64, n: usize, row_shape: &[usize], classes: usize) -> Batch {
    let mut rng = rng_from_seed(seed);
    let width: usize = row_shape.iter().product();
    let mut shape = vec![n];
    shape.extend_from_slice(row_shape);
    let inputs = Tensor::new(shape, normal_vec(&mut rng, n * width, 1.0)).unwrap();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Batch::new(inputs, labels).unwrap()
}

/// Central differences of `f` along every coordinate in `coords`.
///
/// The losses are piecewise smooth, so a stencil can straddle a ReLU or
/// max-pool kink. When the estimates at `h` and `h/2` disagree the step is
/// shrunk tenfold until they agree to within truncation plus rounding
/// (or `h` reaches 1e-8).
pub fn fd_gradient(f: impl Fn(&ParamVector) -> f64, at: &ParamVector, coords: &[usize], h: f64) -> Vec<f64> {
    let f0 = f(at).abs().max(1.0);
    let central = |i: usize, h: f64| {
        let mut plus = at.clone();
        plus[i] += h;
        let mut minus = at.clone();
        minus[i] -= h;
        (f(&plus) - f(&minus)) / (2.0 * h)
    };
    coords
        .iter()
        .map(|&i| {
            let mut h = h;
            loop {
                let a = central(i, h);
                let b = central(i, h / 2.0);
                let rounding = 16.0 * f64::EPSILON * f0 / h;
                if (a - b).abs() <= 1e-7 * a.abs() + rounding || h < 1e-8 {
                    return a;
                }
                h /= 10.0;
            }
        })
        .collect()
}

/// `(∇L(θ+hv) − ∇L(θ−hv)) / 2h`, with the same kink refinement as
/// [`fd_gradient`] applied to the whole vector.
pub fn fd_hvp(graph: &Graph, params: &ParamVector, batch: &Batch, v: &[f64], h: f64) -> Vec<f64> {
    let central = |h: f64| -> Vec<f64> {
        let mut plus = params.clone();
        plus.axpy(h, v);
        let mut minus = params.clone();
        minus.axpy(-h, v);
        let gp = graph.grad(&plus, batch).unwrap();
        let gm = graph.grad(&minus, batch).unwrap();
        gp.iter().zip(gm.iter()).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    };
    let mut h = h;
    loop {
        let a = central(h);
        let b = central(h / 2.0);
        if max_rel_err(&a, &b) <= 1e-7 || h < 1e-7 {
            return a;
        }
        h /= 10.0;
    }
}

/// Largest componentwise relative error. Components far below the vector's
/// scale are compared against a floor of `1e-3·max|want|` so that entries
/// which are zero up to rounding do not dominate.
pub fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    got.iter()
        .zip(want)
        .map(|(g, w)| (g - w).abs() / g.abs().max(w.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// conv3x3(C→filters) + bias + ReLU + maxpool + dense → softmax CE.
pub fn micro_cnn(h: usize, w: usize, c: usize, filters: usize, classes: usize) -> Graph {
    let mut b = GraphBuilder::new();
    let x = b.input();
    let kw = b.param(vec![filters, 3, 3, c]);
    let kb = b.param(vec![filters]);
    let y = b.conv3x3(x, kw);
    let y = b.bias_add(y, kb);
    let y = b.relu(y);
    let y = b.maxpool2(y);
    let y = b.flatten(y);
    let dw = b.param(vec![classes, (h / 2) * (w / 2) * filters]);
    let db = b.param(vec![classes]);
    let z = b.dense(y, dw);
    let z = b.bias_add(z, db);
    let l = b.softmax_cross_entropy(z);
    b.finish(l, Some(z)).unwrap()
}

/// Symmetric matrix with i.i.d. standard normal upper triangle.
pub fn random_symmetric(n: usize, seed: u64) -> nalgebra::DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    let z = normal_vec(&mut rng, n * n, 1.0);
    let a = nalgebra::DMatrix::from_vec(n, n, z);
    (&a + a.transpose()) * 0.5
}

/// Hessian assembled column by column from `D` Hessian-vector products,
/// then symmetrized. Also returns the largest asymmetry seen.
pub fn dense_hessian(model: &sharppath::Model, params: &ParamVector, batch: &Batch) -> (nalgebra::DMatrix<f64>, f64) {
    let d = model.param_count();
    let mut h = nalgebra::DMatrix::zeros(d, d);
    let mut e = vec![0.0; d];
    for j in 0..d {
        e[j] = 1.0;
        let col = model.hvp(params, batch, &e).unwrap();
        for i in 0..d {
            h[(i, j)] = col[i];
        }
        e[j] = 0.0;
    }
    let asym = (&h - h.transpose()).abs().max();
    ((&h + h.transpose()) * 0.5, asym)
}

/// The `k` eigenpairs of largest magnitude, by a dense symmetric solver.
pub fn dense_top_k(m: &nalgebra::DMatrix<f64>, k: usize) -> Vec<(f64, Vec<f64>)> {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].abs().total_cmp(&eig.eigenvalues[a].abs()));
    idx.into_iter()
        .take(k)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).iter().copied().collect()))
        .collect()
}

/// Angle between two lines (eigenvectors are only defined up to sign),
/// from the chord length so small angles keep full precision.
pub fn line_angle(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let sign = if a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let chord = a.iter().zip(b).map(|(x, y)| (x / na - sign * y / nb).powi(2)).sum::<f64>().sqrt();
    2.0 * (chord / 2.0).min(1.0).asin()
}

/// Worst relative eigenvalue error and worst eigenvector angle of `est`
/// against dense eigenpairs in the same order.
pub fn compare_pairs(est: &sharppath::EigenEstimate, oracle: &[(f64, Vec<f64>)]) -> (f64, f64) {
    let mut rel = 0.0f64;
    let mut angle = 0.0f64;
    for (p, (lambda, v)) in est.pairs.iter().zip(oracle) {
        rel = rel.max((p.lambda - lambda).abs() / lambda.abs());
        angle = angle.max(line_angle(&p.vector, v));
    }
    (rel, angle)
}

pub const RECORD: usize = 3073;

/// Two CIFAR-10 records. Record 0 has label 3; its red plane counts up
/// from 0, green is constant 200 and blue is 255 minus red. Record 1 has
/// label 9 and is all zeros except the last blue byte.
pub fn cifar_fixture() -> Vec<u8> {
    let mut bytes = vec![0u8; 2 * RECORD];
    bytes[0] = 3;
    for p in 0..1024 {
        bytes[1 + p] = (p % 256) as u8;
        bytes[1 + 1024 + p] = 200;
        bytes[1 + 2048 + p] = 255 - (p % 256) as u8;
    }
    bytes[RECORD] = 9;
    bytes[2 * RECORD - 1] = 17;
    bytes
}

/// Four 2×3 images whose pixel bytes are `10·i + j`, labels 0, 1, 2, 1.
pub fn idx_fixture() -> (Vec<u8>, Vec<u8>) {
    let mut images = vec![0, 0, 8, 3, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 3];
    for i in 0..4u8 {
        for j in 0..6u8 {
            images.push(10 * i + j);
        }
    }
    let labels = vec![0, 0, 8, 1, 0, 0, 0, 4, 0, 1, 2, 1];
    (images, labels)
}

