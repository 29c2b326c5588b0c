//! Pointwise, normalization, pooling and classifier layers with their
//! backward passes.

use ndarray::Array4;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FeatureMap;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;

/// Running statistics, one entry per feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStats {
    pub fn new(features: usize) -> Self {
        BnStats { mean: vec![0.0; features], var: vec![1.0; features] }
    }
}

pub enum BnMode<'a> {
    /// Batch statistics; running statistics updated with `momentum`.
    Train { running: &'a mut BnStats, momentum: f64 },
    /// Stored statistics.
    Eval(&'a BnStats),
}

/// What the backward pass of batch normalization needs.
#[derive(Clone, Debug)]
pub struct BnCache {
    xhat: Array4<f64>,
    inv_std: Vec<f64>,
    scale: Vec<f64>,
    batch_stats: bool,
    arity: usize,
    h: f64,
}

/// Calls `f(feature, plane)` for every `hw`-long plane of `data`.
fn for_planes(data: &[f64], channels: usize, arity: usize, hw: usize, mut f: impl FnMut(usize, &[f64])) {
    if hw == 0 {
        return;
    }
    for (i, plane) in data.chunks(hw).enumerate() {
        f((i % channels) / arity, plane);
    }
}

/// Batch normalization with statistics pooled over the batch, both spatial
/// axes and the `|S|` orientation channels of each feature, and one
/// `(scale, bias)` pair per feature.
pub fn group_batchnorm(
    feat: &FeatureMap,
    scale: &[f64],
    bias: &[f64],
    mode: BnMode<'_>,
) -> Result<(FeatureMap, BnCache)> {
    let nf = feat.features();
    let s = feat.orientation_arity;
    if scale.len() != nf || bias.len() != nf {
        return Err(Error::Shape(format!(
            "batch norm over {nf} features given {} scales, {} biases",
            scale.len(),
            bias.len()
        )));
    }
    let (b, c, h, w) = feat.data.dim();
    let hw = h * w;
    let x = feat.slice();
    let (mean, var, batch_stats) = match &mode {
        BnMode::Train { .. } => {
            let count = (b * s * hw) as f64;
            let mut mean = vec![0.0; nf];
            for_planes(x, c, s, hw, |f, p| mean[f] += p.iter().sum::<f64>());
            mean.iter_mut().for_each(|m| *m /= count);
            let mut var = vec![0.0; nf];
            for_planes(x, c, s, hw, |f, p| var[f] += p.iter().map(|v| (v - mean[f]).powi(2)).sum::<f64>());
            var.iter_mut().for_each(|v| *v /= count);
            (mean, var, true)
        }
        BnMode::Eval(stats) => (stats.mean.clone(), stats.var.clone(), false),
    };
    if let BnMode::Train { running, momentum } = mode {
        let count = (b * s * hw) as f64;
        let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        for f in 0..nf {
            running.mean[f] = (1.0 - momentum) * running.mean[f] + momentum * mean[f];
            running.var[f] = (1.0 - momentum) * running.var[f] + momentum * var[f] * unbias;
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    for_planes(x, c, s, hw, |f, p| {
        for &v in p {
            let n = (v - mean[f]) * inv_std[f];
            xhat.push(n);
            y.push(scale[f] * n + bias[f]);
        }
    });
    let shape = feat.data.dim();
    let cache = BnCache {
        xhat: Array4::from_shape_vec(shape, xhat).expect("shape"),
        inv_std,
        scale: scale.to_vec(),
        batch_stats,
        arity: s,
        h: feat.h,
    };
    Ok((feat.like(Array4::from_shape_vec(shape, y).expect("shape")), cache))
}

/// Gradients of [`group_batchnorm`]: `(d input, d scale, d bias)`.
pub fn group_batchnorm_backward(cache: &BnCache, grad_out: &FeatureMap) -> (FeatureMap, Vec<f64>, Vec<f64>) {
    let (b, c, h, w) = cache.xhat.dim();
    let (hw, s) = (h * w, cache.arity);
    let nf = c / s;
    let dy = grad_out.slice();
    let xhat = cache.xhat.as_slice().expect("standard layout");
    let mut dscale = vec![0.0; nf];
    let mut dbias = vec![0.0; nf];
    if hw > 0 {
        for (i, (gp, xp)) in dy.chunks(hw).zip(xhat.chunks(hw)).enumerate() {
            let f = (i % c) / s;
            dbias[f] += gp.iter().sum::<f64>();
            dscale[f] += gp.iter().zip(xp).map(|(g, x)| g * x).sum::<f64>();
        }
    }
    let count = (b * s * hw) as f64;
    let mut dx = Vec::with_capacity(dy.len());
    if hw > 0 {
        for (i, (gp, xp)) in dy.chunks(hw).zip(xhat.chunks(hw)).enumerate() {
            let f = (i % c) / s;
            let k = cache.scale[f] * cache.inv_std[f];
            if cache.batch_stats {
                let (mg, mgx) = (dbias[f] / count, dscale[f] / count);
                dx.extend(gp.iter().zip(xp).map(|(g, x)| k * (g - mg - x * mgx)));
            } else {
                dx.extend(gp.iter().map(|g| k * g));
            }
        }
    }
    let dx = Array4::from_shape_vec((b, c, h, w), dx).expect("shape");
    (FeatureMap { data: dx, orientation_arity: s, h: cache.h }, dscale, dbias)
}

pub fn relu(x: &FeatureMap) -> FeatureMap {
    // NaN passes through so that divergence stays visible.
    x.like(x.data.mapv(|v| if v < 0.0 { 0.0 } else { v }))
}

pub fn relu_backward(x: &FeatureMap, grad_out: &FeatureMap) -> FeatureMap {
    let mut g = grad_out.data.clone();
    g.zip_mut_with(&x.data, |g, &v| {
        if v <= 0.0 {
            *g = 0.0;
        }
    });
    x.like(g)
}

/// Routing information for max-type pooling: flat input index per output.
#[derive(Clone, Debug)]
pub struct Argmax {
    input_dim: (usize, usize, usize, usize),
    arity: usize,
    index: Vec<usize>,
}

fn scatter(arg: &Argmax, grad_out: &FeatureMap, h: f64) -> FeatureMap {
    let mut dx = Array4::zeros(arg.input_dim);
    let d = dx.as_slice_mut().expect("standard layout");
    for (&i, &g) in arg.index.iter().zip(grad_out.slice()) {
        d[i] += g;
    }
    FeatureMap { data: dx, orientation_arity: arg.arity, h }
}

/// 2×2 max pooling with stride 2; trailing odd rows/columns are dropped.
/// The mesh size doubles.
pub fn maxpool2(x: &FeatureMap) -> (FeatureMap, Argmax) {
    let (b, c, h, w) = x.data.dim();
    let (oh, ow) = (h / 2, w / 2);
    let src = x.slice();
    let mut y = Vec::with_capacity(b * c * oh * ow);
    let mut index = Vec::with_capacity(y.capacity());
    for plane in 0..b * c {
        let base = plane * h * w;
        for r in 0..oh {
            for col in 0..ow {
                let mut best = base + 2 * r * w + 2 * col;
                for i in [best + 1, best + w, best + w + 1] {
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                y.push(src[best]);
                index.push(best);
            }
        }
    }
    let out = FeatureMap {
        data: Array4::from_shape_vec((b, c, oh, ow), y).expect("shape"),
        orientation_arity: x.orientation_arity,
        h: 2.0 * x.h,
    };
    (out, Argmax { input_dim: (b, c, h, w), arity: x.orientation_arity, index })
}

pub fn maxpool2_backward(arg: &Argmax, grad_out: &FeatureMap) -> FeatureMap {
    scatter(arg, grad_out, grad_out.h / 2.0)
}

/// Max over the `|S|` orientation channels of each feature; the result is
/// planar.
pub fn orientation_pool(x: &FeatureMap) -> (FeatureMap, Argmax) {
    let (b, c, h, w) = x.data.dim();
    let s = x.orientation_arity;
    let nf = c / s;
    let hw = h * w;
    let src = x.slice();
    let mut y = Vec::with_capacity(b * nf * hw);
    let mut index = Vec::with_capacity(y.capacity());
    for bi in 0..b {
        for f in 0..nf {
            let first = (bi * c + f * s) * hw;
            for p in 0..hw {
                let mut best = first + p;
                for k in 1..s {
                    let i = first + k * hw + p;
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                y.push(src[best]);
                index.push(best);
            }
        }
    }
    let out =
        FeatureMap { data: Array4::from_shape_vec((b, nf, h, w), y).expect("shape"), orientation_arity: 1, h: x.h };
    (out, Argmax { input_dim: (b, c, h, w), arity: s, index })
}

pub fn orientation_pool_backward(arg: &Argmax, grad_out: &FeatureMap) -> FeatureMap {
    scatter(arg, grad_out, grad_out.h)
}

/// Spatial mean per channel; output is `[b][c][1][1]`.
pub fn global_avg_pool(x: &FeatureMap) -> FeatureMap {
    let (b, c, h, w) = x.data.dim();
    let hw = (h * w).max(1);
    let y: Vec<f64> = x.slice().chunks(hw).map(|p| p.iter().sum::<f64>() / (h * w) as f64).collect();
    x.like(Array4::from_shape_vec((b, c, 1, 1), y).expect("shape"))
}

pub fn global_avg_pool_backward(input_dim: (usize, usize, usize, usize), grad_out: &FeatureMap) -> FeatureMap {
    let (b, c, h, w) = input_dim;
    let n = (h * w) as f64;
    let mut dx = Vec::with_capacity(b * c * h * w);
    for &g in grad_out.slice() {
        dx.extend(std::iter::repeat_n(g / n, h * w));
    }
    grad_out.like(Array4::from_shape_vec(input_dim, dx).expect("shape"))
}

/// Fully connected layer on the flattened input; output `[b][out][1][1]`.
/// Weights are `[out][in]`.
pub fn dense(x: &FeatureMap, weight: &[f64], bias: &[f64]) -> Result<FeatureMap> {
    let b = x.batch();
    let d = x.slice().len() / b.max(1);
    let out = bias.len();
    if weight.len() != out * d {
        return Err(Error::Shape(format!("dense layer {out}×{} applied to {d} inputs", weight.len() / out.max(1))));
    }
    let mut y = Vec::with_capacity(b * out);
    for xi in x.slice().chunks(d.max(1)).take(b) {
        for o in 0..out {
            y.push(bias[o] + weight[o * d..(o + 1) * d].iter().zip(xi).map(|(w, v)| w * v).sum::<f64>());
        }
    }
    Ok(FeatureMap { data: Array4::from_shape_vec((b, out, 1, 1), y).expect("shape"), orientation_arity: 1, h: x.h })
}

/// Gradients of [`dense`]: `(d input, d weight, d bias)`.
pub fn dense_backward(x: &FeatureMap, weight: &[f64], grad_out: &FeatureMap) -> (FeatureMap, Vec<f64>, Vec<f64>) {
    let b = x.batch();
    let d = x.slice().len() / b.max(1);
    let out = grad_out.channels();
    let mut dw = vec![0.0; weight.len()];
    let mut db = vec![0.0; out];
    let mut dx = vec![0.0; x.slice().len()];
    for ((xi, gi), dxi) in x.slice().chunks(d).zip(grad_out.slice().chunks(out)).zip(dx.chunks_mut(d)) {
        for o in 0..out {
            db[o] += gi[o];
            for j in 0..d {
                dw[o * d + j] += gi[o] * xi[j];
                dxi[j] += gi[o] * weight[o * d + j];
            }
        }
    }
    (x.like(Array4::from_shape_vec(x.data.dim(), dx).expect("shape")), dw, db)
}

/// Inverted dropout: kept activations are scaled by `1 / (1 - p)`. Returns
/// the output and the multiplicative mask.
pub fn dropout<R: Rng>(x: &FeatureMap, p: f64, rng: &mut R) -> (FeatureMap, Vec<f64>) {
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.slice().len()).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
    let y: Vec<f64> = x.slice().iter().zip(&mask).map(|(v, m)| v * m).collect();
    (x.like(Array4::from_shape_vec(x.data.dim(), y).expect("shape")), mask)
}

pub fn dropout_backward(mask: &[f64], grad_out: &FeatureMap) -> FeatureMap {
    let g: Vec<f64> = grad_out.slice().iter().zip(mask).map(|(g, m)| g * m).collect();
    grad_out.like(Array4::from_shape_vec(grad_out.data.dim(), g).expect("shape"))
}

/// Mean softmax cross-entropy over the batch. Returns the loss, the
/// gradient with respect to the logits, and the number of correct argmax
/// predictions.
pub fn softmax_cross_entropy(logits: &FeatureMap, labels: &[usize]) -> Result<(f64, FeatureMap, usize)> {
    let b = logits.batch();
    let k = logits.channels();
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for a batch of {b}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Shape(format!("label {bad} outside {k} classes")));
    }
    let mut loss = 0.0;
    let mut correct = 0;
    let mut grad = Vec::with_capacity(b * k);
    for (z, &label) in logits.slice().chunks(k).zip(labels) {
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_sum = max + sum.ln();
        loss += log_sum - z[label];
        if argmax(z) == label {
            correct += 1;
        }
        for (j, &v) in z.iter().enumerate() {
            let p = (v - log_sum).exp();
            grad.push((p - if j == label { 1.0 } else { 0.0 }) / b as f64);
        }
    }
    let g = logits.like(Array4::from_shape_vec(logits.data.dim(), grad).expect("shape"));
    Ok((loss / b as f64, g, correct))
}

/// Index of the first maximal entry.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize), arity: usize) -> FeatureMap {
        FeatureMap::new(Array4::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0)), arity, 1.0).unwrap()
    }

    fn dot(a: &FeatureMap, b: &FeatureMap) -> f64 {
        a.slice().iter().zip(b.slice()).map(|(x, y)| x * y).sum()
    }

    /// Central-difference check of `d/dx <f(x), dy>` at a few coordinates.
    fn check_input_grad(x: &FeatureMap, dy: &FeatureMap, dx: &FeatureMap, f: impl Fn(&FeatureMap) -> FeatureMap) {
        let eps = 1e-4;
        let n = x.slice().len();
        for idx in (0..n).step_by((n / 13).max(1)) {
            let mut p = x.clone();
            let mut m = x.clone();
            p.data.as_slice_mut().unwrap()[idx] += eps;
            m.data.as_slice_mut().unwrap()[idx] -= eps;
            let fd = (dot(&f(&p), dy) - dot(&f(&m), dy)) / (2.0 * eps);
            let an = dx.slice()[idx];
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-2), "idx {idx}: {fd} vs {an}");
        }
    }

    #[test]
    fn batchnorm_constant_input_gives_bias() {
        let x = FeatureMap::new(Array4::from_elem((2, 4, 3, 3), 7.0), 2, 1.0).unwrap();
        let mut stats = BnStats::new(2);
        let (y, _) =
            group_batchnorm(&x, &[2.0, 3.0], &[0.5, -1.0], BnMode::Train { running: &mut stats, momentum: 0.1 })
                .unwrap();
        for (i, v) in y.slice().iter().enumerate() {
            let f = (i / 9 % 4) / 2;
            assert!((v - [0.5, -1.0][f]).abs() < 1e-12);
        }
        assert!((stats.mean[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_standardizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = FeatureMap::new(
            Array4::from_shape_fn((16, 8, 8, 8), |_| 3.0 + 2.0 * rng.sample::<f64, _>(StandardNormal)),
            4,
            1.0,
        )
        .unwrap();
        let mut stats = BnStats::new(2);
        let (y, _) =
            group_batchnorm(&x, &[1.0, 1.0], &[0.0, 0.0], BnMode::Train { running: &mut stats, momentum: 0.1 })
                .unwrap();
        let v = y.slice();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 1e-2 && (var - 1.0).abs() < 1e-2);
    }

    #[test]
    fn batchnorm_commutes_with_orientation_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, (3, 8, 4, 4), 4);
        let perm = |fm: &FeatureMap| {
            let mut d = fm.data.clone();
            for f in 0..2 {
                for k in 0..4 {
                    d.slice_mut(ndarray::s![.., f * 4 + k, .., ..]).assign(&fm.data.slice(ndarray::s![
                        ..,
                        f * 4 + (k + 1) % 4,
                        ..,
                        ..
                    ]));
                }
            }
            fm.like(d)
        };
        let run = |fm: &FeatureMap| {
            let mut stats = BnStats::new(2);
            group_batchnorm(fm, &[1.5, 0.5], &[0.1, 0.2], BnMode::Train { running: &mut stats, momentum: 0.1 })
                .unwrap()
                .0
        };
        let a = perm(&run(&x));
        let b = run(&perm(&x));
        assert!(a.slice().iter().zip(b.slice()).all(|(p, q)| (p - q).abs() < 1e-12));
    }

    #[test]
    fn batchnorm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, (2, 6, 4, 3), 3);
        let dy = random(&mut rng, (2, 6, 4, 3), 3);
        let (scale, bias) = ([1.3, -0.7], [0.2, 0.4]);
        let train = |fm: &FeatureMap| {
            let mut stats = BnStats::new(2);
            group_batchnorm(fm, &scale, &bias, BnMode::Train { running: &mut stats, momentum: 0.1 }).unwrap()
        };
        let (_, cache) = train(&x);
        let (dx, dscale, dbias) = group_batchnorm_backward(&cache, &dy);
        check_input_grad(&x, &dy, &dx, |fm| train(fm).0);

        let eps = 1e-4;
        for f in 0..2 {
            let mut sp = scale;
            let mut sm = scale;
            sp[f] += eps;
            sm[f] -= eps;
            let mut st = BnStats::new(2);
            let lp = dot(
                &group_batchnorm(&x, &sp, &bias, BnMode::Train { running: &mut st, momentum: 0.1 }).unwrap().0,
                &dy,
            );
            let lm = dot(
                &group_batchnorm(&x, &sm, &bias, BnMode::Train { running: &mut st, momentum: 0.1 }).unwrap().0,
                &dy,
            );
            assert!(((lp - lm) / (2.0 * eps) - dscale[f]).abs() < 1e-5 * dscale[f].abs().max(1e-2));
            let expect: f64 = (0..dy.slice().len()).filter(|i| (i / 12 % 6) / 3 == f).map(|i| dy.slice()[i]).sum();
            assert!((dbias[f] - expect).abs() < 1e-12);
        }

        let stats = BnStats { mean: vec![0.3, -0.1], var: vec![2.0, 0.5] };
        let eval = |fm: &FeatureMap| group_batchnorm(fm, &scale, &bias, BnMode::Eval(&stats)).unwrap();
        let (_, cache) = eval(&x);
        let (dx, _, _) = group_batchnorm_backward(&cache, &dy);
        check_input_grad(&x, &dy, &dx, |fm| eval(fm).0);
    }

    #[test]
    fn relu_and_pool_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&mut rng, (2, 4, 6, 5), 2);

        let dy = random(&mut rng, (2, 4, 6, 5), 2);
        check_input_grad(&x, &dy, &relu_backward(&x, &dy), relu);

        let (y, arg) = maxpool2(&x);
        assert_eq!(y.spatial(), (3, 2));
        assert_eq!(y.h, 2.0);
        let dy = random(&mut rng, (2, 4, 3, 2), 2);
        check_input_grad(&x, &dy, &maxpool2_backward(&arg, &dy), |fm| maxpool2(fm).0);

        let (y, arg) = orientation_pool(&x);
        assert_eq!((y.channels(), y.orientation_arity), (2, 1));
        let dy = random(&mut rng, (2, 2, 6, 5), 1);
        check_input_grad(&x, &dy, &orientation_pool_backward(&arg, &dy), |fm| orientation_pool(fm).0);

        let dy = random(&mut rng, (2, 4, 1, 1), 2);
        check_input_grad(&x, &dy, &global_avg_pool_backward(x.data.dim(), &dy), global_avg_pool);
    }

    #[test]
    fn orientation_pool_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&mut rng, (1, 3, 4, 4), 1);
        assert_eq!(orientation_pool(&x).0.data, x.data);

        let mut hot = Array4::zeros((1, 4, 2, 2));
        hot[[0, 2, 1, 0]] = 5.0;
        let y = orientation_pool(&FeatureMap::new(hot.clone(), 4, 1.0).unwrap()).0;
        assert_eq!(y.data[[0, 0, 1, 0]], 5.0);

        let g = random(&mut rng, (2, 8, 3, 3), 4);
        let mut rolled = g.data.clone();
        for f in 0..2 {
            for k in 0..4 {
                rolled.slice_mut(ndarray::s![.., f * 4 + k, .., ..]).assign(&g.data.slice(ndarray::s![
                    ..,
                    f * 4 + (k + 3) % 4,
                    ..,
                    ..
                ]));
            }
        }
        assert_eq!(orientation_pool(&g).0.data, orientation_pool(&g.like(rolled)).0.data);
    }

    #[test]
    fn dense_and_loss_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(&mut rng, (3, 5, 1, 1), 1);
        let w: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = [0.1, -0.2, 0.3];
        let dy = random(&mut rng, (3, 3, 1, 1), 1);
        let (dx, dw, db) = dense_backward(&x, &w, &dy);
        check_input_grad(&x, &dy, &dx, |fm| dense(fm, &w, &b).unwrap());
        let eps = 1e-4;
        for j in [0, 7, 14] {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += eps;
            wm[j] -= eps;
            let fd = (dot(&dense(&x, &wp, &b).unwrap(), &dy) - dot(&dense(&x, &wm, &b).unwrap(), &dy)) / (2.0 * eps);
            assert!((fd - dw[j]).abs() < 1e-5 * dw[j].abs().max(1e-2));
        }
        assert!((db[1] - (0..3).map(|i| dy.slice()[i * 3 + 1]).sum::<f64>()).abs() < 1e-12);

        let logits = random(&mut rng, (4, 3, 1, 1), 1);
        let labels = [0, 2, 1, 2];
        let (_, g, _) = softmax_cross_entropy(&logits, &labels).unwrap();
        for idx in 0..12 {
            let mut p = logits.clone();
            let mut m = logits.clone();
            p.data.as_slice_mut().unwrap()[idx] += eps;
            m.data.as_slice_mut().unwrap()[idx] -= eps;
            let fd = (softmax_cross_entropy(&p, &labels).unwrap().0 - softmax_cross_entropy(&m, &labels).unwrap().0)
                / (2.0 * eps);
            assert!((fd - g.slice()[idx]).abs() < 1e-5 * g.slice()[idx].abs().max(1e-2));
        }
        assert!(softmax_cross_entropy(&logits, &[0, 1, 2, 3]).is_err());
    }

    #[test]
    fn dropout_scales_kept_units() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = FeatureMap::planar(Array4::from_elem((1, 1000, 1, 1), 1.0));
        let (y, mask) = dropout(&x, 0.25, &mut rng);
        assert!(y.slice().iter().all(|&v| v == 0.0 || (v - 4.0 / 3.0).abs() < 1e-15));
        let kept = mask.iter().filter(|&&m| m > 0.0).count();
        assert!((650..850).contains(&kept));
        let g = dropout_backward(&mask, &x);
        assert_eq!(g.slice(), y.slice());
    }
}
