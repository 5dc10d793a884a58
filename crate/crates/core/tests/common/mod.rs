//! Independent oracles shared by the integration tests: central finite
//! differences for every layer and for a composed network, and the
//! pairwise Mann-Whitney statistic for ROC area.
#![allow(dead_code)]

use polypnet::nn::{sigmoid_bce, Conv2d, Dense, Dropout, MaxPool2d, Relu};
use polypnet::zoo::build;
use polypnet::{Label, Layer, ModelSpec, Mode, Network, Rng, Tensor, WeightContainer};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + STEP;
            let up = f(&probe);
            probe[i] = x[i] - STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

/// `||a - n|| / (||a|| + ||n||)`, zero when both vectors vanish.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn uniform(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::random_uniform(shape, -1.0, 1.0, rng).unwrap()
}

fn range(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below((hi - lo + 1) as u64) as usize
}

/// `sum(y * r)`: a scalar objective whose gradient with respect to `y` is `r`.
fn project(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// One relative error per random conv2d instance, covering the input,
/// kernel and bias gradients.
pub fn check_conv2d(instances: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    (0..instances)
        .map(|_| {
            let (n, c, f) = (range(&mut rng, 1, 2), range(&mut rng, 1, 3), range(&mut rng, 1, 3));
            let k = [1, 3, 5][range(&mut rng, 0, 2)];
            let stride = range(&mut rng, 1, 2);
            let pad = range(&mut rng, 0, k / 2);
            let (oh, ow) = (range(&mut rng, 1, 4), range(&mut rng, 1, 4));
            let h = (oh - 1) * stride + k - 2 * pad;
            let w = (ow - 1) * stride + k - 2 * pad;
            let x = uniform(&[n, c, h, w], &mut rng);
            let wt = uniform(&[f, c, k, k], &mut rng);
            let b = uniform(&[f], &mut rng);
            let r = uniform(&[n, f, oh, ow], &mut rng);

            let (xs, ws) = (x.len(), wt.len());
            let theta = concat(&[x.data(), wt.data(), b.data()]);
            let objective = |t: &[f64]| {
                let layer = Conv2d::new(tensor(wt.shape(), &t[xs..xs + ws]), tensor(b.shape(), &t[xs + ws..]), stride, pad)
                    .unwrap();
                project(&layer.infer(&tensor(x.shape(), &t[..xs])).unwrap(), &r)
            };
            let numeric = numeric_grad(&theta, objective);

            let mut layer = Conv2d::new(wt.clone(), b.clone(), stride, pad).unwrap();
            layer.forward_cached(&x).unwrap();
            let dx = layer.backward(&r, true, true).unwrap().unwrap();
            let analytic = concat(&[dx.data(), layer.grad_weight().data(), layer.grad_bias().data()]);
            rel_err(&analytic, &numeric)
        })
        .collect()
}

pub fn check_dense(instances: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    (0..instances)
        .map(|_| {
            let (n, i, o) = (range(&mut rng, 1, 3), range(&mut rng, 1, 6), range(&mut rng, 1, 4));
            let x = uniform(&[n, i], &mut rng);
            let wt = uniform(&[i, o], &mut rng);
            let b = uniform(&[o], &mut rng);
            let r = uniform(&[n, o], &mut rng);

            let (xs, ws) = (x.len(), wt.len());
            let theta = concat(&[x.data(), wt.data(), b.data()]);
            let numeric = numeric_grad(&theta, |t| {
                let layer = Dense::new(tensor(wt.shape(), &t[xs..xs + ws]), tensor(b.shape(), &t[xs + ws..])).unwrap();
                project(&layer.infer(&tensor(x.shape(), &t[..xs])).unwrap(), &r)
            });

            let mut layer = Dense::new(wt.clone(), b.clone()).unwrap();
            layer.forward_cached(&x).unwrap();
            let dx = layer.backward(&r, true, true).unwrap().unwrap();
            let analytic = concat(&[dx.data(), layer.grad_weight().data(), layer.grad_bias().data()]);
            rel_err(&analytic, &numeric)
        })
        .collect()
}

/// Inputs stay at least 0.01 away from the kink.
pub fn check_relu(instances: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    (0..instances)
        .map(|_| {
            let shape = [range(&mut rng, 1, 2), range(&mut rng, 1, 3), range(&mut rng, 1, 5), range(&mut rng, 1, 5)];
            let len: usize = shape.iter().product();
            let data: Vec<f64> = (0..len)
                .map(|_| {
                    let magnitude = rng.uniform_range(0.01, 1.0);
                    if rng.bernoulli(0.5) {
                        magnitude
                    } else {
                        -magnitude
                    }
                })
                .collect();
            let x = tensor(&shape, &data);
            let r = uniform(&shape, &mut rng);
            let layer = Relu::new();
            let numeric = numeric_grad(x.data(), |t| project(&layer.infer(&tensor(&shape, t)).unwrap(), &r));
            let mut layer = Relu::new();
            layer.forward_cached(&x).unwrap();
            rel_err(layer.backward(&r).unwrap().data(), &numeric)
        })
        .collect()
}

/// Inputs are distinct and spaced 0.01 apart so no window has a near tie.
pub fn check_maxpool(instances: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    (0..instances)
        .map(|_| {
            let window = range(&mut rng, 1, 3);
            let stride = range(&mut rng, 1, window);
            let (oh, ow) = (range(&mut rng, 1, 4), range(&mut rng, 1, 4));
            let shape = [
                range(&mut rng, 1, 2),
                range(&mut rng, 1, 3),
                (oh - 1) * stride + window,
                (ow - 1) * stride + window,
            ];
            let len: usize = shape.iter().product();
            let mut ranks: Vec<usize> = (0..len).collect();
            rng.shuffle(&mut ranks);
            let data: Vec<f64> = ranks.iter().map(|&k| k as f64 * 0.01 - 0.5).collect();
            let x = tensor(&shape, &data);
            let r = uniform(&[shape[0], shape[1], oh, ow], &mut rng);
            let layer = MaxPool2d::new((window, window), stride).unwrap();
            let numeric = numeric_grad(x.data(), |t| project(&layer.infer(&tensor(&shape, t)).unwrap(), &r));
            let mut layer = layer;
            layer.forward_cached(&x).unwrap();
            rel_err(layer.backward(&r).unwrap().data(), &numeric)
        })
        .collect()
}

/// Train-mode dropout with the mask held fixed across perturbations.
pub fn check_dropout(instances: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    (0..instances)
        .map(|_| {
            let rate = rng.uniform_range(0.1, 0.7);
            let shape = [range(&mut rng, 1, 3), range(&mut rng, 1, 8)];
            let x = uniform(&shape, &mut rng);
            let r = uniform(&shape, &mut rng);
            let mut layer = Dropout::new(rate).unwrap();
            let mask = layer.sample_mask(&shape, &mut rng);
            let numeric = numeric_grad(x.data(), |t| {
                let mut probe = Dropout::new(rate).unwrap();
                project(&probe.forward_with_mask(&tensor(&shape, t), mask.clone()).unwrap(), &r)
            });
            layer.forward_with_mask(&x, mask).unwrap();
            rel_err(layer.backward(&r).unwrap().data(), &numeric)
        })
        .collect()
}

pub fn check_sigmoid_bce(instances: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    (0..instances)
        .map(|_| {
            let n = range(&mut rng, 1, 8);
            let z = Tensor::random_uniform(&[n, 1], -4.0, 4.0, &mut rng).unwrap();
            let y: Vec<f64> = (0..n).map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }).collect();
            let y = tensor(&[n, 1], &y);
            let numeric = numeric_grad(z.data(), |t| sigmoid_bce(&tensor(&[n, 1], t), &y).unwrap().loss);
            rel_err(sigmoid_bce(&z, &y).unwrap().grad.data(), &numeric)
        })
        .collect()
}

/// The 4-block simple CNN used by the composed check: 16x16 RGB input,
/// widths 2-4-8-16, a 4-unit hidden layer and both dropout layers active.
pub fn composed_spec() -> ModelSpec {
    ModelSpec {
        input_shape: [3, 16, 16],
        base_width: 2,
        head_width: 4,
        ..ModelSpec::simple(4, &[0.3, 0.3])
    }
}

fn network_loss(net: &mut Network, x: &Tensor, y: &Tensor, rng: &Rng) -> f64 {
    let logits = net.forward(x, &mut rng.clone()).unwrap();
    net.head().loss(&logits, y).unwrap().loss
}

/// Distance of a train-mode forward pass from the nearest kink: the
/// smallest |ReLU input| and the smallest gap between the top two values of
/// any pooling window whose maximum is positive.
pub fn kink_distance(net: &Network, x: &Tensor, masks: &Rng) -> f64 {
    let mut rng = masks.clone();
    let mut x = x.clone();
    let mut nearest = f64::INFINITY;
    for i in 0..net.len() {
        let mut layer = net.layer(i).clone();
        match &layer {
            Layer::Relu(_) => {
                nearest = x.data().iter().fold(nearest, |m, v| m.min(v.abs()));
            }
            Layer::MaxPool2d(pool) => {
                let (win, stride) = (pool.window(), pool.stride());
                let &[n, c, h, w] = x.shape() else { unreachable!() };
                let out = pool.output_shape(&[c, h, w]).unwrap();
                for plane in x.data().chunks_exact(h * w).take(n * c) {
                    for oy in 0..out[1] {
                        for ox in 0..out[2] {
                            let mut vals: Vec<f64> = (0..win.0)
                                .flat_map(|dy| (0..win.1).map(move |dx| (dy, dx)))
                                .map(|(dy, dx)| plane[(oy * stride + dy) * w + ox * stride + dx])
                                .collect();
                            vals.sort_by(|a, b| b.total_cmp(a));
                            if vals[0] > 0.0 && vals.len() > 1 {
                                nearest = nearest.min(vals[0] - vals[1]);
                            }
                        }
                    }
                }
            }
            _ => {}
        }
        x = layer.forward(&x, Mode::Train, &mut rng).unwrap();
    }
    nearest
}

/// Minimum [`kink_distance`] for the composed check; instances closer than
/// this are redrawn, since a step of 1e-5 in one weight can move an
/// activation across a kink and the one-sided limits then disagree.
pub const KINK_MARGIN: f64 = 1e-3;

/// Whole-network check in train mode: every parameter and the input, with
/// dropout masks fixed by replaying a cloned generator.
pub fn check_network(instances: usize, seed: u64) -> Vec<f64> {
    let spec = composed_spec();
    let mut rng = Rng::new(seed);
    let n = 2;
    let mut shape = vec![n];
    shape.extend_from_slice(&spec.input_shape);
    (0..instances)
        .map(|_| {
            // Redraw until the pass is clear of kinks and the two samples
            // reach different logits (no dead network).
            let (mut net, x, masks) = loop {
                let mut net = build(&spec, rng.next_u64()).unwrap();
                net.set_mode(Mode::Train);
                let x = uniform(&shape, &mut rng);
                let stream = rng.next_u64();
                let masks = rng.fork(stream);
                let logits = net.forward(&x, &mut masks.clone()).unwrap();
                let live = (logits.data()[0] - logits.data()[1]).abs() > 1e-6;
                if live && kink_distance(&net, &x, &masks) > KINK_MARGIN {
                    break (net, x, masks);
                }
            };
            let y = tensor(&[n, 1], &[1.0, 0.0]);

            let params = WeightContainer::from_network(&net).tensors().to_vec();
            let flat: Vec<f64> = params.iter().flat_map(|(_, t)| t.data().iter().copied()).collect();
            let unflatten = |t: &[f64]| -> Vec<(String, Tensor)> {
                let mut offset = 0;
                params
                    .iter()
                    .map(|(name, p)| {
                        let v = tensor(p.shape(), &t[offset..offset + p.len()]);
                        offset += p.len();
                        (name.clone(), v)
                    })
                    .collect()
            };

            let mut probe = net.clone();
            let mut numeric = numeric_grad(&flat, |t| {
                probe.set_params(&unflatten(t)).unwrap();
                network_loss(&mut probe, &x, &y, &masks)
            });
            probe.set_params(&params).unwrap();
            numeric.extend(numeric_grad(x.data(), |t| network_loss(&mut probe, &tensor(&shape, t), &y, &masks)));

            net.train_batch(&x, &y, &mut masks.clone()).unwrap();
            let mut analytic: Vec<f64> = net.params().iter().flat_map(|p| p.grad.data().iter().copied()).collect();
            let logits = net.forward(&x, &mut masks.clone()).unwrap();
            let grad = net.head().loss(&logits, &y).unwrap().grad;
            analytic.extend_from_slice(net.backward(&grad).unwrap().data());
            rel_err(&analytic, &numeric)
        })
        .collect()
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, by direct enumeration of all pairs.
pub fn mann_whitney(scores: &[f64], labels: &[Label]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l == Label::Polyp) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &l)| l == Label::Normal) {
            pairs += 1.0;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}
