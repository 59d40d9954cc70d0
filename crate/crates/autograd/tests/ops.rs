use dkd_autograd::gradcheck::{central_difference, relative_error};
use dkd_autograd::{Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Checks every input of `build` against central differences on up to
/// `probes` random coordinates. `build` must end in a scalar.
fn check<F>(inputs: Vec<Tensor>, probes: usize, build: F)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ts: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &vars).unwrap();
        g.value(out).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    let grads = g.backward(out, &vars).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for (k, t) in inputs.iter().enumerate() {
        for _ in 0..probes.min(t.numel()) {
            let i = rng.random_range(0..t.numel());
            let numeric = central_difference(
                |probe| {
                    let mut ts = inputs.clone();
                    ts[k] = probe.clone();
                    eval(&ts)
                },
                t,
                i,
                1e-6,
            );
            let analytic = grads[k].data()[i];
            let err = relative_error(analytic, numeric);
            assert!(err < 1e-5, "input {k} index {i}: analytic {analytic} numeric {numeric}");
        }
    }
}

fn weighted_sum(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = (0..g.value(v).numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    g.dot_const(v, w)
}

fn naive_conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, ci, h, wd) = x.dims4().unwrap();
    let (co, _, k, _) = w.dims4().unwrap();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(&[n, co, ho, wo]);
    for s in 0..n {
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += w.data()[((o * ci + c) * k + ky) * k + kx]
                                    * x.data()[((s * ci + c) * h + iy as usize) * wd + ix as usize];
                            }
                        }
                    }
                    out.data_mut()[((s * co + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_direct_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(k, stride, pad) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0), (4, 2, 1), (5, 1, 2)] {
        let x = random(&mut rng, &[2, 3, 9, 8]);
        let w = random(&mut rng, &[4, 3, k, k]);
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let wv = g.leaf(w.clone());
        let y = g.conv2d(xv, wv, None, stride, pad).unwrap();
        let expected = naive_conv(&x, &w, stride, pad);
        assert_eq!(g.value(y).shape(), expected.shape());
        assert!(g.value(y).max_abs_diff(&expected) < 1e-12);
    }
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    // <conv(x), y> == <x, conv_transpose(y)> with the same weights.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, &[1, 3, 8, 8]);
    let w = random(&mut rng, &[5, 3, 4, 4]);
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let wv = g.leaf(w.clone());
    let cx = g.conv2d(xv, wv, None, 2, 1).unwrap();
    let y = random(&mut rng, g.value(cx).shape());
    let lhs: f64 = g.value(cx).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
    // conv weight Co×Ci×k×k is already the Ci'×Co' layout the transpose expects.
    let yv = g.leaf(y);
    let ty = g.conv_transpose2d(yv, wv, None, 2, 1, 0).unwrap();
    assert_eq!(g.value(ty).shape(), x.shape());
    let rhs: f64 = g.value(ty).data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = vec![random(&mut rng, &[2, 3, 7, 6]), random(&mut rng, &[4, 3, 3, 3]), random(&mut rng, &[4])];
    check(inputs, 12, |g, v| {
        let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
        weighted_sum(g, y, 10)
    });
    let inputs = vec![random(&mut rng, &[1, 5, 4, 4]), random(&mut rng, &[3, 5, 1, 1])];
    check(inputs, 12, |g, v| {
        let y = g.conv2d(v[0], v[1], None, 1, 0)?;
        weighted_sum(g, y, 11)
    });
}

#[test]
fn pointwise_io_matches_transposed_conv_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&mut rng, &[2, 3, 4, 5]);
    let w = random(&mut rng, &[1, 1, 3, 4]);
    let mut oihw = Tensor::zeros(&[4, 3, 1, 1]);
    for i in 0..3 {
        for o in 0..4 {
            oihw.data_mut()[o * 3 + i] = w.data()[i * 4 + o];
        }
    }
    let mut g = Graph::new();
    let (xv, wv, ov) = (g.leaf(x), g.leaf(w.clone()), g.leaf(oihw));
    let a = g.pointwise_io(xv, wv).unwrap();
    let b = g.conv2d(xv, ov, None, 1, 0).unwrap();
    assert!(g.value(a).max_abs_diff(g.value(b)) < 1e-14);

    let inputs = vec![random(&mut rng, &[2, 3, 4, 5]), w];
    check(inputs, 12, |g, v| {
        let y = g.pointwise_io(v[0], v[1])?;
        weighted_sum(g, y, 18)
    });
}

#[test]
fn conv_transpose2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inputs = vec![random(&mut rng, &[2, 3, 4, 5]), random(&mut rng, &[3, 2, 4, 4]), random(&mut rng, &[2])];
    check(inputs, 12, |g, v| {
        let y = g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1, 0)?;
        weighted_sum(g, y, 12)
    });
    let inputs = vec![random(&mut rng, &[1, 3, 5, 5]), random(&mut rng, &[3, 4, 3, 3])];
    check(inputs, 12, |g, v| {
        let y = g.conv_transpose2d(v[0], v[1], None, 1, 1, 0)?;
        weighted_sum(g, y, 13)
    });
}

#[test]
fn depthwise_and_pooling_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = vec![random(&mut rng, &[2, 3, 6, 7]), random(&mut rng, &[2, 3, 5, 5])];
    check(inputs, 15, |g, v| {
        let y = g.depthwise_corr(v[0], v[1])?;
        weighted_sum(g, y, 14)
    });
    let inputs = vec![random(&mut rng, &[1, 2, 8, 6])];
    check(inputs, 15, |g, v| {
        let y = g.max_pool2d(v[0], 2, 2)?;
        let y = g.adaptive_avg_pool2d(y, 3, 5)?;
        weighted_sum(g, y, 15)
    });
}

#[test]
fn batch_norm_gradients_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inputs = vec![random(&mut rng, &[2, 3, 4, 4]), random(&mut rng, &[3]), random(&mut rng, &[3])];
    check(inputs.clone(), 15, |g, v| {
        let (y, _) = g.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
        let y = g.relu(y);
        weighted_sum(g, y, 16)
    });
    check(inputs, 15, |g, v| {
        let y = g.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0], 1e-5)?;
        weighted_sum(g, y, 17)
    });
}

#[test]
fn elementwise_concat_and_mse_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs = vec![random(&mut rng, &[1, 2, 3, 3]), random(&mut rng, &[1, 3, 3, 3]), random(&mut rng, &[1, 5, 3, 3])];
    check(inputs, 15, |g, v| {
        let c = g.concat_channels(&[v[0], v[1]])?;
        let d = g.sub(c, v[2])?;
        let e = g.add(d, c)?;
        let e = g.scale(e, 0.7);
        g.mse(e, v[2])
    });
}

#[test]
fn batch_norm_train_statistics() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(&[2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let gamma = g.leaf(Tensor::full(&[1], 1.0));
    let beta = g.leaf(Tensor::zeros(&[1]));
    let (y, stats) = g.batch_norm_train(x, gamma, beta, 0.0).unwrap();
    assert_eq!(stats.mean, vec![2.5]);
    // biased variance 1.25, unbiased 5/3
    assert!((stats.var[0] - 5.0 / 3.0).abs() < 1e-12);
    let mean: f64 = g.value(y).data().iter().sum::<f64>() / 4.0;
    assert!(mean.abs() < 1e-12);
}

#[test]
fn backward_skips_unrelated_leaves() {
    let mut g = Graph::new();
    let a = g.leaf(Tensor::scalar(2.0));
    let b = g.leaf(Tensor::scalar(3.0));
    let loss = g.mse(a, b).unwrap();
    let c = g.leaf(Tensor::scalar(1.0));
    let grads = g.backward(loss, &[a, c]).unwrap();
    assert_eq!(grads[0].item(), -2.0);
    assert_eq!(grads[1].item(), 0.0);
    assert!(g.backward(a, &[a]).is_ok());
    let wide = g.leaf(Tensor::zeros(&[2]));
    assert!(g.backward(wide, &[wide]).is_err());
}

#[test]
fn inference_graph_matches_recording_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&mut rng, &[1, 3, 8, 8]);
    let w = random(&mut rng, &[4, 3, 3, 3]);
    let run = |mut g: Graph| {
        let xv = g.leaf(x.clone());
        let wv = g.leaf(w.clone());
        let y = g.conv2d(xv, wv, None, 2, 1).unwrap();
        let y = g.max_pool2d(y, 2, 2).unwrap();
        g.value(y).clone()
    };
    assert_eq!(run(Graph::new()), run(Graph::inference()));
}

#[test]
fn shape_errors_are_reported() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::zeros(&[1, 3, 4, 4]));
    let w = g.leaf(Tensor::zeros(&[2, 2, 3, 3]));
    assert!(g.conv2d(x, w, None, 1, 1).is_err());
    let k = g.leaf(Tensor::zeros(&[1, 3, 2, 2]));
    assert!(g.depthwise_corr(x, k).is_err());
    let y = g.leaf(Tensor::zeros(&[1, 3, 4, 5]));
    assert!(g.add(x, y).is_err());
}
