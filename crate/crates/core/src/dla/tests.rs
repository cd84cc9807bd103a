use super::*;
use proptest::prelude::*;
use crate::rng::Rng;
use super::gradcheck::{gradcheck_instance, rand_line, rand_linear, rand_maps, rand_params};


/// Independent loop oracle: explicit (m, l, p) indexing, the steplength
/// formula written out, and bilinear weights from the tent function.
fn loop_oracle(
    c: &DlaConfig,
    values: &[FeatureMap],
    line: &LineSegment,
    alpha: &[f64],
    weights: &[f64],
) -> Vec<f64> {
    let dh = c.dim / c.heads;
    let mut out = vec![0.0; c.dim];
    let mut t = 0;
    let total = c.total_points();
    for l in 0..c.levels() {
        for p in 0..c.points_per_level[l] {
            for m in 0..c.heads {
                let i = m * total + t;
                let px = alpha[i] * (line.ep1[0] - line.ep2[0]) + 0.5 * (line.ep1[0] + line.ep2[0]);
                let py = alpha[i] * (line.ep1[1] - line.ep2[1]) + 0.5 * (line.ep1[1] + line.ep2[1]);
                let map = &values[l];
                let xp = px * map.width() as f64 - 0.5;
                let yp = py * map.height() as f64 - 0.5;
                for ch in m * dh..(m + 1) * dh {
                    let mut s = 0.0;
                    for r in 0..map.height() {
                        for q in 0..map.width() {
                            let wx = (1.0 - (xp - q as f64).abs()).max(0.0);
                            let wy = (1.0 - (yp - r as f64).abs()).max(0.0);
                            s += wx * wy * map.at(ch, r, q);
                        }
                    }
                    out[ch] += weights[i] * s;
                }
            }
            let _ = p;
            t += 1;
        }
    }
    out
}

fn softmax_heads(logits: &[f64], group: usize) -> Vec<f64> {
    let mut w = logits.to_vec();
    for h in w.chunks_mut(group) {
        let mx = h.iter().cloned().fold(f64::MIN, f64::max);
        let s: f64 = h.iter().map(|v| (v - mx).exp()).sum();
        h.iter_mut().for_each(|v| *v = (*v - mx).exp() / s);
    }
    w
}

#[test]
fn steplength_half_hits_endpoints() {
    let line = LineSegment::new([0.2, 0.2], [0.8, 0.8]);
    let alpha = Tensor::new(vec![1, 1, 4], vec![0.5, -0.5, 0.0, 1.0]).unwrap();
    let s = sampling_points(&line, &alpha);
    assert_eq!(s.points.shape(), &[1, 1, 4, 2]);
    assert_eq!(s.point(0), [0.2, 0.2]);
    assert_eq!(s.point(1), [0.8, 0.8]);
    assert_eq!(s.point(2), [0.5, 0.5]);
    let e = s.point(3);
    // (1.5 * 0.2 - 0.5 * 0.8) rounds slightly off -0.1.
    assert!((e[0] + 0.1).abs() < 1e-15 && (e[1] + 0.1).abs() < 1e-15);
}

#[test]
fn constant_maps_give_constant_heads() {
    let mut rng = Rng::new(1, 0);
    let c = DlaConfig::new(2, vec![2, 1], 4).unwrap();
    let values: Vec<FeatureMap> = [(4, 4), (2, 2)]
        .iter()
        .map(|&(h, w)| FeatureMap::from_fn(4, h, w, |_, _, _| 0.7))
        .collect();
    let line = LineSegment::new([0.3, 0.4], [0.6, 0.5]);
    let alpha = Tensor::from_fn(&[2, 3], |_| rng.range(-0.5, 0.5));
    let a = AttentionTensor::from_logits(&Tensor::from_fn(&[2, 3], |_| rng.range(-2.0, 2.0))).unwrap();
    let s = sampling_points(&line, &alpha);
    let agg = dla_aggregate(&c, &values, &s, &a).unwrap();
    for v in agg {
        assert!((v - 0.7).abs() < 1e-12);
    }
}

#[test]
fn single_sample_is_projected_bilinear_value() {
    let mut rng = Rng::new(2, 0);
    let c = DlaConfig::new(1, vec![1], 3).unwrap();
    let values = rand_maps(&mut rng, &[3], &[(5, 4)]);
    let out_proj = rand_linear(&mut rng, 3, 3, 1.0);
    let line = rand_line(&mut rng);
    let alpha = Tensor::new(vec![1, 1], vec![0.3]).unwrap();
    let s = sampling_points(&line, &alpha);
    let a = AttentionTensor::from_logits(&Tensor::new(vec![1, 1], vec![-4.0]).unwrap()).unwrap();
    assert_eq!(a.weights.data(), &[1.0]);
    let out = dla_forward(&c, &values, &s, &a, &out_proj).unwrap();
    let sample = crate::numerics::bilinear_sample(&values[0], (s.point(0)[0], s.point(0)[1])).unwrap();
    assert_eq!(out, out_proj.forward(&sample, 1));
}

#[test]
fn forward_matches_loop_oracle() {
    let mut rng = Rng::new(3, 0);
    let c = DlaConfig::new(2, vec![2, 1], 4).unwrap();
    for _ in 0..50 {
        let values = rand_maps(&mut rng, &[4, 4], &[(4, 4), (4, 4)]);
        let line = rand_line(&mut rng);
        let alpha: Vec<f64> = (0..6).map(|_| rng.range(-1.0, 1.0)).collect();
        let logits: Vec<f64> = (0..6).map(|_| rng.range(-2.0, 2.0)).collect();
        let weights = softmax_heads(&logits, 3);
        let s = sampling_points(&line, &Tensor::new(vec![2, 3], alpha.clone()).unwrap());
        let a = AttentionTensor::from_logits(&Tensor::new(vec![2, 3], logits).unwrap()).unwrap();
        let got = dla_aggregate(&c, &values, &s, &a).unwrap();
        let want = loop_oracle(&c, &values, &line, &alpha, &weights);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }
}

#[test]
fn level_count_mismatch_is_shape_error() {
    let c = DlaConfig::new(1, vec![1, 1], 2).unwrap();
    let values = vec![FeatureMap::zeros(2, 2, 2)];
    let s = sampling_points(&LineSegment::new([0.1, 0.1], [0.2, 0.2]), &Tensor::zeros(&[1, 2]));
    let a = AttentionTensor::from_logits(&Tensor::zeros(&[1, 2])).unwrap();
    assert!(matches!(dla_aggregate(&c, &values, &s, &a), Err(Error::Shape(_))));
}

#[test]
fn config_validation() {
    assert!(DlaConfig::new(3, vec![4, 1, 1], 8).is_err());
    assert!(DlaConfig::new(2, vec![4, 0, 1], 8).is_err());
    assert!(DlaConfig::new(2, vec![], 8).is_err());
    let c = DlaConfig::new(8, vec![4, 1, 1], 256).unwrap();
    assert_eq!((c.levels(), c.total_points(), c.head_dim()), (3, 6, 32));
    assert_eq!(c.sample_levels(), vec![0, 0, 0, 0, 1, 2]);
}

#[test]
fn zero_alpha_head_samples_midpoint_only() {
    let mut rng = Rng::new(4, 0);
    let c = DlaConfig::new(2, vec![3, 1], 4).unwrap();
    let feats = rand_maps(&mut rng, &[3, 5], &[(6, 6), (3, 3)]);
    let mut params = rand_params(&mut rng, &c, &[3, 5]);
    params.alpha_head = Linear::zeros(4, 8);
    let q: Vec<f64> = (0..4).map(|_| rng.range(-1.0, 1.0)).collect();
    let a = dla_attention(&c, &q, &LineSegment::new([0.2, 0.3], [0.6, 0.9]), &feats, &params).unwrap();
    // Same midpoint, different delta.
    let b = dla_attention(&c, &q, &LineSegment::new([0.1, 0.5], [0.7, 0.7]), &feats, &params).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn degenerate_line_samples_single_point() {
    let mut rng = Rng::new(5, 0);
    let c = DlaConfig::new(2, vec![2, 1], 4).unwrap();
    let feats = rand_maps(&mut rng, &[3, 3], &[(6, 6), (3, 3)]);
    let params = rand_params(&mut rng, &c, &[3, 3]);
    let q: Vec<f64> = (0..4).map(|_| rng.range(-1.0, 1.0)).collect();
    let pt = [0.37, 0.61];
    let out = dla_attention(&c, &q, &LineSegment::new(pt, pt), &feats, &params).unwrap();

    // Expected: per head, attention-weighted mix over levels of the value at pt.
    let values = project_values(&params, &feats).unwrap();
    let logits = params.attn_head.forward(&q, 1);
    let w = softmax_heads(&logits, 3);
    let levels = c.sample_levels();
    let mut agg = vec![0.0; 4];
    for m in 0..2 {
        for (t, &l) in levels.iter().enumerate() {
            let s = crate::numerics::bilinear_sample(&values[l], (pt[0], pt[1])).unwrap();
            for ch in m * 2..(m + 1) * 2 {
                agg[ch] += w[m * 3 + t] * s[ch];
            }
        }
    }
    let want = params.out_proj.forward(&agg, 1);
    for (a, b) in out.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_composes_public_ops() {
    let mut rng = Rng::new(6, 0);
    let c = DlaConfig::new(2, vec![2, 1, 1], 4).unwrap();
    let feats = rand_maps(&mut rng, &[3, 4, 2], &[(8, 8), (4, 4), (2, 2)]);
    let params = rand_params(&mut rng, &c, &[3, 4, 2]);
    for _ in 0..10 {
        let q: Vec<f64> = (0..4).map(|_| rng.range(-1.0, 1.0)).collect();
        let line = rand_line(&mut rng);
        let got = dla_attention(&c, &q, &line, &feats, &params).unwrap();

        let values = project_values(&params, &feats).unwrap();
        let alpha = Tensor::new(vec![2, 4], params.alpha_head.forward(&q, 1)).unwrap();
        let logits = Tensor::new(vec![2, 4], params.attn_head.forward(&q, 1)).unwrap();
        let s = sampling_points(&line, &alpha);
        let a = AttentionTensor::from_logits(&logits).unwrap();
        let want = dla_forward(&c, &values, &s, &a, &params.out_proj).unwrap();
        assert_eq!(got, want);
    }
}

#[test]
fn backward_without_forward_is_usage_error() {
    let c = DlaConfig::new(1, vec![1], 2).unwrap();
    let params = DlaParams::zeros(&c, &[2]);
    let mut g = zero_grads(&params);
    let r = dla_backward(&c, &params, &[FeatureMap::zeros(2, 2, 2)], &DlaTape::default(), &[0.0, 0.0], &mut g);
    assert!(matches!(r, Err(Error::Usage(_))));
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut rng = Rng::new(7, 0);
    let c = DlaConfig::new(2, vec![2, 1], 4).unwrap();
    let feats = rand_maps(&mut rng, &[3, 3], &[(5, 5), (3, 3)]);
    let params = rand_params(&mut rng, &c, &[3, 3]);
    let q: Vec<f64> = (0..8).map(|_| rng.range(-1.0, 1.0)).collect();
    let lines = [rand_line(&mut rng), rand_line(&mut rng)];
    let mut tape = DlaTape::default();
    dla_forward_batch(&c, &params, &feats, &q, &lines, &mut tape).unwrap();
    let mut g = zero_grads(&params);
    let ig = dla_backward(&c, &params, &feats, &tape, &[0.0; 8], &mut g).unwrap();
    assert!(g.flatten().iter().all(|v| *v == 0.0));
    assert!(ig.queries.iter().all(|v| *v == 0.0));
    assert!(ig.features.iter().all(|f| f.data().iter().all(|v| *v == 0.0)));
    assert!(ig.ep1.iter().chain(&ig.ep2).all(|p| p == &[0.0, 0.0]));
}

#[test]
fn constant_maps_give_zero_attention_logit_gradient() {
    let mut rng = Rng::new(8, 0);
    let c = DlaConfig::new(2, vec![2, 1], 4).unwrap();
    // Raw maps constant per channel; value projection keeps them constant.
    let feats: Vec<FeatureMap> = [(6, 6), (3, 3)]
        .iter()
        .map(|&(h, w)| FeatureMap::from_fn(3, h, w, |ch, _, _| 0.2 + ch as f64))
        .collect();
    let mut params = rand_params(&mut rng, &c, &[3, 3]);
    // Same projection on both levels so every sample of a channel is equal.
    params.value_proj[1] = params.value_proj[0].clone();
    // Keep samples well inside the maps so zero padding never kicks in.
    params.alpha_head = Linear::zeros(4, 6);
    params.alpha_head.bias = Tensor::from_fn(&[6], |_| rng.range(-0.5, 0.5));
    let q: Vec<f64> = (0..4).map(|_| rng.range(-1.0, 1.0)).collect();
    let line = LineSegment::new([0.3, 0.3], [0.6, 0.7]);
    let mut tape = DlaTape::default();
    dla_forward_batch(&c, &params, &feats, &q, &[line], &mut tape).unwrap();
    let up: Vec<f64> = (0..4).map(|_| rng.range(-1.0, 1.0)).collect();
    let mut g = zero_grads(&params);
    dla_backward(&c, &params, &feats, &tape, &up, &mut g).unwrap();
    for v in g.attn_head.weight.data().iter().chain(g.attn_head.bias.data()) {
        assert!(v.abs() < 1e-12, "{v}");
    }
}


#[test]
fn analytic_gradients_match_finite_differences() {
    for seed in 0..24 {
        for (name, err) in gradcheck_instance(seed).unwrap().groups {
            assert!(err < 1e-4, "seed {seed}: {name} relative error {err}");
        }
    }
}

proptest! {
    #[test]
    fn samples_are_collinear_with_endpoints(
        seed in 0u64..100_000,
        a in -3.0f64..3.0,
    ) {
        let mut rng = Rng::new(seed, 9);
        let line = rand_line(&mut rng);
        let alpha = Tensor::from_fn(&[2, 3], |i| if i == 0 { a } else { rng.range(-2.0, 2.0) });
        let s = sampling_points(&line, &alpha);
        let (mid, d) = midpoint_delta(&line);
        for i in 0..s.len() {
            let p = s.point(i);
            let cross = (p[0] - mid[0]) * d[1] - (p[1] - mid[1]) * d[0];
            prop_assert!(cross.abs() < 1e-9);
        }
    }

    #[test]
    fn swapping_endpoints_with_negated_alpha_is_identity(seed in 0u64..100_000) {
        let mut rng = Rng::new(seed, 10);
        let line = rand_line(&mut rng);
        let alpha = Tensor::from_fn(&[2, 2, 2], |_| rng.range(-1.0, 1.0));
        let mut neg = alpha.clone();
        neg.scale(-1.0);
        let s1 = sampling_points(&line, &alpha);
        let s2 = sampling_points(&line.swapped(), &neg);
        prop_assert!(s1.points.max_abs_diff(&s2.points) < 1e-15);
    }

    #[test]
    fn linear_in_feature_values(seed in 0u64..10_000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut rng = Rng::new(seed, 11);
        let c = DlaConfig::new(2, vec![2, 1], 4).unwrap();
        let f = rand_maps(&mut rng, &[4, 4], &[(4, 4), (2, 2)]);
        let g = rand_maps(&mut rng, &[4, 4], &[(4, 4), (2, 2)]);
        let mix: Vec<FeatureMap> = f.iter().zip(&g).map(|(x, y)| {
            let d: Vec<f64> = x.data().iter().zip(y.data()).map(|(u, v)| a * u + b * v).collect();
            FeatureMap::new(4, x.height(), x.width(), d).unwrap()
        }).collect();
        let mut out_proj = rand_linear(&mut rng, 4, 4, 1.0);
        out_proj.bias = Tensor::zeros(&[4]);
        let line = rand_line(&mut rng);
        let s = sampling_points(&line, &Tensor::from_fn(&[2, 3], |_| rng.range(-1.0, 1.0)));
        let att = AttentionTensor::from_logits(&Tensor::from_fn(&[2, 3], |_| rng.range(-2.0, 2.0))).unwrap();
        let lhs = dla_forward(&c, &mix, &s, &att, &out_proj).unwrap();
        let rf = dla_forward(&c, &f, &s, &att, &out_proj).unwrap();
        let rg = dla_forward(&c, &g, &s, &att, &out_proj).unwrap();
        for i in 0..4 {
            prop_assert!((lhs[i] - (a * rf[i] + b * rg[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn attention_heads_sum_to_one(seed in 0u64..100_000, scale in 0.0f64..100.0) {
        let mut rng = Rng::new(seed, 12);
        let logits = Tensor::from_fn(&[4, 6], |_| rng.range(-scale, scale));
        let a = AttentionTensor::from_logits(&logits).unwrap();
        for head in a.weights.data().chunks(6) {
            prop_assert!((head.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
