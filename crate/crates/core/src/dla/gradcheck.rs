//! Gradient check of the attention operator against central differences.

use alloc::vec::Vec;

use super::*;
use crate::numerics::{finite_difference_slice, relative_error};

/// Worst relative error per input or parameter group of one instance.
#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub config: DlaConfig,
    pub groups: Vec<(&'static str, f64)>,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|g| g.1).fold(0.0, f64::max)
    }
}

pub(crate) fn rand_linear(rng: &mut Rng, i: usize, o: usize, scale: f64) -> Linear {
    Linear {
        weight: Tensor::from_fn(&[o, i], |_| rng.range(-scale, scale)),
        bias: Tensor::from_fn(&[o], |_| rng.range(-scale, scale)),
    }
}

pub(crate) fn rand_params(rng: &mut Rng, c: &DlaConfig, channels: &[usize]) -> DlaParams {
    let mt = c.heads * c.total_points();
    DlaParams {
        alpha_head: rand_linear(rng, c.dim, mt, 0.5),
        attn_head: rand_linear(rng, c.dim, mt, 1.0),
        value_proj: channels.iter().map(|&ch| rand_linear(rng, ch, c.dim, 0.7)).collect(),
        out_proj: rand_linear(rng, c.dim, c.dim, 0.5),
    }
}

pub(crate) fn rand_maps(rng: &mut Rng, channels: &[usize], sizes: &[(usize, usize)]) -> Vec<FeatureMap> {
    channels
        .iter()
        .zip(sizes)
        .map(|(&c, &(h, w))| FeatureMap::from_fn(c, h, w, |_, _, _| rng.range(-1.0, 1.0)))
        .collect()
}

pub(crate) fn rand_line(rng: &mut Rng) -> LineSegment {
    LineSegment::new(
        [rng.range(0.05, 0.95), rng.range(0.05, 0.95)],
        [rng.range(0.05, 0.95), rng.range(0.05, 0.95)],
    )
}

type LinearGroup = (&'static str, fn(&mut DlaParams) -> &mut Linear, fn(&DlaParams) -> &Linear);

/// Analytic versus central-difference gradients (step 1e-6) for every input
/// and parameter group on one random instance with `M ≤ 4`, `L ≤ 3`,
/// `P ≤ 4`, `d ≤ 32`.
pub fn gradcheck_instance(seed: u64) -> Result<GradcheckReport> {
    let mut rng = Rng::new(seed, 17);
    let heads = 1 + rng.below(4) as usize;
    let levels = 1 + rng.below(3) as usize;
    let points: Vec<usize> = (0..levels).map(|_| 1 + rng.below(4) as usize).collect();
    let dim = heads * (1 + rng.below((32 / heads) as u64).min(3) as usize);
    let c = DlaConfig::new(heads, points, dim)?;
    let channels: Vec<usize> = (0..levels).map(|_| 1 + rng.below(4) as usize).collect();
    let sizes: Vec<(usize, usize)> = (0..levels)
        .map(|_| (2 + rng.below(5) as usize, 2 + rng.below(5) as usize))
        .collect();
    let feats = rand_maps(&mut rng, &channels, &sizes);
    let params = rand_params(&mut rng, &c, &channels);
    let k = 1 + rng.below(2) as usize;
    let q: Vec<f64> = (0..k * dim).map(|_| rng.range(-1.0, 1.0)).collect();
    let lines: Vec<LineSegment> = (0..k).map(|_| rand_line(&mut rng)).collect();
    let up: Vec<f64> = (0..k * dim).map(|_| rng.range(-1.0, 1.0)).collect();

    let loss = |p: &DlaParams, f: &[FeatureMap], q: &[f64], lines: &[LineSegment]| -> f64 {
        let mut t = DlaTape::default();
        let out = dla_forward_batch(&c, p, f, q, lines, &mut t).expect("instance is well formed");
        out.iter().zip(&up).map(|(a, b)| a * b).sum()
    };
    let mut tape = DlaTape::default();
    dla_forward_batch(&c, &params, &feats, &q, &lines, &mut tape)?;
    let mut g = zero_grads(&params);
    let ig = dla_backward(&c, &params, &feats, &tape, &up, &mut g)?;

    const H: f64 = 1e-6;
    const FLOOR: f64 = 1e-3;
    let mut report = Vec::new();

    let num = finite_difference_slice(|v| loss(&params, &feats, v, &lines), &q, H)?;
    report.push(("query_content", relative_error(&ig.queries, &num, FLOOR)));

    let flat_lines: Vec<f64> = lines.iter().flat_map(|l| l.to_array()).collect();
    let num = finite_difference_slice(
        |v| {
            let ls: Vec<LineSegment> = v.chunks(4).map(|c| LineSegment::from_array([c[0], c[1], c[2], c[3]])).collect();
            loss(&params, &feats, &q, &ls)
        },
        &flat_lines,
        H,
    )
    ?;
    let ana: Vec<f64> = ig.ep1.iter().zip(&ig.ep2).flat_map(|(a, b)| [a[0], a[1], b[0], b[1]]).collect();
    report.push(("endpoints", relative_error(&ana, &num, FLOOR)));

    let groups: [LinearGroup; 3] = [
        ("alpha_head", |p| &mut p.alpha_head, |p| &p.alpha_head),
        ("attn_head", |p| &mut p.attn_head, |p| &p.attn_head),
        ("out_proj", |p| &mut p.out_proj, |p| &p.out_proj),
    ];
    for (name, get_mut, get) in groups {
        let base = get(&params).flatten();
        let num = finite_difference_slice(
            |v| {
                let mut p = params.clone();
                get_mut(&mut p).assign_flat(v);
                loss(&p, &feats, &q, &lines)
            },
            &base,
            H,
        )
        ?;
        report.push((name, relative_error(&get(&g).flatten(), &num, FLOOR)));
    }

    let base = params.value_proj.flatten();
    let num = finite_difference_slice(
        |v| {
            let mut p = params.clone();
            p.value_proj.assign_flat(v);
            loss(&p, &feats, &q, &lines)
        },
        &base,
        H,
    )
    ?;
    report.push(("value_proj", relative_error(&g.value_proj.flatten(), &num, FLOOR)));

    let flat_feats: Vec<f64> = feats.iter().flat_map(|f| f.data().to_vec()).collect();
    let num = finite_difference_slice(
        |v| {
            let mut off = 0;
            let fs: Vec<FeatureMap> = feats
                .iter()
                .map(|f| {
                    let n = f.data().len();
                    let m = FeatureMap::new(f.channels(), f.height(), f.width(), v[off..off + n].to_vec()).expect("shape preserved");
                    off += n;
                    m
                })
                .collect();
            loss(&params, &fs, &q, &lines)
        },
        &flat_feats,
        H,
    )
    ?;
    let ana: Vec<f64> = ig.features.iter().flat_map(|f| f.data().to_vec()).collect();
    report.push(("features", relative_error(&ana, &num, FLOOR)));
    Ok(GradcheckReport { config: c, groups: report })
}
