//! Reference implementations shared by the integration tests. Each is the
//! most direct reading of the definition, with no attention to speed.
#![allow(dead_code)]

use stopmap::featurize::{FeaturizeConfig, StopEvent, TrajectorySample};
use stopmap::Tensor;

pub fn conv_oracle(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Vec<f64> {
    let &[c_in, h, w] = input.shape() else { panic!() };
    let &[c_out, _, k, _] = weights.shape() else { panic!() };
    let p = (k - 1) as isize / 2;
    let mut out = Vec::with_capacity(c_out * h * w);
    for o in 0..c_out {
        for i in 0..h {
            for j in 0..w {
                let mut s = bias.data()[o];
                for c in 0..c_in {
                    for u in 0..k {
                        for v in 0..k {
                            let (y, x) = (i as isize + u as isize - p, j as isize + v as isize - p);
                            if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                                s += weights.get(&[o, c, u, v]) * input.get(&[c, y as usize, x as usize]);
                            }
                        }
                    }
                }
                out.push(s);
            }
        }
    }
    out
}

/// Every maximal index range `[a, b]` over which all consecutive pairs are
/// slow and close in time, kept if it spans at least `min_duration`.
pub fn stops_oracle(samples: &[TrajectorySample], cfg: &FeaturizeConfig) -> Vec<StopEvent> {
    let slow = |i: usize| {
        let (p, q) = (samples[i], samples[i + 1]);
        let dt = q.t - p.t;
        ((q.x - p.x).powi(2) + (q.y - p.y).powi(2)).sqrt() / dt <= cfg.v_max + 1e-9 && dt <= cfg.max_gap
    };
    let n = samples.len();
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let all_slow = (a..b).all(slow);
            let maximal = (a == 0 || !slow(a - 1)) && (b == n - 1 || !slow(b));
            if all_slow && maximal && samples[b].t - samples[a].t >= cfg.min_duration {
                let run = &samples[a..=b];
                let mut sx = 0.0;
                let mut sy = 0.0;
                for s in run {
                    sx += s.x;
                    sy += s.y;
                }
                let m = run.len() as f64;
                out.push(StopEvent { t_start: samples[a].t, t_end: samples[b].t, x: sx / m, y: sy / m });
            }
        }
    }
    out
}

pub fn knn_oracle(train: &[(Vec<f64>, usize)], query: &[f64], k: usize) -> usize {
    let mut order: Vec<usize> = (0..train.len()).collect();
    let dist = |i: usize| -> f64 { train[i].0.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum() };
    order.sort_by(|&a, &b| dist(a).partial_cmp(&dist(b)).unwrap().then(a.cmp(&b)));
    let neighbours = &order[..k];
    let votes = |c: usize| neighbours.iter().filter(|&&i| train[i].1 == c).count();
    let top = (0..4).map(votes).max().unwrap();
    // Tied classes: smallest nearest-neighbour distance, then lowest index.
    let tied: Vec<usize> = (0..4).filter(|&c| votes(c) == top).collect();
    let nearest = |c: usize| neighbours.iter().filter(|&&i| train[i].1 == c).map(|&i| dist(i)).fold(f64::INFINITY, f64::min);
    let best = tied.iter().map(|&c| nearest(c)).fold(f64::INFINITY, f64::min);
    *tied.iter().find(|&&c| nearest(c) == best).unwrap()
}
