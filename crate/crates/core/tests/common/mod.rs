#![allow(dead_code)]

use llp_core::gibbs::IsingModel;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Exact marginals `P(y_i = 1)` by summing over all `2^m` labellings.
pub fn enumerate_marginals(model: &IsingModel) -> Vec<f64> {
    let m = model.num_vars();
    assert!(m <= 20, "enumeration over {m} variables is too large");
    let h = model.node_potentials();
    let mut logw = Vec::with_capacity(1 << m);
    for mask in 0u32..(1 << m) {
        let on = |i: usize| mask >> i & 1 == 1;
        let mut e: f64 = (0..m).filter(|&i| on(i)).map(|i| h[i]).sum();
        for c in model.couplings() {
            if on(c.i) && on(c.j) {
                e += c.value;
            }
        }
        logw.push(e);
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut ones = vec![0.0; m];
    for (mask, e) in logw.iter().enumerate() {
        let w = (e - max).exp();
        z += w;
        for (i, o) in ones.iter_mut().enumerate() {
            if mask >> i & 1 == 1 {
                *o += w;
            }
        }
    }
    ones.iter().map(|o| o / z).collect()
}

/// All `2^m` labellings as byte vectors.
pub fn all_labellings(m: usize) -> impl Iterator<Item = Vec<u8>> {
    (0u32..(1 << m)).map(move |mask| (0..m).map(|i| (mask >> i & 1) as u8).collect())
}

/// Random tree on `m` nodes (each node attaches to a uniformly chosen
/// earlier one), with potentials drawn from `[-bound, bound]`.
pub fn random_tree(m: usize, bound: f64, r: &mut impl Rng) -> IsingModel {
    let h: Vec<f64> = (0..m).map(|_| r.gen_range(-bound..=bound)).collect();
    let pairs: Vec<(usize, usize, f64)> = (1..m)
        .map(|i| (r.gen_range(0..i), i, r.gen_range(-bound..=bound)))
        .collect();
    IsingModel::new(h, pairs).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
