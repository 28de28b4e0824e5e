#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wrht_core::{EmpiricalDistribution, LfdProblem, NormKind, PsiFamily, PsiKind};

pub const SMOOTH: [PsiKind; 3] = [PsiKind::Exp, PsiKind::Log, PsiKind::Quad];
pub const ALL: [PsiKind; 4] = [PsiKind::Exp, PsiKind::Log, PsiKind::Quad, PsiKind::Hinge];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cloud(rng: &mut ChaCha8Rng, n: usize, d: usize, offset: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|j| rng.random_range(-1.0..1.0) + if j == 0 { offset } else { 0.0 }).collect()).collect()
}

pub fn problem(q1: Vec<Vec<f64>>, q2: Vec<Vec<f64>>, theta1: f64, theta2: f64, kind: PsiKind) -> LfdProblem {
    let q1 = EmpiricalDistribution::uniform(q1).unwrap();
    let q2 = EmpiricalDistribution::uniform(q2).unwrap();
    LfdProblem::new(&q1, &q2, NormKind::L2, theta1, theta2, PsiFamily::new(kind)).unwrap()
}

/// Instance `i` of the small suite: at most three pool points.
pub fn small_instance(i: u64, kind: PsiKind) -> LfdProblem {
    let mut r = rng(1000 + i);
    let (n1, n2) = [(1, 1), (2, 1), (1, 2)][(i % 3) as usize];
    let d = 1 + (i % 2) as usize;
    let q1 = cloud(&mut r, n1, d, 0.0);
    let q2 = cloud(&mut r, n2, d, 1.0);
    let t1 = r.random_range(0.0..0.6);
    let t2 = r.random_range(0.0..0.6);
    problem(q1, q2, t1, t2, kind)
}

/// A medium instance with `n` points per side.
pub fn medium_instance(seed: u64, n: usize, d: usize, theta: f64, kind: PsiKind) -> LfdProblem {
    let mut r = rng(seed);
    let q1 = cloud(&mut r, n, d, 0.0);
    let q2 = cloud(&mut r, n, d, 1.5);
    problem(q1, q2, theta, theta, kind)
}
