#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use opinion_core::model::{
    validate_influence, validate_logic, validate_profile, InfluenceNetwork, LogicProfile,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows[0].len();
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

pub fn six_person_network() -> DMatrix<f64> {
    mat(&[
        &[0.2, 0.0, 0.0, 0.0, 0.8, 0.0],
        &[0.5, 0.3, 0.0, 0.0, 0.0, 0.2],
        &[0.0, 0.3, 0.1, 0.0, 0.0, 0.6],
        &[0.0, 0.0, 0.85, 0.15, 0.0, 0.0],
        &[0.0, 0.0, 0.0, 0.2, 0.8, 0.0],
        &[0.0, 0.0, 0.0, 0.0, 0.5, 0.5],
    ])
}

/// Logic of the first group when no competition is present.
pub fn logic_group_a() -> DMatrix<f64> {
    mat(&[
        &[1.0, 0.0, 0.0, 0.0, 0.0],
        &[-0.5, 0.5, 0.0, 0.0, 0.0],
        &[-0.3, -0.6, 0.1, 0.0, 0.0],
        &[0.0, -0.3, 0.0, 0.2, -0.5],
        &[0.0, -0.5, 0.0, -0.2, 0.3],
    ])
}

/// Logic of the second group.
pub fn logic_group_b() -> DMatrix<f64> {
    mat(&[
        &[1.0, 0.0, 0.0, 0.0, 0.0],
        &[-0.8, 0.2, 0.0, 0.0, 0.0],
        &[-0.3, -0.1, 0.6, 0.0, 0.0],
        &[0.0, -0.3, 0.0, 0.2, -0.5],
        &[0.0, -0.5, 0.0, -0.2, 0.3],
    ])
}

/// First group's logic with a positive dependence of topic 2 on topic 1.
pub fn logic_group_a_competing() -> DMatrix<f64> {
    mat(&[
        &[1.0, 0.0, 0.0, 0.0, 0.0],
        &[0.5, 0.5, 0.0, 0.0, 0.0],
        &[-0.3, -0.1, 0.6, 0.0, 0.0],
        &[0.0, -0.3, 0.0, 0.2, -0.5],
        &[0.0, -0.5, 0.0, -0.2, 0.3],
    ])
}

pub fn two_group_model(first: DMatrix<f64>) -> (InfluenceNetwork, LogicProfile) {
    let net = validate_influence(six_person_network()).unwrap();
    let mut cs = Vec::new();
    for i in 0..6 {
        let c = if i < 3 { first.clone() } else { logic_group_b() };
        cs.push(validate_logic(c).unwrap());
    }
    (net, validate_profile(cs).unwrap())
}

pub fn random_state(len: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(len, |_, _| rng.gen_range(-1.0..=1.0))
}

/// Stationary distribution of a primitive row-stochastic matrix by power iteration
/// on `pi <- pi W`.
pub fn stationary_distribution(w: &DMatrix<f64>) -> Vec<f64> {
    let n = w.nrows();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..1_000_000 {
        let mut next = vec![0.0; n];
        for (i, &p) in pi.iter().enumerate() {
            for (j, slot) in next.iter_mut().enumerate() {
                *slot += p * w[(i, j)];
            }
        }
        let delta = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        pi = next;
        if delta < 1e-16 {
            break;
        }
    }
    pi
}

/// Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Individual-major index of individual `i`, topic `p`.
pub fn xi(m: usize, i: usize, p: usize) -> usize {
    i * m + p
}

/// Limiting opinions of the two-group model, derived by hand from its structure:
/// topic 1 averages with the stationary weights, topic 2 mirrors it, topic 3 is
/// the per-individual fixed point driven by topics 1 and 2, and topics 4 and 5
/// settle at the common solution of the two identical rows. Returns `[topic][i]`.
pub fn two_group_limits(x0: &DVector<f64>) -> Vec<Vec<f64>> {
    let w = six_person_network();
    let pi = stationary_distribution(&w);
    let (n, m) = (6, 5);
    let a1: f64 = (0..n).map(|i| pi[i] * x0[xi(m, i, 0)]).sum();
    let a2 = -a1;
    let coef = |i: usize| if i < 3 { logic_group_a() } else { logic_group_b() };
    let sys: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 } - coef(i)[(2, 2)] * w[(i, j)]).collect())
        .collect();
    let rhs: Vec<f64> = (0..n).map(|i| coef(i)[(2, 0)] * a1 + coef(i)[(2, 1)] * a2).collect();
    let y3 = gauss_solve(sys, rhs);
    // 0.8 f4 + 0.5 f5 = -0.3 a2 ; 0.2 f4 + 0.7 f5 = -0.5 a2
    let det = 0.8 * 0.7 - 0.5 * 0.2;
    let f4 = (-0.3 * a2 * 0.7 - 0.5 * (-0.5 * a2)) / det;
    let f5 = (0.8 * (-0.5 * a2) - 0.2 * (-0.3 * a2)) / det;
    vec![vec![a1; n], vec![a2; n], y3, vec![f4; n], vec![f5; n]]
}
