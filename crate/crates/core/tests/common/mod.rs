//! Test-only oracles, independent of the library's own algorithms.
#![allow(dead_code)]

use std::path::PathBuf;

use nussbaum_consensus::cli::{parse_scenario, Scenario};

/// Boolean transitive closure (Floyd-Warshall). `adj[u][v]` means an edge `u -> v`.
pub fn closure(adj: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let n = adj.len();
    let mut c = adj.to_vec();
    for k in 0..n {
        for i in 0..n {
            if c[i][k] {
                for j in 0..n {
                    if c[k][j] {
                        c[i][j] = true;
                    }
                }
            }
        }
    }
    c
}

pub fn reach_all_from(c: &[Vec<bool>], src: usize) -> bool {
    (0..c.len()).all(|v| v == src || c[src][v])
}

/// Adaptive Simpson quadrature.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 50)
}

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.toml"))
}

pub fn load_scenario(name: &str) -> Scenario {
    let text = std::fs::read_to_string(scenario_path(name)).unwrap();
    parse_scenario(&text).unwrap()
}

/// `count` seeded samples `(x, u)` with `|x| <= radius` and `|u| <= radius`.
pub fn passivity_samples(dim: usize, count: usize, radius: f64, seed: u64) -> Vec<(Vec<f64>, f64)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut x: Vec<f64> = (0..dim)
                .map(|_| rng.random_range(-radius..=radius))
                .collect();
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                x.iter_mut().for_each(|v| *v *= radius / norm);
            }
            (x, rng.random_range(-radius..=radius))
        })
        .collect()
}

/// Global error of RK4 on `x' = -x`, `x(0) = 1`, at `t = 1`.
pub fn rk4_decay_error(h: f64) -> f64 {
    use nussbaum_consensus::sim::rk4_step;
    let steps = (1.0 / h).round() as usize;
    let mut x = vec![1.0];
    for n in 0..steps {
        x = rk4_step(|_, z| Ok(vec![-z[0]]), n as f64 * h, &x, h).unwrap();
    }
    (x[0] - (-1.0f64).exp()).abs()
}
