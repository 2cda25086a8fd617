//! Independent oracles shared by the integration and acceptance suites.
//! Nothing here calls into the code paths it is used to check.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod metrics_oracle {
    /// Brute-force sweep over every distinct score value (as a threshold)
    /// plus +∞, counting each class from scratch at every candidate.
    /// Candidate `s` reproduces the threshold just below `s`.
    pub struct Sweep {
        pub points: Vec<(f64, f64)>,
    }

    fn pct(k: usize, n: usize) -> f64 {
        100.0 * k as f64 / n as f64
    }

    pub fn sweep(bona_fide: &[f64], attacks: &[f64]) -> Sweep {
        let mut candidates: Vec<f64> = bona_fide.iter().chain(attacks).copied().collect();
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        candidates.dedup();
        candidates.push(f64::INFINITY);
        let points = candidates
            .iter()
            .map(|&t| {
                let accepted_attacks = attacks.iter().filter(|&&s| s >= t).count();
                let rejected_bona_fide = bona_fide.iter().filter(|&&s| s < t).count();
                (
                    pct(accepted_attacks, attacks.len()),
                    pct(rejected_bona_fide, bona_fide.len()),
                )
            })
            .collect();
        Sweep { points }
    }

    pub fn d_eer(bona_fide: &[f64], attacks: &[f64]) -> f64 {
        let sw = sweep(bona_fide, attacks);
        let mut best = (f64::INFINITY, f64::NAN);
        for &(a, b) in &sw.points {
            if (a - b).abs() < best.0 {
                best = ((a - b).abs(), (a + b) / 2.0);
            }
        }
        best.1
    }

    pub fn bpcer_at(bona_fide: &[f64], attacks: &[f64], target: f64) -> f64 {
        sweep(bona_fide, attacks)
            .points
            .iter()
            .filter(|(a, _)| *a <= target)
            .map(|(_, b)| *b)
            .fold(100.0, f64::min)
    }
}

/// Small SVM training problem in standardized space.
#[derive(Debug, Clone)]
pub struct SvmFixture {
    pub name: String,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<i8>,
    pub c: f64,
}

impl SvmFixture {
    pub fn dim(&self) -> usize {
        self.x[0].len()
    }

    pub fn array(&self) -> ndarray::Array2<f64> {
        let d = self.dim();
        ndarray::Array2::from_shape_vec(
            (self.x.len(), d),
            self.x.iter().flatten().copied().collect(),
        )
        .unwrap()
    }

    /// Rows with the constant bias feature appended.
    fn augmented(&self) -> Vec<Vec<f64>> {
        self.x
            .iter()
            .map(|r| r.iter().copied().chain([1.0]).collect())
            .collect()
    }
}

/// ½‖w̃‖² + C Σ max(0, 1 − yᵢ w̃·x̃ᵢ) for an augmented weight vector.
pub fn primal(fx: &SvmFixture, w_aug: &[f64]) -> f64 {
    let reg = 0.5 * w_aug.iter().map(|v| v * v).sum::<f64>();
    let loss: f64 = fx
        .augmented()
        .iter()
        .zip(&fx.y)
        .map(|(r, &y)| {
            let f: f64 = r.iter().zip(w_aug).map(|(a, b)| a * b).sum();
            (1.0 - y as f64 * f).max(0.0)
        })
        .sum();
    reg + fx.c * loss
}

pub fn decision(w_aug: &[f64], row: &[f64]) -> f64 {
    row.iter().zip(w_aug).map(|(a, b)| a * b).sum::<f64>() + w_aug[w_aug.len() - 1]
}

fn scaled_rows(fx: &SvmFixture) -> DMatrix<f64> {
    // column i = yᵢ x̃ᵢ
    let aug = fx.augmented();
    let d = aug[0].len();
    DMatrix::from_fn(d, aug.len(), |r, c| fx.y[c] as f64 * aug[c][r])
}

/// Exhaustive dual active-set enumeration.
///
/// Some optimal dual point has its free coordinates on linearly independent
/// columns yᵢx̃ᵢ, every other coordinate at 0 or C. For every free set F of
/// size ≤ dim+1 and every 0/C assignment of the rest, solve the stationarity
/// system Q_FF α_F = 1 − C·Q_FU·1 and evaluate the primal objective of the
/// induced w. Any w bounds the optimum from above and the optimal partition
/// is among the candidates, so the minimum is the optimum.
pub fn enumerate_optimum(fx: &SvmFixture) -> (f64, Vec<f64>) {
    let n = fx.x.len();
    assert!(n <= 14, "enumeration oracle is exponential in n");
    let a = scaled_rows(fx);
    let q = a.transpose() * &a;
    let max_free = (fx.dim() + 1).min(n);
    let mut best = (f64::INFINITY, Vec::new());

    for free_mask in 0u32..(1 << n) {
        let free: Vec<usize> = (0..n).filter(|i| free_mask & (1 << i) != 0).collect();
        if free.len() > max_free {
            continue;
        }
        let rest: Vec<usize> = (0..n).filter(|i| free_mask & (1 << i) == 0).collect();
        for upper_mask in 0u32..(1 << rest.len()) {
            let at_c: Vec<usize> = rest
                .iter()
                .enumerate()
                .filter(|(k, _)| upper_mask & (1 << k) != 0)
                .map(|(_, &i)| i)
                .collect();
            let mut alpha = DVector::zeros(n);
            for &i in &at_c {
                alpha[i] = fx.c;
            }
            if !free.is_empty() {
                let k = free.len();
                let qff = DMatrix::from_fn(k, k, |r, c| q[(free[r], free[c])]);
                let rhs = DVector::from_fn(k, |r, _| {
                    1.0 - at_c.iter().map(|&j| fx.c * q[(free[r], j)]).sum::<f64>()
                });
                let Some(chol) = qff.cholesky() else { continue };
                let sol = chol.solve(&rhs);
                for (r, &i) in free.iter().enumerate() {
                    alpha[i] = sol[r];
                }
            }
            let w = &a * &alpha;
            let w: Vec<f64> = w.iter().copied().collect();
            let p = primal(fx, &w);
            if p < best.0 {
                best = (p, w);
            }
        }
    }
    best
}

/// Accelerated projected gradient on the dual, run until the duality gap
/// certifies the result. Returns (primal objective, w̃, gap).
pub fn certified_optimum(fx: &SvmFixture) -> (f64, Vec<f64>, f64) {
    let n = fx.x.len();
    let a = scaled_rows(fx);
    let q = a.transpose() * &a;
    let lipschitz = q.clone().symmetric_eigen().eigenvalues.max().max(1e-12);
    let step = 1.0 / lipschitz;
    let project = |v: &DVector<f64>| v.map(|x| x.clamp(0.0, fx.c));
    let ones = DVector::from_element(n, 1.0);

    let mut alpha = DVector::zeros(n);
    let mut prev = alpha.clone();
    let mut t = 1.0f64;
    let mut best = (f64::INFINITY, Vec::new(), f64::INFINITY);
    for iter in 0..2_000_000usize {
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        let z = &alpha + (&alpha - &prev) * momentum;
        let grad = &q * &z - &ones;
        prev = alpha;
        alpha = project(&(z - grad * step));
        t = t_next;
        if iter % 64 == 0 {
            // restart momentum when the objective goes up
            let w = &a * &alpha;
            let dual = 0.5 * w.norm_squared() - alpha.sum();
            let wv: Vec<f64> = w.iter().copied().collect();
            let p = primal(fx, &wv);
            let gap = p + dual;
            if p < best.0 {
                best = (p, wv, gap);
            }
            if gap <= 1e-11 * p.abs().max(1.0) {
                return (p, best.1, gap);
            }
            let prev_dual = {
                let wp = &a * &prev;
                0.5 * wp.norm_squared() - prev.sum()
            };
            if dual > prev_dual {
                t = 1.0;
            }
        }
    }
    best
}

/// Random fixture: two Gaussian blobs `sep` apart along a random direction.
pub fn random_fixture(name: &str, n: usize, dim: usize, sep: f64, c: f64, seed: u64) -> SvmFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
    dir.iter_mut().for_each(|v| *v /= norm);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label: i8 = if i % 2 == 0 { 1 } else { -1 };
        let row: Vec<f64> = dir
            .iter()
            .map(|d| d * sep * 0.5 * label as f64 + rng.random_range(-1.0..1.0))
            .collect();
        x.push(row);
        y.push(label);
    }
    SvmFixture {
        name: name.to_string(),
        x,
        y,
        c,
    }
}

/// The hand-written 6-point separable 2-D set.
pub fn toy_six() -> SvmFixture {
    SvmFixture {
        name: "toy-6".into(),
        x: vec![
            vec![2.0, 2.0],
            vec![1.5, 3.0],
            vec![3.0, 1.0],
            vec![-1.0, -1.5],
            vec![-2.0, -0.5],
            vec![-0.5, -2.5],
        ],
        y: vec![1, 1, 1, -1, -1, -1],
        c: 10.0,
    }
}

/// Twelve fixtures: n ≤ 20 points, dim ≤ 5, separable and overlapping.
pub fn oracle_fixtures() -> Vec<SvmFixture> {
    let mut v = vec![toy_six()];
    let specs: [(usize, usize, f64, f64); 11] = [
        (8, 1, 3.0, 1.0),
        (8, 2, 4.0, 100.0),
        (10, 3, 2.0, 0.5),
        (10, 5, 5.0, 10.0),
        (9, 4, 1.0, 1.0),
        (10, 2, 0.5, 2.0),
        (14, 3, 3.0, 1.0),
        (16, 5, 2.5, 0.1),
        (18, 4, 4.0, 10.0),
        (20, 2, 1.5, 1.0),
        (20, 5, 3.0, 5.0),
    ];
    for (k, (n, d, sep, c)) in specs.into_iter().enumerate() {
        v.push(random_fixture(
            &format!("gauss-{k}-n{n}-d{d}-C{c}"),
            n,
            d,
            sep,
            c,
            1000 + k as u64,
        ));
    }
    v
}

/// Writes `manifest.csv` and one embedding file per backbone under `dir`.
/// Backbones without a fixed width get `fallback_dim` columns.
pub fn write_synthetic_fixture(
    dir: &std::path::Path,
    spec: &padbench::synthetic::SyntheticSpec,
    backbones: &[padbench::embedding::BackboneId],
    fallback_dim: usize,
) -> std::path::PathBuf {
    use padbench::synthetic;
    let manifest = synthetic::manifest(spec);
    let manifest_path = dir.join("manifest.csv");
    std::fs::write(&manifest_path, manifest.to_csv()).unwrap();
    let emb_dir = dir.join("embeddings");
    std::fs::create_dir_all(&emb_dir).unwrap();
    for &b in backbones {
        let m = synthetic::embeddings(&manifest, b, synthetic::dim_for(b, fallback_dim), spec).unwrap();
        padbench::embedding::write_embeddings(&m, &b.file_in(&emb_dir)).unwrap();
    }
    manifest_path
}
