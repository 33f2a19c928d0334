//! Independent reference checks for the numeric and combinatorial kernels.
//!
//! Each check returns a one-line summary on success and a reason on failure,
//! so the same code backs both the plain integration tests and the
//! acceptance report.

#![allow(dead_code)]

use num_bigint::BigInt;
use num_complex::Complex64;
use rand::Rng;
use spsfair::channel::{ar1_step, bessel_j0};
use spsfair::metrics::hypervolume;
use spsfair::nsga2::{
    crowding_distance, non_dominated_sort, pick_optimum, select_survivors, Individual, Threshold,
};
use spsfair::rng;

pub type Check = Result<String, String>;

// ---------------------------------------------------------------- J0

/// J0(p/q) by its power series in fixed point with 70 decimal digits, so
/// the alternating terms near x = 50 (up to ~1e20) cancel without loss.
fn j0_exact(p: i64, q: i64) -> f64 {
    let scale = BigInt::from(10).pow(70);
    let num = BigInt::from(p * p);
    let mut term = scale.clone();
    let mut sum = scale.clone();
    let mut k: i64 = 1;
    while term != BigInt::from(0) {
        term = -term * &num / BigInt::from(4 * q * q * k * k);
        sum += &term;
        k += 1;
    }
    let head: BigInt = sum / BigInt::from(10).pow(54);
    let head: i64 = head.try_into().expect("J0 is bounded by 1");
    head as f64 / 1e16
}

pub fn bessel_j0_against_series() -> Check {
    let mut points: Vec<(i64, i64)> = (0..=1000).map(|k| (k, 20)).collect();
    points.extend((0..=350).map(|k| (k, 7)));
    let mut worst = (0.0f64, 0.0f64);
    for (p, q) in points {
        let x = p as f64 / q as f64;
        let got = bessel_j0(x).map_err(|e| e.to_string())?;
        let err = (got - j0_exact(p, q)).abs();
        if err > worst.0 {
            worst = (err, x);
        }
    }
    if worst.0 <= 1e-6 {
        Ok(format!("max |error| {:.2e} at x={:.3}", worst.0, worst.1))
    } else {
        Err(format!(
            "|error| {:.2e} at x={:.3} exceeds 1e-6",
            worst.0, worst.1
        ))
    }
}

// ---------------------------------------------------------------- AR(1)

pub const AR1_CHAINS: usize = 100_000;

pub fn ar1_second_moment() -> Check {
    let rho = 0.9;
    let steps = 100;
    let mut rng = rng::stream(11, 0);
    let mut samples = Vec::with_capacity(AR1_CHAINS);
    for _ in 0..AR1_CHAINS {
        let mut h = Complex64::new(1.0, 0.0);
        for _ in 0..steps {
            h = ar1_step(h, rho, &mut rng).map_err(|e| e.to_string())?;
        }
        samples.push(h.norm_sqr());
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let z = (mean - 1.0) / se;
    if z.abs() <= 3.0 {
        Ok(format!("E|h|^2 = {mean:.5} (se {se:.5}, z {z:+.2})"))
    } else {
        Err(format!(
            "E|h|^2 = {mean:.5} is {z:+.2} standard errors from 1"
        ))
    }
}

// ---------------------------------------------------------------- HV

pub const HV_SAMPLES: usize = 1_000_000;

fn dominates_weakly(p: &[f64], x: &[f64]) -> bool {
    p.iter().zip(x).all(|(a, b)| a <= b)
}

fn random_front(dim: usize, size: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    if dim == 2 {
        // A proper trade-off curve: x increasing, y decreasing.
        let mut xs: Vec<f64> = (0..size).map(|_| rng.random::<f64>()).collect();
        let mut ys: Vec<f64> = (0..size).map(|_| rng.random::<f64>()).collect();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(|a, b| b.total_cmp(a));
        return xs.into_iter().zip(ys).map(|(x, y)| vec![x, y]).collect();
    }
    (0..size)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect()
}

/// Uniform samples over the box between the front's ideal point and the
/// reference; everything dominated lies inside it.
fn hv_monte_carlo(front: &[Vec<f64>], reference: &[f64], rng: &mut impl Rng) -> f64 {
    let dim = reference.len();
    let ideal: Vec<f64> = (0..dim)
        .map(|k| front.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min))
        .collect();
    let mut x = vec![0.0; dim];
    let mut hits = 0usize;
    for _ in 0..HV_SAMPLES {
        for (k, v) in x.iter_mut().enumerate() {
            *v = rng.random_range(ideal[k]..reference[k]);
        }
        if front.iter().any(|p| dominates_weakly(p, &x)) {
            hits += 1;
        }
    }
    let box_volume: f64 = ideal
        .iter()
        .zip(reference)
        .map(|(lo, hi)| hi - lo)
        .product();
    box_volume * hits as f64 / HV_SAMPLES as f64
}

/// Exact HV with reference (1, ..., 1) against a Monte Carlo estimate, for several
/// random fronts of up to 20 points.
pub fn hypervolume_against_monte_carlo(dim: usize) -> Check {
    let mut rng = rng::stream(5, dim as u64);
    let reference = vec![1.0; dim];
    let mut worst = 0.0f64;
    for size in [1, 5, 12, 20] {
        let front = random_front(dim, size, &mut rng);
        let exact = hypervolume(&front, &reference).map_err(|e| e.to_string())?;
        let mc = hv_monte_carlo(&front, &reference, &mut rng);
        let rel = (exact - mc).abs() / exact;
        if rel > 0.01 {
            return Err(format!(
                "{dim}-D front of {size}: exact {exact:.5} vs sampled {mc:.5}"
            ));
        }
        worst = worst.max(rel);
    }
    Ok(format!("{dim}-D worst relative gap {:.3}%", 100.0 * worst))
}

// ---------------------------------------------------------------- sorting

fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// Peel fronts by checking every pair of remaining points.
fn brute_fronts(points: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let mut left: Vec<usize> = (0..points.len()).collect();
    let mut fronts = Vec::new();
    while !left.is_empty() {
        let front: Vec<usize> = left
            .iter()
            .copied()
            .filter(|&i| !left.iter().any(|&j| dominates(&points[j], &points[i])))
            .collect();
        left.retain(|i| !front.contains(i));
        fronts.push(front);
    }
    fronts
}

fn random_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(seed, 1);
    // Odd seeds use a coarse grid so ties and duplicates show up.
    let coarse = seed % 2 == 1;
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    if coarse {
                        f64::from(rng.random_range(0..8u8))
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect()
        })
        .collect()
}

pub fn non_dominated_sort_against_brute_force() -> Check {
    for seed in 0..20 {
        let points = random_points(200, 3, seed);
        let mut got = non_dominated_sort(&points).map_err(|e| e.to_string())?;
        for f in &mut got {
            f.sort_unstable();
        }
        if got != brute_fronts(&points) {
            return Err(format!("fronts differ for seed {seed}"));
        }
    }
    Ok("200 points x 20 seeds identical".into())
}

fn population(points: Vec<Vec<f64>>, rng: &mut impl Rng) -> Vec<Individual> {
    points
        .into_iter()
        .enumerate()
        .map(|(i, objectives)| Individual {
            genome: vec![i as u32],
            objectives,
            scale: rng.random_range(0.5..2.0),
            rank: 0,
            crowding: 0.0,
        })
        .collect()
}

/// Crowding straight from the definition: for each objective, the gap
/// between the two sorted neighbours over the objective's range.
#[allow(clippy::needless_range_loop)]
fn brute_crowding(points: &[Vec<f64>], front: &[usize]) -> Vec<f64> {
    let n = front.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let mut d = vec![0.0; n];
    for k in 0..points[front[0]].len() {
        let mut sorted: Vec<usize> = (0..n).collect();
        sorted.sort_by(|&a, &b| {
            points[front[a]][k]
                .total_cmp(&points[front[b]][k])
                .then(a.cmp(&b))
        });
        let lo = points[front[sorted[0]]][k];
        let hi = points[front[sorted[n - 1]]][k];
        for (pos, &a) in sorted.iter().enumerate() {
            if pos == 0 || pos == n - 1 {
                d[a] = f64::INFINITY;
            } else if hi > lo {
                let prev = points[front[sorted[pos - 1]]][k];
                let next = points[front[sorted[pos + 1]]][k];
                d[a] += (next - prev) / (hi - lo);
            }
        }
    }
    d
}

/// Whole fronts first; the front that overflows is cut by crowding
/// (largest first), ties by genome.
fn brute_survivors(points: &[Vec<f64>], m: usize) -> Vec<u32> {
    let mut out = Vec::new();
    for front in brute_fronts(points) {
        let d = brute_crowding(points, &front);
        let mut members: Vec<(f64, usize)> = d.into_iter().zip(front).collect();
        members.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, i) in members {
            if out.len() < m {
                out.push(i as u32);
            }
        }
    }
    out
}

pub fn select_survivors_against_brute_force() -> Check {
    for seed in 0..20 {
        let mut rng = rng::stream(seed, 2);
        let n = rng.random_range(8..120);
        let dim = rng.random_range(2..5);
        let m = rng.random_range(1..=n);
        // Continuous values keep crowding ties (other than at infinity) away.
        let points = random_points(n, dim, 2 * seed);
        let pop = population(points.clone(), &mut rng);
        let got: Vec<u32> = select_survivors(pop, m)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|i| i.genome[0])
            .collect();
        let want = brute_survivors(&points, m);
        if got != want {
            return Err(format!("seed {seed}: {got:?} vs {want:?}"));
        }
    }
    Ok("20 random instances identical".into())
}

fn brute_pick(pop: &[Individual], threshold: &Threshold) -> (Vec<u32>, bool) {
    let limit = |i: &Individual| match *threshold {
        Threshold::Absolute(t) => t,
        Threshold::Relative(f) => f * i.scale,
    };
    let mut best: Option<(&Individual, bool)> = None;
    for relaxed in [false, true] {
        for ind in pop {
            if !relaxed && ind.objectives.iter().any(|&f| f > limit(ind)) {
                continue;
            }
            let s: f64 = ind.objectives.iter().sum();
            let better = match best {
                None => true,
                Some((b, _)) => {
                    let bs: f64 = b.objectives.iter().sum();
                    s < bs || (s == bs && ind.genome < b.genome)
                }
            };
            if better {
                best = Some((ind, relaxed));
            }
        }
        if best.is_some() {
            break;
        }
    }
    let (b, relaxed) = best.expect("non-empty population");
    (b.genome.clone(), relaxed)
}

pub fn pick_optimum_against_brute_force() -> Check {
    let mut relaxed_seen = 0;
    for seed in 0..40 {
        let mut rng = rng::stream(seed, 3);
        let n = rng.random_range(1..60);
        let pop = population(random_points(n, 4, seed), &mut rng);
        let mut maxes: Vec<f64> = pop
            .iter()
            .map(|i| i.objectives.iter().copied().fold(f64::MIN, f64::max))
            .collect();
        maxes.sort_by(f64::total_cmp);
        let median = maxes[maxes.len() / 2];
        let thresholds = [
            Threshold::Absolute(median),
            Threshold::Absolute(maxes[0] * 0.5),
            Threshold::Relative(median),
        ];
        for th in thresholds {
            let got = pick_optimum(&pop, &th).map_err(|e| e.to_string())?;
            let (genome, relaxed) = brute_pick(&pop, &th);
            if got.genome != genome || got.relaxed != relaxed {
                return Err(format!(
                    "seed {seed} {th:?}: {:?} vs {genome:?}",
                    got.genome
                ));
            }
            relaxed_seen += usize::from(relaxed);
        }
    }
    if relaxed_seen == 0 {
        return Err("no instance exercised the relaxed fallback".into());
    }
    Ok(format!("120 picks identical ({relaxed_seen} relaxed)"))
}

pub fn crowding_hand_cases() -> Check {
    let inf = f64::INFINITY;
    let cases: Vec<(Vec<Vec<f64>>, Vec<f64>)> = vec![
        (vec![], vec![]),
        (vec![vec![0.3, 0.7]], vec![inf]),
        (vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![inf, inf]),
        (
            vec![vec![0.0, 2.0], vec![1.0, 1.0], vec![2.0, 0.0]],
            vec![inf, 2.0, inf],
        ),
        (
            vec![vec![2.0, 0.0], vec![0.0, 2.0], vec![1.0, 1.0]],
            vec![inf, inf, 2.0],
        ),
        (
            vec![
                vec![0.0, 3.0],
                vec![1.0, 2.0],
                vec![2.0, 1.0],
                vec![3.0, 0.0],
            ],
            vec![inf, 4.0 / 3.0, 4.0 / 3.0, inf],
        ),
    ];
    for (front, want) in &cases {
        let got = crowding_distance(front);
        if &got != want {
            return Err(format!("{front:?}: got {got:?}, want {want:?}"));
        }
    }
    Ok(format!("{} cases exact", cases.len()))
}
