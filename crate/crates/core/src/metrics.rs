//! Pareto-front quality indicators. All objectives are minimised.

use crate::error::{Error, Result};

/// Exponent of the generational-distance power mean.
pub const GD_EXPONENT: f64 = 2.0;

fn check_points(points: &[Vec<f64>], dim: usize, what: &str) -> Result<()> {
    for p in points {
        if p.len() != dim {
            return Err(Error::domain(format!(
                "{what}: point has {} objectives, expected {dim}",
                p.len()
            )));
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain(format!("{what}: non-finite objective")));
        }
    }
    Ok(())
}

fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// Non-dominated subset with duplicates removed.
fn nondominated(points: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut keep: Vec<Vec<f64>> = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let beaten = points
            .iter()
            .enumerate()
            .any(|(j, q)| dominates(q, p) || (j < i && q == p));
        if !beaten {
            keep.push(p.clone());
        }
    }
    keep
}

fn hv2(points: &mut [Vec<f64>], reference: &[f64]) -> f64 {
    points.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut volume = 0.0;
    let mut ceiling = reference[1];
    for p in points.iter() {
        if p[1] < ceiling {
            volume += (reference[0] - p[0]) * (ceiling - p[1]);
            ceiling = p[1];
        }
    }
    volume
}

fn inclusive(p: &[f64], reference: &[f64]) -> f64 {
    p.iter().zip(reference).map(|(x, r)| r - x).product()
}

// WFG: the volume is the sum of each point's exclusive contribution, which is
// its own box minus the volume of the remaining points limited by it.
fn wfg(mut points: Vec<Vec<f64>>, reference: &[f64]) -> f64 {
    match points.len() {
        0 => return 0.0,
        1 => return inclusive(&points[0], reference),
        _ => {}
    }
    if reference.len() == 2 {
        return hv2(&mut points, reference);
    }
    let last = reference.len() - 1;
    points.sort_by(|a, b| b[last].total_cmp(&a[last]));
    let mut volume = 0.0;
    for i in 0..points.len() {
        let p = &points[i];
        let limited: Vec<Vec<f64>> = points[i + 1..]
            .iter()
            .map(|q| q.iter().zip(p).map(|(a, b)| a.max(*b)).collect())
            .collect();
        volume += inclusive(p, reference) - wfg(nondominated(limited), reference);
    }
    volume
}

/// Lebesgue measure of the region dominated by `front` and bounded by
/// `reference`.
pub fn hypervolume(front: &[Vec<f64>], reference: &[f64]) -> Result<f64> {
    let dim = reference.len();
    if dim == 0 {
        return Err(Error::domain("reference point has no objectives"));
    }
    if reference.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("reference point must be finite"));
    }
    check_points(front, dim, "hypervolume")?;
    if let Some(p) = front
        .iter()
        .find(|p| p.iter().zip(reference).any(|(x, r)| x > r))
    {
        return Err(Error::domain(format!(
            "point {p:?} lies beyond the reference point"
        )));
    }
    if dim == 1 {
        let best = front.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        return Ok(if front.is_empty() {
            0.0
        } else {
            reference[0] - best
        });
    }
    Ok(wfg(nondominated(front.to_vec()), reference).max(0.0))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn check_pair(front: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<()> {
    if front.is_empty() || reference.is_empty() {
        return Err(Error::domain(
            "generational distance needs two non-empty sets",
        ));
    }
    let dim = front[0].len();
    check_points(front, dim, "front")?;
    check_points(reference, dim, "reference front")
}

/// `(sum of squared nearest-reference distances)^(1/2) / |front|`.
pub fn generational_distance(front: &[Vec<f64>], reference_front: &[Vec<f64>]) -> Result<f64> {
    check_pair(front, reference_front)?;
    let sum: f64 = front
        .iter()
        .map(|p| {
            reference_front
                .iter()
                .map(|q| euclidean(p, q))
                .fold(f64::INFINITY, f64::min)
                .powf(GD_EXPONENT)
        })
        .sum();
    Ok(sum.powf(1.0 / GD_EXPONENT) / front.len() as f64)
}

/// Generational distance of the reference front measured to `front`.
pub fn inverted_generational_distance(
    front: &[Vec<f64>],
    reference_front: &[Vec<f64>],
) -> Result<f64> {
    generational_distance(reference_front, front)
}

/// Sample standard deviation of the L1 nearest-neighbour distances.
pub fn spacing(front: &[Vec<f64>]) -> Result<f64> {
    if front.len() < 2 {
        return Err(Error::domain("spacing needs at least two points"));
    }
    check_points(front, front[0].len(), "spacing")?;
    let nearest: Vec<f64> = front
        .iter()
        .enumerate()
        .map(|(i, p)| {
            front
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let n = nearest.len() as f64;
    let mean = nearest.iter().sum::<f64>() / n;
    let var = nearest.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontMetrics {
    pub hv: f64,
    pub gd: f64,
    pub igd: f64,
    pub spacing: f64,
}

/// Fixed reference data a sequence of fronts is scored against.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricContext {
    pub reference_point: Vec<f64>,
    pub reference_front: Vec<Vec<f64>>,
}

impl MetricContext {
    pub fn new(reference_point: Vec<f64>, reference_front: Vec<Vec<f64>>) -> Result<Self> {
        if reference_front.is_empty() {
            return Err(Error::domain("reference front is empty"));
        }
        check_points(&reference_front, reference_point.len(), "reference front")?;
        Ok(Self {
            reference_point,
            reference_front,
        })
    }

    /// Component-wise maximum over `points`, scaled by `factor`.
    pub fn reference_point_from(points: &[Vec<f64>], factor: f64) -> Result<Vec<f64>> {
        let first = points.first().ok_or_else(|| Error::domain("no points"))?;
        check_points(points, first.len(), "reference point")?;
        Ok((0..first.len())
            .map(|k| {
                points
                    .iter()
                    .map(|p| p[k])
                    .fold(f64::NEG_INFINITY, f64::max)
                    * factor
            })
            .collect())
    }

    /// Score `front`. Points outside the reference box add no volume and are
    /// left out of the hypervolume; a single-point front has zero spacing.
    pub fn evaluate(&self, front: &[Vec<f64>]) -> Result<FrontMetrics> {
        let inside: Vec<Vec<f64>> = front
            .iter()
            .filter(|p| p.iter().zip(&self.reference_point).all(|(x, r)| x <= r))
            .cloned()
            .collect();
        let spacing = if front.len() < 2 {
            0.0
        } else {
            spacing(front)?
        };
        Ok(FrontMetrics {
            hv: hypervolume(&inside, &self.reference_point)?,
            gd: generational_distance(front, &self.reference_front)?,
            igd: inverted_generational_distance(front, &self.reference_front)?,
            spacing,
        })
    }
}
