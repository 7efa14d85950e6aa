use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{EpisodeBatch, EpisodeOutput, RoiBox};
use crate::attention::rbf_similarity;
use crate::error::{invalid, Result};
use crate::rng;

/// Parameters of a synthetic episode.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub z: usize,
    pub b: usize,
    pub d: usize,
    pub n: usize,
    pub separation: f64,
    pub classes: usize,
}

impl SynthSpec {
    pub fn new(seed: u64, z: usize, b: usize, d: usize, n: usize, separation: f64) -> Self {
        Self { seed, z, b, d, n, separation, classes: 2 }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `h x w` patch with `h * w = n` and `h` the largest divisor not above
/// `sqrt(n)`.
fn patch_shape(n: usize) -> (usize, usize) {
    let h = (1..=n).take_while(|h| h * h <= n).filter(|h| n.is_multiple_of(*h)).last().unwrap_or(1);
    (h, n / h)
}

/// Columns are `softplus(separation * c_k + noise)` with one random unit direction
/// `c_k` per class and standard normal noise. Supports cycle through the
/// classes; RoI classes are drawn at random. RoIs tile the query grid left to
/// right. Softplus keeps every feature strictly positive, so no token is the
/// zero vector.
pub fn synth_episode(spec: &SynthSpec) -> Result<EpisodeBatch> {
    let SynthSpec { seed, z, b, d, n, separation, classes } = *spec;
    if z == 0 || b == 0 || d == 0 || n == 0 || classes == 0 {
        return invalid("synthetic episode needs Z, B, d, N and class count >= 1");
    }
    if !separation.is_finite() || separation < 0.0 {
        return invalid("separation must be finite and non-negative");
    }
    let mut rng = rng::seeded(seed);
    let directions: Vec<DVector<f64>> = (0..classes)
        .map(|_| {
            let v = rng::normal_vector(&mut rng, d);
            let norm = v.norm();
            if norm > 0.0 { v / norm } else { v }
        })
        .collect();
    let sample = |rng: &mut rand_chacha::ChaCha8Rng, class: usize, cols: usize| {
        let noise = rng::normal_matrix(rng, d, cols);
        DMatrix::from_fn(d, cols, |i, j| softplus(separation * directions[class][i] + noise[(i, j)]))
    };

    let support_labels: Vec<usize> = (0..z).map(|i| i % classes).collect();
    let supports: Vec<DMatrix<f64>> = support_labels.iter().map(|&k| sample(&mut rng, k, n)).collect();

    let (h, w) = patch_shape(n);
    let roi_labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
    let cols = b * w;
    let mut query = DMatrix::zeros(d, h * cols);
    let mut boxes = Vec::with_capacity(b);
    for (i, &k) in roi_labels.iter().enumerate() {
        let roi = RoiBox { row: 0, col: i * w, height: h, width: w };
        let patch = sample(&mut rng, k, n);
        for (src, pos) in roi.positions(cols).enumerate() {
            query.set_column(pos, &patch.column(src));
        }
        boxes.push(roi);
    }
    let e = EpisodeBatch { supports, support_labels, query, grid: (h, cols), boxes, roi_labels };
    e.validate()?;
    Ok(e)
}

/// Classes ordered by RBF similarity between `roi_hop` and the mean HOP
/// vector of each class's supports, best first.
pub fn class_ranking(
    support_hops: &[DVector<f64>],
    labels: &[usize],
    roi_hop: &DVector<f64>,
    sigma: f64,
) -> Result<Vec<(usize, f64)>> {
    if support_hops.len() != labels.len() || support_hops.is_empty() {
        return invalid("need one label per support vector and at least one support");
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut ranking = Vec::new();
    for k in 0..classes {
        let members: Vec<&DVector<f64>> = support_hops.iter().zip(labels).filter(|(_, &l)| l == k).map(|(h, _)| h).collect();
        if members.is_empty() {
            continue;
        }
        let proto = members.iter().fold(DVector::zeros(roi_hop.len()), |acc, h| acc + *h) / members.len() as f64;
        ranking.push((k, rbf_similarity(roi_hop.as_slice(), proto.as_slice(), sigma)?));
    }
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranking)
}

/// Whether each RoI's own class ranks first.
pub fn matched_class_first(e: &EpisodeBatch, out: &EpisodeOutput, sigma: f64) -> Result<Vec<bool>> {
    out.roi_hops
        .iter()
        .zip(&e.roi_labels)
        .map(|(h, &label)| Ok(class_ranking(&out.support_hops, &e.support_labels, h, sigma)?.first().map(|r| r.0) == Some(label)))
        .collect()
}
