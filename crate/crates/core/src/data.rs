//! Long-tailed synthetic datasets: exponential class-count profiles and
//! 2-D Gaussian classes with exactly known moments.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Stream id for training draws; evaluation draws use a different stream of
/// the same seed so the two sets never share a random sequence.
const TRAIN_STREAM: u64 = 0;
const EVAL_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid long-tail parameters: {0}")]
    InvalidSpec(String),
    #[error("class count mismatch: {counts} counts vs {dists} distributions")]
    ClassMismatch { counts: usize, dists: usize },
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad record on line {line}: {msg}")]
    Record { line: u64, msg: String },
}

/// Per-class sample counts decaying exponentially from `n_max` to
/// `n_max / rho`.
#[derive(Clone, Debug, PartialEq)]
pub struct LongTailSpec {
    pub num_classes: usize,
    pub rho: f64,
    pub n_max: usize,
    pub counts: Vec<usize>,
}

impl LongTailSpec {
    pub fn new(num_classes: usize, rho: f64, n_max: usize) -> Result<Self, DataError> {
        let counts = class_counts(num_classes, rho, n_max)?;
        Ok(Self {
            num_classes,
            rho,
            n_max,
            counts,
        })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Classes ordered from rarest to most frequent (ties by class id).
    pub fn rarest_classes(&self, n: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.num_classes).collect();
        ids.sort_by_key(|&y| (self.counts[y], std::cmp::Reverse(y)));
        ids.truncate(n);
        ids
    }
}

/// `n_y = round(n_max · rho^(−y/(K−1)))` for `y = 0..K`, at least 1.
pub fn class_counts(num_classes: usize, rho: f64, n_max: usize) -> Result<Vec<usize>, DataError> {
    if num_classes < 2 {
        return Err(DataError::InvalidSpec(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    if !rho.is_finite() || rho < 1.0 {
        return Err(DataError::InvalidSpec(format!("rho must be >= 1, got {rho}")));
    }
    if (n_max as f64) < rho {
        return Err(DataError::InvalidSpec(format!(
            "n_max ({n_max}) must be at least rho ({rho})"
        )));
    }
    let k1 = (num_classes - 1) as f64;
    Ok((0..num_classes)
        .map(|y| {
            let n = (n_max as f64 * rho.powf(-(y as f64) / k1)).round();
            (n as usize).max(1)
        })
        .collect())
}

/// A 2-D Gaussian class-conditional distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassDistribution {
    pub class: usize,
    pub mu: [f64; 2],
    pub sigma: [[f64; 2]; 2],
}

impl ClassDistribution {
    pub fn isotropic(class: usize, mu: [f64; 2], std: f64) -> Self {
        let v = std * std;
        Self {
            class,
            mu,
            sigma: [[v, 0.0], [0.0, v]],
        }
    }

    /// Lower Cholesky factor of the covariance.
    fn cholesky(&self) -> Result<[[f64; 2]; 2], DataError> {
        let [[a, b], [c, d]] = self.sigma;
        if (b - c).abs() > 1e-12 * (a.abs() + d.abs()) || a <= 0.0 {
            return Err(DataError::NotPositiveDefinite);
        }
        let l00 = a.sqrt();
        let l10 = b / l00;
        let rem = d - l10 * l10;
        if rem <= 0.0 {
            return Err(DataError::NotPositiveDefinite);
        }
        Ok([[l00, 0.0], [l10, rem.sqrt()]])
    }

    pub fn sample(&self, rng: &mut impl rand::Rng) -> Result<[f64; 2], DataError> {
        let l = self.cholesky()?;
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        Ok([
            self.mu[0] + l[0][0] * z0,
            self.mu[1] + l[1][0] * z0 + l[1][1] * z1,
        ])
    }

    /// Largest eigenvalue of the covariance.
    pub fn max_variance(&self) -> f64 {
        let [[a, b], [_, d]] = self.sigma;
        let tr = a + d;
        let det = a * d - b * b;
        0.5 * (tr + (tr * tr - 4.0 * det).max(0.0).sqrt())
    }

    /// Per-axis standard deviation.
    pub fn axis_std(&self) -> [f64; 2] {
        [self.sigma[0][0].sqrt(), self.sigma[1][1].sqrt()]
    }
}

/// `num_classes` isotropic Gaussians evenly spaced on a circle.
pub fn make_ring_mixture(num_classes: usize, radius: f64, std: f64) -> Vec<ClassDistribution> {
    (0..num_classes)
        .map(|y| {
            let t = 2.0 * PI * y as f64 / num_classes as f64;
            ClassDistribution::isotropic(y, [radius * t.cos(), radius * t.sin()], std)
        })
        .collect()
}

/// Labeled 2-D points with a per-class index.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    points: Vec<[f64; 2]>,
    labels: Vec<usize>,
    by_class: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn from_points(num_classes: usize, points: Vec<([f64; 2], usize)>) -> Self {
        let mut by_class = vec![Vec::new(); num_classes];
        let mut xs = Vec::with_capacity(points.len());
        let mut ys = Vec::with_capacity(points.len());
        for (i, (x, y)) in points.into_iter().enumerate() {
            assert!(y < num_classes, "label {y} out of range");
            by_class[y].push(i);
            xs.push(x);
            ys.push(y);
        }
        Self {
            points: xs,
            labels: ys,
            by_class,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.by_class.len()
    }

    pub fn point(&self, i: usize) -> [f64; 2] {
        self.points[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.by_class.iter().map(Vec::len).collect()
    }

    pub fn class_indices(&self, y: usize) -> &[usize] {
        &self.by_class[y]
    }

    pub fn class_points(&self, y: usize) -> Vec<[f64; 2]> {
        self.by_class[y].iter().map(|&i| self.points[i]).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = ([f64; 2], usize)> + '_ {
        self.points.iter().copied().zip(self.labels.iter().copied())
    }

    /// Writes `x1,x2,y` rows with a header. Floats use the shortest
    /// representation that round-trips exactly.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DataError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x1", "x2", "y"])?;
        for (x, y) in self.iter() {
            out.write_record([x[0].to_string(), x[1].to_string(), y.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, num_classes: usize) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["x1", "x2", "y"] {
            return Err(DataError::Record {
                line: 1,
                msg: format!("expected header x1,x2,y, got {:?}", headers),
            });
        }
        let mut pts = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |msg: String| DataError::Record { line, msg };
            let parse = |i: usize| -> Result<f64, DataError> {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| bad(format!("column {}: {e}", i + 1)))
            };
            let (x1, x2) = (parse(0)?, parse(1)?);
            let y: usize = rec[2].parse().map_err(|e| bad(format!("label: {e}")))?;
            if y >= num_classes {
                return Err(bad(format!("label {y} >= {num_classes}")));
            }
            pts.push(([x1, x2], y));
        }
        Ok(Self::from_points(num_classes, pts))
    }
}

/// Key-value sidecar describing how a dataset CSV was produced.
pub fn write_metadata<W: Write>(
    mut w: W,
    spec: &LongTailSpec,
    dists: &[ClassDistribution],
    seed: u64,
) -> std::io::Result<()> {
    writeln!(w, "format = gsr-dataset-v1")?;
    writeln!(w, "seed = {seed}")?;
    writeln!(w, "num_classes = {}", spec.num_classes)?;
    writeln!(w, "rho = {}", spec.rho)?;
    writeln!(w, "n_max = {}", spec.n_max)?;
    let counts: Vec<String> = spec.counts.iter().map(ToString::to_string).collect();
    writeln!(w, "counts = {}", counts.join(","))?;
    for d in dists {
        writeln!(
            w,
            "class.{} = mu {} {} sigma {} {} {} {}",
            d.class, d.mu[0], d.mu[1], d.sigma[0][0], d.sigma[0][1], d.sigma[1][0], d.sigma[1][1]
        )?;
    }
    Ok(())
}

fn draw(
    counts: &[usize],
    dists: &[ClassDistribution],
    seed: u64,
    stream: u64,
) -> Result<Dataset, DataError> {
    if counts.len() != dists.len() {
        return Err(DataError::ClassMismatch {
            counts: counts.len(),
            dists: dists.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut pts = Vec::with_capacity(counts.iter().sum());
    for (y, (&n, dist)) in counts.iter().zip(dists).enumerate() {
        for _ in 0..n {
            pts.push((dist.sample(&mut rng)?, y));
        }
    }
    Ok(Dataset::from_points(counts.len(), pts))
}

/// Exactly `spec.counts[y]` draws from each class, reproducible from `seed`.
pub fn sample_dataset(
    spec: &LongTailSpec,
    dists: &[ClassDistribution],
    seed: u64,
) -> Result<Dataset, DataError> {
    draw(&spec.counts, dists, seed, TRAIN_STREAM)
}

/// Balanced held-out set drawn from a stream disjoint from the training one.
pub fn balanced_eval_set(
    dists: &[ClassDistribution],
    per_class: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    if per_class < 2 {
        return Err(DataError::InvalidSpec(format!(
            "need at least 2 evaluation points per class, got {per_class}"
        )));
    }
    draw(&vec![per_class; dists.len()], dists, seed, EVAL_STREAM)
}
