use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::train::{collect_stats, Stats};
use super::{HmmError, ModelKind, ModelRef, Utterance, VoiceModel};

/// `x -> A x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    /// Row-major.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl AffineTransform {
    pub fn identity(dim: usize) -> Self {
        let a = (0..dim).map(|i| (0..dim).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        Self { a, b: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(row, b)| b + row.iter().zip(x).map(|(a, x)| a * x).sum::<f64>()).collect()
    }

    /// Frobenius distance of `A` from the identity, relative to the
    /// identity's norm.
    pub fn relative_deviation(&self) -> f64 {
        let mut acc = 0.0;
        for (i, row) in self.a.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let d = v - f64::from(u8::from(i == j));
                acc += d * d;
            }
        }
        (acc / self.dim() as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MllrTransforms {
    pub spectral: AffineTransform,
    pub pitch: AffineTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MllrConfig {
    pub iterations: usize,
    /// Pull of the rotation part toward identity, relative to the mean
    /// diagonal of each row's normal equations. Needed when there are fewer
    /// occupied Gaussians than dimensions.
    pub ridge: f64,
}

impl Default for MllrConfig {
    fn default() -> Self {
        Self { iterations: 3, ridge: 1e-3 }
    }
}

struct RowSystem {
    g: DMatrix<f64>,
    k: DVector<f64>,
}

/// Normal equations for each output row of one stream.
fn normal_equations<'a>(
    dim: usize,
    items: impl Iterator<Item = (f64, &'a [f64], &'a [f64], &'a [f64])>,
) -> Vec<RowSystem> {
    let mut rows: Vec<RowSystem> =
        (0..dim).map(|_| RowSystem { g: DMatrix::zeros(dim + 1, dim + 1), k: DVector::zeros(dim + 1) }).collect();
    for (occ, sum, mean, var) in items {
        if occ <= 0.0 {
            continue;
        }
        let xi = DVector::from_iterator(dim + 1, std::iter::once(1.0).chain(mean.iter().copied()));
        let outer = &xi * xi.transpose();
        for (i, row) in rows.iter_mut().enumerate() {
            row.g += &outer * (occ / var[i]);
            row.k += &xi * (sum[i] / var[i]);
        }
    }
    rows
}

fn solve_rows(rows: Vec<RowSystem>, ridge: f64) -> AffineTransform {
    let dim = rows.len();
    let mut t = AffineTransform::identity(dim);
    for (i, mut row) in rows.into_iter().enumerate() {
        let lambda = ridge * row.g.trace() / (dim + 1) as f64;
        for j in 1..=dim {
            row.g[(j, j)] += lambda;
        }
        row.k[i + 1] += lambda;
        let w = match row.g.clone().cholesky() {
            Some(c) => c.solve(&row.k),
            None => match row.g.lu().solve(&row.k) {
                Some(w) => w,
                None => continue,
            },
        };
        t.b[i] = w[0];
        for j in 0..dim {
            t.a[i][j] = w[j + 1];
        }
    }
    t
}

fn estimate(base: &VoiceModel, stats: &Stats, ridge: f64) -> MllrTransforms {
    let gaussians = |r: &ModelRef| base.get(r).states.iter();
    let spectral = normal_equations(
        base.spectral_dim(),
        stats.iter().flat_map(|(r, acc)| {
            gaussians(r).zip(acc).map(|(s, a)| (a.occ, a.sum.as_slice(), s.spectral.mean.as_slice(), s.spectral.var.as_slice()))
        }),
    );
    let pitch = normal_equations(
        3,
        stats.iter().flat_map(|(r, acc)| {
            gaussians(r).zip(acc).map(|(s, a)| {
                (a.voiced_occ, &a.voiced_sum[..], s.pitch.gaussian.mean.as_slice(), s.pitch.gaussian.var.as_slice())
            })
        }),
    );
    MllrTransforms { spectral: solve_rows(spectral, ridge), pitch: solve_rows(pitch, ridge) }
}

fn transformed(base: &VoiceModel, t: &MllrTransforms) -> VoiceModel {
    let mut out = base.clone();
    for hmm in out.all_models_mut() {
        for s in &mut hmm.states {
            s.spectral.mean = t.spectral.apply(&s.spectral.mean);
            s.pitch.gaussian.mean = t.pitch.apply(&s.pitch.gaussian.mean);
        }
    }
    out.meta.mllr = Some(t.clone());
    out.kind = ModelKind::Adapted;
    out
}

/// One global mean transform per stream, re-estimated by EM. Variances are
/// left untouched.
pub fn adapt_mllr(model: &VoiceModel, data: &[Utterance], cfg: &MllrConfig) -> Result<VoiceModel, HmmError> {
    let dim = model.spectral_dim();
    let parameters = dim * (dim + 1);
    let frames: usize = data.iter().map(|u| u.obs.len()).sum();
    if (frames as f64) < parameters as f64 {
        return Err(HmmError::InsufficientData { frames: frames as f64, parameters });
    }
    let mut current = model.clone();
    for _ in 0..cfg.iterations.max(1) {
        let (stats, _) = collect_stats(&current, data)?;
        let occupied: f64 = stats.values().flatten().map(|s| s.occ).sum();
        if occupied < parameters as f64 {
            return Err(HmmError::InsufficientData { frames: occupied, parameters });
        }
        current = transformed(model, &estimate(model, &stats, cfg.ridge));
    }
    Ok(current)
}
