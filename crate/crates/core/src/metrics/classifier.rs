//! Colour-statistics domain classifier used to check which domain an
//! image (real or translated) looks like.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Array3, ArrayView3, Axis};

const QUANTILES: [f64; 3] = [0.1, 0.5, 0.9];

/// Per-channel mean, standard deviation and 10/50/90 % quantiles of a
/// (3, H, W) image in [-1, 1].
pub fn colour_features(img: ArrayView3<'_, f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(15);
    for ch in img.axis_iter(Axis(0)) {
        let mut v: Vec<f64> = ch.iter().copied().collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        v.sort_by(f64::total_cmp);
        out.push(mean);
        out.push(var.sqrt());
        for q in QUANTILES {
            out.push(v[((v.len() - 1) as f64 * q).round() as usize]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            iterations: 1500,
            learning_rate: 0.5,
            l2: 1e-4,
        }
    }
}

/// Multinomial logistic regression on standardized colour features.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainClassifier {
    pub num_domains: usize,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    /// (K, F)
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DomainClassifier {
    /// Full-batch gradient descent on the mean cross-entropy.
    pub fn fit(images: &[Array3<f64>], labels: &[usize], num_domains: usize, opts: FitOptions) -> Result<Self> {
        if images.is_empty() || images.len() != labels.len() {
            return Err(Error::Input("classifier needs one label per image".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_domains) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {num_domains} domains"
            )));
        }
        let feats: Vec<Vec<f64>> = images.iter().map(|i| colour_features(i.view())).collect();
        let f = feats[0].len();
        let n = feats.len() as f64;
        let mut x = Array2::from_shape_fn((feats.len(), f), |(i, j)| feats[i][j]);
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        x -= &mean;
        x /= &scale;
        let mut y = Array2::zeros((feats.len(), num_domains));
        for (i, &l) in labels.iter().enumerate() {
            y[[i, l]] = 1.0;
        }
        let mut w = Array2::<f64>::zeros((num_domains, f));
        let mut b = Array1::<f64>::zeros(num_domains);
        for _ in 0..opts.iterations {
            let p = softmax_rows(x.dot(&w.t()) + &b);
            let err = (p - &y) / n;
            let gw = err.t().dot(&x) + &(&w * opts.l2);
            let gb = err.sum_axis(Axis(0));
            w.scaled_add(-opts.learning_rate, &gw);
            b.scaled_add(-opts.learning_rate, &gb);
        }
        Ok(Self {
            num_domains,
            feature_mean: mean.to_vec(),
            feature_scale: scale.to_vec(),
            weights: w,
            bias: b,
        })
    }

    pub fn probabilities(&self, img: ArrayView3<'_, f64>) -> Vec<f64> {
        let f = colour_features(img);
        let z: Vec<f64> = (0..self.num_domains)
            .map(|k| {
                self.bias[k]
                    + f.iter()
                        .enumerate()
                        .map(|(j, v)| self.weights[[k, j]] * (v - self.feature_mean[j]) / self.feature_scale[j])
                        .sum::<f64>()
            })
            .collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    pub fn predict(&self, img: ArrayView3<'_, f64>) -> usize {
        let p = self.probabilities(img);
        (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0)
    }

    /// Fraction of `images` assigned their label.
    pub fn accuracy(&self, images: &[Array3<f64>], labels: &[usize]) -> f64 {
        let hits = images
            .iter()
            .zip(labels)
            .filter(|(i, &l)| self.predict(i.view()) == l)
            .count();
        hits as f64 / images.len().max(1) as f64
    }
}

fn softmax_rows(mut z: Array2<f64>) -> Array2<f64> {
    for mut row in z.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_corpus, Split, SynthOptions};

    #[test]
    fn separates_synthetic_domains() {
        let c = generate_synthetic_corpus(&SynthOptions::new(3, 80, 40, 32, 3)).unwrap();
        let train = c.patch_set(Split::Train).unwrap();
        let test = c.patch_set(Split::Test).unwrap();
        let imgs = |s: &crate::data::PatchSet| (0..s.len()).map(|i| s.image(i).clone()).collect::<Vec<_>>();
        let labs = |s: &crate::data::PatchSet| s.labels().iter().map(|l| l.index()).collect::<Vec<_>>();
        let clf = DomainClassifier::fit(&imgs(&train), &labs(&train), 3, FitOptions::default()).unwrap();
        assert!(clf.accuracy(&imgs(&test), &labs(&test)) >= 0.95);
        let p = clf.probabilities(test.image(0).view());
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_labels() {
        let img = Array3::zeros((3, 4, 4));
        assert!(DomainClassifier::fit(std::slice::from_ref(&img), &[2], 2, FitOptions::default()).is_err());
        assert!(DomainClassifier::fit(&[img], &[], 2, FitOptions::default()).is_err());
    }
}
