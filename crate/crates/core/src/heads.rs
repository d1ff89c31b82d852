//! Task outputs read from the code capsules: capsule-norm classification
//! trained with the margin loss, and function-name prediction by softmax
//! over dot products with a learned name-embedding table.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::capsules::{norm, CapsuleSet};
use crate::error::{Error, Result};
use crate::real::{c, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub num_classes: usize,
}

impl ClassifierHead {
    pub fn new(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "classification needs at least 2 classes, got {num_classes}"
            )));
        }
        Ok(ClassifierHead { num_classes })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginLossConfig {
    pub m_plus: f64,
    pub m_minus: f64,
    pub lambda_down: f64,
}

impl Default for MarginLossConfig {
    fn default() -> Self {
        MarginLossConfig {
            m_plus: 0.9,
            m_minus: 0.1,
            lambda_down: 0.5,
        }
    }
}

impl MarginLossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.m_minus && self.m_minus < self.m_plus && self.m_plus < 1.0 && self.lambda_down > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid margin loss constants {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamePredictorHead<T> {
    /// Row `i` embeds `names[i]`.
    pub functions_vocab: Array2<T>,
    pub names: Vec<String>,
}

impl<T: Real> NamePredictorHead<T> {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub distribution: Vec<f64>,
    pub index: usize,
    /// Norm of the winning capsule, or the winning probability for names.
    pub score: f64,
    /// Set when every capsule was zero and the distribution is a fallback.
    pub degenerate: bool,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn classify<T: Real>(cc: &CapsuleSet<T>) -> Prediction {
    let norms: Vec<f64> = cc.norms().iter().map(|n| n.to_f64().unwrap_or(f64::NAN)).collect();
    let total: f64 = norms.iter().sum();
    let k = norms.len().max(1);
    if total == 0.0 {
        return Prediction {
            distribution: vec![1.0 / k as f64; norms.len()],
            index: 0,
            score: 0.0,
            degenerate: true,
        };
    }
    let index = argmax(&norms);
    Prediction {
        distribution: norms.iter().map(|n| n / total).collect(),
        index,
        score: norms[index],
        degenerate: false,
    }
}

pub fn margin_loss<T: Real>(cc: &CapsuleSet<T>, true_class: usize, cfg: &MarginLossConfig) -> Result<T> {
    Ok(margin_loss_and_grad(&cc.vectors, true_class, cfg)?.0)
}

/// Loss and its gradient with respect to the capsule vectors. Capsules of
/// zero norm receive zero gradient.
pub fn margin_loss_and_grad<T: Real>(
    capsules: &Array2<T>,
    true_class: usize,
    cfg: &MarginLossConfig,
) -> Result<(T, Array2<T>)> {
    if true_class >= capsules.nrows() {
        return Err(Error::InvalidArgument(format!(
            "class {true_class} out of range for {} capsules",
            capsules.nrows()
        )));
    }
    let (m_plus, m_minus, lambda): (T, T, T) = (c(cfg.m_plus), c(cfg.m_minus), c(cfg.lambda_down));
    let two: T = c(2.0);
    let mut loss = T::zero();
    let mut grad = Array2::zeros(capsules.raw_dim());
    for (k, (v, mut g)) in capsules.rows().into_iter().zip(grad.rows_mut()).enumerate() {
        let n = norm(&v);
        let d_norm = if k == true_class {
            let h = (m_plus - n).max(T::zero());
            loss += h * h;
            -two * h
        } else {
            let h = (n - m_minus).max(T::zero());
            loss += lambda * h * h;
            two * lambda * h
        };
        if n > T::zero() && d_norm != T::zero() {
            g.scaled_add(d_norm / n, &v);
        }
    }
    Ok((loss, grad))
}

fn softmax<T: Real>(logits: &Array1<T>) -> Array1<T> {
    let max = logits.fold(T::neg_infinity(), |m, &x| m.max(x));
    let e = logits.mapv(|x| (x - max).exp());
    let sum = e.sum();
    e / sum
}

pub fn name_probabilities<T: Real>(code_vector: ArrayView1<T>, head: &NamePredictorHead<T>) -> Result<Array1<T>> {
    if code_vector.len() != head.functions_vocab.ncols() {
        return Err(Error::DimensionMismatch {
            context: "code vector vs. name embedding width",
            expected: head.functions_vocab.ncols(),
            actual: code_vector.len(),
        });
    }
    Ok(softmax(&head.functions_vocab.dot(&code_vector)))
}

pub fn name_logits<T: Real>(code_vector: ArrayView1<T>, head: &NamePredictorHead<T>) -> Result<Prediction> {
    let q: Vec<f64> = name_probabilities(code_vector, head)?
        .iter()
        .map(|x| x.to_f64().unwrap_or(f64::NAN))
        .collect();
    let index = argmax(&q);
    Ok(Prediction {
        score: q[index],
        distribution: q,
        index,
        degenerate: false,
    })
}

pub fn cross_entropy(pred: &Prediction, target: usize) -> Result<f64> {
    let q = pred.distribution.get(target).ok_or_else(|| {
        Error::InvalidArgument(format!("target {target} out of range for {} names", pred.distribution.len()))
    })?;
    Ok(-q.ln())
}

/// Cross-entropy loss with gradients for the code vector and the name table.
pub fn name_loss_and_grad<T: Real>(
    code_vector: ArrayView1<T>,
    head: &NamePredictorHead<T>,
    target: usize,
) -> Result<(T, Array1<T>, Array2<T>)> {
    if target >= head.names.len() {
        return Err(Error::InvalidArgument(format!(
            "target {target} out of range for {} names",
            head.names.len()
        )));
    }
    let logits = head.functions_vocab.dot(&code_vector);
    let max = logits.fold(T::neg_infinity(), |m, &x| m.max(x));
    let log_z = logits.mapv(|x| (x - max).exp()).sum().ln() + max;
    let loss = log_z - logits[target];
    let mut d_logits = softmax(&logits);
    d_logits[target] -= T::one();
    let d_code = head.functions_vocab.t().dot(&d_logits);
    let d_vocab = d_logits
        .insert_axis(ndarray::Axis(1))
        .dot(&code_vector.insert_axis(ndarray::Axis(0)));
    Ok((loss, d_code, d_vocab))
}

/// Splits an identifier into lowercase sub-words at underscores, other
/// non-alphanumerics, lower-to-upper case changes, acronym ends
/// (`HTTPServer` → `http`, `server`) and letter/digit boundaries.
pub fn split_subwords(name: &str) -> Vec<String> {
    let mut words = Vec::new();
    for part in name.split(|ch: char| !ch.is_ascii_alphanumeric()) {
        let chars: Vec<char> = part.chars().collect();
        let mut start = 0;
        for i in 1..chars.len() {
            let (p, ch) = (chars[i - 1], chars[i]);
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_ascii_lowercase());
            let boundary = (p.is_ascii_lowercase() && ch.is_ascii_uppercase())
                || (p.is_ascii_digit() != ch.is_ascii_digit())
                || (p.is_ascii_uppercase() && ch.is_ascii_uppercase() && next_lower);
            if boundary {
                words.push(chars[start..i].iter().collect::<String>().to_ascii_lowercase());
                start = i;
            }
        }
        if start < chars.len() {
            words.push(chars[start..].iter().collect::<String>().to_ascii_lowercase());
        }
    }
    words
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SubwordScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn subword_metrics(predicted: &str, gold: &str) -> SubwordScores {
    let pred = split_subwords(predicted);
    let gold = split_subwords(gold);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for w in &gold {
        *counts.entry(w).or_default() += 1;
    }
    let mut overlap = 0usize;
    for w in &pred {
        if let Some(n) = counts.get_mut(w.as_str()) {
            if *n > 0 {
                *n -= 1;
                overlap += 1;
            }
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(overlap, pred.len());
    let recall = ratio(overlap, gold.len());
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    SubwordScores { precision, recall, f1 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capsules::CapsuleLayer;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2};

    fn caps_with_norms(norms: &[f64]) -> CapsuleSet<f64> {
        let mut m = Array2::zeros((norms.len(), 2));
        for (i, &n) in norms.iter().enumerate() {
            m[[i, 0]] = n * 0.6;
            m[[i, 1]] = n * 0.8;
        }
        CapsuleSet::new(m, CapsuleLayer::Cc)
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(&caps_with_norms(&[0.9, 0.1])).index, 0);
        assert_eq!(classify(&caps_with_norms(&[0.5, 0.5])).index, 0);
        let p = classify(&caps_with_norms(&[0.2, 0.3, 0.5]));
        assert_eq!(p.index, 2);
        for (a, b) in p.distribution.iter().zip([0.2, 0.3, 0.5]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        let z = classify(&caps_with_norms(&[0.0, 0.0, 0.0, 0.0]));
        assert!(z.degenerate);
        assert_eq!(z.index, 0);
        assert_eq!(z.distribution, vec![0.25; 4]);
    }

    #[test]
    fn margin_loss_examples() {
        let cfg = MarginLossConfig::default();
        cfg.validate().unwrap();
        assert_abs_diff_eq!(margin_loss(&caps_with_norms(&[0.9, 0.1, 0.1]), 0, &cfg).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(margin_loss(&caps_with_norms(&[0.0, 0.0]), 1, &cfg).unwrap(), 0.81, epsilon = 1e-12);
        assert_abs_diff_eq!(margin_loss(&caps_with_norms(&[0.5, 0.5]), 0, &cfg).unwrap(), 0.24, epsilon = 1e-12);
        assert!(margin_loss(&caps_with_norms(&[0.5, 0.5]), 2, &cfg).is_err());
    }

    #[test]
    fn margin_grad_matches_finite_differences() {
        let v = arr2(&[[0.3, -0.2, 0.1], [0.05, 0.02, 0.0], [-0.6, 0.4, 0.3]]);
        let cfg = MarginLossConfig::default();
        let (_, g) = margin_loss_and_grad(&v, 1, &cfg).unwrap();
        let eps = 1e-7;
        for i in 0..3 {
            for k in 0..3 {
                let (mut p, mut m) = (v.clone(), v.clone());
                p[[i, k]] += eps;
                m[[i, k]] -= eps;
                let fd = (margin_loss_and_grad(&p, 1, &cfg).unwrap().0 - margin_loss_and_grad(&m, 1, &cfg).unwrap().0)
                    / (2.0 * eps);
                assert_abs_diff_eq!(g[[i, k]], fd, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn name_logit_examples() {
        let head = NamePredictorHead {
            functions_vocab: arr2(&[[1.0, 0.0], [0.0, 1.0]]),
            names: vec!["a".into(), "b".into()],
        };
        let p = name_logits(arr1(&[1.0, 0.0]).view(), &head).unwrap();
        assert_abs_diff_eq!(p.distribution[0], 0.73106, epsilon = 1e-5);
        assert_abs_diff_eq!(p.distribution[1], 0.26894, epsilon = 1e-5);
        let shifted = name_logits(arr1(&[1.7, 0.7]).view(), &head).unwrap();
        assert_abs_diff_eq!(shifted.distribution[0], p.distribution[0], epsilon = 1e-12);

        let same = NamePredictorHead {
            functions_vocab: arr2(&[[0.3, 0.4], [0.3, 0.4], [0.3, 0.4]]),
            names: vec!["a".into(), "b".into(), "c".into()],
        };
        let u = name_logits(arr1(&[2.0, -1.0]).view(), &same).unwrap();
        for q in u.distribution {
            assert_abs_diff_eq!(q, 1.0 / 3.0, epsilon = 1e-12);
        }
        assert!(name_logits(arr1(&[1.0]).view(), &head).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let pred = |d: Vec<f64>| Prediction {
            distribution: d,
            index: 0,
            score: 0.0,
            degenerate: false,
        };
        assert_eq!(cross_entropy(&pred(vec![1.0, 0.0]), 0).unwrap(), 0.0);
        assert_abs_diff_eq!(cross_entropy(&pred(vec![0.25; 4]), 2).unwrap(), 1.38629, epsilon = 1e-5);
        assert_abs_diff_eq!(cross_entropy(&pred(vec![0.5, 0.5]), 1).unwrap(), 0.69315, epsilon = 1e-5);
    }

    #[test]
    fn name_grad_matches_finite_differences() {
        let head = NamePredictorHead {
            functions_vocab: arr2(&[[0.2, -0.4, 0.1], [0.5, 0.3, -0.2], [-0.1, 0.0, 0.6]]),
            names: vec!["a".into(), "b".into(), "c".into()],
        };
        let v = arr1(&[0.4, -0.3, 0.7]);
        let (loss, dv, dw) = name_loss_and_grad(v.view(), &head, 2).unwrap();
        let ce = cross_entropy(&name_logits(v.view(), &head).unwrap(), 2).unwrap();
        assert_abs_diff_eq!(loss, ce, epsilon = 1e-12);
        let eps = 1e-6;
        let f = |v: &Array1<f64>, h: &NamePredictorHead<f64>| name_loss_and_grad(v.view(), h, 2).unwrap().0;
        for k in 0..3 {
            let (mut p, mut m) = (v.clone(), v.clone());
            p[k] += eps;
            m[k] -= eps;
            assert_abs_diff_eq!(dv[k], (f(&p, &head) - f(&m, &head)) / (2.0 * eps), epsilon = 1e-8);
        }
        for i in 0..3 {
            for k in 0..3 {
                let (mut p, mut m) = (head.clone(), head.clone());
                p.functions_vocab[[i, k]] += eps;
                m.functions_vocab[[i, k]] -= eps;
                assert_abs_diff_eq!(dw[[i, k]], (f(&v, &p) - f(&v, &m)) / (2.0 * eps), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn subword_examples() {
        let s = subword_metrics("result_compute", "computeResult");
        assert_eq!((s.precision, s.recall), (1.0, 1.0));
        let s = subword_metrics("compute", "computeResult");
        assert_eq!((s.precision, s.recall), (1.0, 0.5));
        let s = subword_metrics("compute_model_result", "computeResult");
        assert_abs_diff_eq!(s.precision, 2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(s.recall, 1.0);
        assert_eq!(subword_metrics("foo", "bar").f1, 0.0);
    }

    #[test]
    fn splitting_rules() {
        assert_eq!(split_subwords("HTTPServer2go"), vec!["http", "server", "2", "go"]);
        assert_eq!(split_subwords("bubble_sort"), vec!["bubble", "sort"]);
        assert_eq!(split_subwords("findMaxValue"), vec!["find", "max", "value"]);
        assert_eq!(split_subwords("a__b"), vec!["a", "b"]);
    }
}
