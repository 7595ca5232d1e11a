use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use super::idx::{load_idx, IdxImages};
use super::{DataError, DatasetSplits, EnvironmentBatch, Labels, Result};
use crate::model::TaskKind;
use crate::rng::stream;
use crate::tensor::Tensor;

/// Two-digit images `[left | right]`; task 0 reads the left digit, task 1 the
/// right. The hundred ordered label pairs are split disjointly between
/// train, valid and test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MnistPairSpec {
    pub images: PathBuf,
    pub labels: PathBuf,
    pub pairs_per_class_pair: usize,
    pub split_seed: u64,
    /// Relative sizes of the train/valid/test label-pair partition.
    pub ratios: [usize; 3],
}

impl MnistPairSpec {
    /// Small preset for saliency plots and quick runs.
    pub fn analysis(images: impl Into<PathBuf>, labels: impl Into<PathBuf>) -> Self {
        Self {
            images: images.into(),
            labels: labels.into(),
            pairs_per_class_pair: 20,
            split_seed: 0,
            ratios: [3, 1, 1],
        }
    }

    /// Full-size preset: 10,000 composed images per label pair.
    pub fn benchmark(images: impl Into<PathBuf>, labels: impl Into<PathBuf>) -> Self {
        Self {
            pairs_per_class_pair: 10_000,
            ..Self::analysis(images, labels)
        }
    }

    pub fn task_kinds() -> [TaskKind; 2] {
        [TaskKind::Multiclass { classes: 10 }; 2]
    }
}

/// Split the 100 ordered digit pairs into three disjoint sets.
pub fn partition_pairs(ratios: [usize; 3], seed: u64) -> Result<[Vec<(u8, u8)>; 3]> {
    let total: usize = ratios.iter().sum();
    if total == 0 || ratios.contains(&0) {
        return Err(DataError::InvalidSpec("split ratios must be positive".into()));
    }
    let mut pairs: Vec<(u8, u8)> = (0..10).flat_map(|a| (0..10).map(move |b| (a, b))).collect();
    pairs.shuffle(&mut stream(seed, "mnist/pairs"));
    let n_train = pairs.len() * ratios[0] / total;
    let n_valid = pairs.len() * ratios[1] / total;
    let valid_test = pairs.split_off(n_train);
    let (valid, test) = valid_test.split_at(n_valid);
    Ok([pairs, valid.to_vec(), test.to_vec()])
}

pub fn compose_multimnist(spec: &MnistPairSpec) -> Result<DatasetSplits> {
    let (images, labels) = load_idx(&spec.images, &spec.labels)?;
    compose_from(&images, &labels, spec)
}

/// Compose from already loaded digits.
pub fn compose_from(images: &IdxImages, labels: &[u8], spec: &MnistPairSpec) -> Result<DatasetSplits> {
    if spec.pairs_per_class_pair == 0 {
        return Err(DataError::InvalidSpec("pairs_per_class_pair must be positive".into()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); 10];
    for (i, &l) in labels.iter().enumerate() {
        if l > 9 {
            return Err(DataError::InvalidSpec(format!("digit label {l} out of range")));
        }
        by_class[l as usize].push(i);
    }
    for (class, idx) in by_class.iter().enumerate() {
        if idx.len() < spec.pairs_per_class_pair {
            return Err(DataError::InsufficientDigits {
                class: class as u8,
                needed: spec.pairs_per_class_pair,
                available: idx.len(),
            });
        }
    }
    let [train, valid, test] = partition_pairs(spec.ratios, spec.split_seed)?;
    let (h, w) = (images.rows, images.cols);
    let mask_left: Vec<bool> = (0..h * 2 * w).map(|j| j % (2 * w) < w).collect();
    let mask_right: Vec<bool> = mask_left.iter().map(|m| !m).collect();
    let build = |name: &str, pairs: &[(u8, u8)]| -> Result<EnvironmentBatch> {
        let mut rng = stream(spec.split_seed, &format!("mnist/{name}"));
        let n = pairs.len() * spec.pairs_per_class_pair;
        let mut data = Vec::with_capacity(n * h * 2 * w);
        let (mut ya, mut yb) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for &(a, b) in pairs {
            let left: Vec<usize> = by_class[a as usize]
                .choose_multiple(&mut rng, spec.pairs_per_class_pair)
                .copied()
                .collect();
            let right: Vec<usize> = by_class[b as usize]
                .choose_multiple(&mut rng, spec.pairs_per_class_pair)
                .copied()
                .collect();
            for (&l, &r) in left.iter().zip(&right) {
                let (li, ri) = (images.image(l), images.image(r));
                for row in 0..h {
                    data.extend_from_slice(&li[row * w..(row + 1) * w]);
                    data.extend_from_slice(&ri[row * w..(row + 1) * w]);
                }
                ya.push(a as usize);
                yb.push(b as usize);
            }
        }
        let x = Arc::new(Tensor::matrix(n, h * 2 * w, data)?);
        EnvironmentBatch::new(
            name,
            vec![x.clone(), x],
            vec![Labels::Class(ya), Labels::Class(yb)],
            vec![mask_left.clone(), mask_right.clone()],
        )
    };
    Ok(DatasetSplits {
        train: build("train", &train)?,
        valid: build("valid", &valid)?,
        test: build("test", &test)?,
    })
}
