//! One-vs-all stay-type classification: SMOTE balancing, supervised feature
//! selection, forest training, prediction aggregation and evaluation.

pub mod forest;
pub mod metrics;
pub mod smote;

pub use forest::{
    feature_importance, rank_features, train_forest, Forest, ForestParams, TrainedForest, TreeNode,
};
pub use metrics::{weighted_f1, weighted_f1_of, Confusion};
pub use smote::smote;

use crate::features::{FeatureVector, FEATURE_NAMES};
use crate::rng::{derive_seed, derived_rng, TAG_CV, TAG_FOREST, TAG_IMPORTANCE, TAG_SELECT, TAG_SMOTE};
use crate::trace::StayType;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

/// Maximum selected features per model.
pub const K_MAX: usize = 8;
/// Estimator count for the feature-selection importance forest.
pub const SELECTOR_ESTIMATORS: usize = 250;
pub const SMOTE_NEIGHBORS: usize = 5;

/// Ablation feature groups: map-derived percentages plus RSI versus
/// temporally varying signals.
pub const SPATIAL_GROUP: [usize; 5] = [8, 9, 10, 11, 12];
pub const TEMPORAL_GROUP: [usize; 8] = [0, 1, 2, 3, 4, 5, 6, 7];

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("dataset contains a single class")]
    SingleClassDataset,
    #[error("too few minority samples: {0} (need at least 2)")]
    TooFewMinoritySamples(usize),
    #[error("insufficient class support for {0}")]
    InsufficientClassSupport(StayType),
    #[error("length mismatch: {predictions} predictions vs {truth} truth rows")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("malformed features file at line {line}: {reason}")]
    MalformedFeatures { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataRow {
    pub stay_id: String,
    pub features: [f64; 13],
    pub labels: BTreeSet<StayType>,
}

/// Labeled feature vectors, one row per stay.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub rows: Vec<DataRow>,
}

impl Dataset {
    pub fn binary_labels(&self, ty: StayType) -> Vec<bool> {
        self.rows.iter().map(|r| r.labels.contains(&ty)).collect()
    }

    pub fn feature_matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.features.to_vec()).collect()
    }

    /// `stay_id,f1,...,f13,labels` with `|`-separated label names.
    pub fn save_csv(&self, path: &Path) -> Result<(), LearnError> {
        let mut body = format!("stay_id,{},labels\n", FEATURE_NAMES.join(","));
        for row in &self.rows {
            let feats: Vec<String> = row.features.iter().map(|v| v.to_string()).collect();
            let labels: Vec<&str> = row.labels.iter().map(|t| t.name()).collect();
            body.push_str(&format!(
                "{},{},{}\n",
                row.stay_id,
                feats.join(","),
                labels.join("|")
            ));
        }
        std::fs::write(path, body)?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Dataset, LearnError> {
        let body = std::fs::read_to_string(path)?;
        let mut rows = Vec::new();
        for (i, line) in body.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 15 {
                return Err(LearnError::MalformedFeatures {
                    line: i + 1,
                    reason: format!("expected 15 fields, found {}", fields.len()),
                });
            }
            let mut features = [0.0; 13];
            for (f, slot) in features.iter_mut().enumerate() {
                *slot = fields[f + 1].trim().parse().map_err(|_| {
                    LearnError::MalformedFeatures {
                        line: i + 1,
                        reason: format!("bad number in column {}", f + 2),
                    }
                })?;
            }
            let mut labels = BTreeSet::new();
            for name in fields[14].split('|').filter(|s| !s.trim().is_empty()) {
                let ty = StayType::from_name(name.trim()).ok_or_else(|| {
                    LearnError::MalformedFeatures {
                        line: i + 1,
                        reason: format!("unknown label `{name}`"),
                    }
                })?;
                labels.insert(ty);
            }
            rows.push(DataRow {
                stay_id: fields[0].to_string(),
                features,
                labels,
            });
        }
        Ok(Dataset { rows })
    }
}

/// One trained one-vs-all member: the selected feature mask and the forest
/// trained on those columns (in ascending mask order).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TypeModel {
    pub stay_type: StayType,
    pub mask: Vec<usize>,
    pub threshold: f64,
    pub forest: Forest,
}

impl TypeModel {
    pub fn score(&self, features: &[f64; 13]) -> f64 {
        let masked: Vec<f64> = self.mask.iter().map(|&f| features[f]).collect();
        self.forest.score(&masked)
    }

    pub fn is_positive(&self, features: &[f64; 13]) -> bool {
        self.score(features) >= self.threshold
    }
}

/// Five one-vs-all forests with per-model selected-feature masks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuStopModel {
    pub params: ForestParams,
    pub per_type: Vec<TypeModel>,
}

impl BuStopModel {
    pub fn model_for(&self, ty: StayType) -> &TypeModel {
        &self.per_type[ty.index()]
    }

    pub fn save(&self, path: &Path) -> Result<(), LearnError> {
        std::fs::write(path, serde_json::to_string_pretty(self).unwrap())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<BuStopModel, LearnError> {
        let body = std::fs::read_to_string(path)?;
        serde_json::from_str(&body).map_err(|e| LearnError::MalformedFeatures {
            line: 0,
            reason: format!("bad model JSON: {e}"),
        })
    }
}

fn column_subset(x: &[[f64; 13]], mask: &[usize]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| mask.iter().map(|&f| row[f]).collect())
        .collect()
}

/// Balance a one-vs-all dataset by oversampling the minority side with SMOTE.
/// Returns the augmented matrix and labels, positives and negatives equal.
pub fn balance(
    x: &[[f64; 13]],
    y: &[bool],
    seed: u64,
    type_idx: usize,
) -> Result<(Vec<[f64; 13]>, Vec<bool>), LearnError> {
    let pos: Vec<[f64; 13]> = x
        .iter()
        .zip(y)
        .filter(|(_, &l)| l)
        .map(|(r, _)| *r)
        .collect();
    let neg: Vec<[f64; 13]> = x
        .iter()
        .zip(y)
        .filter(|(_, &l)| !l)
        .map(|(r, _)| *r)
        .collect();
    let (minority, minority_label) = if pos.len() <= neg.len() {
        (&pos, true)
    } else {
        (&neg, false)
    };
    let deficit = pos.len().abs_diff(neg.len());
    let mut rng = derived_rng(seed, TAG_SMOTE, type_idx as u64);
    let synth = if deficit > 0 {
        smote(minority, SMOTE_NEIGHBORS, deficit, &mut rng)?
    } else {
        Vec::new()
    };
    let mut bx: Vec<[f64; 13]> = x.to_vec();
    let mut by = y.to_vec();
    bx.extend(synth);
    by.extend(std::iter::repeat(minority_label).take(deficit));
    Ok((bx, by))
}

/// Pick the top-k feature mask (k <= `k_max`) maximizing out-of-bag weighted
/// F1 of a forest restricted to those features; ties favor smaller k.
/// Returns the mask sorted ascending.
pub fn select_features(
    x: &[[f64; 13]],
    y: &[bool],
    importances: &[f64],
    k_max: usize,
    params: &ForestParams,
    seed: u64,
) -> Result<Vec<usize>, LearnError> {
    let ranked = rank_features(importances);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for k in 1..=k_max.min(importances.len()) {
        let mut mask: Vec<usize> = ranked[..k].to_vec();
        mask.sort_unstable();
        let xs = column_subset(x, &mask);
        let trained = train_forest(
            &xs,
            y,
            &ForestParams {
                seed: derive_seed(seed, TAG_SELECT, k as u64),
                ..*params
            },
        )?;
        let scores = trained.oob_scores(&xs);
        let mut pred = Vec::new();
        let mut truth = Vec::new();
        for (s, &label) in scores.iter().zip(y) {
            if let Some(v) = s {
                pred.push(*v >= 0.5);
                truth.push(label);
            }
        }
        let f1 = weighted_f1(&pred, &truth)?;
        let better = match &best {
            None => true,
            Some((b, _)) => f1 > *b,
        };
        if better {
            best = Some((f1, mask));
        }
    }
    Ok(best.expect("k_max >= 1").1)
}

/// Train the full five-model ensemble: per type, binarize labels, SMOTE
/// balance, rank features with a 250-tree selector, pick the top-k mask by
/// out-of-bag F1, then train the final forest on the masked columns.
pub fn train_bustop(
    dataset: &Dataset,
    params: &ForestParams,
    seed: u64,
    selector_estimators: usize,
) -> Result<BuStopModel, LearnError> {
    if dataset.rows.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let x: Vec<[f64; 13]> = dataset.rows.iter().map(|r| r.features).collect();
    let mut per_type = Vec::with_capacity(5);
    for ty in StayType::ALL {
        let y = dataset.binary_labels(ty);
        let model = train_type_model(&x, &y, ty, params, seed, selector_estimators, None)?;
        per_type.push(model);
    }
    Ok(BuStopModel {
        params: ForestParams { seed, ..*params },
        per_type,
    })
}

/// `fixed_mask` skips importance ranking and selection (used by ablation).
fn train_type_model(
    x: &[[f64; 13]],
    y: &[bool],
    ty: StayType,
    params: &ForestParams,
    seed: u64,
    selector_estimators: usize,
    fixed_mask: Option<&[usize]>,
) -> Result<TypeModel, LearnError> {
    let type_idx = ty.index();
    let pos = y.iter().filter(|&&b| b).count();
    if pos < 2 || y.len() - pos < 1 {
        return Err(LearnError::InsufficientClassSupport(ty));
    }
    let (bx, by) = balance(x, y, seed, type_idx)?;
    let type_seed = derive_seed(seed, TAG_FOREST, type_idx as u64);
    let mask: Vec<usize> = match fixed_mask {
        Some(m) => {
            let mut m = m.to_vec();
            m.sort_unstable();
            m
        }
        None => {
            let matrix: Vec<Vec<f64>> = bx.iter().map(|r| r.to_vec()).collect();
            let importances = feature_importance(
                &matrix,
                &by,
                selector_estimators,
                derive_seed(type_seed, TAG_IMPORTANCE, 0),
            )?;
            select_features(&bx, &by, &importances, K_MAX, params, type_seed)?
        }
    };
    let xs = column_subset(&bx, &mask);
    let trained = train_forest(
        &xs,
        &by,
        &ForestParams {
            seed: derive_seed(type_seed, TAG_FOREST, 1),
            ..*params
        },
    )?;
    Ok(TypeModel {
        stay_type: ty,
        mask,
        threshold: 0.5,
        forest: trained.forest,
    })
}

/// Poll all five forests and aggregate. Ad-hoc never co-occurs with another
/// type; an all-negative poll falls back to ad-hoc, mirroring the
/// ground-truth convention that unexplained stops are marked ad-hoc.
pub fn predict_stay_types(model: &BuStopModel, fv: &FeatureVector) -> BTreeSet<StayType> {
    let features = fv.as_array();
    let mut result: BTreeSet<StayType> = StayType::ALL
        .into_iter()
        .filter(|ty| *ty != StayType::AdHoc)
        .filter(|ty| model.model_for(*ty).is_positive(&features))
        .collect();
    if result.is_empty() {
        result.insert(StayType::AdHoc);
    }
    result
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TypeCv {
    pub mean_f1: f64,
    pub sd_f1: f64,
    pub confusion: Confusion,
}

/// Per-type weighted-F1 mean and standard deviation over folds x repeats.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub per_type: BTreeMap<StayType, TypeCv>,
}

/// Stratified k-fold cross-validation repeated `repeats` times, stratifying
/// each binary task independently. SMOTE, feature ranking and selection all
/// happen inside the training folds only.
pub fn cross_validate(
    dataset: &Dataset,
    folds: usize,
    repeats: usize,
    params: &ForestParams,
    seed: u64,
) -> Result<CvReport, LearnError> {
    cross_validate_masked(dataset, folds, repeats, params, seed, None)
}

fn cross_validate_masked(
    dataset: &Dataset,
    folds: usize,
    repeats: usize,
    params: &ForestParams,
    seed: u64,
    fixed_mask: Option<&[usize]>,
) -> Result<CvReport, LearnError> {
    let x: Vec<[f64; 13]> = dataset.rows.iter().map(|r| r.features).collect();
    let mut per_type = BTreeMap::new();
    for ty in StayType::ALL {
        let y = dataset.binary_labels(ty);
        let pos_total = y.iter().filter(|&&b| b).count();
        if pos_total < folds {
            return Err(LearnError::InsufficientClassSupport(ty));
        }
        let mut f1s = Vec::with_capacity(folds * repeats);
        let mut confusion = Confusion::default();
        for rep in 0..repeats {
            let mut rng = derived_rng(
                seed,
                TAG_CV,
                (ty.index() as u64) << 32 | rep as u64,
            );
            let mut pos_idx: Vec<usize> = (0..y.len()).filter(|&i| y[i]).collect();
            let mut neg_idx: Vec<usize> = (0..y.len()).filter(|&i| !y[i]).collect();
            pos_idx.shuffle(&mut rng);
            neg_idx.shuffle(&mut rng);
            // round-robin deal keeps per-fold class proportions within one row
            let mut fold_of = vec![0usize; y.len()];
            for (i, &r) in pos_idx.iter().chain(neg_idx.iter()).enumerate() {
                fold_of[r] = i % folds;
            }
            for fold in 0..folds {
                let train_rows: Vec<usize> =
                    (0..y.len()).filter(|&r| fold_of[r] != fold).collect();
                let test_rows: Vec<usize> =
                    (0..y.len()).filter(|&r| fold_of[r] == fold).collect();
                let tx: Vec<[f64; 13]> = train_rows.iter().map(|&r| x[r]).collect();
                let ty_labels: Vec<bool> = train_rows.iter().map(|&r| y[r]).collect();
                let fold_seed = derive_seed(seed, TAG_CV, ((rep * folds + fold) as u64) << 8);
                let model = train_type_model(
                    &tx,
                    &ty_labels,
                    ty,
                    params,
                    fold_seed,
                    SELECTOR_ESTIMATORS,
                    fixed_mask,
                )?;
                let pred: Vec<bool> = test_rows
                    .iter()
                    .map(|&r| model.is_positive(&x[r]))
                    .collect();
                let truth: Vec<bool> = test_rows.iter().map(|&r| y[r]).collect();
                let c = Confusion::from_pairs(&pred, &truth)?;
                confusion.add(&c);
                f1s.push(weighted_f1_of(&c));
            }
        }
        let n = f1s.len() as f64;
        let mean = f1s.iter().sum::<f64>() / n;
        let var = f1s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        per_type.insert(
            ty,
            TypeCv {
                mean_f1: mean,
                sd_f1: var.sqrt(),
                confusion,
            },
        );
    }
    Ok(CvReport { per_type })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub spatial_only: CvReport,
    pub temporal_only: CvReport,
    pub full: CvReport,
}

/// Cross-validate with the fixed spatial, temporal and full feature groups in
/// place of supervised selection.
pub fn ablate_feature_groups(
    dataset: &Dataset,
    folds: usize,
    repeats: usize,
    params: &ForestParams,
    seed: u64,
) -> Result<AblationReport, LearnError> {
    let all: Vec<usize> = (0..13).collect();
    Ok(AblationReport {
        spatial_only: cross_validate_masked(
            dataset,
            folds,
            repeats,
            params,
            seed,
            Some(&SPATIAL_GROUP),
        )?,
        temporal_only: cross_validate_masked(
            dataset,
            folds,
            repeats,
            params,
            seed,
            Some(&TEMPORAL_GROUP),
        )?,
        full: cross_validate_masked(dataset, folds, repeats, params, seed, Some(&all))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Synthetic multi-label dataset: feature 0 cleanly separates each type
    /// into its own band, feature 9 mirrors it, the rest are mild noise.
    fn toy_dataset(n_per_type: usize) -> Dataset {
        let mut rows = Vec::new();
        for (ti, ty) in StayType::ALL.into_iter().enumerate() {
            for i in 0..n_per_type {
                let jitter = (i % 10) as f64 * 0.05;
                let mut features = [0.0; 13];
                features[0] = ti as f64 * 10.0 + jitter;
                features[9] = 100.0 - ti as f64 * 15.0 + jitter;
                features[3] = (i % 7) as f64;
                features[12] = (ti == 0) as u8 as f64;
                rows.push(DataRow {
                    stay_id: format!("{}_{}", ty.name(), i),
                    features,
                    labels: [ty].into_iter().collect(),
                });
            }
        }
        Dataset { rows }
    }

    #[test]
    fn train_bustop_is_deterministic_and_masks_are_bounded() {
        let ds = toy_dataset(12);
        let params = ForestParams {
            n_trees: 20,
            ..ForestParams::default()
        };
        let a = train_bustop(&ds, &params, 42, 50).unwrap();
        let b = train_bustop(&ds, &params, 42, 50).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(a.per_type.len(), 5);
        for tm in &a.per_type {
            assert!(!tm.mask.is_empty() && tm.mask.len() <= K_MAX);
            assert!(tm.forest.max_depth() <= 8);
        }
    }

    #[test]
    fn single_positive_row_is_rejected() {
        let mut ds = toy_dataset(6);
        ds.rows.retain(|r| {
            !r.labels.contains(&StayType::Turn) || r.stay_id == "Turn_0"
        });
        assert!(matches!(
            train_bustop(&ds, &ForestParams::default(), 1, 50),
            Err(LearnError::InsufficientClassSupport(StayType::Turn))
        ));
    }

    #[test]
    fn prediction_aggregation_rules() {
        let ds = toy_dataset(12);
        let params = ForestParams {
            n_trees: 20,
            ..ForestParams::default()
        };
        let model = train_bustop(&ds, &params, 42, 50).unwrap();
        // a clean example of each type predicts exactly that type
        for row in &ds.rows {
            let fv = FeatureVector::from_array(&row.features);
            let got = predict_stay_types(&model, &fv);
            assert_eq!(got, row.labels, "row {}", row.stay_id);
        }
    }

    #[test]
    fn adhoc_exclusive_even_when_confounded() {
        // force the aggregation branch directly with stub forests
        let leaf = |p: f64| Forest {
            trees: vec![TreeNode::Leaf { leaf_prob: p }],
        };
        let model = BuStopModel {
            params: ForestParams::default(),
            per_type: StayType::ALL
                .into_iter()
                .map(|ty| TypeModel {
                    stay_type: ty,
                    mask: vec![0],
                    threshold: 0.5,
                    forest: leaf(match ty {
                        StayType::Congestion | StayType::AdHoc => 1.0,
                        _ => 0.0,
                    }),
                })
                .collect(),
        };
        let fv = FeatureVector::from_array(&[0.0; 13]);
        let got = predict_stay_types(&model, &fv);
        assert_eq!(got, [StayType::Congestion].into_iter().collect());
    }

    #[test]
    fn all_negative_falls_back_to_adhoc() {
        let leaf = Forest {
            trees: vec![TreeNode::Leaf { leaf_prob: 0.0 }],
        };
        let model = BuStopModel {
            params: ForestParams::default(),
            per_type: StayType::ALL
                .into_iter()
                .map(|ty| TypeModel {
                    stay_type: ty,
                    mask: vec![0],
                    threshold: 0.5,
                    forest: leaf.clone(),
                })
                .collect(),
        };
        let fv = FeatureVector::from_array(&[0.0; 13]);
        assert_eq!(
            predict_stay_types(&model, &fv),
            [StayType::AdHoc].into_iter().collect()
        );
    }

    #[test]
    fn select_features_prefers_small_masks_on_single_informative_feature() {
        // feature 0 cleanly separates the classes, others constant; any mask
        // containing it scores a perfect out-of-bag F1, so the smaller-k tie
        // rule must land on k = 1
        let x: Vec<[f64; 13]> = (0..60)
            .map(|i| {
                let mut row = [0.0; 13];
                row[0] = if i < 30 { 0.0 } else { 100.0 };
                row
            })
            .collect();
        let y: Vec<bool> = (0..60).map(|i| i < 30).collect();
        let mut importances = vec![0.0; 13];
        importances[0] = 1.0;
        let params = ForestParams {
            n_trees: 30,
            ..ForestParams::default()
        };
        let mask = select_features(&x, &y, &importances, K_MAX, &params, 5).unwrap();
        assert_eq!(mask, vec![0]);
    }

    #[test]
    fn cross_validation_separable_and_deterministic() {
        let ds = toy_dataset(10);
        let params = ForestParams {
            n_trees: 15,
            ..ForestParams::default()
        };
        let a = cross_validate(&ds, 5, 2, &params, 3).unwrap();
        let b = cross_validate(&ds, 5, 2, &params, 3).unwrap();
        for ty in StayType::ALL {
            assert!(a.per_type[&ty].mean_f1 > 0.99, "{ty}: {}", a.per_type[&ty].mean_f1);
            assert_eq!(a.per_type[&ty].confusion, b.per_type[&ty].confusion);
            assert_eq!(a.per_type[&ty].mean_f1, b.per_type[&ty].mean_f1);
        }
    }

    #[test]
    fn ablation_groups_partition_the_features() {
        let mut all: Vec<usize> = SPATIAL_GROUP
            .iter()
            .chain(TEMPORAL_GROUP.iter())
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..13).collect::<Vec<_>>());
    }

    #[test]
    fn dataset_csv_round_trip() {
        let ds = toy_dataset(3);
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("features.csv");
        ds.save_csv(&path).unwrap();
        let back = Dataset::load_csv(&path).unwrap();
        assert_eq!(ds.rows.len(), back.rows.len());
        for (a, b) in ds.rows.iter().zip(&back.rows) {
            assert_eq!(a.stay_id, b.stay_id);
            assert_eq!(a.features, b.features);
            assert_eq!(a.labels, b.labels);
        }
    }
}
