//! Dataset ingestion, min-max normalisation, stratified folds and the
//! scheme-selection subsets.

use std::collections::BTreeSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::Points;
use crate::rng;

/// Immutable feature matrix with binary labels and a declared minority class.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Points,
    labels: Vec<String>,
    minority_label: String,
    majority_label: String,
    feature_names: Option<Vec<String>>,
    label_name: String,
}

impl Dataset {
    /// Validates and builds a dataset. When `minority_label` is `None` the rarer
    /// label is used (ties resolve to the label that sorts first).
    pub fn new(
        features: Points,
        labels: Vec<String>,
        minority_label: Option<&str>,
    ) -> Result<Self> {
        if features.dim() == 0 {
            return Err(Error::InvalidDataset("no feature columns".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if !features.all_finite() {
            return Err(Error::InvalidDataset("non-finite feature value".into()));
        }
        let classes: BTreeSet<&str> = labels.iter().map(String::as_str).collect();
        if classes.len() != 2 {
            return Err(Error::ClassCount {
                found: classes.len(),
            });
        }
        let classes: Vec<&str> = classes.into_iter().collect();
        let (a, b) = (classes[0], classes[1]);
        let count = |l: &str| labels.iter().filter(|x| x.as_str() == l).count();
        let (minority, majority) = match minority_label {
            Some(m) if m == a => (a, b),
            Some(m) if m == b => (b, a),
            Some(m) => return Err(Error::EmptyMinority(m.to_string())),
            None if count(b) < count(a) => (b, a),
            None => (a, b),
        };
        let (n_min, n_maj) = (count(minority), count(majority));
        if n_min > n_maj {
            return Err(Error::MinorityLarger {
                label: minority.to_string(),
                minority: n_min,
                majority: n_maj,
            });
        }
        let (minority, majority) = (minority.to_string(), majority.to_string());
        Ok(Self {
            features,
            labels,
            minority_label: minority,
            majority_label: majority,
            feature_names: None,
            label_name: "label".into(),
        })
    }

    /// Builds a dataset from a minority mask, labelling minority rows `"1"` and
    /// the rest `"0"`.
    pub fn from_mask(features: Points, is_minority: &[bool]) -> Result<Self> {
        let labels = is_minority
            .iter()
            .map(|&m| if m { "1" } else { "0" }.to_string())
            .collect();
        Self::new(features, labels, Some("1"))
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_feats() {
            return Err(Error::InvalidDataset(format!(
                "{} feature names for {} features",
                names.len(),
                self.n_feats()
            )));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn with_label_name(mut self, name: impl Into<String>) -> Self {
        self.label_name = name.into();
        self
    }

    pub fn features(&self) -> &Points {
        &self.features
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn minority_label(&self) -> &str {
        &self.minority_label
    }

    pub fn majority_label(&self) -> &str {
        &self.majority_label
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn label_name(&self) -> &str {
        &self.label_name
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_feats(&self) -> usize {
        self.features.dim()
    }

    pub fn is_minority(&self, i: usize) -> bool {
        self.labels[i] == self.minority_label
    }

    pub fn minority_mask(&self) -> Vec<bool> {
        (0..self.n_samples()).map(|i| self.is_minority(i)).collect()
    }

    pub fn minority_indices(&self) -> Vec<usize> {
        (0..self.n_samples()).filter(|&i| self.is_minority(i)).collect()
    }

    pub fn majority_indices(&self) -> Vec<usize> {
        (0..self.n_samples()).filter(|&i| !self.is_minority(i)).collect()
    }

    pub fn minority_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == self.minority_label).count()
    }

    pub fn majority_count(&self) -> usize {
        self.n_samples() - self.minority_count()
    }

    pub fn minority_points(&self) -> Points {
        self.features.select(&self.minority_indices())
    }

    pub fn majority_points(&self) -> Points {
        self.features.select(&self.majority_indices())
    }

    /// Rows at `indices`, keeping the minority declaration of `self`.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let labels = indices.iter().map(|&i| self.labels[i].clone()).collect();
        let mut d = Dataset::new(self.features.select(indices), labels, Some(&self.minority_label))?;
        d.feature_names = self.feature_names.clone();
        d.label_name = self.label_name.clone();
        Ok(d)
    }

    /// Same labels and metadata with a replaced feature matrix.
    pub fn with_features(&self, features: Points) -> Result<Dataset> {
        if features.len() != self.n_samples() || features.dim() != self.n_feats() {
            return Err(Error::InvalidDataset("feature matrix shape mismatch".into()));
        }
        let mut d = self.clone();
        d.features = features;
        Ok(d)
    }

    /// Header used when writing: feature names (or `f0..`) followed by the label column.
    pub fn header(&self) -> Vec<String> {
        let mut header: Vec<String> = match &self.feature_names {
            Some(names) => names.clone(),
            None => (0..self.n_feats()).map(|j| format!("f{j}")).collect(),
        };
        header.push(self.label_name.clone());
        header
    }
}

/// Which CSV column holds the class label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl From<&str> for LabelColumn {
    fn from(s: &str) -> Self {
        LabelColumn::Name(s.to_string())
    }
}

impl From<usize> for LabelColumn {
    fn from(i: usize) -> Self {
        LabelColumn::Index(i)
    }
}

impl LabelColumn {
    /// A header name wins over the numeric reading, so a column literally
    /// called `"3"` can still be selected by name.
    fn resolve(&self, header: &csv::StringRecord) -> Result<usize> {
        match self {
            LabelColumn::Index(i) if *i < header.len() => Ok(*i),
            LabelColumn::Index(i) => Err(Error::MissingLabelColumn(i.to_string())),
            LabelColumn::Name(name) => header
                .iter()
                .position(|h| h == name)
                .or_else(|| name.parse::<usize>().ok().filter(|&i| i < header.len()))
                .ok_or_else(|| Error::MissingLabelColumn(name.clone())),
        }
    }
}

pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: impl Into<LabelColumn>,
    minority_label: Option<&str>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader.headers()?.clone();
    let label_idx = label_column.into().resolve(&header)?;
    let dim = header.len() - 1;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut features = Points::new(dim);
    let mut labels = Vec::new();
    let mut row = Vec::with_capacity(dim);
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        row.clear();
        for (j, cell) in record.iter().enumerate() {
            if j == label_idx {
                labels.push(cell.to_string());
                continue;
            }
            let v = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::NonNumeric {
                    row: r + 2,
                    column: j + 1,
                    value: cell.to_string(),
                })?;
            row.push(v);
        }
        features.push(&row)?;
    }
    Dataset::new(features, labels, minority_label)?
        .with_feature_names(feature_names)
        .map(|d| d.with_label_name(&header[label_idx]))
}

/// Writes features followed by the label column. Floats use the shortest
/// representation that parses back to the same bits.
pub fn write_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(d.header())?;
    for (i, row) in d.features().rows().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(d.labels()[i].clone());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// One entry of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    pub path: PathBuf,
    pub label_column: LabelColumn,
    #[serde(default)]
    pub minority_label: Option<String>,
}

impl DatasetEntry {
    /// Loads the dataset; relative paths resolve against `base`.
    pub fn load(&self, base: Option<&Path>) -> Result<Dataset> {
        let path = match base {
            Some(b) if self.path.is_relative() => b.join(&self.path),
            _ => self.path.clone(),
        };
        load_csv(path, self.label_column.clone(), self.minority_label.as_deref())
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<DatasetEntry>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(file)?)
}

/// Per-feature min-max scaling fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl Normalizer {
    pub fn fit(points: &Points) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("cannot fit a normalizer on no rows".into()));
        }
        let mut min = vec![f64::INFINITY; points.dim()];
        let mut max = vec![f64::NEG_INFINITY; points.dim()];
        for row in points.rows() {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    /// Scales into [0, 1], clipping values outside the fitted range.
    /// Constant features map to 0.
    pub fn transform(&self, points: &Points) -> Points {
        let mut out = points.clone();
        for i in 0..out.len() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                let span = self.max[j] - self.min[j];
                *v = if span > 0.0 {
                    ((*v - self.min[j]) / span).clamp(0.0, 1.0)
                } else {
                    0.0
                };
            }
        }
        out
    }

    /// Maps normalised points back to the original units. Constant features
    /// map back to their single value.
    pub fn inverse(&self, points: &Points) -> Points {
        let mut out = points.clone();
        for i in 0..out.len() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = self.min[j] + *v * (self.max[j] - self.min[j]);
            }
        }
        out
    }

    pub fn apply(&self, d: &Dataset) -> Dataset {
        d.with_features(self.transform(d.features()))
            .expect("transform preserves shape")
    }
}

pub fn fit_normalizer(train: &Dataset) -> Result<Normalizer> {
    Normalizer::fit(train.features())
}

pub fn apply_normalizer(norm: &Normalizer, d: &Dataset) -> Dataset {
    norm.apply(d)
}

/// Fold assignments for repeated stratified k-fold cross validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub repeats: usize,
    pub folds: usize,
    /// `assignments[r][i]` is the test fold of sample `i` in repeat `r`.
    pub assignments: Vec<Vec<usize>>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn test_indices(&self, repeat: usize, fold: usize) -> Vec<usize> {
        self.assignments[repeat]
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == fold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn train_indices(&self, repeat: usize, fold: usize) -> Vec<usize> {
        self.assignments[repeat]
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != fold)
            .map(|(i, _)| i)
            .collect()
    }

    /// All `(repeat, fold)` pairs in canonical order.
    pub fn splits(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.repeats).flat_map(move |r| (0..self.folds).map(move |f| (r, f)))
    }
}

pub fn stratified_folds(d: &Dataset, repeats: usize, folds: usize, seed: u64) -> Result<FoldPlan> {
    if repeats == 0 || folds < 2 {
        return Err(Error::InvalidParameter(format!(
            "need repeats >= 1 and folds >= 2, got {repeats}x{folds}"
        )));
    }
    if folds > d.minority_count() {
        return Err(Error::InvalidParameter(format!(
            "{folds} folds but only {} minority samples",
            d.minority_count()
        )));
    }
    let assignments = (0..repeats)
        .map(|r| {
            let mut rng = rng::stream(seed, r as u64);
            let mut minority = d.minority_indices();
            let mut majority = d.majority_indices();
            minority.shuffle(&mut rng);
            majority.shuffle(&mut rng);
            // dealing minority first then majority round-robin keeps both the
            // per-class and the total fold sizes within one of each other
            let mut fold_of = vec![0; d.n_samples()];
            for (pos, &i) in minority.iter().chain(&majority).enumerate() {
                fold_of[i] = pos % folds;
            }
            fold_of
        })
        .collect();
    Ok(FoldPlan {
        repeats,
        folds,
        assignments,
        seed,
    })
}

/// Disjoint index sets for a stratified train/test subset pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Draws class-stratified train and test subsets holding `train_frac` and
/// `test_frac` of each class, rounded to the nearest count (at least one
/// minority sample per part).
pub fn selection_indices(
    d: &Dataset,
    train_frac: f64,
    test_frac: f64,
    seed: u64,
) -> Result<SelectionSplit> {
    if !(train_frac > 0.0 && test_frac > 0.0 && train_frac + test_frac <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "fractions {train_frac} and {test_frac} must be positive and sum to at most 1"
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut split = SelectionSplit {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (mut idx, minimum) in [(d.minority_indices(), 1), (d.majority_indices(), 0)] {
        let n = idx.len();
        let n_train = ((n as f64 * train_frac).round() as usize).max(minimum);
        let n_test = ((n as f64 * test_frac).round() as usize).max(minimum);
        if n_train + n_test > n {
            return Err(Error::InvalidDataset(format!(
                "class of {n} samples is too small for a {train_frac}/{test_frac} split"
            )));
        }
        idx.shuffle(&mut rng);
        split.train.extend_from_slice(&idx[..n_train]);
        split.test.extend_from_slice(&idx[n_train..n_train + n_test]);
    }
    split.train.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

pub fn selection_split(
    d: &Dataset,
    train_frac: f64,
    test_frac: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let split = selection_indices(d, train_frac, test_frac, seed)?;
    Ok((d.subset(&split.train)?, d.subset(&split.test)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn line_dataset(n: usize, n_min: usize) -> Dataset {
        let pts = Points::from_flat((0..n).map(|i| i as f64).collect(), 1).unwrap();
        let mask: Vec<bool> = (0..n).map(|i| i < n_min).collect();
        Dataset::from_mask(pts, &mask).unwrap()
    }

    #[test]
    fn rarer_label_is_minority() {
        let f = write_tmp("x,y,cls\n1,2,a\n3,4,a\n5,6,a\n7,8,b\n");
        let d = load_csv(f.path(), "cls", None).unwrap();
        assert_eq!(d.n_samples(), 4);
        assert_eq!(d.minority_label(), "b");
        assert_eq!(d.features().row(3), &[7.0, 8.0]);
        assert_eq!(d.feature_names().unwrap(), &["x", "y"]);
    }

    #[test]
    fn explicit_majority_as_minority_rejected() {
        let f = write_tmp("x,cls\n1,a\n3,a\n5,a\n7,b\n");
        let err = load_csv(f.path(), "cls", Some("a")).unwrap_err();
        assert!(matches!(err, Error::MinorityLarger { minority: 3, majority: 1, .. }));
    }

    #[test]
    fn label_column_by_index() {
        let f = write_tmp("cls,x\na,1\nb,2\na,3\n");
        let d = load_csv(f.path(), 0usize, None).unwrap();
        assert_eq!(d.minority_label(), "b");
        assert_eq!(d.features().as_flat(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn non_numeric_cell_reports_position() {
        let f = write_tmp("x,y,cls\n1,2,a\n3,oops,b\n");
        match load_csv(f.path(), "cls", None).unwrap_err() {
            Error::NonNumeric { row, column, value } => {
                assert_eq!((row, column), (3, 2));
                assert_eq!(value, "oops");
            }
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn class_count_errors() {
        let one = write_tmp("x,cls\n1,a\n2,a\n");
        assert!(matches!(load_csv(one.path(), "cls", None), Err(Error::ClassCount { found: 1 })));
        let three = write_tmp("x,cls\n1,a\n2,b\n3,c\n");
        assert!(matches!(load_csv(three.path(), "cls", None), Err(Error::ClassCount { found: 3 })));
        let two = write_tmp("x,cls\n1,a\n2,b\n");
        assert!(matches!(load_csv(two.path(), "cls", Some("z")), Err(Error::EmptyMinority(_))));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(load_csv("/no/such/file.csv", "cls", None), Err(Error::Io { .. })));
    }

    #[test]
    fn normalizer_conventions() {
        let train = Points::from_rows(&[[0.0, 3.0], [5.0, 3.0], [10.0, 3.0]]).unwrap();
        let norm = Normalizer::fit(&train).unwrap();
        let t = norm.transform(&train);
        assert_eq!(t.as_flat(), &[0.0, 0.0, 0.5, 0.0, 1.0, 0.0]);
        let test = Points::from_rows(&[[12.0, 4.0], [-1.0, 2.0]]).unwrap();
        assert_eq!(norm.transform(&test).as_flat(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(norm.inverse(&t), train);
    }

    #[test]
    fn two_folds_split_two_minority() {
        let d = line_dataset(10, 2);
        let plan = stratified_folds(&d, 1, 2, 3).unwrap();
        for f in 0..2 {
            let test = plan.test_indices(0, f);
            assert_eq!(test.iter().filter(|&&i| d.is_minority(i)).count(), 1);
            assert_eq!(test.len(), 5);
        }
    }

    #[test]
    fn folds_are_deterministic_and_counted() {
        let d = line_dataset(100, 10);
        let a = stratified_folds(&d, 5, 5, 11).unwrap();
        assert_eq!(a, stratified_folds(&d, 5, 5, 11).unwrap());
        assert_ne!(a, stratified_folds(&d, 5, 5, 12).unwrap());
        let splits: Vec<_> = a.splits().collect();
        assert_eq!(splits.len(), 25);
        for (r, f) in splits {
            assert_eq!(a.test_indices(r, f).len(), 20);
            assert_eq!(a.train_indices(r, f).len(), 80);
        }
    }

    #[test]
    fn too_many_folds() {
        let d = line_dataset(10, 2);
        assert!(stratified_folds(&d, 1, 3, 0).is_err());
    }

    #[test]
    fn selection_split_proportions() {
        let d = line_dataset(100, 10);
        let (train, test) = selection_split(&d, 0.5, 0.2, 1).unwrap();
        assert_eq!((train.n_samples(), train.minority_count()), (50, 5));
        assert_eq!((test.n_samples(), test.minority_count()), (20, 2));

        let s1 = selection_indices(&d, 0.5, 0.2, 1).unwrap();
        let s2 = selection_indices(&d, 0.5, 0.2, 2).unwrap();
        assert!(s1.train.iter().all(|i| !s1.test.contains(i)));
        assert_ne!(s1, s2);
        let count_min = |v: &[usize]| v.iter().filter(|&&i| d.is_minority(i)).count();
        assert_eq!(count_min(&s1.train), count_min(&s2.train));
        assert_eq!(count_min(&s1.test), count_min(&s2.test));
    }

    #[test]
    fn selection_split_too_small() {
        let d = line_dataset(10, 1);
        assert!(selection_split(&d, 0.5, 0.2, 0).is_err());
    }
}
