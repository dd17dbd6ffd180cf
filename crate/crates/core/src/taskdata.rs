//! Multi-task datasets built by grouping fine class labels into balanced
//! coarse tasks, plus CSV ingestion and a hashing bag-of-words featurizer.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::ndnum::Tensor;

/// Features with one fine-grained label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct FineDataset {
    pub features: Tensor,
    pub fine_labels: Vec<usize>,
    pub n_fine: usize,
}

impl FineDataset {
    pub fn new(features: Tensor, fine_labels: Vec<usize>, n_fine: usize) -> Result<Self> {
        if fine_labels.is_empty() || features.rows() != fine_labels.len() {
            return Err(Error::dim(
                "FineDataset",
                features.shape(),
                &[fine_labels.len()],
            ));
        }
        if let Some(&bad) = fine_labels.iter().find(|&&l| l >= n_fine) {
            return Err(Error::Index {
                op: "FineDataset",
                index: bad,
                bound: n_fine,
            });
        }
        Ok(FineDataset {
            features,
            fine_labels,
            n_fine,
        })
    }

    pub fn len(&self) -> usize {
        self.fine_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fine_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Writes the `f0..f{d-1},label` CSV layout read by [`load_csv`].
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.dim();
        let header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
        writeln!(out, "{},label", header.join(","))?;
        for (i, label) in self.fine_labels.iter().enumerate() {
            for v in self.features.row(i) {
                write!(out, "{v},")?;
            }
            writeln!(out, "{label}")?;
        }
        Ok(())
    }
}

/// Maps each fine label to a coarse label of one task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskSpec {
    mapping: Vec<usize>,
    n_coarse: usize,
}

impl TaskSpec {
    /// Checks that the mapping is onto `[0, n_coarse)` and that every coarse
    /// label owns the same number of fine labels.
    pub fn new(mapping: Vec<usize>, n_coarse: usize) -> Result<Self> {
        let n_fine = mapping.len();
        if n_coarse == 0 || n_fine == 0 || !n_fine.is_multiple_of(n_coarse) {
            return Err(Error::Balance {
                fine: n_fine,
                coarse: n_coarse,
            });
        }
        let mut counts = vec![0usize; n_coarse];
        for &c in &mapping {
            *counts.get_mut(c).ok_or(Error::Index {
                op: "TaskSpec",
                index: c,
                bound: n_coarse,
            })? += 1;
        }
        if counts.iter().any(|&c| c != n_fine / n_coarse) {
            return Err(Error::Balance {
                fine: n_fine,
                coarse: n_coarse,
            });
        }
        Ok(TaskSpec { mapping, n_coarse })
    }

    pub fn identity(n: usize) -> Result<Self> {
        TaskSpec::new((0..n).collect(), n)
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn n_fine(&self) -> usize {
        self.mapping.len()
    }

    pub fn n_coarse(&self) -> usize {
        self.n_coarse
    }
}

/// Contiguous balanced grouping: fine `f` goes to `f / (n_fine / n_coarse)`.
pub fn group_labels(n_fine: usize, n_coarse: usize) -> Result<TaskSpec> {
    if n_coarse == 0 || n_coarse > n_fine || !n_fine.is_multiple_of(n_coarse) {
        return Err(Error::Balance {
            fine: n_fine,
            coarse: n_coarse,
        });
    }
    let size = n_fine / n_coarse;
    TaskSpec::new((0..n_fine).map(|f| f / size).collect(), n_coarse)
}

/// Balanced grouping with a seeded random assignment of fine labels.
pub fn random_balanced_grouping(n_fine: usize, n_coarse: usize, seed: u64) -> Result<TaskSpec> {
    let contiguous = group_labels(n_fine, n_coarse)?;
    let mut mapping = contiguous.mapping;
    mapping.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    TaskSpec::new(mapping, n_coarse)
}

/// Shared features with one label column per task.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiTaskDataset {
    pub features: Tensor,
    pub fine_labels: Vec<usize>,
    pub n_fine: usize,
    pub task_labels: Vec<Vec<usize>>,
    pub task_class_counts: Vec<usize>,
}

impl MultiTaskDataset {
    pub fn len(&self) -> usize {
        self.fine_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fine_labels.is_empty()
    }

    pub fn n_tasks(&self) -> usize {
        self.task_labels.len()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
        }
        Ok(MultiTaskDataset {
            features: Tensor::new(vec![indices.len(), d], data)?,
            fine_labels: indices.iter().map(|&i| self.fine_labels[i]).collect(),
            n_fine: self.n_fine,
            task_labels: self
                .task_labels
                .iter()
                .map(|col| indices.iter().map(|&i| col[i]).collect())
                .collect(),
            task_class_counts: self.task_class_counts.clone(),
        })
    }

    /// The same rows restricted to one task.
    pub fn single_task(&self, k: usize) -> Result<Self> {
        if k >= self.n_tasks() {
            return Err(Error::config(format!(
                "task index {k} out of range for {} tasks",
                self.n_tasks()
            )));
        }
        Ok(MultiTaskDataset {
            task_labels: vec![self.task_labels[k].clone()],
            task_class_counts: vec![self.task_class_counts[k]],
            ..self.clone()
        })
    }
}

/// Gaussian clusters around uniformly drawn centers in `[-1, 1]^dim`.
/// Rows are ordered by class, `per_class` rows each.
pub fn synth_gaussian(
    seed: u64,
    n_fine: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
) -> Result<FineDataset> {
    if n_fine < 2 || per_class < 1 || dim < 1 {
        return Err(Error::config(format!(
            "synth_gaussian needs n_fine >= 2, per_class >= 1, dim >= 1 (got {n_fine}, {per_class}, {dim})"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::config(format!(
            "spread must be finite and >= 0, got {spread}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<f64> = (0..n_fine * dim)
        .map(|_| rng.random_range(-1.0..=1.0))
        .collect();
    let m = n_fine * per_class;
    let mut data = Vec::with_capacity(m * dim);
    let mut labels = Vec::with_capacity(m);
    for class in 0..n_fine {
        let center = &centers[class * dim..(class + 1) * dim];
        for _ in 0..per_class {
            for &c in center {
                let z: f64 = rng.sample(StandardNormal);
                data.push(c + spread * z);
            }
            labels.push(class);
        }
    }
    FineDataset::new(Tensor::new(vec![m, dim], data)?, labels, n_fine)
}

/// Applies each spec to the fine labels to produce one task column per spec.
pub fn derive_tasks(fine: &FineDataset, specs: &[TaskSpec]) -> Result<MultiTaskDataset> {
    if specs.is_empty() {
        return Err(Error::config("at least one task spec is required"));
    }
    for spec in specs {
        if spec.n_fine() != fine.n_fine {
            return Err(Error::dim("derive_tasks", &[spec.n_fine()], &[fine.n_fine]));
        }
    }
    Ok(MultiTaskDataset {
        features: fine.features.clone(),
        fine_labels: fine.fine_labels.clone(),
        n_fine: fine.n_fine,
        task_labels: specs
            .iter()
            .map(|s| fine.fine_labels.iter().map(|&f| s.mapping[f]).collect())
            .collect(),
        task_class_counts: specs.iter().map(TaskSpec::n_coarse).collect(),
    })
}

/// Stratified seeded split.
///
/// Rows of each fine class are shuffled, the classes are interleaved
/// round-robin, and the first `round(train_frac * m)` rows form the training
/// side. Both sides therefore see every class with at least two rows, as
/// long as each side gets at least `n_fine` rows.
pub fn split(
    ds: &MultiTaskDataset,
    train_frac: f64,
    seed: u64,
) -> Result<(MultiTaskDataset, MultiTaskDataset)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::config(format!(
            "train_frac must be in (0, 1), got {train_frac}"
        )));
    }
    let m = ds.len();
    let n_train = (train_frac * m as f64).round() as usize;
    if n_train == 0 || n_train >= m {
        return Err(Error::config(format!(
            "split of {m} rows at {train_frac} leaves one side empty"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_fine];
    for (i, &f) in ds.fine_labels.iter().enumerate() {
        by_class[f].push(i);
    }
    for rows in &mut by_class {
        rows.shuffle(&mut rng);
    }
    let longest = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let order: Vec<usize> = (0..longest)
        .flat_map(|r| by_class.iter().filter_map(move |rows| rows.get(r).copied()))
        .collect();
    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((ds.select(&train_idx)?, ds.select(&test_idx)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub features: Tensor,
    pub labels: Vec<Vec<usize>>,
}

/// Shuffles row order with `epoch_seed` and cuts it into batches; the final
/// short batch is kept.
pub fn batches(ds: &MultiTaskDataset, batch_size: usize, epoch_seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be >= 1"));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    order
        .chunks(batch_size)
        .map(|idx| {
            let part = ds.select(idx)?;
            Ok(Batch {
                indices: idx.to_vec(),
                features: part.features,
                labels: part.task_labels,
            })
        })
        .collect()
}

/// Reads a `f0,...,f{d-1},label` CSV with a header row.
pub fn load_csv(path: impl AsRef<Path>) -> Result<FineDataset> {
    let path = path.as_ref();
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => parse_err(0, format!("{other:?}")),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let d = headers.len().saturating_sub(1);
    if headers.get(d) != Some("label") {
        return Err(parse_err(1, "last column must be `label`".into()));
    }
    if d == 0 {
        return Err(parse_err(1, "no feature columns".into()));
    }
    for (j, name) in headers.iter().take(d).enumerate() {
        if name != format!("f{j}") {
            return Err(parse_err(
                1,
                format!("expected column `f{j}`, found `{name}`"),
            ));
        }
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, csv::Position::line);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, csv::Position::line);
        for field in record.iter().take(d) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("bad feature value `{field}`")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite feature `{field}`")));
            }
            data.push(v);
        }
        let raw = &record[d];
        let label: usize = raw
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad label `{raw}`")))?;
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    let present: BTreeSet<usize> = labels.iter().copied().collect();
    let n_fine = present.iter().next_back().map_or(0, |&l| l + 1);
    let missing: Vec<usize> = (0..n_fine).filter(|l| !present.contains(l)).collect();
    if !missing.is_empty() {
        return Err(Error::Validation { missing });
    }
    let m = labels.len();
    FineDataset::new(Tensor::new(vec![m, d], data)?, labels, n_fine)
}

fn token_hash(token: &str, seed: u64) -> u64 {
    let mut h = seed ^ 0xcbf2_9ce4_8422_2325;
    for b in token.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Lowercased alphanumeric runs of `text`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Hashed token counts per text, L2-normalized per nonzero row.
pub fn bow_featurize<S: AsRef<str>>(texts: &[S], n_buckets: usize, seed: u64) -> Result<Tensor> {
    if n_buckets < 2 {
        return Err(Error::config("n_buckets must be >= 2"));
    }
    if texts.is_empty() {
        return Err(Error::Empty {
            op: "bow_featurize",
        });
    }
    let mut out = Tensor::zeros(&[texts.len(), n_buckets]);
    for (row, text) in out.data_mut().chunks_mut(n_buckets).zip(texts) {
        for token in tokenize(text.as_ref()) {
            let bucket = (token_hash(&token, seed) >> 32) as usize % n_buckets;
            row[bucket] += 1.0;
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_counts() {
        let ds = synth_gaussian(1, 4, 10, 3, 0.1).unwrap();
        assert_eq!(ds.len(), 40);
        for c in 0..4 {
            assert_eq!(ds.fine_labels.iter().filter(|&&l| l == c).count(), 10);
        }
    }

    #[test]
    fn synth_is_deterministic() {
        assert_eq!(
            synth_gaussian(5, 3, 4, 2, 0.3).unwrap(),
            synth_gaussian(5, 3, 4, 2, 0.3).unwrap()
        );
        assert_ne!(
            synth_gaussian(5, 3, 4, 2, 0.3).unwrap(),
            synth_gaussian(6, 3, 4, 2, 0.3).unwrap()
        );
    }

    #[test]
    fn zero_spread_collapses_to_centers() {
        let ds = synth_gaussian(2, 3, 5, 4, 0.0).unwrap();
        for c in 0..3 {
            let first = ds.features.row(c * 5).to_vec();
            assert!(first.iter().all(|v| (-1.0..=1.0).contains(v)));
            for i in 0..5 {
                assert_eq!(ds.features.row(c * 5 + i), first.as_slice());
            }
        }
    }

    #[test]
    fn synth_rejects_bad_sizes() {
        assert!(synth_gaussian(0, 1, 10, 3, 0.1).is_err());
        assert!(synth_gaussian(0, 2, 0, 3, 0.1).is_err());
        assert!(synth_gaussian(0, 2, 1, 0, 0.1).is_err());
    }

    #[test]
    fn grouping_examples() {
        assert_eq!(group_labels(4, 2).unwrap().mapping(), &[0, 0, 1, 1]);
        let g = group_labels(100, 5).unwrap();
        for c in 0..5 {
            assert_eq!(g.mapping().iter().filter(|&&x| x == c).count(), 20);
        }
        assert!(matches!(group_labels(10, 3), Err(Error::Balance { .. })));
        assert!(group_labels(4, 0).is_err());
        assert!(group_labels(4, 8).is_err());
    }

    #[test]
    fn random_grouping_is_balanced() {
        let g = random_balanced_grouping(12, 3, 9).unwrap();
        for c in 0..3 {
            assert_eq!(g.mapping().iter().filter(|&&x| x == c).count(), 4);
        }
    }

    #[test]
    fn task_spec_rejects_imbalance() {
        assert!(TaskSpec::new(vec![0, 0, 0, 1], 2).is_err());
        assert!(TaskSpec::new(vec![0, 0, 2, 2], 2).is_err());
    }

    #[test]
    fn derive_examples() {
        let fine = FineDataset::new(Tensor::zeros(&[3, 2]), vec![0, 3, 2], 4).unwrap();
        let mt = derive_tasks(
            &fine,
            &[TaskSpec::identity(4).unwrap(), group_labels(4, 2).unwrap()],
        )
        .unwrap();
        assert_eq!(mt.task_labels[0], vec![0, 3, 2]);
        assert_eq!(mt.task_labels[1], vec![0, 1, 1]);
        assert_eq!(mt.task_class_counts, vec![4, 2]);
        assert!(derive_tasks(&fine, &[group_labels(6, 2).unwrap()]).is_err());
    }

    fn toy(per_class: usize) -> MultiTaskDataset {
        let fine = synth_gaussian(0, 4, per_class, 2, 0.1).unwrap();
        derive_tasks(&fine, &[group_labels(4, 2).unwrap()]).unwrap()
    }

    #[test]
    fn split_sizes_and_strata() {
        let ds = toy(10);
        let (train, test) = split(&ds, 0.75, 3).unwrap();
        assert_eq!((train.len(), test.len()), (30, 10));
        for c in 0..4 {
            assert!(train.fine_labels.contains(&c));
            assert!(test.fine_labels.contains(&c));
        }
        assert_eq!(split(&ds, 0.75, 3).unwrap(), (train, test));
    }

    #[test]
    fn split_rejects_degenerate() {
        let ds = toy(10);
        assert!(split(&ds, 1.0, 0).is_err());
        assert!(split(&ds, 0.0, 0).is_err());
        assert!(split(&ds, 0.001, 0).is_err());
    }

    #[test]
    fn batch_sizes() {
        let fine = synth_gaussian(0, 2, 5, 2, 0.1).unwrap();
        let ds = derive_tasks(&fine, &[TaskSpec::identity(2).unwrap()]).unwrap();
        let sizes: Vec<_> = batches(&ds, 4, 1)
            .unwrap()
            .iter()
            .map(|b| b.indices.len())
            .collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(batches(&ds, 64, 1).unwrap().len(), 1);
        assert_eq!(batches(&ds, 4, 7).unwrap(), batches(&ds, 4, 7).unwrap());
        let b = &batches(&ds, 3, 2).unwrap()[0];
        for (r, &i) in b.indices.iter().enumerate() {
            assert_eq!(b.features.row(r), ds.features.row(i));
            assert_eq!(b.labels[0][r], ds.task_labels[0][i]);
        }
    }

    #[test]
    fn bow_examples() {
        let t = bow_featurize(&["", "Hello, world", "hello WORLD!"], 64, 0).unwrap();
        assert!(t.row(0).iter().all(|&v| v == 0.0));
        assert_eq!(t.row(1), t.row(2));
        let norm: f64 = t.row(1).iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bow_counts_before_normalization() {
        let t = bow_featurize(&["a b a"], 1 << 16, 0).unwrap();
        let mut nz: Vec<f64> = t.row(0).iter().copied().filter(|&v| v > 0.0).collect();
        nz.sort_by(f64::total_cmp);
        assert_eq!(nz.len(), 2);
        // counts 2 and 1 normalize to 2/√5 and 1/√5
        assert!((nz[1] / nz[0] - 2.0).abs() < 1e-12);
        assert!((nz[1] - 2.0 / 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bow_rejects_tiny_bucket_count() {
        assert!(bow_featurize(&["x"], 1, 0).is_err());
    }
}
