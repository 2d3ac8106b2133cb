//! Budgeted choice of samples to annotate as pairs: embed every candidate,
//! cluster with k-means (k = budget) and keep each cluster's medoid.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{write_atomic, DatasetManifest};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, Resample};
use crate::scalar::Scalar;

pub const KMEANS_TOLERANCE: f64 = 1e-6;
pub const KMEANS_MAX_ITER: usize = 300;

/// One feature row per sample, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    data: Array2<T>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(data: Array2<T>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidInput(format!("feature matrix must be non-empty, got {:?}", data.dim())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("feature matrix has non-finite values".into()));
        }
        Ok(Self { data })
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.data.row(i)
    }

    pub fn data(&self) -> &Array2<T> {
        &self.data
    }
}

/// Maps an image to a fixed-length feature vector.
pub trait EmbeddingBackbone<T: Scalar> {
    /// Square side length the backbone expects.
    fn input_size(&self) -> usize;
    fn dim(&self) -> usize;
    fn embed(&self, id: &str, image: &ImageTensor<T>) -> Result<Vec<T>>;
}

/// Fixed Gaussian random projection of the flattened image plus a bias row.
///
/// Stands in for a pretrained network so selection runs without downloaded
/// weights; random projections roughly preserve pixel-space distances.
#[derive(Debug, Clone)]
pub struct RandomProjection<T> {
    input_size: usize,
    weight: Array2<T>,
    bias: Array1<T>,
}

impl<T: Scalar> RandomProjection<T> {
    pub fn new(input_size: usize, dim: usize, seed: u64) -> Result<Self> {
        if input_size == 0 || dim == 0 {
            return Err(Error::Config("projection needs positive input size and dimension".into()));
        }
        let n_in = 3 * input_size * input_size;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Normal::new(0.0, 1.0 / (n_in as f64).sqrt()).expect("valid std");
        let weight = Array2::from_shape_simple_fn((dim, n_in), || T::of(w.sample(&mut rng)));
        let b = Normal::new(0.0, 1.0).expect("valid std");
        let bias = Array1::from_shape_simple_fn(dim, || T::of(b.sample(&mut rng)));
        Ok(Self {
            input_size,
            weight,
            bias,
        })
    }

    pub fn bias(&self) -> &Array1<T> {
        &self.bias
    }

    pub fn weight(&self) -> &Array2<T> {
        &self.weight
    }
}

impl<T: Scalar> EmbeddingBackbone<T> for RandomProjection<T> {
    fn input_size(&self) -> usize {
        self.input_size
    }

    fn dim(&self) -> usize {
        self.bias.len()
    }

    fn embed(&self, _id: &str, image: &ImageTensor<T>) -> Result<Vec<T>> {
        if image.height() != self.input_size || image.width() != self.input_size {
            return Err(Error::Config(format!(
                "backbone expects {0}x{0} images, got {1}x{2}",
                self.input_size,
                image.height(),
                image.width()
            )));
        }
        let flat = image.data.as_standard_layout();
        let flat = flat.as_slice().expect("standard layout");
        let x = ArrayView1::from(flat);
        Ok((self.weight.dot(&x) + &self.bias).to_vec())
    }
}

/// Features computed offline (for example penultimate activations of an
/// ImageNet classifier), looked up by sample id.
///
/// File format: CSV without header, `id,f0,f1,...`.
#[derive(Debug, Clone)]
pub struct PrecomputedFeatures<T> {
    dim: usize,
    table: HashMap<String, Vec<T>>,
}

impl<T: Scalar> PrecomputedFeatures<T> {
    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(path)?;
        let mut table = HashMap::new();
        let mut dim = None;
        for rec in reader.records() {
            let rec = rec?;
            let id = rec.get(0).ok_or_else(|| Error::Format("empty feature row".into()))?.to_string();
            let row = rec
                .iter()
                .skip(1)
                .map(|v| v.trim().parse::<f64>().map(T::of))
                .collect::<std::result::Result<Vec<T>, _>>()
                .map_err(|e| Error::Format(format!("feature row `{id}`: {e}")))?;
            if *dim.get_or_insert(row.len()) != row.len() {
                return Err(Error::Format(format!("feature row `{id}` has {} values", row.len())));
            }
            table.insert(id, row);
        }
        let dim = dim.filter(|&d| d > 0).ok_or_else(|| Error::Format("no features in file".into()))?;
        Ok(Self { dim, table })
    }
}

impl<T: Scalar> EmbeddingBackbone<T> for PrecomputedFeatures<T> {
    fn input_size(&self) -> usize {
        // Images are not inspected; keep loading cheap.
        8
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, id: &str, _image: &ImageTensor<T>) -> Result<Vec<T>> {
        self.table
            .get(id)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("no precomputed features for `{id}`")))
    }
}

pub fn extract_features<T: Scalar, B: EmbeddingBackbone<T> + ?Sized>(
    images: &[(String, ImageTensor<T>)],
    backbone: &B,
) -> Result<FeatureMatrix<T>> {
    if images.is_empty() {
        return Err(Error::InvalidInput("no images to embed".into()));
    }
    let dim = backbone.dim();
    let mut data = Array2::<T>::zeros((images.len(), dim));
    for (mut row, (id, img)) in data.axis_iter_mut(Axis(0)).zip(images) {
        let f = backbone.embed(id, img)?;
        if f.len() != dim {
            return Err(Error::Config(format!("backbone returned {} values, expected {dim}", f.len())));
        }
        row.assign(&ArrayView1::from(&f));
    }
    FeatureMatrix::new(data)
}

fn sq_dist<T: Scalar>(a: ArrayView1<T>, b: ArrayView1<T>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum()
}

/// Euclidean distance, evaluated with the lower index first so that
/// `distance(i, j) == distance(j, i)` bit for bit.
fn distance<T: Scalar>(f: &FeatureMatrix<T>, i: usize, j: usize) -> f64 {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    sq_dist(f.row(a), f.row(b)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment<T> {
    pub labels: Vec<usize>,
    pub centroids: Array2<T>,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl<T> ClusterAssignment<T> {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }
}

fn kmeans_pp_init<T: Scalar>(f: &FeatureMatrix<T>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = f.rows();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(f.row(i), f.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if u < d {
                        break;
                    }
                    u -= d;
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            // All remaining points coincide with a centre.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(f.row(i), f.row(next)));
        }
    }
    chosen
}

fn nearest<T: Scalar>(x: ArrayView1<T>, centroids: &Array2<T>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.axis_iter(Axis(0)).enumerate() {
        let d = sq_dist(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Assigns points to their nearest centroid, then gives every empty cluster
/// the point farthest from its own centroid (taken from a cluster with more
/// than one member). Returns the within-cluster sum of squares.
fn assign<T: Scalar>(f: &FeatureMatrix<T>, centroids: &mut Array2<T>, labels: &mut [usize]) -> f64 {
    let k = centroids.nrows();
    let mut dists = vec![0.0; f.rows()];
    for i in 0..f.rows() {
        let (c, d) = nearest(f.row(i), centroids);
        labels[i] = c;
        dists[i] = d;
    }
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&c| counts[c] += 1);
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let far = (0..f.rows())
            .filter(|&i| counts[labels[i]] > 1)
            .fold(None::<usize>, |best, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            })
            .expect("k <= n leaves a cluster with spare members");
        counts[labels[far]] -= 1;
        counts[empty] = 1;
        labels[far] = empty;
        dists[far] = 0.0;
        centroids.row_mut(empty).assign(&f.row(far));
    }
    dists.iter().sum()
}

fn update_centroids<T: Scalar>(f: &FeatureMatrix<T>, labels: &[usize], k: usize) -> Array2<T> {
    let mut sums = Array2::<f64>::zeros((k, f.cols()));
    let mut counts = vec![0usize; k];
    for (i, &c) in labels.iter().enumerate() {
        counts[c] += 1;
        for (s, &v) in sums.row_mut(c).iter_mut().zip(f.row(i).iter()) {
            *s += v.as_f64();
        }
    }
    Array2::from_shape_fn((k, f.cols()), |(c, j)| T::of(sums[[c, j]] / counts[c] as f64))
}

/// Lloyd's algorithm with k-means++ seeding; stops when no centroid moves
/// more than [`KMEANS_TOLERANCE`] or after [`KMEANS_MAX_ITER`] rounds.
pub fn kmeans_cluster<T: Scalar>(features: &FeatureMatrix<T>, k: usize, seed: u64) -> Result<ClusterAssignment<T>> {
    let n = features.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidBudget(format!("k = {k} must lie in 1..={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = kmeans_pp_init(features, k, &mut rng);
    let mut centroids = features.data.select(Axis(0), &init);
    let mut labels = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        history.push(assign(features, &mut centroids, &mut labels));
        let next = update_centroids(features, &labels, k);
        let shift = next
            .axis_iter(Axis(0))
            .zip(centroids.axis_iter(Axis(0)))
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < KMEANS_TOLERANCE || iterations >= KMEANS_MAX_ITER {
            break;
        }
    }
    Ok(ClusterAssignment {
        labels,
        centroids,
        inertia_history: history,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Kmedoids,
    Random,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmedoids" => Ok(Strategy::Kmedoids),
            "random" => Ok(Strategy::Random),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedSample {
    pub id: String,
    /// Row in the candidate list.
    pub index: usize,
    #[serde(default)]
    pub cluster: Option<usize>,
    /// Mean distance to the other members of the cluster.
    #[serde(default)]
    pub mean_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub seed: u64,
    pub strategy: Strategy,
    pub budget: usize,
    pub selected: Vec<SelectedSample>,
}

impl SelectionResult {
    pub fn selected_ids(&self) -> Vec<&str> {
        self.selected.iter().map(|s| s.id.as_str()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Mean distance of `member` to every other index in `members`.
fn mean_distance<T: Scalar>(f: &FeatureMatrix<T>, member: usize, members: &[usize]) -> f64 {
    if members.len() < 2 {
        return 0.0;
    }
    let sum: f64 = members.iter().filter(|&&j| j != member).map(|&j| distance(f, member, j)).sum();
    sum / (members.len() - 1) as f64
}

/// Per cluster, the member with the least mean distance to the other
/// members; ties go to the lowest sample index. `selected` is ordered by
/// cluster and ids are the row indices as strings.
pub fn select_medoids<T: Scalar>(features: &FeatureMatrix<T>, assignment: &ClusterAssignment<T>) -> Result<SelectionResult> {
    let k = assignment.k();
    if assignment.labels.len() != features.rows() {
        return Err(Error::InvalidInput(format!(
            "assignment has {} labels for {} samples",
            assignment.labels.len(),
            features.rows()
        )));
    }
    let mut members = vec![Vec::new(); k];
    for (i, &c) in assignment.labels.iter().enumerate() {
        if c >= k {
            return Err(Error::InvalidInput(format!("label {c} outside 0..{k}")));
        }
        members[c].push(i);
    }
    let mut selected = Vec::with_capacity(k);
    for (c, m) in members.iter().enumerate() {
        if m.is_empty() {
            return Err(Error::InvalidInput(format!("cluster {c} is empty")));
        }
        let mut best = (m[0], mean_distance(features, m[0], m));
        for &i in &m[1..] {
            let d = mean_distance(features, i, m);
            if d < best.1 {
                best = (i, d);
            }
        }
        selected.push(SelectedSample {
            id: best.0.to_string(),
            index: best.0,
            cluster: Some(c),
            mean_distance: Some(best.1),
        });
    }
    Ok(SelectionResult {
        seed: 0,
        strategy: Strategy::Kmedoids,
        budget: k,
        selected,
    })
}

/// Medoid selection over a feature matrix with sample ids.
pub fn select_from_features<T: Scalar>(
    ids: &[String],
    features: &FeatureMatrix<T>,
    budget: usize,
    strategy: Strategy,
    seed: u64,
) -> Result<SelectionResult> {
    if budget == 0 {
        return Err(Error::InvalidBudget("budget must be at least 1".into()));
    }
    let n = features.rows();
    if ids.len() != n {
        return Err(Error::InvalidInput("one id per feature row required".into()));
    }
    let k = budget.min(n);
    let mut result = match strategy {
        Strategy::Kmedoids => {
            let assignment = kmeans_cluster(features, k, seed)?;
            select_medoids(features, &assignment)?
        }
        Strategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = index::sample(&mut rng, n, k).into_vec();
            picked.sort_unstable();
            SelectionResult {
                seed,
                strategy,
                budget,
                selected: picked
                    .into_iter()
                    .map(|i| SelectedSample {
                        id: String::new(),
                        index: i,
                        cluster: None,
                        mean_distance: None,
                    })
                    .collect(),
            }
        }
    };
    result.seed = seed;
    result.budget = budget;
    for s in &mut result.selected {
        s.id = ids[s.index].clone();
    }
    Ok(result)
}

/// Chooses which annotatable photos of `manifest` become paired samples.
pub fn select_paired_samples<T: Scalar, B: EmbeddingBackbone<T> + ?Sized>(
    manifest: &DatasetManifest,
    budget: usize,
    strategy: Strategy,
    backbone: &B,
    seed: u64,
) -> Result<SelectionResult> {
    if budget == 0 {
        return Err(Error::InvalidBudget("budget must be at least 1".into()));
    }
    let candidates = manifest.annotatable();
    if candidates.is_empty() {
        return Err(Error::InvalidInput("manifest has no annotatable samples".into()));
    }
    let ids: Vec<String> = candidates.iter().map(|e| e.id.clone()).collect();
    match strategy {
        Strategy::Random => {
            // Features are irrelevant; a 1-column placeholder keeps one code path.
            let f = FeatureMatrix::new(Array2::<T>::zeros((ids.len(), 1)))?;
            select_from_features(&ids, &f, budget, strategy, seed)
        }
        Strategy::Kmedoids => {
            let size = backbone.input_size();
            let images = candidates
                .iter()
                .map(|e| {
                    let img = ImageTensor::<T>::load_png(&e.path, crate::image::Domain::X)?;
                    Ok((e.id.clone(), img.resize(size, size, Resample::Bicubic)))
                })
                .collect::<Result<Vec<_>>>()?;
            let f = extract_features(&images, backbone)?;
            select_from_features(&ids, &f, budget, strategy, seed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Domain;
    use ndarray::array;

    fn fm(rows: Vec<Vec<f64>>) -> FeatureMatrix<f64> {
        let n = rows.len();
        let d = rows[0].len();
        FeatureMatrix::new(Array2::from_shape_vec((n, d), rows.concat()).unwrap()).unwrap()
    }

    #[test]
    fn projection_of_zero_image_is_bias() {
        let b = RandomProjection::<f64>::new(4, 5, 0).unwrap();
        let zero = ImageTensor::filled(4, 4, 0.0, Domain::X);
        assert_eq!(b.embed("a", &zero).unwrap(), b.bias().to_vec());
        let other = ImageTensor::filled(5, 5, 0.0, Domain::X);
        assert!(matches!(b.embed("a", &other), Err(Error::Config(_))));
    }

    #[test]
    fn identical_images_identical_rows() {
        let b = RandomProjection::<f32>::new(4, 3, 9).unwrap();
        let img = ImageTensor::filled(4, 4, 0.3, Domain::X);
        let f = extract_features(&[("a".into(), img.clone()), ("b".into(), img)], &b).unwrap();
        assert_eq!(f.row(0), f.row(1));
        assert!(extract_features::<f32, _>(&[], &b).is_err());
    }

    #[test]
    fn medoid_of_three_points() {
        let f = fm(vec![vec![0.0], vec![1.0], vec![10.0]]);
        let a = ClusterAssignment {
            labels: vec![0, 0, 0],
            centroids: array![[11.0 / 3.0]],
            inertia_history: vec![],
            iterations: 0,
        };
        let r = select_medoids(&f, &a).unwrap();
        assert_eq!(r.selected[0].index, 1);
        assert!((r.selected[0].mean_distance.unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn singleton_and_tie_break() {
        let f = fm(vec![vec![-1.0, 0.0], vec![1.0, 0.0], vec![5.0, 5.0]]);
        let a = ClusterAssignment {
            labels: vec![0, 0, 1],
            centroids: array![[0.0, 0.0], [5.0, 5.0]],
            inertia_history: vec![],
            iterations: 0,
        };
        let r = select_medoids(&f, &a).unwrap();
        assert_eq!(r.selected[0].index, 0);
        assert_eq!(r.selected[1].index, 2);
        assert_eq!(r.selected[1].mean_distance, Some(0.0));
        let bad = ClusterAssignment { labels: vec![0, 0], ..a };
        assert!(matches!(select_medoids(&f, &bad), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn kmeans_k_equals_n() {
        let f = fm(vec![vec![0.0, 1.0], vec![3.0, 1.0], vec![-2.0, 7.0]]);
        let a = kmeans_cluster(&f, 3, 4).unwrap();
        let mut sorted = a.labels.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2]);
        for (i, &c) in a.labels.iter().enumerate() {
            assert_eq!(a.centroids.row(c), f.row(i));
        }
        assert!(matches!(kmeans_cluster(&f, 4, 0), Err(Error::InvalidBudget(_))));
        assert!(matches!(kmeans_cluster(&f, 0, 0), Err(Error::InvalidBudget(_))));
    }

    #[test]
    fn duplicates_still_fill_every_cluster() {
        let f = fm(vec![vec![1.0]; 5]);
        let a = kmeans_cluster(&f, 3, 0).unwrap();
        for c in 0..3 {
            assert!(a.labels.contains(&c));
        }
    }

    #[test]
    fn random_strategy_is_seeded() {
        let ids: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let f = FeatureMatrix::new(Array2::<f64>::zeros((10, 1))).unwrap();
        let a = select_from_features(&ids, &f, 5, Strategy::Random, 3).unwrap();
        let b = select_from_features(&ids, &f, 5, Strategy::Random, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.selected.len(), 5);
        let all = select_from_features(&ids, &f, 50, Strategy::Kmedoids, 3).unwrap();
        assert_eq!(all.selected.len(), 10);
        assert!(matches!(
            select_from_features(&ids, &f, 0, Strategy::Kmedoids, 3),
            Err(Error::InvalidBudget(_))
        ));
    }
}
