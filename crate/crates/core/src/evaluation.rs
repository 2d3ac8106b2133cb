//! Translation quality scoring.
//!
//! Two protocols: segmentation metrics after nearest-colour label decoding,
//! and per-pixel colour-threshold accuracy for map renderings.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::image::{Domain, ImageTensor, Resample};
use crate::networks::{translate, ModelState};
use crate::scalar::Scalar;

/// Ground-truth value excluded from every count.
pub const IGNORE_LABEL: u16 = u16::MAX;

/// Default per-channel tolerance (0-255 scale) of the maps protocol.
pub const MAPS_THRESHOLD: f64 = 20.0;

const CITYSCAPES: &str = include_str!("../data/cityscapes_colormap.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorEntry {
    pub class_id: u16,
    pub rgb: [u8; 3],
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ColorEntry>", into = "Vec<ColorEntry>")]
pub struct ColorMap {
    entries: Vec<ColorEntry>,
}

impl TryFrom<Vec<ColorEntry>> for ColorMap {
    type Error = Error;

    fn try_from(entries: Vec<ColorEntry>) -> Result<Self> {
        ColorMap::new(entries)
    }
}

impl From<ColorMap> for Vec<ColorEntry> {
    fn from(c: ColorMap) -> Self {
        c.entries
    }
}

impl ColorMap {
    pub fn new(mut entries: Vec<ColorEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("colour map is empty".into()));
        }
        entries.sort_by_key(|e| e.class_id);
        for (i, e) in entries.iter().enumerate() {
            if e.class_id as usize != i {
                return Err(Error::Config(format!(
                    "colour map class ids must be contiguous from 0, found {} at position {i}",
                    e.class_id
                )));
            }
        }
        let distinct: HashSet<[u8; 3]> = entries.iter().map(|e| e.rgb).collect();
        if distinct.len() != entries.len() {
            return Err(Error::Config("colour map has repeated colours".into()));
        }
        if entries.len() >= IGNORE_LABEL as usize {
            return Err(Error::Config("too many classes".into()));
        }
        Ok(Self { entries })
    }

    /// The 19 evaluation classes of the Cityscapes benchmark.
    pub fn cityscapes() -> Self {
        Self::parse_text(CITYSCAPES).expect("bundled colour map is valid")
    }

    /// Parses rows of `class_id R G B name`; `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Format(format!("colour map line {}: expected `class_id R G B name`", lineno + 1));
            if fields.len() < 4 {
                return Err(bad());
            }
            let class_id = fields[0].parse().map_err(|_| bad())?;
            let mut rgb = [0u8; 3];
            for (c, f) in rgb.iter_mut().zip(&fields[1..4]) {
                *c = f.parse().map_err(|_| bad())?;
            }
            let name = fields[4..].join(" ");
            entries.push(ColorEntry { class_id, rgb, name });
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# class_id R G B name\n");
        for e in &self.entries {
            let _ = writeln!(s, "{} {} {} {} {}", e.class_id, e.rgb[0], e.rgb[1], e.rgb[2], e.name);
        }
        s
    }

    pub fn n_classes(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[ColorEntry] {
        &self.entries
    }

    pub fn color(&self, class: u16) -> [u8; 3] {
        self.entries[class as usize].rgb
    }

    /// Renders a class map as a label-domain image.
    pub fn encode<T: Scalar>(&self, classes: &Array2<u16>) -> Result<ImageTensor<T>> {
        let (h, w) = classes.dim();
        let mut data = ndarray::Array3::<T>::zeros((3, h, w));
        for ((y, x), &c) in classes.indexed_iter() {
            if c as usize >= self.n_classes() {
                return Err(Error::InvalidInput(format!("class {c} outside colour map")));
            }
            let rgb = self.color(c);
            for ch in 0..3 {
                data[[ch, y, x]] = T::of(rgb[ch] as f64 / 127.5 - 1.0);
            }
        }
        ImageTensor::new(data, Domain::Y)
    }
}

/// Assigns every pixel the class whose colour is nearest in RGB (0-255 scale).
/// Ties go to the lowest class id.
pub fn decode_labels_nearest_color<T: Scalar>(image: &ImageTensor<T>, colormap: &ColorMap) -> Result<Array2<u16>> {
    if colormap.n_classes() == 0 {
        return Err(Error::Config("colour map is empty".into()));
    }
    let palette: Vec<[f64; 3]> = colormap
        .entries()
        .iter()
        .map(|e| [e.rgb[0] as f64, e.rgb[1] as f64, e.rgb[2] as f64])
        .collect();
    let (h, w) = (image.height(), image.width());
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        let p = image.pixel_255(y, x);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, c) in palette.iter().enumerate() {
            let d = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best as u16
    }))
}

/// Bicubic resize of a prediction to the ground-truth resolution.
pub fn resize_for_eval<T: Scalar>(pred: &ImageTensor<T>, target_hw: (usize, usize)) -> ImageTensor<T> {
    pred.resize(target_hw.0, target_hw.1, Resample::Bicubic)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub pixel_accuracy: f64,
    pub mean_class_accuracy: f64,
    pub mean_iou: f64,
    /// Per-class accuracy; `None` for classes absent from the ground truth.
    pub class_accuracy: Vec<Option<f64>>,
    pub class_iou: Vec<Option<f64>>,
    /// `confusion[gt][pred]` pixel counts.
    pub confusion: Array2<u64>,
}

impl SegMetrics {
    /// Derives every metric from a confusion matrix (rows: ground truth).
    pub fn from_confusion(confusion: Array2<u64>) -> Result<Self> {
        let n = confusion.nrows();
        if confusion.ncols() != n {
            return Err(Error::InvalidInput("confusion matrix must be square".into()));
        }
        let total: u64 = confusion.sum();
        if total == 0 {
            return Err(Error::InvalidInput("no evaluated pixels".into()));
        }
        let diag: Vec<u64> = (0..n).map(|i| confusion[[i, i]]).collect();
        let gt_count: Vec<u64> = confusion.rows().into_iter().map(|r| r.sum()).collect();
        let pred_count: Vec<u64> = confusion.columns().into_iter().map(|c| c.sum()).collect();
        let class_accuracy: Vec<Option<f64>> = (0..n)
            .map(|i| (gt_count[i] > 0).then(|| diag[i] as f64 / gt_count[i] as f64))
            .collect();
        let class_iou: Vec<Option<f64>> = (0..n)
            .map(|i| {
                (gt_count[i] > 0).then(|| diag[i] as f64 / (gt_count[i] + pred_count[i] - diag[i]) as f64)
            })
            .collect();
        let mean = |v: &[Option<f64>]| {
            let present: Vec<f64> = v.iter().flatten().copied().collect();
            present.iter().sum::<f64>() / present.len() as f64
        };
        Ok(Self {
            pixel_accuracy: diag.iter().sum::<u64>() as f64 / total as f64,
            mean_class_accuracy: mean(&class_accuracy),
            mean_iou: mean(&class_iou),
            class_accuracy,
            class_iou,
            confusion,
        })
    }

    pub fn evaluated_pixels(&self) -> u64 {
        self.confusion.sum()
    }
}

pub fn confusion_matrix(pred: &Array2<u16>, gt: &Array2<u16>, n_classes: usize) -> Result<Array2<u64>> {
    if pred.dim() != gt.dim() {
        return Err(Error::InvalidInput(format!(
            "class map shapes differ: {:?} vs {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let mut confusion = Array2::<u64>::zeros((n_classes, n_classes));
    let mut bad = None;
    Zip::from(pred).and(gt).for_each(|&p, &g| {
        if g == IGNORE_LABEL {
            return;
        }
        if p as usize >= n_classes || g as usize >= n_classes {
            bad = Some((p, g));
            return;
        }
        confusion[[g as usize, p as usize]] += 1;
    });
    if let Some((p, g)) = bad {
        return Err(Error::InvalidInput(format!(
            "class id out of range (pred {p}, gt {g}, n_classes {n_classes})"
        )));
    }
    Ok(confusion)
}

pub fn segmentation_metrics(pred: &Array2<u16>, gt: &Array2<u16>, n_classes: usize) -> Result<SegMetrics> {
    SegMetrics::from_confusion(confusion_matrix(pred, gt, n_classes)?)
}

/// Fraction of pixels whose largest per-channel difference (8-bit scale) is
/// strictly below `threshold`.
pub fn maps_pixel_accuracy<T: Scalar>(pred: &ImageTensor<T>, gt: &ImageTensor<T>, threshold: f64) -> Result<f64> {
    if pred.data.dim() != gt.data.dim() {
        return Err(Error::InvalidInput(format!(
            "image shapes differ: {:?} vs {:?}",
            pred.data.dim(),
            gt.data.dim()
        )));
    }
    let (a, b) = (pred.to_rgb8(), gt.to_rgb8());
    let correct = a
        .pixels()
        .zip(b.pixels())
        .filter(|(p, q)| {
            let diff = (0..3).map(|c| p.0[c].abs_diff(q.0[c])).max().unwrap_or(0);
            (diff as f64) < threshold
        })
        .count();
    Ok(correct as f64 / (a.width() * a.height()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Segmentation,
    Maps,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "segmentation" => Ok(Protocol::Segmentation),
            "maps" => Ok(Protocol::Maps),
            other => Err(Error::Config(format!("unknown protocol `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub pixel_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_class_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalAggregate {
    pub pixel_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_class_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_iou: Option<f64>,
}

/// Per-image scores plus their mean. For segmentation, `pooled` holds the
/// metrics of the summed confusion matrix over all images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub paired_count: Option<usize>,
    pub rows: Vec<EvalRow>,
    pub aggregate: EvalAggregate,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pooled: Option<SegMetrics>,
}

impl EvalReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        crate::data::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// One evaluation item: source image and its ground-truth translation.
pub struct EvalItem<T> {
    pub id: String,
    pub input: ImageTensor<T>,
    pub target: ImageTensor<T>,
}

/// Scores `predict` on every item. Predictions are resized to the target
/// resolution before scoring.
pub fn evaluate_items<T: Scalar>(
    items: &[EvalItem<T>],
    predict: impl Fn(&ImageTensor<T>) -> Result<ImageTensor<T>>,
    protocol: Protocol,
    colormap: Option<&ColorMap>,
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::InvalidInput("nothing to evaluate".into()));
    }
    match (protocol, colormap) {
        (Protocol::Segmentation, None) => {
            return Err(Error::Config("segmentation protocol needs a colour map".into()));
        }
        (Protocol::Maps, Some(_)) => {
            return Err(Error::Config("maps protocol does not use a colour map".into()));
        }
        _ => {}
    }
    let mut rows = Vec::with_capacity(items.len());
    let mut pooled: Option<Array2<u64>> = None;
    for item in items {
        let pred = predict(&item.input)?;
        let pred = resize_for_eval(&pred, (item.target.height(), item.target.width()));
        match protocol {
            Protocol::Segmentation => {
                let cm = colormap.expect("checked above");
                let gt = decode_labels_nearest_color(&item.target, cm)?;
                let pc = decode_labels_nearest_color(&pred, cm)?;
                let conf = confusion_matrix(&pc, &gt, cm.n_classes())?;
                pooled = Some(match pooled {
                    Some(acc) => acc + &conf,
                    None => conf.clone(),
                });
                let m = SegMetrics::from_confusion(conf)?;
                rows.push(EvalRow {
                    id: item.id.clone(),
                    pixel_accuracy: m.pixel_accuracy,
                    mean_class_accuracy: Some(m.mean_class_accuracy),
                    mean_iou: Some(m.mean_iou),
                });
            }
            Protocol::Maps => rows.push(EvalRow {
                id: item.id.clone(),
                pixel_accuracy: maps_pixel_accuracy(&pred, &item.target, MAPS_THRESHOLD)?,
                mean_class_accuracy: None,
                mean_iou: None,
            }),
        }
    }
    let n = rows.len() as f64;
    let mean_opt = |f: fn(&EvalRow) -> Option<f64>| -> Option<f64> {
        rows.iter().map(f).sum::<Option<f64>>().map(|s| s / n)
    };
    let aggregate = EvalAggregate {
        pixel_accuracy: rows.iter().map(|r| r.pixel_accuracy).sum::<f64>() / n,
        mean_class_accuracy: mean_opt(|r| r.mean_class_accuracy),
        mean_iou: mean_opt(|r| r.mean_iou),
    };
    Ok(EvalReport {
        protocol,
        label: None,
        paired_count: None,
        aggregate,
        pooled: pooled.map(SegMetrics::from_confusion).transpose()?,
        rows,
    })
}

/// Loads the manifest's test pairs (photo, ground truth).
pub fn load_test_items<T: Scalar>(manifest: &DatasetManifest) -> Result<Vec<EvalItem<T>>> {
    if manifest.test.is_empty() {
        return Err(Error::InvalidInput("manifest lists no test pairs".into()));
    }
    manifest
        .test
        .iter()
        .map(|e| {
            Ok(EvalItem {
                id: e.id.clone(),
                input: ImageTensor::load_png(&e.x, Domain::X)?,
                target: ImageTensor::load_png(&e.y, Domain::Y)?,
            })
        })
        .collect()
}

/// Translates every test photo with `G_XY` and scores it. Inputs are first
/// resized (bicubic) to `input_size` when given.
pub fn evaluate<T: Scalar>(
    model: &ModelState<T>,
    manifest: &DatasetManifest,
    protocol: Protocol,
    colormap: Option<&ColorMap>,
    input_size: Option<usize>,
) -> Result<EvalReport> {
    let items = load_test_items::<T>(manifest)?;
    evaluate_items(
        &items,
        |img| {
            let img = match input_size {
                Some(s) => img.resize(s, s, Resample::Bicubic),
                None => img.clone(),
            };
            translate(&model.g_xy, &img)
        },
        protocol,
        colormap,
    )
}

/// Bar chart (SVG) of aggregate metrics for one or more labelled reports,
/// ordered as given.
pub fn render_metric_chart(reports: &[EvalReport]) -> String {
    let metrics: [(&str, fn(&EvalAggregate) -> Option<f64>); 3] = [
        ("pixel acc", |a| Some(a.pixel_accuracy)),
        ("mean acc", |a| a.mean_class_accuracy),
        ("mean IoU", |a| a.mean_iou),
    ];
    let colors = ["#4e79a7", "#f28e2b", "#59a14f"];
    let group_w = 90.0;
    let bar_w = 24.0;
    let (left, top, plot_h) = (50.0, 30.0, 200.0);
    let width = left + group_w * reports.len().max(1) as f64 + 20.0;
    let height = top + plot_h + 60.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = top + plot_h * (1.0 - v);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{v:.2}</text>"##,
            width - 10.0,
            left - 4.0,
            y + 3.0
        );
    }
    for (gi, r) in reports.iter().enumerate() {
        let gx = left + group_w * gi as f64 + 10.0;
        for (mi, (_, f)) in metrics.iter().enumerate() {
            if let Some(v) = f(&r.aggregate) {
                let h = plot_h * v.clamp(0.0, 1.0);
                let _ = writeln!(
                    s,
                    r#"<rect x="{}" y="{}" width="{bar_w}" height="{h}" fill="{}"/>"#,
                    gx + bar_w * mi as f64,
                    top + plot_h - h,
                    colors[mi]
                );
            }
        }
        let label = r
            .label
            .clone()
            .or_else(|| r.paired_count.map(|p| format!("{p} paired")))
            .unwrap_or_else(|| format!("run {gi}"));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            gx + bar_w * 1.5,
            top + plot_h + 14.0,
            xml_escape(&label)
        );
    }
    for (mi, (name, _)) in metrics.iter().enumerate() {
        let x = left + 110.0 * mi as f64;
        let y = top + plot_h + 36.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{name}</text>"#,
            y - 9.0,
            colors[mi],
            x + 14.0,
            y
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cm(colors: &[[u8; 3]]) -> ColorMap {
        ColorMap::new(
            colors
                .iter()
                .enumerate()
                .map(|(i, &rgb)| ColorEntry {
                    class_id: i as u16,
                    rgb,
                    name: format!("c{i}"),
                })
                .collect(),
        )
        .unwrap()
    }

    fn pixel(rgb: [u8; 3]) -> ImageTensor<f64> {
        let img = image::RgbImage::from_pixel(1, 1, image::Rgb(rgb));
        ImageTensor::from_rgb8(&img, Domain::Y)
    }

    #[test]
    fn nearest_color_decoding() {
        let map = cm(&[[0, 0, 0], [255, 255, 255]]);
        assert_eq!(decode_labels_nearest_color(&pixel([10, 10, 10]), &map).unwrap()[[0, 0]], 0);
        let cs = ColorMap::cityscapes();
        assert_eq!(cs.n_classes(), 19);
        let c7 = cs.color(7);
        assert_eq!(decode_labels_nearest_color(&pixel(c7), &cs).unwrap()[[0, 0]], 7);
        // (100,0,0) is 100 away from both class 2 and class 5.
        let tie = cm(&[[0, 200, 0], [0, 0, 200], [0, 0, 0], [0, 200, 200], [255, 255, 255], [200, 0, 0]]);
        assert_eq!(decode_labels_nearest_color(&pixel([100, 0, 0]), &tie).unwrap()[[0, 0]], 2);
    }

    #[test]
    fn colormap_validation() {
        assert!(matches!(ColorMap::new(vec![]), Err(Error::Config(_))));
        assert!(ColorMap::parse_text("0 1 2 3 a\n1 1 2 3 b\n").is_err());
        assert!(ColorMap::parse_text("0 1 2 3 a\n2 4 5 6 b\n").is_err());
        let cs = ColorMap::cityscapes();
        assert_eq!(ColorMap::parse_text(&cs.to_text()).unwrap(), cs);
    }

    #[test]
    fn hand_counted_metrics() {
        let gt = array![[0u16, 0], [1, 1]];
        let pred = array![[0u16, 1], [1, 1]];
        let m = segmentation_metrics(&pred, &gt, 2).unwrap();
        assert_eq!(m.pixel_accuracy, 0.75);
        assert_eq!(m.class_accuracy, vec![Some(0.5), Some(1.0)]);
        assert_eq!(m.mean_class_accuracy, 0.75);
        assert_eq!(m.class_iou, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((m.mean_iou - 0.583333).abs() < 1e-6);
        let m = segmentation_metrics(&gt, &gt, 3).unwrap();
        assert_eq!((m.pixel_accuracy, m.mean_class_accuracy, m.mean_iou), (1.0, 1.0, 1.0));
        assert_eq!(m.class_accuracy[2], None);
    }

    #[test]
    fn ignore_pixels_are_skipped() {
        let gt = array![[0u16, IGNORE_LABEL]];
        let pred = array![[0u16, 1]];
        let m = segmentation_metrics(&pred, &gt, 2).unwrap();
        assert_eq!(m.evaluated_pixels(), 1);
        assert_eq!(m.pixel_accuracy, 1.0);
        assert!(segmentation_metrics(&pred, &array![[0u16]], 2).is_err());
    }

    #[test]
    fn maps_threshold_is_strict() {
        let mk = |vals: &[[u8; 3]]| {
            let img = image::RgbImage::from_fn(vals.len() as u32, 1, |x, _| image::Rgb(vals[x as usize]));
            ImageTensor::<f32>::from_rgb8(&img, Domain::Y)
        };
        let gt = mk(&[[100, 100, 100]; 4]);
        assert_eq!(maps_pixel_accuracy(&gt, &gt, 20.0).unwrap(), 1.0);
        assert_eq!(maps_pixel_accuracy(&mk(&[[120, 80, 120]; 4]), &gt, 20.0).unwrap(), 0.0);
        let mixed = mk(&[[105, 100, 100], [100, 130, 100], [95, 95, 95], [70, 100, 100]]);
        assert_eq!(maps_pixel_accuracy(&mixed, &gt, 20.0).unwrap(), 0.5);
        assert_eq!(maps_pixel_accuracy(&gt, &gt, 0.0).unwrap(), 0.0);
    }
}
