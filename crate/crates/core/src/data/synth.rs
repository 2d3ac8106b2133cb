//! Procedural street-like scenes: a photo rendering in domain X and a flat
//! colour-coded label image in domain Y.
//!
//! Scenes come in three lighting styles of unequal frequency, so a diverse
//! pick of samples covers styles that a random pick tends to miss.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::manifest::{DatasetManifest, PairedEntry, UnpairedEntry};
use crate::error::{Error, Result};
use crate::evaluation::{ColorEntry, ColorMap};
use crate::rng::derived_rng;

pub const MIN_IMAGE_SIZE: usize = 16;

const CLASSES: [(&str, [u8; 3], [f64; 3]); 6] = [
    // name, label colour, photo base colour
    ("sky", [70, 130, 180], [185.0, 205.0, 230.0]),
    ("road", [128, 64, 128], [95.0, 95.0, 100.0]),
    ("vegetation", [107, 142, 35], [55.0, 115.0, 45.0]),
    ("building", [70, 70, 70], [150.0, 115.0, 95.0]),
    ("car", [0, 0, 142], [190.0, 35.0, 35.0]),
    ("person", [220, 20, 60], [235.0, 195.0, 155.0]),
];

const CAR_PAINT: [[f64; 3]; 5] = [
    [190.0, 35.0, 35.0],
    [225.0, 225.0, 230.0],
    [35.0, 35.0, 40.0],
    [40.0, 70.0, 160.0],
    [150.0, 150.0, 155.0],
];
const FACADES: [[f64; 3]; 3] = [[150.0, 115.0, 95.0], [115.0, 115.0, 120.0], [200.0, 185.0, 160.0]];

const SKY: u16 = 0;
const ROAD: u16 = 1;
const VEGETATION: u16 = 2;
const BUILDING: u16 = 3;
const CAR: u16 = 4;
const PERSON: u16 = 5;

/// Lighting condition of a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Day,
    Dusk,
    Night,
}

impl Style {
    fn sample<R: Rng>(rng: &mut R) -> Self {
        let u: f64 = rng.gen();
        if u < 0.5 {
            Style::Day
        } else if u < 0.8 {
            Style::Dusk
        } else {
            Style::Night
        }
    }

    fn light(self, c: [f64; 3]) -> [f64; 3] {
        let (scale, tint) = match self {
            Style::Day => (1.0, [0.0, 0.0, 0.0]),
            Style::Dusk => (0.7, [45.0, 15.0, -25.0]),
            Style::Night => (0.35, [0.0, 5.0, 35.0]),
        };
        [c[0] * scale + tint[0], c[1] * scale + tint[1], c[2] * scale + tint[2]]
    }
}

pub fn toy_colormap() -> ColorMap {
    ColorMap::new(
        CLASSES
            .iter()
            .enumerate()
            .map(|(i, (name, rgb, _))| ColorEntry {
                class_id: i as u16,
                rgb: *rgb,
                name: name.to_string(),
            })
            .collect(),
    )
    .expect("toy colour map is valid")
}

/// A generated scene: per-pixel class, per-pixel object index and style.
pub struct Scene {
    pub classes: Array2<u16>,
    objects: Array2<u16>,
    pub style: Style,
}

fn fill_rect(scene: &mut Scene, class: u16, obj: u16, (y0, y1): (isize, isize), (x0, x1): (isize, isize)) {
    let (h, w) = scene.classes.dim();
    for y in y0.max(0)..y1.min(h as isize) {
        for x in x0.max(0)..x1.min(w as isize) {
            scene.classes[[y as usize, x as usize]] = class;
            scene.objects[[y as usize, x as usize]] = obj;
        }
    }
}

fn fill_disc(scene: &mut Scene, class: u16, obj: u16, (cy, cx): (f64, f64), r: f64) {
    let (h, w) = scene.classes.dim();
    for y in 0..h {
        for x in 0..w {
            if (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r {
                scene.classes[[y, x]] = class;
                scene.objects[[y, x]] = obj;
            }
        }
    }
}

pub fn generate_scene<R: Rng>(size: usize, rng: &mut R) -> Scene {
    let s = size as f64;
    let style = Style::sample(rng);
    let horizon = (rng.gen_range(0.35..0.6) * s) as usize;
    let mut scene = Scene {
        classes: Array2::from_shape_fn((size, size), |(y, _)| if y < horizon { SKY } else { ROAD }),
        objects: Array2::from_shape_fn((size, size), |(y, _)| if y < horizon { 0 } else { 1 }),
        style,
    };
    let hz = horizon as isize;
    let mut obj = 2u16;
    for _ in 0..rng.gen_range(1..=3) {
        let w = (rng.gen_range(0.12..0.3) * s) as isize;
        let h = (rng.gen_range(0.15..0.4) * s) as isize;
        let x0 = rng.gen_range(-w / 2..size as isize - w / 2);
        fill_rect(&mut scene, BUILDING, obj, (hz - h, hz + 1), (x0, x0 + w));
        obj += 1;
    }
    for _ in 0..rng.gen_range(1..=3) {
        let r = rng.gen_range(0.06..0.14) * s;
        let cx = rng.gen_range(0.0..s);
        let cy = horizon as f64 - rng.gen_range(0.0..r);
        fill_disc(&mut scene, VEGETATION, obj, (cy, cx), r);
        obj += 1;
    }
    let ground = (size - horizon) as f64;
    for _ in 0..rng.gen_range(0..=2) {
        let w = (rng.gen_range(0.15..0.25) * s) as isize;
        let h = (rng.gen_range(0.08..0.14) * s) as isize;
        let y1 = hz + (rng.gen_range(0.3..1.0) * ground) as isize;
        let x0 = rng.gen_range(-w / 2..size as isize - w / 2);
        fill_rect(&mut scene, CAR, obj, (y1 - h, y1), (x0, x0 + w));
        obj += 1;
    }
    for _ in 0..rng.gen_range(0..=2) {
        let w = ((rng.gen_range(0.03..0.05) * s) as isize).max(1);
        let h = (rng.gen_range(0.12..0.2) * s) as isize;
        let y1 = hz + (rng.gen_range(0.2..1.0) * ground) as isize;
        let x0 = rng.gen_range(0..size as isize - w);
        fill_rect(&mut scene, PERSON, obj, (y1 - h, y1), (x0, x0 + w));
        obj += 1;
    }
    scene
}

pub fn render_label(scene: &Scene) -> RgbImage {
    let (h, w) = scene.classes.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| Rgb(CLASSES[scene.classes[[y as usize, x as usize]] as usize].1))
}

pub fn render_photo<R: Rng>(scene: &Scene, rng: &mut R) -> RgbImage {
    let (h, w) = scene.classes.dim();
    let n_obj = *scene.objects.iter().max().unwrap_or(&0) as usize + 1;
    let jitter: Vec<f64> = (0..n_obj).map(|_| rng.gen_range(-12.0..12.0)).collect();
    let mut paint = vec![None; n_obj];
    for (&class, &obj) in scene.classes.iter().zip(&scene.objects) {
        if paint[obj as usize].is_none() {
            paint[obj as usize] = Some(match class {
                CAR => CAR_PAINT[rng.gen_range(0..CAR_PAINT.len())],
                BUILDING => FACADES[rng.gen_range(0..FACADES.len())],
                c => CLASSES[c as usize].2,
            });
        }
    }
    let noise = Normal::new(0.0, 5.0).expect("valid sigma");
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (xi, yi) = (x as usize, y as usize);
        let class = scene.classes[[yi, xi]] as usize;
        let obj = scene.objects[[yi, xi]] as usize;
        let base = scene.style.light(paint[obj].unwrap_or(CLASSES[class].2));
        let shade = (yi as f64 / h as f64 - 0.5) * 20.0 + jitter[obj];
        let mut px = [0u8; 3];
        for c in 0..3 {
            px[c] = (base[c] + shade + noise.sample(rng)).round().clamp(0.0, 255.0) as u8;
        }
        Rgb(px)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub n_paired: usize,
    pub n_unpaired: usize,
    pub n_test: usize,
    pub image_size: usize,
    pub seed: u64,
}

const KIND_PAIRED: u64 = 1;
const KIND_UNPAIRED: u64 = 2;
const KIND_TEST: u64 = 3;

/// Generates scene `index` of a split; independent of how many other
/// scenes are generated.
pub fn scene_images(cfg: &SynthConfig, kind: u64, index: usize) -> (RgbImage, RgbImage, Style) {
    let mut rng = derived_rng(cfg.seed, kind, index as u64);
    let scene = generate_scene(cfg.image_size, &mut rng);
    (render_photo(&scene, &mut rng), render_label(&scene), scene.style)
}

/// Writes `x/*.png`, `y/*.png` and `manifest.json` under `out_dir`.
pub fn synth_toy_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    if cfg.image_size < MIN_IMAGE_SIZE {
        return Err(Error::Config(format!(
            "image size {} below minimum {MIN_IMAGE_SIZE}",
            cfg.image_size
        )));
    }
    if cfg.n_paired + cfg.n_unpaired == 0 {
        return Err(Error::Config("dataset needs at least one training sample".into()));
    }
    for sub in ["x", "y"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let save = |img: &RgbImage, rel: &str| -> Result<std::path::PathBuf> {
        let p = out_dir.join(rel);
        img.save(&p).map_err(|source| Error::Image {
            path: p.clone(),
            source,
        })?;
        Ok(p)
    };
    let mut manifest = DatasetManifest {
        paired: Vec::new(),
        unpaired_x: Vec::new(),
        unpaired_y: Vec::new(),
        test: Vec::new(),
        colormap: Some(toy_colormap()),
    };
    for i in 0..cfg.n_paired {
        let id = format!("p{i:03}");
        let (x, y, _) = scene_images(cfg, KIND_PAIRED, i);
        let x = save(&x, &format!("x/{id}.png"))?;
        let y = save(&y, &format!("y/{id}.png"))?;
        manifest.paired.push(PairedEntry { id, x, y });
    }
    for i in 0..cfg.n_unpaired {
        let id = format!("u{i:03}");
        let (x, y, _) = scene_images(cfg, KIND_UNPAIRED, i);
        let x = save(&x, &format!("x/{id}.png"))?;
        let y = save(&y, &format!("y/{id}.png"))?;
        manifest.unpaired_x.push(UnpairedEntry {
            id: id.clone(),
            path: x,
            pair: Some(y.clone()),
        });
        manifest.unpaired_y.push(UnpairedEntry { id, path: y, pair: None });
    }
    for i in 0..cfg.n_test {
        let id = format!("t{i:03}");
        let (x, y, _) = scene_images(cfg, KIND_TEST, i);
        let x = save(&x, &format!("x/{id}.png"))?;
        let y = save(&y, &format!("y/{id}.png"))?;
        manifest.test.push(PairedEntry { id, x, y });
    }
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Lighting style of unpaired scene `index`.
pub fn unpaired_style(cfg: &SynthConfig, index: usize) -> Style {
    scene_images(cfg, KIND_UNPAIRED, index).2
}
