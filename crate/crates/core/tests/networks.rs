use ndarray::Array3;
use pairmix::image::{Domain, ImageTensor};
use pairmix::networks::*;
use proptest::prelude::*;

fn input(h: usize, w: usize, seed: usize) -> Array3<f64> {
    Array3::from_shape_fn((3, h, w), |(c, i, j)| (((c * 31 + i * 7 + j * 13 + seed) % 17) as f64 / 8.0) - 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generator_preserves_shape_and_bounds(hq in 2usize..6, wq in 2usize..6, seed in 0u64..100) {
        let g = build_generator::<f64>(GeneratorConfig::desk(), seed).unwrap();
        let x = input(4 * hq, 4 * wq, seed as usize);
        let y = g.forward(&x).unwrap();
        prop_assert_eq!(y.dim(), x.dim());
        prop_assert!(y.iter().all(|v| v.abs() <= 1.0));
    }
}

#[test]
fn translation_is_deterministic() {
    let g = build_generator::<f32>(GeneratorConfig::desk(), 3).unwrap();
    let img = ImageTensor::new(input(16, 24, 1).mapv(|v| v as f32), Domain::X).unwrap();
    let a = translate(&g, &img).unwrap();
    let b = translate(&g, &img).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.domain, Domain::Y);
    assert_eq!((a.height(), a.width()), (16, 24));
}

#[test]
fn every_parameter_receives_a_finite_gradient() {
    let g = build_generator::<f64>(GeneratorConfig::desk(), 1).unwrap();
    let x = input(16, 16, 0);
    let (y, trace) = g.forward_traced(&x).unwrap();
    let mut grads = g.net.zeros_like();
    let upstream = Array3::from_shape_fn(y.dim(), |(c, i, j)| ((c + i + 2 * j) % 5) as f64 - 2.0);
    g.net.backward(&trace, upstream, &mut grads);
    for p in grads.params() {
        assert!(p.iter().all(|v| v.is_finite()));
        assert!(p.iter().any(|v| *v != 0.0));
    }
}

#[test]
fn paper_discriminator_is_patch_wise() {
    let d = build_discriminator::<f32>(DiscriminatorConfig::paper(), 0).unwrap();
    let x = Array3::<f32>::from_elem((3, 256, 256), 0.1);
    let logits = d.logits(&x).unwrap();
    assert_eq!(logits.dim().0, 1);
    assert!(logits.dim().1 > 1 && logits.dim().2 > 1);
    assert_eq!(receptive_field(&d.config), 70);
}

#[test]
fn models_with_different_seeds_differ() {
    let a = ModelState::<f32>::new(GeneratorConfig::desk(), DiscriminatorConfig::desk(), 0).unwrap();
    let b = ModelState::<f32>::new(GeneratorConfig::desk(), DiscriminatorConfig::desk(), 1).unwrap();
    assert_ne!(a.g_xy, b.g_xy);
    assert_ne!(a.g_xy.net, a.g_yx.net);
    assert!(a.all_finite());
}
