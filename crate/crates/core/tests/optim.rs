use pairmix::optim::Adam;

/// Textbook Adam on one coordinate, written out independently.
fn reference(p0: f64, grads: &[f64], lr: f64, b1: f64, b2: f64, eps: f64) -> f64 {
    let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
    for (t, &g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t));
        let v_hat = v / (1.0 - b2.powi(t));
        p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    p
}

#[test]
fn single_step_on_two_parameters() {
    let mut adam = Adam::<f64>::gan_default();
    let mut a = [1.0];
    let mut b = [-2.0];
    {
        let mut params: Vec<&mut [f64]> = vec![&mut a, &mut b];
        adam.step_slices(&mut params, &[&[0.5], &[-0.1]], 0.1);
    }
    // After one step the bias-corrected ratio is g/|g|, so each parameter
    // moves by lr against the sign of its gradient (up to eps).
    assert!((a[0] - 0.9).abs() < 1e-7);
    assert!((b[0] + 1.9).abs() < 1e-6);
    assert_eq!(adam.t, 1);
}

#[test]
fn matches_reference_over_several_steps() {
    let grads_a = [0.5, -0.2, 0.3, 0.05];
    let grads_b = [-0.1, -0.1, 0.4, -1.0];
    let mut adam = Adam::<f64>::gan_default();
    let mut a = [1.0];
    let mut b = [-2.0];
    for (ga, gb) in grads_a.iter().zip(&grads_b) {
        let mut params: Vec<&mut [f64]> = vec![&mut a, &mut b];
        adam.step_slices(&mut params, &[&[*ga], &[*gb]], 2e-4);
    }
    assert!((a[0] - reference(1.0, &grads_a, 2e-4, 0.5, 0.999, 1e-8)).abs() < 1e-14);
    assert!((b[0] - reference(-2.0, &grads_b, 2e-4, 0.5, 0.999, 1e-8)).abs() < 1e-14);
}

#[test]
fn zero_gradient_leaves_fresh_parameters() {
    let mut adam = Adam::<f32>::gan_default();
    let mut a = [0.25f32, -0.5];
    {
        let mut params: Vec<&mut [f32]> = vec![&mut a];
        adam.step_slices(&mut params, &[&[0.0, 0.0]], 1.0);
    }
    assert_eq!(a, [0.25, -0.5]);
}
