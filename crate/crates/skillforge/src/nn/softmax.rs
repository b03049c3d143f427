//! Tempered softmax and the distillation regression loss.

/// Softmax with temperature: `p_i = exp(v_i / tau) / sum_j exp(v_j / tau)`.
///
/// Computed with max-subtraction so large magnitudes and low temperatures
/// do not overflow. Panics on an empty slice, non-finite entries, or a
/// non-positive temperature.
pub fn softmax_tau(values: &[f64], tau: f64) -> Vec<f64> {
    assert!(!values.is_empty(), "softmax of empty slice");
    assert!(tau > 0.0 && tau.is_finite(), "temperature must be positive, got {tau}");
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        assert!(v.is_finite(), "softmax input must be finite, got {v}");
        if v > max {
            max = v;
        }
    }
    let mut out: Vec<f64> = values.iter().map(|&v| ((v - max) / tau).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in out.iter_mut() {
        *p /= sum;
    }
    out
}

/// Distillation objective for one state: squared error between the
/// temperature-softened teacher distribution and the raw student outputs.
///
/// Returns `(loss, d_loss/d_student)`. The teacher side is a constant:
/// `loss = sum_i (p_i - s_i)^2` with `p = softmax_tau(teacher_q, tau)`,
/// so the student gradient is `2 (s - p)`.
pub fn distill_loss_and_grad(student_out: &[f64], teacher_q: &[f64], tau: f64) -> (f64, Vec<f64>) {
    assert_eq!(
        student_out.len(),
        teacher_q.len(),
        "student and teacher output widths differ: {} vs {}",
        student_out.len(),
        teacher_q.len()
    );
    let p = softmax_tau(teacher_q, tau);
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&s, &pi) in student_out.iter().zip(&p) {
        let diff = pi - s;
        loss += diff * diff;
        grad.push(2.0 * (s - pi));
    }
    (loss, grad)
}
