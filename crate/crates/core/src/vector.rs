//! Dense vector helpers shared by the encoder, the prompt pool and the classifier.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity. A zero vector has similarity 0 with everything.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Gradient of `cosine(a, b)` with respect to `a`, accumulated into `out` with weight `scale`.
///
/// d cos / da = b / (|a||b|) - cos * a / |a|^2
pub fn add_cosine_grad(a: &[f64], b: &[f64], scale: f64, out: &mut [f64]) {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 || scale == 0.0 {
        return;
    }
    let cos = dot(a, b) / (na * nb);
    let inv_ab = 1.0 / (na * nb);
    let c_aa = cos / (na * na);
    for ((o, &ai), &bi) in out.iter_mut().zip(a).zip(b) {
        *o += scale * (bi * inv_ab - c_aa * ai);
    }
}

/// Returns `a / |a|`, or `None` for a zero (or non-finite) vector.
pub fn normalized(a: &[f64]) -> Option<Vec<f64>> {
    let n = norm(a);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(a.iter().map(|x| x / n).collect())
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Index of the maximum score; ties go to the earliest index.
pub fn argmax_first(scores: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        match best {
            // NaN never replaces the current best.
            Some((_, b)) if s.partial_cmp(&b) != Some(std::cmp::Ordering::Greater) => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}
