//! Small dense-vector helpers. Accumulation is done in f64.

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

pub fn sq_euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

pub fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    sq_euclidean(a, b).sqrt()
}

/// L2-normalized copy. Zero vectors are returned unchanged.
pub fn normalized(a: &[f32]) -> Vec<f32> {
    let n = norm(a);
    if n == 0.0 {
        a.to_vec()
    } else {
        a.iter().map(|&x| (x as f64 / n) as f32).collect()
    }
}

/// Elementwise mean of equally sized rows. Returns `None` for no rows.
pub fn mean<'a, I>(rows: I, dim: usize) -> Option<Vec<f32>>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut acc = vec![0f64; dim];
    let mut count = 0usize;
    for row in rows {
        for (a, &x) in acc.iter_mut().zip(row) {
            *a += x as f64;
        }
        count += 1;
    }
    if count == 0 {
        return None;
    }
    Some(acc.into_iter().map(|s| (s / count as f64) as f32).collect())
}

/// Late-interaction score: for every vector in `query` take the best dot
/// product against `doc`, sum, and divide by `query.len()`.
pub fn maxsim(query: &[Vec<f32>], doc: &[Vec<f32>]) -> f64 {
    if query.is_empty() || doc.is_empty() {
        return 0.0;
    }
    let total: f64 = query
        .iter()
        .map(|q| {
            doc.iter()
                .map(|d| dot(q, d))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    total / query.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_of_zero_vector_is_zero() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn maxsim_hand_values() {
        let u = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let v = vec![vec![1.0, 0.0]];
        assert_eq!(maxsim(&u, &v), 0.5);
        assert_eq!(maxsim(&v, &u), 1.0);
    }

    #[test]
    fn mean_of_nothing_is_none() {
        assert!(mean(std::iter::empty::<&[f32]>(), 3).is_none());
    }
}
