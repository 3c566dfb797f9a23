//! Cosine similarity between class weight vectors.

use super::ProbeModel;
use crate::{Error, Matrix, Result};

/// `C[i][j] = <W_i, W_j> / (|W_i| |W_j|)`, with an exact unit diagonal.
pub fn class_cosine(model: &ProbeModel) -> Result<Matrix<f64>> {
    let k = model.classes();
    let norms: Vec<f64> = (0..k)
        .map(|c| model.weight_row(c).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if let Some(class) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::UndefinedCosine { class });
    }
    let mut out = Matrix::zeros(k, k);
    for i in 0..k {
        out.set(i, i, 1.0);
        for j in i + 1..k {
            let dot: f64 = model.weight_row(i).iter().zip(model.weight_row(j)).map(|(a, b)| a * b).sum();
            let c = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            out.set(i, j, c);
            out.set(j, i, c);
        }
    }
    Ok(out)
}

/// The `count` most and least similar classes to `class`, excluding itself.
/// Equal similarities are ordered by class index in both lists.
pub fn top_bottom_classes(cosine: &Matrix<f64>, class: usize, count: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let k = cosine.rows();
    if cosine.cols() != k {
        return Err(Error::Shape(format!("cosine matrix is {}x{}", k, cosine.cols())));
    }
    if class >= k {
        return Err(Error::InvalidArgument(format!("class {class} out of range for {k} classes")));
    }
    if count >= k {
        return Err(Error::InvalidArgument(format!("count {count} must be below {k}")));
    }
    let others: Vec<usize> = (0..k).filter(|&j| j != class).collect();
    let sim = |j: usize| cosine.get(class, j);
    let mut top = others.clone();
    top.sort_by(|&a, &b| sim(b).total_cmp(&sim(a)).then(a.cmp(&b)));
    let mut bottom = others;
    bottom.sort_by(|&a, &b| sim(a).total_cmp(&sim(b)).then(a.cmp(&b)));
    top.truncate(count);
    bottom.truncate(count);
    Ok((top, bottom))
}
