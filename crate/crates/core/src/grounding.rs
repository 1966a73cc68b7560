//! Image-sentence matching: posterior-weighted span/image cosine scores and
//! the symmetric in-batch hinge loss.

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::chart::PosteriorTable;
use crate::error::{Error, Result};

pub const DEFAULT_MARGIN: f64 = 0.2;

/// A precomputed image feature vector keyed by the id of its caption.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageVector {
    pub id: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingConfig {
    pub margin: f64,
    pub d_img: usize,
}

impl GroundingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        if self.d_img == 0 {
            return Err(Error::Config("d_img must be positive".into()));
        }
        Ok(())
    }
}

/// Affine map from mean-pooled word vectors into image space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingProjection {
    /// `[d_img, d_word]`
    pub weight: Array2<f64>,
    /// `[d_img]`
    pub bias: Array1<f64>,
}

impl GroundingProjection {
    pub fn zeros(d_img: usize, d_word: usize) -> Self {
        Self {
            weight: Array2::zeros((d_img, d_word)),
            bias: Array1::zeros(d_img),
        }
    }

    pub fn d_img(&self) -> usize {
        self.bias.len()
    }

    pub fn d_word(&self) -> usize {
        self.weight.ncols()
    }
}

/// Projected mean of the token vectors in `[i, j)`.
pub fn span_representation(
    projection: &GroundingProjection,
    word_vectors: ArrayView2<f64>,
    span: (usize, usize),
) -> Result<Array1<f64>> {
    let (i, j) = span;
    if j <= i || j > word_vectors.nrows() {
        return Err(Error::Structural(format!(
            "span ({i}, {j}) is empty or outside {} tokens",
            word_vectors.nrows()
        )));
    }
    if word_vectors.ncols() != projection.d_word() {
        return Err(Error::Structural(format!(
            "word vectors have dimension {}, projection expects {}",
            word_vectors.ncols(),
            projection.d_word()
        )));
    }
    let mean = word_vectors.slice(ndarray::s![i..j, ..]).mean_axis(ndarray::Axis(0)).unwrap();
    Ok(projection.weight.dot(&mean) + &projection.bias)
}

/// Representations of every span of a sentence, computed from prefix sums
/// of the projected tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanReps {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl SpanReps {
    pub fn compute(projection: &GroundingProjection, word_vectors: ArrayView2<f64>) -> Result<Self> {
        let n = word_vectors.nrows();
        if word_vectors.ncols() != projection.d_word() {
            return Err(Error::Structural(format!(
                "word vectors have dimension {}, projection expects {}",
                word_vectors.ncols(),
                projection.d_word()
            )));
        }
        let dim = projection.d_img();
        let projected = word_vectors.dot(&projection.weight.t());
        let mut prefix = Array2::<f64>::zeros((n + 1, dim));
        for k in 0..n {
            let next = &prefix.row(k) + &projected.row(k);
            prefix.row_mut(k + 1).assign(&next);
        }
        let mut data = vec![0.0; (n + 1) * (n + 1) * dim];
        for i in 0..n {
            for j in i + 1..=n {
                let width = (j - i) as f64;
                let base = (i * (n + 1) + j) * dim;
                for d in 0..dim {
                    data[base + d] = (prefix[[j, d]] - prefix[[i, d]]) / width + projection.bias[d];
                }
            }
        }
        Ok(Self { n, dim, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        assert!(i < j && j <= self.n, "span ({i}, {j}) out of range");
        let base = (i * (self.n + 1) + j) * self.dim;
        &self.data[base..base + self.dim]
    }
}

/// Cosine similarity; zero if either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Cosine similarity and its gradient with respect to `b`.
pub fn cosine_and_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return (0.0, vec![0.0; b.len()]);
    }
    let cos = dot(a, b) / (na * nb);
    let grad = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| x / (na * nb) - cos * y / (nb * nb))
        .collect();
    (cos, grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `s(v, w)`: posterior-weighted cosine between the image and every
/// width>=2 span representation.
pub fn expected_match_score(image: ArrayView1<f64>, posteriors: &PosteriorTable, span_reps: &SpanReps) -> Result<f64> {
    if posteriors.len() != span_reps.len() {
        return Err(Error::Structural("posterior table and span representations differ in length".into()));
    }
    if image.len() != span_reps.dim() {
        return Err(Error::Structural(format!(
            "image has dimension {}, span representations have {}",
            image.len(),
            span_reps.dim()
        )));
    }
    let v = image.to_vec();
    Ok(posteriors
        .spans()
        .map(|((i, j), p)| p * cosine(&v, span_reps.get(i, j)))
        .sum())
}

/// Symmetric in-batch hinge loss over a square score matrix whose diagonal
/// holds the aligned pairs.
pub fn hinge_loss(scores: &Array2<f64>, margin: f64) -> Result<f64> {
    hinge_loss_and_grad(scores, margin).map(|(loss, _)| loss)
}

/// Hinge loss together with its (sub)gradient with respect to each score.
pub fn hinge_loss_and_grad(scores: &Array2<f64>, margin: f64) -> Result<(f64, Array2<f64>)> {
    let (b, b2) = scores.dim();
    if b != b2 {
        return Err(Error::Structural(format!("score matrix must be square, got {b}x{b2}")));
    }
    let mut grad = Array2::zeros((b, b));
    if b == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / b as f64;
    let mut loss = 0.0;
    for i in 0..b {
        for j in 0..b {
            if i == j {
                continue;
            }
            let off = scores[[i, j]];
            for diag in [i, j] {
                let h = margin - scores[[diag, diag]] + off;
                if h > 0.0 {
                    loss += scale * h;
                    grad[[diag, diag]] -= scale;
                    grad[[i, j]] += scale;
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Reads `id<TAB>f,f,...` lines. Blank lines are skipped; ids must be
/// unique and every vector must share one dimension.
pub fn read_image_vectors(path: &Path) -> Result<Vec<ImageVector>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_image_vectors(&text, &path.display().to_string())
}

pub fn parse_image_vectors(text: &str, source: &str) -> Result<Vec<ImageVector>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut dim = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let line_no = lineno + 1;
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(source, line_no, "expected id<TAB>values"))?;
        let values = rest
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(source, line_no, format!("bad value {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::parse(
                    source,
                    line_no,
                    format!("expected {d} values, found {}", values.len()),
                ))
            }
            _ => {}
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::parse(source, line_no, format!("duplicate id {id:?}")));
        }
        out.push(ImageVector {
            id: id.to_string(),
            values,
        });
    }
    Ok(out)
}

pub fn write_image_vectors(images: &[ImageVector]) -> String {
    let mut out = String::new();
    for img in images {
        let vals: Vec<String> = img.values.iter().map(|v| v.to_string()).collect();
        out.push_str(&img.id);
        out.push('\t');
        out.push_str(&vals.join(","));
        out.push('\n');
    }
    out
}
